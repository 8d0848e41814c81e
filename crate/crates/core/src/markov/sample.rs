use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::kernel::{ChainSpec, TransitionKernel};
use super::window_tokens;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-item seed: `mix64(master ^ index)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ index)
}

// Kernel and sequence draws of one item use separate streams of its seed.
const SEQUENCE_STREAM: u64 = 0x5345_5155_454E_4345;

pub(crate) fn sequence_seed(item_seed: u64) -> u64 {
    mix64(item_seed ^ SEQUENCE_STREAM)
}

/// Normalizes `Gamma(alpha, 1)` draws given as logarithms into a point on the
/// simplex, with a floor at the smallest positive normal value so no entry is
/// exactly zero.
pub fn dirichlet_from_log_gammas(log_g: &[f64]) -> Vec<f64> {
    let max = log_g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = log_g
        .iter()
        .map(|&l| (l - max).exp().max(f64::MIN_POSITIVE))
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// `log G` for `G ~ Gamma(alpha, 1)`. For `alpha < 1` uses the boost
/// `G = G' * U^{1/alpha}` with `G' ~ Gamma(alpha + 1, 1)`, kept in log space
/// because `U^{1/alpha}` underflows for small `alpha`.
fn log_gamma_draw<R: Rng>(rng: &mut R, alpha: f64, boosted: &Gamma<f64>) -> f64 {
    if alpha >= 1.0 {
        return boosted.sample(rng).ln();
    }
    let g = boosted.sample(rng);
    let u: f64 = rng.random::<f64>();
    // random::<f64>() lies in [0, 1); map to (0, 1]
    g.ln() + (1.0 - u).ln() / alpha
}

/// Draws every column of the kernel i.i.d. from `Dirichlet(alpha * 1_d)`.
pub fn sample_kernel<T: Scalar>(spec: &Arc<ChainSpec>, seed: u64) -> TransitionKernel<T> {
    let alpha = spec.alpha();
    let d = spec.vocab();
    let shape = if alpha >= 1.0 { alpha } else { alpha + 1.0 };
    let boosted = Gamma::new(shape, 1.0).expect("validated alpha");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = Vec::with_capacity(d * spec.columns());
    let mut log_g = vec![0.0; d];
    for _ in 0..spec.columns() {
        for slot in log_g.iter_mut() {
            *slot = log_gamma_draw(&mut rng, alpha, &boosted);
        }
        table.extend(
            dirichlet_from_log_gammas(&log_g)
                .into_iter()
                .map(|p| T::lit(p).max(T::min_positive_value())),
        );
    }
    // re-normalize after the cast so the column-sum invariant holds in T
    for col in table.chunks_mut(d) {
        let total: T = col.iter().copied().sum();
        col.iter_mut().for_each(|p| *p = *p / total);
    }
    TransitionKernel::from_table(Arc::clone(spec), table).expect("dirichlet columns are valid")
}

/// Samples a kernel whose window chain has the uniform stationary
/// distribution.
///
/// For every assignment of the non-oldest parents, the map from the oldest
/// parent's token to the next-token distribution is a doubly stochastic
/// `d x d` matrix, built as a `Dirichlet(1)`-weighted mixture of `d` random
/// permutations blended 9:1 with the uniform matrix (so every entry is
/// positive). That makes `P_pi` doubly stochastic.
pub fn sample_symmetric_kernel<T: Scalar>(
    spec: &Arc<ChainSpec>,
    seed: u64,
) -> TransitionKernel<T> {
    let d = spec.vocab();
    let n = spec.order();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit: Gamma<f64> = Gamma::new(1.0, 1.0).expect("valid gamma");
    let inner_cols = d.pow(n as u32 - 1);
    let mut table = vec![T::zero(); d * spec.columns()];
    for inner in 0..inner_cols {
        let log_w: Vec<f64> = (0..d).map(|_| unit.sample(&mut rng).ln()).collect();
        let weights = dirichlet_from_log_gammas(&log_w);
        let mut mix = vec![0.0; d * d];
        for &w in &weights {
            let mut perm: Vec<usize> = (0..d).collect();
            perm.shuffle(&mut rng);
            for (oldest, &next) in perm.iter().enumerate() {
                mix[oldest * d + next] += w;
            }
        }
        for oldest in 0..d {
            // the oldest parent is the most significant column digit
            let col = oldest * inner_cols + inner;
            for next in 0..d {
                let p = 0.9 * mix[oldest * d + next] + 0.1 / d as f64;
                table[col * d + next] = T::lit(p);
            }
        }
    }
    TransitionKernel::from_table(Arc::clone(spec), table).expect("mixture columns are valid")
}

fn sample_index<R: Rng, T: Scalar>(rng: &mut R, probs: &[T]) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative sum
    probs
        .iter()
        .rposition(|p| *p > T::zero())
        .unwrap_or(probs.len() - 1)
}

/// Generates `x_{1:(L+1)}`: the first `r_n` tokens from `init` (a distribution
/// over `d^{r_n}` windows), then each token from `pi(. | parents)`.
pub fn generate_sequence<T: Scalar>(
    kernel: &TransitionKernel<T>,
    init: &[T],
    len_l: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let spec = kernel.spec();
    let r = spec.r_max();
    if len_l < r {
        return Err(Error::config(format!(
            "sequence length L + 1 = {} must exceed r_n = {r}",
            len_l + 1
        )));
    }
    if init.len() != spec.states() {
        return Err(Error::domain("init distribution has the wrong size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.vocab();
    let mut seq = window_tokens(sample_index(&mut rng, init), d, r);
    seq.reserve(len_l + 1 - r);
    for pos in r..=len_l {
        let col = kernel.next_token_column(&seq[pos - r..pos]);
        let next = sample_index(&mut rng, kernel.column(col));
        seq.push(next);
    }
    Ok(seq)
}
