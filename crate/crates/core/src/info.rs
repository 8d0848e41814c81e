//! chi-square divergences, the modified chi-square mutual information of a
//! partial history, and selection of the information set `S*`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::markov::{
    checked_pow, window_stationary_with, StationaryOptions, TransitionKernel,
};
use crate::scalar::Scalar;
use crate::subsets::{Subset, SubsetTable};

/// MI values closer than this are treated as tied by the argmax.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// `sum_x (p(x) - q(x))^2 / q(x)`.
pub fn chi2_divergence<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::domain("chi2 divergence of vectors with different lengths"));
    }
    let mut total = T::zero();
    for (&pi, &qi) in p.iter().zip(q) {
        if qi > T::zero() {
            let diff = pi - qi;
            total = total + diff * diff / qi;
        } else if pi != T::zero() {
            return Err(Error::domain("q vanishes where p has mass"));
        }
    }
    Ok(total)
}

/// Joint law of `(Z_{-S}, z)` from a window distribution over `M + 1` tokens.
///
/// Digit `j` of a window index is the token at lag `j` from the target `z`
/// (digit 0 is `z` itself). Returns the table `joint[key * d + e]`, with
/// `key` the mixed-radix code of the tokens at the lags in `S` (smallest lag
/// fastest), and the marginal of `z`.
fn partial_history_joint<T: Scalar>(
    window: &[T],
    vocab: usize,
    subset: &Subset,
) -> (Vec<T>, Vec<T>) {
    let keys = vocab.pow(subset.len() as u32);
    let mut joint = vec![T::zero(); keys * vocab];
    let mut marginal = vec![T::zero(); vocab];
    let max_lag = subset.max().unwrap_or(0);
    let mut lag_tokens = vec![0usize; max_lag + 1];
    for (idx, &mass) in window.iter().enumerate() {
        let mut rest = idx;
        for slot in lag_tokens.iter_mut() {
            *slot = rest % vocab;
            rest /= vocab;
        }
        let z = lag_tokens[0];
        let key = subset
            .elems()
            .iter()
            .rev()
            .fold(0, |acc, &s| acc * vocab + lag_tokens[s]);
        joint[key * vocab + z] = joint[key * vocab + z] + mass;
        marginal[z] = marginal[z] + mass;
    }
    (joint, marginal)
}

/// Modified chi-square MI for one kernel, given its stationary law over
/// `M + 1` token windows.
///
/// Uses `mu(Z_S)^2 * mu(e | Z_S)^2 = mu(Z_S, e)^2`, so the value is
/// `sum_{Z_S} (sum_e mu(Z_S, e)^2 / mu(e) - mu(Z_S)^2)`.
pub fn modified_chi2_mi_window<T: Scalar>(window: &[T], vocab: usize, subset: &Subset) -> T {
    if subset.is_empty() {
        return T::zero();
    }
    let (joint, marginal) = partial_history_joint(window, vocab, subset);
    let mut total = T::zero();
    for row in joint.chunks(vocab) {
        let mass: T = row.iter().copied().sum();
        let mut signal = T::zero();
        for (&j, &m) in row.iter().zip(&marginal) {
            if m > T::zero() {
                signal = signal + j * j / m;
            }
        }
        total = total + signal - mass * mass;
    }
    // nonnegative by Cauchy-Schwarz; clip rounding noise
    total.max(T::zero())
}

/// Vanilla chi-square MI `E_{Z_S}[ D_chi2( mu(.|Z_S) || mu(.) ) ]` for one
/// kernel's window law.
pub fn vanilla_chi2_mi_window<T: Scalar>(window: &[T], vocab: usize, subset: &Subset) -> Result<T> {
    let (joint, marginal) = partial_history_joint(window, vocab, subset);
    let mut total = T::zero();
    for row in joint.chunks(vocab) {
        let mass: T = row.iter().copied().sum();
        if mass > T::zero() {
            let cond: Vec<T> = row.iter().map(|&j| j / mass).collect();
            total = total + mass * chi2_divergence(&cond, &marginal)?;
        }
    }
    Ok(total)
}

fn validate_subset(subset: &Subset, window_m: usize) -> Result<()> {
    match subset.max() {
        Some(s) if s > window_m => Err(Error::domain(format!(
            "subset {subset} has offsets outside [1, {window_m}]"
        ))),
        _ => Ok(()),
    }
}

fn window_law<T: Scalar>(
    kernel: &TransitionKernel<T>,
    window_m: usize,
    opts: &StationaryOptions,
) -> Result<Vec<T>> {
    let r = kernel.spec().r_max();
    if window_m < r {
        return Err(Error::domain(format!("window M = {window_m} is shorter than r_n = {r}")));
    }
    let needed = checked_pow(kernel.vocab(), window_m + 1).unwrap_or(usize::MAX);
    if needed > opts.cap {
        return Err(Error::Resource {
            needed,
            cap: opts.cap,
        });
    }
    Ok(window_stationary_with(kernel, window_m + 1, opts)?.dist)
}

/// Average of the modified chi-square MI of `subset` over `kernels`, each
/// evaluated exactly on its stationary `(M + 1)`-window law.
pub fn modified_chi2_mi<T: Scalar>(
    subset: &Subset,
    kernels: &[TransitionKernel<T>],
    window_m: usize,
) -> Result<T> {
    validate_subset(subset, window_m)?;
    if kernels.is_empty() {
        return Err(Error::domain("no kernels to average over"));
    }
    let opts = StationaryOptions::for_scalar::<T>();
    let mut total = T::zero();
    for k in kernels {
        let w = window_law(k, window_m, &opts)?;
        total = total + modified_chi2_mi_window(&w, k.vocab(), subset);
    }
    Ok(total / T::of_usize(kernels.len()))
}

/// Result of evaluating every subset of `[M]_{<=D}`.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoSetReport<T> {
    pub table: SubsetTable,
    /// Monte Carlo mean of the modified MI per subset, in table order.
    pub mi_mean: Vec<T>,
    pub mi_stderr: Vec<T>,
    /// Index of `S*` in `table`.
    pub s_star: usize,
    /// `I(S*) - max_{S != S*} I(S)`.
    pub info_gap: T,
    pub n_kernels: usize,
    /// Kernels dropped because their stationary law could not be computed.
    pub n_skipped: usize,
    pub window_m: usize,
}

impl<T: Scalar> InfoSetReport<T> {
    pub fn s_star_subset(&self) -> &Subset {
        self.table.get(self.s_star)
    }

    pub fn s_star_code(&self) -> String {
        self.s_star_subset().code(self.table.universe())
    }

    pub fn mi_of(&self, subset: &Subset) -> Option<T> {
        self.table.index_of(subset).map(|i| self.mi_mean[i])
    }
}

/// Argmax with ties (within [`TIE_TOLERANCE`]) broken toward the earlier
/// table entry, i.e. smaller cardinality and then lexicographic order.
pub fn argmax_with_ties<T: Scalar>(values: &[T]) -> usize {
    let tol = T::lit(TIE_TOLERANCE);
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] + tol {
            best = i;
        }
    }
    best
}

/// Evaluates the modified MI of every subset in `table` (over `[M]`) and
/// returns the information-optimal set and its gap.
pub fn select_information_set<T: Scalar>(
    table: &SubsetTable,
    kernels: &[TransitionKernel<T>],
    window_m: usize,
) -> Result<InfoSetReport<T>> {
    if table.universe() != window_m {
        return Err(Error::domain(format!(
            "subset table is over [{}], expected [{window_m}]",
            table.universe()
        )));
    }
    let opts = StationaryOptions::for_scalar::<T>();
    let per_kernel: Vec<Result<Vec<T>>> = kernels
        .par_iter()
        .map(|k| {
            let w = window_law(k, window_m, &opts)?;
            Ok(table
                .subsets()
                .iter()
                .map(|s| modified_chi2_mi_window(&w, k.vocab(), s))
                .collect())
        })
        .collect();
    let mut rows = Vec::with_capacity(kernels.len());
    let mut skipped = 0;
    for r in per_kernel {
        match r {
            Ok(row) => rows.push(row),
            Err(Error::NotPrimitive(_)) | Err(Error::NoConvergence { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if rows.is_empty() {
        return Err(Error::domain("no kernel had a computable stationary law"));
    }
    let n = T::of_usize(rows.len());
    let mut mi_mean = vec![T::zero(); table.len()];
    let mut mi_stderr = vec![T::zero(); table.len()];
    for j in 0..table.len() {
        let mean = rows.iter().map(|r| r[j]).sum::<T>() / n;
        let var = if rows.len() > 1 {
            rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<T>()
                / T::of_usize(rows.len() - 1)
        } else {
            T::zero()
        };
        mi_mean[j] = mean;
        mi_stderr[j] = (var / n).sqrt();
    }
    let s_star = argmax_with_ties(&mi_mean);
    let runner_up = mi_mean
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != s_star)
        .map(|(_, &v)| v)
        .fold(T::neg_infinity(), T::max);
    let info_gap = if table.len() > 1 {
        (mi_mean[s_star] - runner_up).max(T::zero())
    } else {
        T::zero()
    };
    Ok(InfoSetReport {
        table: table.clone(),
        mi_mean,
        mi_stderr,
        s_star,
        info_gap,
        n_kernels: rows.len(),
        n_skipped: skipped,
        window_m,
    })
}

/// `log I~(S) = log I(S) - |S| log d`, valid when the stationary law is
/// uniform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetricDecomposition<T> {
    /// Log of the kernel-averaged vanilla chi-square MI.
    pub log_vanilla: T,
    /// `|S| log d`.
    pub penalty: T,
    pub log_modified: T,
}

/// Tolerance on the uniformity of the `r_n`-window stationary law (TV).
pub const SYMMETRY_TOLERANCE: f64 = 1e-6;

pub fn mi_symmetric_decomposition<T: Scalar>(
    subset: &Subset,
    kernels: &[TransitionKernel<T>],
    window_m: usize,
) -> Result<SymmetricDecomposition<T>> {
    if subset.is_empty() {
        return Err(Error::domain("log MI is undefined for the empty set"));
    }
    validate_subset(subset, window_m)?;
    if kernels.is_empty() {
        return Err(Error::domain("no kernels to average over"));
    }
    let opts = StationaryOptions::for_scalar::<T>();
    let mut vanilla = T::zero();
    let mut modified = T::zero();
    let d = kernels[0].vocab();
    for k in kernels {
        let base = window_stationary_with(k, k.spec().r_max(), &opts)?;
        let u = T::one() / T::of_usize(base.dist.len());
        let tv = base.dist.iter().map(|&p| (p - u).abs()).sum::<T>() * T::lit(0.5);
        if tv.as_f64() > SYMMETRY_TOLERANCE {
            return Err(Error::DecompositionNotApplicable(format!(
                "stationary law is {tv:e} away from uniform in total variation"
            )));
        }
        if k.vocab() != d {
            return Err(Error::domain("kernels disagree on vocabulary size"));
        }
        let w = window_law(k, window_m, &opts)?;
        vanilla = vanilla + vanilla_chi2_mi_window(&w, d, subset)?;
        modified = modified + modified_chi2_mi_window(&w, d, subset);
    }
    let n = T::of_usize(kernels.len());
    let (vanilla, modified) = (vanilla / n, modified / n);
    if !(vanilla > T::zero()) || !(modified > T::zero()) {
        return Err(Error::domain(format!("MI of {subset} vanishes; log is undefined")));
    }
    let out = SymmetricDecomposition {
        log_vanilla: vanilla.ln(),
        penalty: T::of_usize(subset.len()) * T::of_usize(d).ln(),
        log_modified: modified.ln(),
    };
    let mismatch = (out.log_vanilla - out.penalty - out.log_modified).abs();
    let tol = T::lit(1e-8).max(T::epsilon() * T::lit(1e3));
    if mismatch > tol {
        return Err(Error::DecompositionNotApplicable(format!(
            "log I - |S| log d differs from log I~ by {mismatch:e}"
        )));
    }
    Ok(out)
}
