//! n-gram Markov chain tasks: kernels, sampling, sequence generation and
//! exact stationary quantities.
//!
//! Index conventions (frozen, all other modules rely on them):
//!
//! * A parent tuple `(x_{l-r_1}, ..., x_{l-r_n})` maps to kernel column
//!   `sum_k x_{l-r_{k+1}} * d^k`, i.e. the most recent parent is the
//!   fastest-varying digit.
//! * A window of `W` consecutive tokens `(t_0, ..., t_{W-1})`, oldest first,
//!   maps to `sum_j t_{W-1-j} * d^j`: the window read oldest-first as a
//!   base-`d` number, newest token fastest-varying.

mod batch;
mod kernel;
mod sample;
mod stationary;

pub use batch::{read_batch, write_batch, ChainBatch};
pub use kernel::{ChainSpec, InitDist, TransitionKernel, TransitionMatrix};
pub use sample::{
    derive_seed, dirichlet_from_log_gammas, generate_sequence, mix64, sample_kernel,
    sample_symmetric_kernel,
};
pub use stationary::{
    stationary_distribution, stationary_distribution_with, window_stationary,
    window_stationary_with, StationaryInfo, StationaryMethod, StationaryOptions,
};

/// Encodes a token window (oldest first) as a state index.
pub fn window_index(tokens: &[usize], vocab: usize) -> usize {
    tokens.iter().fold(0, |acc, &t| acc * vocab + t)
}

/// Inverse of [`window_index`].
pub fn window_tokens(mut idx: usize, vocab: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = idx % vocab;
        idx /= vocab;
    }
    out
}

pub(crate) fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    (0..exp).try_fold(1usize, |acc, _| acc.checked_mul(base))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_index_roundtrip() {
        for idx in 0..81 {
            let toks = window_tokens(idx, 3, 4);
            assert_eq!(window_index(&toks, 3), idx);
        }
        // newest token is the fastest digit
        assert_eq!(window_index(&[0, 0, 1], 2), 1);
        assert_eq!(window_index(&[1, 0, 0], 2), 4);
    }
}
