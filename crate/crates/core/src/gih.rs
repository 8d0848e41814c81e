//! Generalized induction head: the reference predictor that averages past
//! tokens whose partial history on `S*` matches the query's.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::subsets::Subset;

#[derive(Clone, Debug, PartialEq)]
pub struct GihPrediction<T> {
    pub probs: Vec<T>,
    /// Number of positions whose history on `S*` matches the query's.
    pub match_count: usize,
    /// 1-based positions `l` with a matching history.
    pub matched_positions: Vec<usize>,
    /// True when nothing matched and the uniform average of `x_{M+1:L}` was used.
    pub fallback_used: bool,
}

fn history_matches(prompt: &[usize], l: usize, query: usize, s_star: &Subset) -> bool {
    // 1-based l and query; x_{l-s} is prompt[l - s - 1]
    s_star
        .elems()
        .iter()
        .all(|&s| prompt[l - s - 1] == prompt[query - s - 1])
}

/// GIH prediction for `x_{L+1}` given the prompt `x_{1:L}`.
pub fn gih_predict<T: Scalar>(
    prompt: &[usize],
    vocab: usize,
    s_star: &Subset,
    window_m: usize,
) -> Result<GihPrediction<T>> {
    let len_l = prompt.len();
    if len_l <= window_m {
        return Err(Error::domain(format!(
            "prompt length {len_l} must exceed the window M = {window_m}"
        )));
    }
    if s_star.max().is_some_and(|s| s > window_m) {
        return Err(Error::domain(format!("S* = {s_star} is not inside [{window_m}]")));
    }
    if let Some(&t) = prompt.iter().find(|&&t| t >= vocab) {
        return Err(Error::domain(format!("token {t} outside vocabulary of size {vocab}")));
    }
    let matched: Vec<usize> = (window_m + 1..=len_l)
        .filter(|&l| history_matches(prompt, l, len_l + 1, s_star))
        .collect();
    let mut probs = vec![T::zero(); vocab];
    let fallback_used = matched.is_empty();
    if fallback_used {
        for l in window_m + 1..=len_l {
            probs[prompt[l - 1]] = probs[prompt[l - 1]] + T::one();
        }
    } else {
        for &l in &matched {
            probs[prompt[l - 1]] = probs[prompt[l - 1]] + T::one();
        }
    }
    let total: T = probs.iter().copied().sum();
    probs.iter_mut().for_each(|p| *p = *p / total);
    Ok(GihPrediction {
        probs,
        match_count: matched.len(),
        matched_positions: matched,
        fallback_used,
    })
}

/// One-hot feature `psi_S(l)`: the vectorized outer product of the one-hot
/// tokens `x_{l-s}`, `s in S` (smallest lag is the fastest index). `l` is
/// 1-based and may be `L + 1`.
pub fn psi_feature(seq: &[usize], vocab: usize, subset: &Subset, l: usize) -> Result<Vec<u8>> {
    let need = subset.max().unwrap_or(0);
    if l < need + 1 || l > seq.len() + 1 {
        return Err(Error::domain(format!(
            "position {l} has no full history on {subset}"
        )));
    }
    let idx = subset
        .elems()
        .iter()
        .rev()
        .fold(0, |acc, &s| acc * vocab + seq[l - s - 1]);
    let mut out = vec![0u8; vocab.pow(subset.len() as u32)];
    out[idx] = 1;
    Ok(out)
}
