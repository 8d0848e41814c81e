use std::sync::Arc;

use super::{checked_pow, window_index};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How the first `r_n` tokens of a sequence are drawn.
#[derive(Clone, Debug, PartialEq)]
pub enum InitDist {
    /// Exact stationary distribution of each sampled kernel.
    Stationary,
    Uniform,
    /// Fixed probability vector over `vocab^{r_n}` in window-index order.
    Explicit(Vec<f64>),
}

/// Static description of an n-gram chain family.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSpec {
    vocab: usize,
    parents: Vec<usize>,
    alpha: f64,
    init: InitDist,
}

impl ChainSpec {
    /// `parents` are positive lag offsets (`pa = {-1, -2}` is `[1, 2]`).
    pub fn new(vocab: usize, parents: Vec<usize>, alpha: f64) -> Result<Self> {
        Self::with_init(vocab, parents, alpha, InitDist::Stationary)
    }

    pub fn with_init(
        vocab: usize,
        mut parents: Vec<usize>,
        alpha: f64,
        init: InitDist,
    ) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::config(format!("vocab size must be >= 2, got {vocab}")));
        }
        if parents.is_empty() {
            return Err(Error::config("parent set must be nonempty"));
        }
        parents.sort_unstable();
        if parents[0] == 0 || parents.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config(format!(
                "parent offsets must be distinct positive integers, got {parents:?}"
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config(format!("dirichlet alpha must be > 0, got {alpha}")));
        }
        let r_max = *parents.last().unwrap();
        let states = checked_pow(vocab, r_max)
            .ok_or_else(|| Error::config("vocab^r_max overflows"))?;
        if let InitDist::Explicit(mu) = &init {
            if mu.len() != states {
                return Err(Error::config(format!(
                    "init distribution has {} entries, expected {states}",
                    mu.len()
                )));
            }
            let total: f64 = mu.iter().sum();
            if mu.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::config("init distribution is not a probability vector"));
            }
        }
        Ok(ChainSpec {
            vocab,
            parents,
            alpha,
            init,
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn order(&self) -> usize {
        self.parents.len()
    }

    pub fn r_max(&self) -> usize {
        *self.parents.last().unwrap()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn init(&self) -> &InitDist {
        &self.init
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::with_init(self.vocab, self.parents.clone(), alpha, self.init.clone())
    }

    /// Number of parent tuples, `d^n`.
    pub fn columns(&self) -> usize {
        self.vocab.pow(self.order() as u32)
    }

    /// Number of `r_n`-window states, `d^{r_n}`.
    pub fn states(&self) -> usize {
        self.vocab.pow(self.r_max() as u32)
    }

    /// Kernel column of the parent tuple of the token following `window`,
    /// where `window` holds the last `r_n` tokens (oldest first).
    pub fn column_of_window(&self, window: &[usize]) -> usize {
        let r = window.len();
        self.parents
            .iter()
            .rev()
            .fold(0, |acc, &off| acc * self.vocab + window[r - off])
    }

    /// Kernel column for the token at 0-based position `pos` of `seq`.
    pub fn column_at(&self, seq: &[usize], pos: usize) -> usize {
        self.parents
            .iter()
            .rev()
            .fold(0, |acc, &off| acc * self.vocab + seq[pos - off])
    }

    /// Kernel column for the state with window index `state`.
    pub fn column_of_state(&self, mut state: usize) -> usize {
        // digit j of the state (from the least significant) is the token at lag j + 1
        let mut lag_tokens = vec![0; self.r_max()];
        for slot in lag_tokens.iter_mut() {
            *slot = state % self.vocab;
            state /= self.vocab;
        }
        self.parents
            .iter()
            .rev()
            .fold(0, |acc, &off| acc * self.vocab + lag_tokens[off - 1])
    }
}

/// Conditional table `pi(x | X_pa)`, stored column-major: column `c` is the
/// next-token distribution for parent tuple `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionKernel<T> {
    spec: Arc<ChainSpec>,
    table: Vec<T>,
    gamma_lb: T,
}

impl<T: Scalar> TransitionKernel<T> {
    pub fn from_table(spec: Arc<ChainSpec>, table: Vec<T>) -> Result<Self> {
        let d = spec.vocab();
        let cols = spec.columns();
        if table.len() != d * cols {
            return Err(Error::domain(format!(
                "kernel table has {} entries, expected {}",
                table.len(),
                d * cols
            )));
        }
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(8.0));
        for (c, col) in table.chunks(d).enumerate() {
            if col.iter().any(|&p| !(p >= T::zero())) {
                return Err(Error::domain(format!("negative or NaN entry in column {c}")));
            }
            let total: T = col.iter().copied().sum();
            if (total - T::one()).abs() > tol {
                return Err(Error::domain(format!("column {c} sums to {total}")));
            }
        }
        let gamma_lb = table.iter().copied().fold(T::infinity(), T::min);
        Ok(TransitionKernel {
            spec,
            table,
            gamma_lb,
        })
    }

    /// Builds a kernel from `prob(parent_tokens, next)`, where
    /// `parent_tokens[k]` is the token at lag `r_{k+1}`.
    pub fn from_fn(spec: Arc<ChainSpec>, prob: impl Fn(&[usize], usize) -> f64) -> Result<Self> {
        let d = spec.vocab();
        let n = spec.order();
        let mut table = Vec::with_capacity(d * spec.columns());
        let mut parent_tokens = vec![0; n];
        for mut c in 0..spec.columns() {
            for slot in parent_tokens.iter_mut() {
                *slot = c % d;
                c /= d;
            }
            table.extend((0..d).map(|x| T::lit(prob(&parent_tokens, x))));
        }
        Self::from_table(spec, table)
    }

    /// `pi(x | .) = 1/d` for every parent tuple.
    pub fn uniform(spec: Arc<ChainSpec>) -> Self {
        let d = spec.vocab();
        Self::from_fn(spec, |_, _| 1.0 / d as f64).expect("uniform kernel is valid")
    }

    /// Keeps the most recent parent's token with probability `stay`, otherwise
    /// moves uniformly to one of the other `d - 1` tokens.
    pub fn perturbed_copy(spec: Arc<ChainSpec>, stay: f64) -> Result<Self> {
        let d = spec.vocab() as f64;
        Self::from_fn(spec, move |pa, x| {
            if x == pa[0] {
                stay
            } else {
                (1.0 - stay) / (d - 1.0)
            }
        })
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> &Arc<ChainSpec> {
        &self.spec
    }

    pub fn vocab(&self) -> usize {
        self.spec.vocab()
    }

    pub fn table(&self) -> &[T] {
        &self.table
    }

    pub fn column(&self, c: usize) -> &[T] {
        let d = self.vocab();
        &self.table[c * d..(c + 1) * d]
    }

    pub fn prob(&self, next: usize, column: usize) -> T {
        self.table[column * self.vocab() + next]
    }

    /// Smallest table entry; zero flags a degenerate kernel.
    pub fn gamma_lb(&self) -> T {
        self.gamma_lb
    }

    pub fn cast<U: Scalar>(&self) -> TransitionKernel<U> {
        TransitionKernel {
            spec: Arc::clone(&self.spec),
            table: self.table.iter().map(|p| U::lit(p.as_f64())).collect(),
            gamma_lb: U::lit(self.gamma_lb.as_f64()),
        }
    }

    /// One-step window transition matrix `P_pi` over `d^{r_n}` states.
    pub fn transition_matrix(&self) -> TransitionMatrix<T> {
        let d = self.vocab();
        let states = self.spec.states();
        let mut entries = vec![T::zero(); states * states];
        let keep = states / d;
        for from in 0..states {
            let col = self.spec.column_of_state(from);
            let shifted = (from % keep) * d;
            for next in 0..d {
                entries[(shifted + next) * states + from] = self.prob(next, col);
            }
        }
        TransitionMatrix { states, entries }
    }

    /// Advances a distribution over `r_n`-windows by one step without
    /// materializing `P_pi`.
    pub(crate) fn step_distribution(&self, mu: &[T], out: &mut [T]) {
        let d = self.vocab();
        let keep = mu.len() / d;
        out.iter_mut().for_each(|v| *v = T::zero());
        for (from, &mass) in mu.iter().enumerate() {
            if mass == T::zero() {
                continue;
            }
            let col = self.column(self.spec.column_of_state(from));
            let base = (from % keep) * d;
            for (next, &p) in col.iter().enumerate() {
                out[base + next] = out[base + next] + p * mass;
            }
        }
    }

    pub(crate) fn next_token_column(&self, window: &[usize]) -> usize {
        debug_assert_eq!(window.len(), self.spec.r_max());
        self.spec.column_of_window(window)
    }
}

/// Dense column-stochastic matrix, row-major: `entry(to, from)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix<T> {
    states: usize,
    entries: Vec<T>,
}

impl<T: Scalar> TransitionMatrix<T> {
    pub fn states(&self) -> usize {
        self.states
    }

    pub fn entry(&self, to: usize, from: usize) -> T {
        self.entries[to * self.states + from]
    }

    pub fn column_sums(&self) -> Vec<T> {
        (0..self.states)
            .map(|from| (0..self.states).map(|to| self.entry(to, from)).sum())
            .collect()
    }

    pub fn nonzeros(&self) -> usize {
        self.entries.iter().filter(|&&p| p != T::zero()).count()
    }

    pub fn apply(&self, mu: &[T]) -> Vec<T> {
        (0..self.states)
            .map(|to| {
                self.entries[to * self.states..(to + 1) * self.states]
                    .iter()
                    .zip(mu)
                    .map(|(&p, &m)| p * m)
                    .sum()
            })
            .collect()
    }

    /// Primitivity via boolean powers: an `n`-state matrix is primitive iff its
    /// `((n-1)^2 + 1)`-th power is entrywise positive.
    pub fn is_primitive(&self) -> bool {
        let n = self.states;
        let mut pattern: Vec<bool> = self.entries.iter().map(|&p| p > T::zero()).collect();
        let bound = (n - 1) * (n - 1) + 1;
        let mut power = 1usize;
        while power < bound {
            let mut next = vec![false; n * n];
            for i in 0..n {
                for k in 0..n {
                    if pattern[i * n + k] {
                        for j in 0..n {
                            next[i * n + j] |= pattern[k * n + j];
                        }
                    }
                }
            }
            pattern = next;
            power *= 2;
        }
        pattern.iter().all(|&b| b)
    }
}

impl ChainSpec {
    /// Window index of the last `r_n` tokens before 0-based position `pos`.
    pub fn state_before(&self, seq: &[usize], pos: usize) -> usize {
        window_index(&seq[pos - self.r_max()..pos], self.vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: usize, pa: Vec<usize>) -> Arc<ChainSpec> {
        Arc::new(ChainSpec::new(d, pa, 0.01).unwrap())
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ChainSpec::new(1, vec![1], 0.1).is_err());
        assert!(ChainSpec::new(3, vec![], 0.1).is_err());
        assert!(ChainSpec::new(3, vec![0, 1], 0.1).is_err());
        assert!(ChainSpec::new(3, vec![1, 1], 0.1).is_err());
        assert!(ChainSpec::new(3, vec![1], 0.0).is_err());
        assert!(ChainSpec::new(3, vec![1], -1.0).is_err());
        let bad = InitDist::Explicit(vec![0.5, 0.6]);
        assert!(ChainSpec::with_init(2, vec![1], 0.1, bad).is_err());
    }

    #[test]
    fn two_state_matrix_matches_definition() {
        let s = spec(2, vec![1]);
        let k = TransitionKernel::<f64>::from_table(s, vec![0.9, 0.1, 0.3, 0.7]).unwrap();
        let p = k.transition_matrix();
        assert_eq!(p.entry(0, 0), 0.9);
        assert_eq!(p.entry(0, 1), 0.3);
        assert_eq!(p.entry(1, 0), 0.1);
        assert_eq!(p.entry(1, 1), 0.7);
    }

    #[test]
    fn bigram_matrix_has_d_cubed_nonzeros() {
        // enumerate shift-compatible (from, to) pairs independently
        let s = spec(3, vec![1, 2]);
        let k = TransitionKernel::<f64>::from_fn(Arc::clone(&s), |_, _| 1.0 / 3.0).unwrap();
        let p = k.transition_matrix();
        let mut expected = 0;
        for from in 0..9 {
            for to in 0..9 {
                // states are (x_{-2}, x_{-1}); the new state's older token
                // must equal the old state's newer one
                if to / 3 == from % 3 {
                    expected += 1;
                    assert!(p.entry(to, from) > 0.0);
                } else {
                    assert_eq!(p.entry(to, from), 0.0);
                }
            }
        }
        assert_eq!(expected, 27);
        assert_eq!(p.nonzeros(), 27);
        for c in p.column_sums() {
            assert!((c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn column_conventions_agree() {
        let s = spec(3, vec![1, 3]);
        let seq = [2, 0, 1, 1, 2];
        // token at position 4: lag 1 -> seq[3] = 1, lag 3 -> seq[1] = 0,
        // so the column is 1 + 3 * 0
        assert_eq!(s.column_at(&seq, 4), 1);
        let window = &seq[1..4];
        assert_eq!(s.column_of_window(window), 1);
        assert_eq!(s.column_of_state(window_index(window, 3)), 1);
        let seq2 = [2, 0, 0, 1];
        // lag 1 -> 0, lag 3 -> 2
        assert_eq!(s.column_at(&seq2, 3), 6);
        assert_eq!(s.column_of_state(s.state_before(&seq2, 3)), 6);
    }

    #[test]
    fn from_table_validates_columns() {
        let s = spec(2, vec![1]);
        assert!(TransitionKernel::<f64>::from_table(Arc::clone(&s), vec![0.5, 0.6, 0.5, 0.5]).is_err());
        assert!(TransitionKernel::<f64>::from_table(Arc::clone(&s), vec![1.5, -0.5, 0.5, 0.5]).is_err());
        assert!(TransitionKernel::<f64>::from_table(s, vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn degenerate_kernel_flags_zero_gamma_and_primitivity() {
        let s = spec(2, vec![1]);
        let k = TransitionKernel::<f64>::from_table(Arc::clone(&s), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(k.gamma_lb(), 0.0);
        // deterministic swap is periodic, hence not primitive
        assert!(!k.transition_matrix().is_primitive());
        let k2 = TransitionKernel::<f64>::from_table(s, vec![0.5, 0.5, 1.0, 0.0]).unwrap();
        assert!(k2.transition_matrix().is_primitive());
    }
}
