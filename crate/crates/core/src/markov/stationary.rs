use super::checked_pow;
use super::kernel::TransitionKernel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StationaryMethod {
    PowerIteration,
    /// Grassmann–Taksar–Heyman elimination, used when the power iteration's
    /// observed contraction rate cannot reach the tolerance within budget.
    Elimination,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationaryOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Largest `d^W` a window distribution may have.
    pub cap: usize,
}

impl StationaryOptions {
    pub fn for_scalar<T: Scalar>() -> Self {
        let eps = T::epsilon().as_f64();
        StationaryOptions {
            tol: 1e-12_f64.max(64.0 * eps),
            max_iters: 100_000,
            cap: 1_000_000,
        }
    }
}

/// Stationary law of a window of `window_len` consecutive tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryInfo<T> {
    pub window_len: usize,
    /// Distribution over `d^W` windows in window-index order.
    pub dist: Vec<T>,
    /// Estimated `|lambda_2(P_pi)|` from the residual decay of the power
    /// iteration over its last 10 steps.
    pub lambda2_mag: f64,
    pub is_primitive: bool,
    pub power_iters: usize,
    pub method: StationaryMethod,
    /// `|| P_pi mu - mu ||_1` of the returned `r_n`-window distribution.
    pub residual: f64,
}

fn l1_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum()
}

fn check_primitive<T: Scalar>(kernel: &TransitionKernel<T>) -> Result<()> {
    if kernel.gamma_lb() > T::zero() {
        return Ok(());
    }
    let states = kernel.spec().states();
    if states > 1024 {
        return Err(Error::NotPrimitive(format!(
            "kernel has zero entries and {states} states is too many to verify primitivity"
        )));
    }
    if kernel.transition_matrix().is_primitive() {
        Ok(())
    } else {
        Err(Error::NotPrimitive(format!(
            "no power of the {states}-state window matrix is entrywise positive"
        )))
    }
}

/// GTH elimination on the column-stochastic chain; subtraction free.
fn gth_solve<T: Scalar>(kernel: &TransitionKernel<T>) -> Option<Vec<T>> {
    let p = kernel.transition_matrix();
    let n = p.states();
    // q[i][j] = Prob(i -> j)
    let mut q: Vec<T> = (0..n * n)
        .map(|idx| p.entry(idx % n, idx / n))
        .collect();
    for k in (1..n).rev() {
        let s: T = (0..k).map(|j| q[k * n + j]).sum();
        if !(s > T::zero()) {
            return None;
        }
        for i in 0..k {
            q[i * n + k] = q[i * n + k] / s;
        }
        for i in 0..k {
            let qik = q[i * n + k];
            if qik == T::zero() {
                continue;
            }
            for j in 0..k {
                q[i * n + j] = q[i * n + j] + qik * q[k * n + j];
            }
        }
    }
    let mut mu = vec![T::zero(); n];
    mu[0] = T::one();
    for k in 1..n {
        mu[k] = (0..k).map(|i| mu[i] * q[i * n + k]).sum();
    }
    let total: T = mu.iter().copied().sum();
    if !(total > T::zero()) || !total.is_finite() {
        return None;
    }
    mu.iter_mut().for_each(|m| *m = *m / total);
    Some(mu)
}

pub fn stationary_distribution<T: Scalar>(kernel: &TransitionKernel<T>) -> Result<StationaryInfo<T>> {
    stationary_distribution_with(kernel, &StationaryOptions::for_scalar::<T>())
}

/// Stationary distribution of the `r_n`-window chain by power iteration from
/// the uniform vector, stopping once `||P mu - mu||_1 <= tol`.
pub fn stationary_distribution_with<T: Scalar>(
    kernel: &TransitionKernel<T>,
    opts: &StationaryOptions,
) -> Result<StationaryInfo<T>> {
    check_primitive(kernel)?;
    let states = kernel.spec().states();
    if states > opts.cap {
        return Err(Error::Resource {
            needed: states,
            cap: opts.cap,
        });
    }
    let tol = T::lit(opts.tol);
    let mut mu = vec![T::one() / T::of_usize(states); states];
    let mut next = vec![T::zero(); states];
    let mut history: Vec<f64> = Vec::new();
    let mut iters = 0;
    let mut converged = false;

    while iters < opts.max_iters {
        kernel.step_distribution(&mu, &mut next);
        iters += 1;
        let residual = l1_diff(&next, &mu);
        history.push(residual.as_f64());
        std::mem::swap(&mut mu, &mut next);
        if residual <= tol {
            converged = true;
            break;
        }
        if iters >= 50 && iters % 10 == 0 {
            let rate = decay_rate(&history);
            let r = residual.as_f64();
            let needed = if rate < 1.0 && rate > 0.0 {
                (opts.tol / r).ln() / rate.ln()
            } else {
                f64::INFINITY
            };
            if iters as f64 + needed > opts.max_iters as f64 {
                break;
            }
        }
    }
    let lambda2_mag = decay_rate(&history);

    let (dist, method) = if converged {
        renormalize(&mut mu);
        (mu, StationaryMethod::PowerIteration)
    } else {
        match gth_solve(kernel) {
            Some(mu) => (mu, StationaryMethod::Elimination),
            None => {
                return Err(Error::NoConvergence {
                    iters,
                    residual: history.last().copied().unwrap_or(f64::NAN),
                })
            }
        }
    };
    kernel.step_distribution(&dist, &mut next);
    let residual = l1_diff(&next, &dist).as_f64();
    if !(residual <= opts.tol) {
        return Err(Error::NoConvergence { iters, residual });
    }
    Ok(StationaryInfo {
        window_len: kernel.spec().r_max(),
        dist,
        lambda2_mag,
        is_primitive: true,
        power_iters: iters,
        method,
        residual,
    })
}

fn renormalize<T: Scalar>(mu: &mut [T]) {
    let total: T = mu.iter().copied().sum();
    mu.iter_mut().for_each(|m| *m = *m / total);
}

/// Geometric decay rate fitted over the last 10 residuals.
fn decay_rate(history: &[f64]) -> f64 {
    let n = history.len();
    if n < 2 {
        return 0.0;
    }
    let span = (n - 1).min(10);
    let last = history[n - 1];
    let first = history[n - 1 - span];
    if first <= 0.0 || last <= 0.0 {
        return 0.0;
    }
    (last / first).powf(1.0 / span as f64)
}

pub fn window_stationary<T: Scalar>(
    kernel: &TransitionKernel<T>,
    window_len: usize,
) -> Result<StationaryInfo<T>> {
    window_stationary_with(kernel, window_len, &StationaryOptions::for_scalar::<T>())
}

/// Stationary law of `window_len >= r_n` consecutive tokens: the `r_n`-window
/// stationary distribution rolled forward `window_len - r_n` steps.
pub fn window_stationary_with<T: Scalar>(
    kernel: &TransitionKernel<T>,
    window_len: usize,
    opts: &StationaryOptions,
) -> Result<StationaryInfo<T>> {
    let spec = kernel.spec();
    let r = spec.r_max();
    if window_len < r {
        return Err(Error::domain(format!(
            "window length {window_len} is shorter than r_n = {r}"
        )));
    }
    let d = spec.vocab();
    let needed = checked_pow(d, window_len).unwrap_or(usize::MAX);
    if needed > opts.cap {
        return Err(Error::Resource {
            needed,
            cap: opts.cap,
        });
    }
    let mut info = stationary_distribution_with(kernel, opts)?;
    let keep = spec.states();
    for len in r..window_len {
        let mut next = vec![T::zero(); info.dist.len() * d];
        let tail_mod = keep;
        for (idx, &mass) in info.dist.iter().enumerate() {
            let col = kernel.column(spec.column_of_state(idx % tail_mod));
            for (tok, &p) in col.iter().enumerate() {
                next[idx * d + tok] = mass * p;
            }
        }
        debug_assert_eq!(next.len(), d.pow(len as u32 + 1));
        info.dist = next;
    }
    info.window_len = window_len;
    Ok(info)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::markov::{sample_kernel, ChainSpec};

    fn spec(d: usize, pa: Vec<usize>) -> Arc<ChainSpec> {
        Arc::new(ChainSpec::new(d, pa, 0.01).unwrap())
    }

    fn two_state() -> TransitionKernel<f64> {
        TransitionKernel::from_table(spec(2, vec![1]), vec![0.9, 0.1, 0.3, 0.7]).unwrap()
    }

    #[test]
    fn two_state_fixed_point() {
        // mu_0 = 0.3 / (0.1 + 0.3)
        let info = stationary_distribution(&two_state()).unwrap();
        assert!((info.dist[0] - 0.75).abs() < 1e-10);
        assert!((info.dist[1] - 0.25).abs() < 1e-10);
        assert_eq!(info.method, StationaryMethod::PowerIteration);
        // second eigenvalue of [[0.9, 0.3], [0.1, 0.7]] is 0.6
        assert!((info.lambda2_mag - 0.6).abs() < 1e-3, "{}", info.lambda2_mag);
    }

    #[test]
    fn uniform_kernel_is_uniform() {
        let k = TransitionKernel::<f64>::uniform(spec(3, vec![1, 2]));
        let info = stationary_distribution(&k).unwrap();
        for m in &info.dist {
            assert!((m - 1.0 / 9.0).abs() < 1e-10);
        }
        let w = window_stationary(&k, 4).unwrap();
        assert_eq!(w.dist.len(), 81);
        for m in &w.dist {
            assert!((m - 1.0 / 81.0).abs() < 1e-10);
        }
    }

    #[test]
    fn perturbed_copy_is_uniform() {
        let k = TransitionKernel::<f64>::perturbed_copy(spec(2, vec![1]), 0.9).unwrap();
        let info = stationary_distribution(&k).unwrap();
        assert!((info.dist[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn joint_pair_law_of_two_state_chain() {
        let w = window_stationary(&two_state(), 2).unwrap();
        let expect = [0.675, 0.075, 0.075, 0.175];
        for (got, want) in w.dist.iter().zip(expect) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_roll_matches_stationary() {
        let k: TransitionKernel<f64> = sample_kernel(&spec(3, vec![1, 2]), 5);
        let a = stationary_distribution(&k).unwrap();
        let b = window_stationary(&k, 2).unwrap();
        assert_eq!(a.dist, b.dist);
    }

    #[test]
    fn periodic_chain_is_rejected() {
        let k = TransitionKernel::<f64>::from_table(spec(2, vec![1]), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(matches!(stationary_distribution(&k), Err(Error::NotPrimitive(_))));
    }

    #[test]
    fn nearly_reducible_chain_uses_elimination() {
        let e = 1e-9;
        let k = TransitionKernel::<f64>::from_table(spec(2, vec![1]), vec![1.0 - e, e, 2.0 * e, 1.0 - 2.0 * e])
            .unwrap();
        let info = stationary_distribution(&k).unwrap();
        assert_eq!(info.method, StationaryMethod::Elimination);
        // balance: mu_0 e = mu_1 2e
        assert!((info.dist[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!(info.lambda2_mag > 0.999);
        assert!(info.residual <= 1e-12);
        assert!(info.power_iters < 1000);
    }

    #[test]
    fn window_cap_is_enforced() {
        let k = TransitionKernel::<f64>::uniform(spec(3, vec![1]));
        let opts = StationaryOptions {
            cap: 100,
            ..StationaryOptions::for_scalar::<f64>()
        };
        assert!(matches!(
            window_stationary_with(&k, 5, &opts),
            Err(Error::Resource { needed: 243, cap: 100 })
        ));
        assert!(window_stationary(&k, 0).is_err());
    }

    #[test]
    fn f32_stationary_is_close_to_f64() {
        let k64 = two_state();
        let k32: TransitionKernel<f32> = k64.cast();
        let info = stationary_distribution(&k32).unwrap();
        assert!((info.dist[0] - 0.75).abs() < 1e-5);
    }
}
