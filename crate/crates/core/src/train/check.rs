use super::grad::{loss_and_grad, Groups};
use super::precise::{precise_loss, Dd};
use crate::error::{Error, Result};
use crate::gih::gih_predict;
use crate::model::{forward_with, Masking, ModelParams};
use crate::subsets::Subset;

/// Relative error used by the gradient check.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Largest relative and absolute errors of one parameter group.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GroupError {
    pub max_rel: f64,
    pub max_abs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub step: f64,
    pub a: GroupError,
    pub w: GroupError,
    pub c: GroupError,
    /// Any group above `tolerance`, or a step outside `[1e-8, 1e-4]` where
    /// truncation or cancellation error dominates.
    pub degraded: bool,
}

impl FdReport {
    pub fn max_rel(&self) -> f64 {
        self.a.max_rel.max(self.w.max_rel).max(self.c.max_rel)
    }
}

/// Central finite differences of the batch loss against the analytic
/// gradient for every coordinate. The perturbed losses are evaluated in
/// double-double arithmetic so that rounding does not swamp small steps.
pub fn fd_check(
    params: &ModelParams<f64>,
    seqs: &[Vec<usize>],
    eps: f64,
    step: f64,
    masking: Masking,
    tolerance: f64,
) -> Result<FdReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::domain(format!("finite-difference step {step} must be positive")));
    }
    let (_, grad) = loss_and_grad(params, seqs, eps, masking, Groups::ALL)?;
    let analytic = grad.to_flat();
    let base = params.to_flat();
    let mut p = params.clone();
    let mut numeric = Vec::with_capacity(base.len());
    for j in 0..base.len() {
        let mut flat = base.clone();
        flat[j] = base[j] + step;
        p.set_flat(&flat);
        let up = precise_loss(&p, seqs, eps, masking);
        flat[j] = base[j] - step;
        p.set_flat(&flat);
        let down = precise_loss(&p, seqs, eps, masking);
        // the realized step after rounding the perturbed coordinates
        let width = Dd::new(base[j] + step) - Dd::new(base[j] - step);
        numeric.push(((up - down) / width).to_f64());
    }
    let hw = params.shape.heads * params.shape.window;
    let group = |range: std::ops::Range<usize>| {
        range.fold(GroupError::default(), |acc, j| GroupError {
            max_rel: acc.max_rel.max(relative_error(analytic[j], numeric[j])),
            max_abs: acc.max_abs.max((analytic[j] - numeric[j]).abs()),
        })
    };
    let a = group(0..1);
    let w = group(1..1 + hw);
    let c = group(1 + hw..base.len());
    let worst = a.max_rel.max(w.max_rel).max(c.max_rel);
    Ok(FdReport {
        step,
        a,
        w,
        c,
        degraded: worst > tolerance || !(1e-8..=1e-4).contains(&step),
    })
}

/// Distance between the model output and the GIH estimator per sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GihAgreement {
    /// Mean l1 distance over sequences with at least one history match.
    pub mean_l1: f64,
    /// `(l1, match_count)` for every sequence.
    pub per_sequence: Vec<(f64, usize)>,
    /// Sequences without any match (the estimator used its fallback).
    pub no_match: usize,
}

pub fn gih_agreement(
    params: &ModelParams<f64>,
    seqs: &[Vec<usize>],
    s_star: &Subset,
    masking: Masking,
) -> Result<GihAgreement> {
    use rayon::prelude::*;
    let d = params.shape.vocab;
    let m = params.shape.window;
    let per_sequence = seqs
        .par_iter()
        .map(|seq| {
            let prompt = &seq[..seq.len() - 1];
            let y = forward_with(params, prompt, masking)?.y;
            let g = gih_predict::<f64>(prompt, d, s_star, m)?;
            let l1 = y.iter().zip(&g.probs).map(|(a, b)| (a - b).abs()).sum();
            Ok((l1, g.match_count))
        })
        .collect::<Result<Vec<(f64, usize)>>>()?;
    let matched: Vec<f64> = per_sequence
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|(l, _)| *l)
        .collect();
    let mean_l1 = if matched.is_empty() {
        f64::NAN
    } else {
        matched.iter().sum::<f64>() / matched.len() as f64
    };
    Ok(GihAgreement {
        mean_l1,
        no_match: per_sequence.len() - matched.len(),
        per_sequence,
    })
}

/// Misspecification errors `Delta_1 = 1 - p_{S*}` and
/// `Delta_2 = 1 - prod_{h in S*} (sigma^(h)_{-h})^2`.
pub fn misspecification(params: &ModelParams<f64>, s_star: &Subset) -> Result<(f64, f64)> {
    let idx = params
        .subsets
        .index_of(s_star)
        .ok_or_else(|| Error::domain(format!("{s_star} is not in [H]_<=D")))?;
    let d1 = 1.0 - params.subset_weights()[idx];
    let mut prod = 1.0;
    for &h in s_star.elems() {
        if h > params.shape.heads || h > params.shape.window {
            return Err(Error::domain(format!("head {h} has no lag -{h}")));
        }
        let s = params.rpe_softmax(h - 1)[h - 1];
        prod *= s * s;
    }
    Ok((d1, 1.0 - prod))
}

/// Initialization-gap diagnostic for the RPE weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaWDiagnostic {
    /// `min_h (w^(h)_{-h} - max_{j != h} w^(h)_{-j})`.
    pub actual: f64,
    /// `log(M - 1) - log((1 + gap / (14 I(S*)))^(1/(2H)) - 1)`.
    pub required: f64,
    pub satisfied: bool,
}

pub fn delta_w_diagnostic(
    params: &ModelParams<f64>,
    info_gap: f64,
    mi_star: f64,
) -> DeltaWDiagnostic {
    let sh = params.shape;
    let actual = (0..sh.heads.min(sh.window))
        .map(|h| {
            let row = &params.rpe[h];
            let other = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != h)
                .map(|(_, &w)| w)
                .fold(f64::NEG_INFINITY, f64::max);
            row[h] - other
        })
        .fold(f64::INFINITY, f64::min);
    let m1 = (sh.window as f64 - 1.0).max(f64::MIN_POSITIVE);
    let inner = (1.0 + info_gap / (14.0 * mi_star)).powf(1.0 / (2.0 * sh.heads as f64)) - 1.0;
    let required = m1.ln() - inner.ln();
    DeltaWDiagnostic {
        actual,
        required,
        satisfied: actual >= required,
    }
}
