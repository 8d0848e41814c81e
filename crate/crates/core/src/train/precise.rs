//! Double-double (about 32 significant digits) re-evaluation of the loss.
//! Written independently of the f64 forward pass; it serves as the reference
//! in finite-difference checks, where f64 rounding of the loss would
//! otherwise dominate at small steps.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::model::{Masking, ModelParams};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd {
        hi: s,
        lo: (a - (s - bb)) + (b - bb),
    }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd {
        hi: s,
        lo: b - (s - a),
    }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd {
        hi: p,
        lo: a.mul_add(b, -p),
    }
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Dd {
    pub(crate) const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub(crate) const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub(crate) fn new(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub(crate) fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn mul_f64(self, b: f64) -> Dd {
        let p = two_prod(self.hi, b);
        quick_two_sum(p.hi, p.lo + self.lo * b)
    }

    fn ldexp(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    pub(crate) fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).ldexp(-10);
        // Taylor series of exp(r) - 1 with |r| < 4e-4
        let mut term = r;
        let mut sum = r;
        for n in 2..=14 {
            term = (term * r) / Dd::new(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        // (1 + s)^2 - 1 = s (2 + s), ten squarings
        for _ in 0..10 {
            sum = sum * (sum + Dd::new(2.0));
        }
        (sum + Dd::ONE).ldexp(k as i32)
    }

    pub(crate) fn ln(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::new(f64::NAN);
        }
        // one Newton step on exp(y) = x from the f64 logarithm
        let y = Dd::new(self.hi.ln());
        y + self * (-y).exp() - Dd::ONE
    }

    fn max(self, other: Dd) -> Dd {
        if (self - other).hi >= 0.0 {
            self
        } else {
            other
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let s = two_sum(self.hi, b.hi);
        let t = two_sum(self.lo, b.lo);
        let s = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(s.hi, s.lo + t.lo)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let p = two_prod(self.hi, b.hi);
        quick_two_sum(p.hi, p.lo + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        quick_two_sum(q1, q2) + Dd::new(q3)
    }
}

fn softmax(w: &[f64]) -> Vec<Dd> {
    if w.is_empty() {
        return Vec::new();
    }
    let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<Dd> = w.iter().map(|&x| (Dd::new(x) - Dd::new(m)).exp()).collect();
    let z = e.iter().fold(Dd::ZERO, |acc, &x| acc + x);
    e.into_iter().map(|x| x / z).collect()
}

/// Per-head attention vector at 1-based position `l`, over lags
/// `1..=min(M, l - 1)`.
fn window_vec(params: &ModelParams<f64>, seq: &[usize], l: usize, h: usize) -> Vec<Dd> {
    let m = params.shape.window;
    let lags = m.min(l - 1);
    let sigma = softmax(&params.rpe[h][..lags]);
    let mut v = vec![Dd::ZERO; params.shape.vocab];
    for (i, s) in sigma.into_iter().enumerate() {
        let tok = seq[l - (i + 1) - 1];
        v[tok] = v[tok] + s;
    }
    v
}

fn dot(a: &[Dd], b: &[Dd]) -> Dd {
    a.iter().zip(b).fold(Dd::ZERO, |acc, (&x, &y)| acc + x * y)
}

/// Cross-entropy of one sequence `x_{1:L+1}`.
fn sequence_loss(params: &ModelParams<f64>, seq: &[usize], eps: Dd, masking: Masking) -> Dd {
    let sh = params.shape;
    let len_l = seq.len() - 1;
    let target = seq[len_l];
    let cs: Vec<Dd> = params.ffn.iter().map(|&c| Dd::new(c) * Dd::new(c)).collect();
    let cd = cs.iter().fold(Dd::ZERO, |acc, &x| acc + x);
    let query: Vec<Vec<Dd>> = (0..sh.heads)
        .map(|h| window_vec(params, seq, len_l + 1, h))
        .collect();
    let first = match masking {
        Masking::Masked => sh.window + 1,
        Masking::Unmasked => 1,
    };
    let mut logits = Vec::new();
    for l in first..=len_l {
        let dots: Vec<Dd> = (0..sh.heads)
            .map(|h| dot(&window_vec(params, seq, l, h), &query[h]))
            .collect();
        let mut s = Dd::ZERO;
        for (sub, &c2) in params.subsets.subsets().iter().zip(&cs) {
            let prod = sub.elems().iter().fold(Dd::ONE, |acc, &h| acc * dots[h - 1]);
            s = s + c2 * prod;
        }
        logits.push(Dd::new(params.a) * (s / cd));
    }
    let m = logits.iter().copied().fold(Dd::new(f64::NEG_INFINITY), Dd::max);
    let e: Vec<Dd> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z = e.iter().fold(Dd::ZERO, |acc, &x| acc + x);
    let hit = e
        .iter()
        .enumerate()
        .filter(|&(k, _)| seq[first - 1 + k] == target)
        .fold(Dd::ZERO, |acc, (_, &x)| acc + x);
    -(hit / z + eps).ln()
}

/// Mean loss over the batch in double-double arithmetic.
pub(crate) fn precise_loss(
    params: &ModelParams<f64>,
    seqs: &[Vec<usize>],
    eps: f64,
    masking: Masking,
) -> Dd {
    let total = seqs
        .iter()
        .fold(Dd::ZERO, |acc, s| acc + sequence_loss(params, s, Dd::new(eps), masking));
    total / Dd::new(seqs.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_and_ln_are_accurate() {
        for &x in &[-30.5, -1.0, -1e-9, 0.0, 0.3, 1.0, 2.5, 50.0] {
            let e = Dd::new(x).exp();
            assert!((e.to_f64() - x.exp()).abs() <= 2e-16 * x.exp());
            let back = e.ln() - Dd::new(x);
            assert!(back.to_f64().abs() < 1e-28 * (1.0 + x.abs()), "x = {x}");
        }
        // e = 2.718281828459045 + 1.4456468917292502e-16
        let e = Dd::ONE.exp();
        assert_eq!(e.hi, std::f64::consts::E);
        assert!((e.lo - 1.445_646_891_729_250_2e-16).abs() < 1e-31, "{:e}", e.lo);
        let l2 = Dd::new(2.0).ln() - LN2;
        assert!(l2.to_f64().abs() < 1e-31);
    }

    #[test]
    fn division_roundtrip() {
        let a = Dd::new(1.0) / Dd::new(3.0);
        let r = a * Dd::new(3.0) - Dd::ONE;
        assert!(r.to_f64().abs() < 1e-31);
    }
}
