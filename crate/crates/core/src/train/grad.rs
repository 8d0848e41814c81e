use rayon::prelude::*;

use crate::error::Result;
use crate::model::{FirstLayer, Masking, ModelParams};
use crate::scalar::{softmax_into, Scalar};

/// Sequences per parallel work unit. Partial sums are reduced in chunk
/// order, so results do not depend on the thread count.
const CHUNK: usize = 32;

/// Which parameter groups to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Groups {
    pub a: bool,
    pub w: bool,
    pub c: bool,
}

impl Groups {
    pub const ALL: Groups = Groups {
        a: true,
        w: true,
        c: true,
    };
    pub const NONE: Groups = Groups {
        a: false,
        w: false,
        c: false,
    };
    pub const A: Groups = Groups {
        a: true,
        ..Groups::NONE
    };
    pub const W: Groups = Groups {
        w: true,
        ..Groups::NONE
    };
    pub const C: Groups = Groups {
        c: true,
        ..Groups::NONE
    };
}

/// Gradient of the batch loss, laid out like [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient<T> {
    pub a: T,
    pub w: Vec<Vec<T>>,
    pub c: Vec<T>,
}

impl<T: Scalar> Gradient<T> {
    pub fn zeros(params: &ModelParams<T>) -> Self {
        Gradient {
            a: T::zero(),
            w: vec![vec![T::zero(); params.shape.window]; params.shape.heads],
            c: vec![T::zero(); params.ffn.len()],
        }
    }

    fn add_assign(&mut self, other: &Self) {
        self.a = self.a + other.a;
        for (r, o) in self.w.iter_mut().zip(&other.w) {
            for (x, &y) in r.iter_mut().zip(o) {
                *x = *x + y;
            }
        }
        for (x, &y) in self.c.iter_mut().zip(&other.c) {
            *x = *x + y;
        }
    }

    fn scale(&mut self, k: T) {
        self.a = self.a * k;
        self.w.iter_mut().flatten().for_each(|x| *x = *x * k);
        self.c.iter_mut().for_each(|x| *x = *x * k);
    }

    /// Flattened in [`ModelParams::to_flat`] order.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = vec![self.a];
        for r in &self.w {
            out.extend_from_slice(r);
        }
        out.extend_from_slice(&self.c);
        out
    }
}

/// First-layer inner products `<v_l^(h), v_{L+1}^(h)>` of one sequence,
/// `[key][head]`. Constant while the RPE weights are frozen.
#[derive(Clone, Debug)]
pub struct CachedDots<T> {
    pub first_key: usize,
    pub dots: Vec<T>,
}

impl<T: Scalar> CachedDots<T> {
    pub fn new(params: &ModelParams<T>, seq: &[usize], masking: Masking) -> Result<Self> {
        let first = FirstLayer::new(params, prompt_of(seq), masking)?;
        Ok(Self::from_first(&first))
    }

    fn from_first(first: &FirstLayer<T>) -> Self {
        let dots = (0..first.num_keys())
            .flat_map(|k| first.dots_of_key(k).to_vec())
            .collect();
        CachedDots {
            first_key: first.first_key(),
            dots,
        }
    }
}

pub fn cache_dots<T: Scalar>(
    params: &ModelParams<T>,
    seqs: &[Vec<usize>],
    masking: Masking,
) -> Result<Vec<CachedDots<T>>> {
    seqs.par_iter()
        .map(|s| CachedDots::new(params, s, masking))
        .collect()
}

fn prompt_of(seq: &[usize]) -> &[usize] {
    &seq[..seq.len() - 1]
}

/// Per-call constants shared by every sequence.
struct Ctx<'a, T> {
    params: &'a ModelParams<T>,
    p_s: Vec<T>,
    c_norm: T,
    eps: T,
    groups: Groups,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    fn new(params: &'a ModelParams<T>, eps: T, groups: Groups) -> Self {
        Ctx {
            params,
            p_s: params.subset_weights(),
            c_norm: params.c_norm(),
            eps,
            groups,
        }
    }

    /// `prod_{h in S} dots[h]` for every subset.
    fn kernel_row(&self, dots: &[T], out: &mut Vec<T>) {
        out.clear();
        for sub in self.params.subsets.subsets() {
            out.push(sub.elems().iter().fold(T::one(), |acc, &h| acc * dots[h - 1]));
        }
    }

    /// Loss of one sequence, accumulating its gradient into `grad`.
    fn accumulate(
        &self,
        seq: &[usize],
        dots: &[T],
        first_key: usize,
        first: Option<&FirstLayer<T>>,
        grad: &mut Gradient<T>,
    ) -> T {
        let params = self.params;
        let hh = params.shape.heads;
        let nk = dots.len() / hh;
        let len_l = seq.len() - 1;
        let target = seq[len_l];
        let mut krow = Vec::new();
        let mut s = Vec::with_capacity(nk);
        for k in 0..nk {
            self.kernel_row(&dots[k * hh..(k + 1) * hh], &mut krow);
            s.push(krow.iter().zip(&self.p_s).map(|(&x, &p)| x * p).sum());
        }
        let logits: Vec<T> = s.iter().map(|&x| params.a * x).collect();
        let mut alpha = Vec::with_capacity(nk);
        softmax_into(&logits, &mut alpha);
        let hit = |k: usize| seq[first_key + k] == target;
        let y_t: T = (0..nk).filter(|&k| hit(k)).map(|k| alpha[k]).sum();
        let denom = y_t + self.eps;
        let loss = -denom.ln();
        if self.groups == Groups::NONE {
            return loss;
        }
        // 1 - y_t as the mass on other tokens, free of cancellation
        let y_miss: T = (0..nk).filter(|&k| !hit(k)).map(|k| alpha[k]).sum();
        // r_k = alpha_k (1[x_k = t] - y_t); dl/ds_k = -a r_k / (y_t + eps)
        let r: Vec<T> = (0..nk)
            .map(|k| alpha[k] * if hit(k) { y_miss } else { -y_t })
            .collect();
        if self.groups.a {
            let ga: T = r.iter().zip(&s).map(|(&rk, &sk)| rk * sk).sum();
            grad.a = grad.a - ga / denom;
        }
        let g: Vec<T> = r.iter().map(|&rk| -params.a * rk / denom).collect();
        if self.groups.c {
            let two = T::lit(2.0);
            for k in 0..nk {
                if g[k] == T::zero() {
                    continue;
                }
                self.kernel_row(&dots[k * hh..(k + 1) * hh], &mut krow);
                for (idx, &c) in params.ffn.iter().enumerate() {
                    grad.c[idx] = grad.c[idx] + g[k] * two * c / self.c_norm * (krow[idx] - s[k]);
                }
            }
        }
        if self.groups.w {
            let first = first.expect("w-gradient needs the first layer");
            let m = params.shape.window;
            for k in 0..nk {
                if g[k] == T::zero() {
                    continue;
                }
                let pos = first_key + k;
                let dk = &dots[k * hh..(k + 1) * hh];
                for h in 0..hh {
                    let q = self.partial_score(dk, h + 1);
                    if q == T::zero() {
                        continue;
                    }
                    let coef = g[k] * q;
                    let dot = dk[h];
                    let vq = first.query_v(h);
                    let vp = first.v_at(pos, h);
                    let wk = first.window_weights(pos, h);
                    let wq = &first.sigma_rpe[h];
                    for i in 0..m {
                        let mut term = wq[i] * (vp[seq[len_l - i - 1]] - dot);
                        if i < wk.len() {
                            term = term + wk[i] * (vq[seq[pos - i - 1]] - dot);
                        }
                        grad.w[h][i] = grad.w[h][i] + coef * term;
                    }
                }
            }
        }
        loss
    }

    /// `ds/d<v^h, v_q^h> = sum_{S containing h} p_S prod_{h' in S \ h} dots`.
    fn partial_score(&self, dots: &[T], h: usize) -> T {
        let mut out = T::zero();
        for (sub, &p) in self.params.subsets.subsets().iter().zip(&self.p_s) {
            if !sub.contains(h) {
                continue;
            }
            let prod = sub
                .elems()
                .iter()
                .filter(|&&e| e != h)
                .fold(T::one(), |acc, &e| acc * dots[e - 1]);
            out = out + p * prod;
        }
        out
    }
}

fn reduce<T: Scalar>(
    params: &ModelParams<T>,
    n: usize,
    parts: Vec<(T, Gradient<T>)>,
) -> (T, Gradient<T>) {
    let mut loss = T::zero();
    let mut grad = Gradient::zeros(params);
    for (l, g) in parts {
        loss = loss + l;
        grad.add_assign(&g);
    }
    let inv = T::one() / T::of_usize(n.max(1));
    grad.scale(inv);
    (loss * inv, grad)
}

/// Mean loss `-log(y(x_{L+1}) + eps)` and its gradient for the requested
/// groups over a batch of sequences `x_{1:L+1}`.
pub fn loss_and_grad<T: Scalar>(
    params: &ModelParams<T>,
    seqs: &[Vec<usize>],
    eps: T,
    masking: Masking,
    groups: Groups,
) -> Result<(T, Gradient<T>)> {
    let ctx = Ctx::new(params, eps, groups);
    let parts = seqs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = Gradient::zeros(params);
            let mut loss = T::zero();
            for seq in chunk {
                let first = FirstLayer::new(params, prompt_of(seq), masking)?;
                let cached = CachedDots::from_first(&first);
                let l = ctx.accumulate(seq, &cached.dots, cached.first_key, Some(&first), &mut g);
                loss = loss + l;
            }
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce(params, seqs.len(), parts))
}

/// Like [`loss_and_grad`] with precomputed first-layer products; the RPE
/// weights must be the ones the cache was built with, and `groups.w` must
/// be off.
pub fn loss_and_grad_cached<T: Scalar>(
    params: &ModelParams<T>,
    seqs: &[Vec<usize>],
    cache: &[CachedDots<T>],
    eps: T,
    groups: Groups,
) -> (T, Gradient<T>) {
    assert!(!groups.w, "cached first layer cannot give w-gradients");
    assert_eq!(seqs.len(), cache.len());
    let ctx = Ctx::new(params, eps, groups);
    let parts = seqs
        .par_chunks(CHUNK)
        .zip(cache.par_chunks(CHUNK))
        .map(|(sc, cc)| {
            let mut g = Gradient::zeros(params);
            let mut loss = T::zero();
            for (seq, c) in sc.iter().zip(cc) {
                loss = loss + ctx.accumulate(seq, &c.dots, c.first_key, None, &mut g);
            }
            (loss, g)
        })
        .collect();
    reduce(params, seqs.len(), parts)
}

/// Mean cross-entropy `-log(y(x_{L+1}) + eps)`.
pub fn ce_loss<T: Scalar>(
    params: &ModelParams<T>,
    seqs: &[Vec<usize>],
    eps: T,
    masking: Masking,
) -> Result<T> {
    Ok(loss_and_grad(params, seqs, eps, masking, Groups::NONE)?.0)
}

pub fn grad_c<T: Scalar>(params: &ModelParams<T>, seqs: &[Vec<usize>], eps: T) -> Result<Vec<T>> {
    Ok(loss_and_grad(params, seqs, eps, Masking::Masked, Groups::C)?.1.c)
}

pub fn grad_w<T: Scalar>(
    params: &ModelParams<T>,
    seqs: &[Vec<usize>],
    eps: T,
) -> Result<Vec<Vec<T>>> {
    Ok(loss_and_grad(params, seqs, eps, Masking::Masked, Groups::W)?.1.w)
}

pub fn grad_a<T: Scalar>(params: &ModelParams<T>, seqs: &[Vec<usize>], eps: T) -> Result<T> {
    Ok(loss_and_grad(params, seqs, eps, Masking::Masked, Groups::A)?.1.a)
}
