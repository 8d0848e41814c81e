use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::scalar::{softmax, softmax_into, Scalar};

/// Which positions the second attention may read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Masking {
    /// Keys `l in [M+1, L]` only.
    #[default]
    Masked,
    /// Keys `l in [1, L]`; positions with fewer than `M` predecessors use the
    /// RPE softmax renormalized over the lags that exist.
    Unmasked,
}

/// First attention layer outputs. Depends on the RPE weights and the prompt
/// only, so it can be reused while `a` and `c_S` change.
#[derive(Clone, Debug, PartialEq)]
pub struct FirstLayer<T> {
    heads: usize,
    vocab: usize,
    window: usize,
    len_l: usize,
    first_key: usize,
    /// `softmax(w^(h))` per head.
    pub sigma_rpe: Vec<Vec<T>>,
    /// `v` for 0-based positions `first_key..=L` (the last one is the query
    /// slot `L + 1`), laid out `[pos][head][token]`.
    v: Vec<T>,
    /// `<v_l^(h), v_{L+1}^(h)>` for key positions, laid out `[pos][head]`.
    dots: Vec<T>,
    /// Renormalized weights for positions with a truncated window,
    /// `[pos][head][lag - 1]`.
    truncated: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> FirstLayer<T> {
    pub fn new(params: &ModelParams<T>, prompt: &[usize], masking: Masking) -> Result<Self> {
        let sh = params.shape;
        let (m, hh, d) = (sh.window, sh.heads, sh.vocab);
        let len_l = prompt.len();
        if len_l <= m {
            return Err(Error::domain(format!(
                "prompt length {len_l} must exceed the window M = {m}"
            )));
        }
        if let Some(&t) = prompt.iter().find(|&&t| t >= d) {
            return Err(Error::domain(format!("token {t} outside vocabulary of size {d}")));
        }
        let first_key = match masking {
            Masking::Masked => m,
            Masking::Unmasked => 0,
        };
        let sigma_rpe: Vec<Vec<T>> = (0..hh).map(|h| params.rpe_softmax(h)).collect();
        let truncated: Vec<Vec<Vec<T>>> = (first_key..m)
            .map(|pos| {
                (0..hh)
                    .map(|h| {
                        let mut w = Vec::new();
                        softmax_into(&params.rpe[h][..pos], &mut w);
                        w
                    })
                    .collect()
            })
            .collect();
        let mut layer = FirstLayer {
            heads: hh,
            vocab: d,
            window: m,
            len_l,
            first_key,
            sigma_rpe,
            v: vec![T::zero(); (len_l + 1 - first_key) * hh * d],
            dots: vec![T::zero(); (len_l - first_key) * hh],
            truncated,
        };
        for pos in first_key..=len_l {
            for h in 0..hh {
                let base = ((pos - first_key) * hh + h) * d;
                let weights = layer.window_weights(pos, h).to_vec();
                for (i, &w) in weights.iter().enumerate() {
                    let tok = prompt[pos - i - 1];
                    layer.v[base + tok] = layer.v[base + tok] + w;
                }
            }
        }
        for pos in first_key..len_l {
            for h in 0..hh {
                let dot = layer
                    .v_at(pos, h)
                    .iter()
                    .zip(layer.v_at(len_l, h))
                    .map(|(&x, &y)| x * y)
                    .sum();
                layer.dots[(pos - first_key) * hh + h] = dot;
            }
        }
        Ok(layer)
    }

    pub fn len_l(&self) -> usize {
        self.len_l
    }

    /// 0-based position of the first key (`M` when masked, 0 otherwise).
    pub fn first_key(&self) -> usize {
        self.first_key
    }

    pub fn num_keys(&self) -> usize {
        self.len_l - self.first_key
    }

    /// Attention weights of head `h` at 0-based position `pos` over lags
    /// `1..=min(M, pos)`.
    pub fn window_weights(&self, pos: usize, h: usize) -> &[T] {
        if pos >= self.window {
            &self.sigma_rpe[h]
        } else {
            &self.truncated[pos - self.first_key][h]
        }
    }

    /// `v^(h)` at 0-based position `pos` (`pos = L` is the query slot).
    pub fn v_at(&self, pos: usize, h: usize) -> &[T] {
        let base = ((pos - self.first_key) * self.heads + h) * self.vocab;
        &self.v[base..base + self.vocab]
    }

    pub fn query_v(&self, h: usize) -> &[T] {
        self.v_at(self.len_l, h)
    }

    /// Per-head inner products with the query for key `k` (0-based among keys).
    pub fn dots_of_key(&self, k: usize) -> &[T] {
        &self.dots[k * self.heads..(k + 1) * self.heads]
    }
}

/// Everything computed by one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    pub first: FirstLayer<T>,
    /// `prod_{h in S} <v_l^(h), v_{L+1}^(h)>`, laid out `[key][subset]`.
    pub kernel: Vec<T>,
    /// Similarity scores `s_l = <u_l, u_{L+1}>` per key.
    pub s: Vec<T>,
    /// Second attention probabilities `softmax(a * s)` per key.
    pub attn2: Vec<T>,
    /// Output distribution over the vocabulary.
    pub y: Vec<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn num_subsets(&self) -> usize {
        self.kernel.len() / self.s.len().max(1)
    }

    pub fn kernel_of_key(&self, k: usize) -> &[T] {
        let n = self.num_subsets();
        &self.kernel[k * n..(k + 1) * n]
    }
}

/// FFN kernel, normalization and second attention on top of a cached
/// [`FirstLayer`].
pub fn second_layer<T: Scalar>(
    params: &ModelParams<T>,
    first: FirstLayer<T>,
    prompt: &[usize],
) -> ForwardTrace<T> {
    let p_s = params.subset_weights();
    let subsets = params.subsets.subsets();
    let nk = first.num_keys();
    let mut kernel = Vec::with_capacity(nk * subsets.len());
    let mut s = Vec::with_capacity(nk);
    for k in 0..nk {
        let dots = first.dots_of_key(k);
        let mut score = T::zero();
        for (sub, &w) in subsets.iter().zip(&p_s) {
            let prod = sub
                .elems()
                .iter()
                .fold(T::one(), |acc, &h| acc * dots[h - 1]);
            kernel.push(prod);
            score = score + w * prod;
        }
        s.push(score);
    }
    let logits: Vec<T> = s.iter().map(|&x| params.a * x).collect();
    let attn2 = softmax(&logits);
    let mut y = vec![T::zero(); params.shape.vocab];
    for (k, &alpha) in attn2.iter().enumerate() {
        let tok = prompt[first.first_key() + k];
        y[tok] = y[tok] + alpha;
    }
    ForwardTrace {
        first,
        kernel,
        s,
        attn2,
        y,
    }
}

pub fn forward_with<T: Scalar>(
    params: &ModelParams<T>,
    prompt: &[usize],
    masking: Masking,
) -> Result<ForwardTrace<T>> {
    let first = FirstLayer::new(params, prompt, masking)?;
    Ok(second_layer(params, first, prompt))
}

/// Masked forward pass on the prompt `x_{1:L}`.
pub fn forward<T: Scalar>(params: &ModelParams<T>, prompt: &[usize]) -> Result<ForwardTrace<T>> {
    forward_with(params, prompt, Masking::Masked)
}
