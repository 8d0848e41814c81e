use crate::error::{Error, Result};
use crate::scalar::{softmax, Scalar};
use crate::subsets::{Subset, SubsetTable};

/// Architecture hyper-parameters `TF(M, H, d, D)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    /// RPE window size `M`.
    pub window: usize,
    pub heads: usize,
    pub vocab: usize,
    /// Maximum FFN degree `D`.
    pub degree: usize,
}

impl ModelShape {
    pub fn new(window: usize, heads: usize, vocab: usize, degree: usize) -> Result<Self> {
        if window == 0 || heads == 0 || vocab < 2 {
            return Err(Error::config(format!(
                "invalid model shape M={window} H={heads} d={vocab}"
            )));
        }
        Ok(ModelShape {
            window,
            heads,
            vocab,
            degree,
        })
    }
}

/// Trainable parameters `{a, w^(h), c_S}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub shape: ModelShape,
    /// Second-attention scale `a`.
    pub a: T,
    /// `rpe[h][i - 1] = w^(h+1)_{-i}` for lags `i = 1..=M`.
    pub rpe: Vec<Vec<T>>,
    /// `c_S`, in `subsets` order.
    pub ffn: Vec<T>,
    pub subsets: SubsetTable,
}

impl<T: Scalar> ModelParams<T> {
    /// All parameters zero.
    pub fn zeros(shape: ModelShape) -> Self {
        let subsets = SubsetTable::new(shape.heads, shape.degree);
        ModelParams {
            shape,
            a: T::zero(),
            rpe: vec![vec![T::zero(); shape.window]; shape.heads],
            ffn: vec![T::zero(); subsets.len()],
            subsets,
        }
    }

    /// `w^(h)_{-h} = diag`, every other in-window RPE entry `off`, all
    /// `c_S = c0`, `a = a0`.
    pub fn diagonal_init(shape: ModelShape, diag: f64, off: f64, c0: f64, a0: f64) -> Self {
        let mut p = Self::zeros(shape);
        for (h, row) in p.rpe.iter_mut().enumerate() {
            for (i, w) in row.iter_mut().enumerate() {
                *w = T::lit(if i == h { diag } else { off });
            }
        }
        p.ffn.iter_mut().for_each(|c| *c = T::lit(c0));
        p.a = T::lit(a0);
        p
    }

    /// The experimental initialization: `w_{-h}^(h) = 3`, other window
    /// entries `0.01`, `c_S = 0.01`, `a = 0.01`.
    pub fn standard_init(shape: ModelShape) -> Self {
        Self::diagonal_init(shape, 3.0, 0.01, 0.01, 0.01)
    }

    /// Parameters implementing the induction-head construction for `s_star`:
    /// `w^(h) = rho * e_{-h}`, `c_{S*} = 1` and every other `c_S = 0`.
    pub fn gih_limit(shape: ModelShape, s_star: &Subset, rho: f64, a: f64) -> Result<Self> {
        let mut p = Self::diagonal_init(shape, rho, 0.0, 0.0, a);
        let idx = p
            .subsets
            .index_of(s_star)
            .ok_or_else(|| Error::domain(format!("{s_star} is not in [H]_<=D")))?;
        p.ffn[idx] = T::one();
        Ok(p)
    }

    /// `C_D = sum_S c_S^2`.
    pub fn c_norm(&self) -> T {
        self.ffn.iter().map(|&c| c * c).sum()
    }

    /// `p_S = c_S^2 / C_D`.
    pub fn subset_weights(&self) -> Vec<T> {
        let cd = self.c_norm();
        self.ffn.iter().map(|&c| c * c / cd).collect()
    }

    /// `softmax(w^(h))` over lags `1..=M`; entry `i - 1` is `sigma_{-i}`.
    pub fn rpe_softmax(&self, head: usize) -> Vec<T> {
        softmax(&self.rpe[head])
    }

    pub fn num_params(&self) -> usize {
        1 + self.shape.heads * self.shape.window + self.ffn.len()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let c = |x: &T| U::lit(x.as_f64());
        ModelParams {
            shape: self.shape,
            a: c(&self.a),
            rpe: self.rpe.iter().map(|r| r.iter().map(c).collect()).collect(),
            ffn: self.ffn.iter().map(c).collect(),
            subsets: self.subsets.clone(),
        }
    }

    /// Flattened view `[a, w (head-major, by lag), c]`, used by
    /// finite-difference checks.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = vec![self.a];
        for row in &self.rpe {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&self.ffn);
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.num_params());
        self.a = flat[0];
        let mut k = 1;
        for row in self.rpe.iter_mut() {
            for w in row.iter_mut() {
                *w = flat[k];
                k += 1;
            }
        }
        self.ffn.copy_from_slice(&flat[k..]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> ModelShape {
        ModelShape::new(3, 3, 3, 2).unwrap()
    }

    #[test]
    fn rpe_softmax_examples() {
        let mut p = ModelParams::<f64>::zeros(shape());
        for v in p.rpe_softmax(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        p.rpe[0] = vec![3.0, 0.01, 0.01];
        let s = p.rpe_softmax(0);
        let expect = 3f64.exp() / (3f64.exp() + 2.0 * 0.01f64.exp());
        assert!((s[0] - expect).abs() < 1e-15);
        assert!((s[0] - 0.9086).abs() < 1e-4);
        let shifted: Vec<f64> = p.rpe[0].iter().map(|w| w + 17.0).collect();
        p.rpe[1] = shifted;
        for (a, b) in p.rpe_softmax(0).iter().zip(p.rpe_softmax(1)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn standard_init_values() {
        let p = ModelParams::<f64>::standard_init(shape());
        assert_eq!(p.rpe[1], vec![0.01, 3.0, 0.01]);
        assert_eq!(p.ffn, vec![0.01; 7]);
        assert_eq!(p.a, 0.01);
        let w = p.subset_weights();
        assert!(w.iter().all(|&x| (x - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn flat_roundtrip() {
        let mut p = ModelParams::<f64>::standard_init(shape());
        let mut flat = p.to_flat();
        assert_eq!(flat.len(), 1 + 9 + 7);
        flat[5] = 2.5;
        p.set_flat(&flat);
        assert_eq!(p.rpe[1][1], 2.5);
        assert_eq!(p.to_flat(), flat);
    }
}
