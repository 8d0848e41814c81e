use super::params::ModelParams;
use crate::scalar::Scalar;
use crate::subsets::SubsetTable;

/// Output dimension of the explicit feature map: `sum_S d^|S|`.
pub fn embedding_dim(vocab: usize, subsets: &SubsetTable) -> usize {
    subsets.subsets().iter().map(|s| vocab.pow(s.len() as u32)).sum()
}

/// Explicit monomial features of the per-head vectors `v[h]`.
///
/// Blocks follow the subset table; within a block for `S = {h_1 < .. < h_k}`
/// the entry for tokens `(t_1, .., t_k)` sits at mixed-radix index
/// `t_1 d^(k-1) + .. + t_k` and equals `c_S * prod_j v^(h_j)[t_j]`.
/// Unnormalized: `<phi(v), phi(v')> = sum_S c_S^2 prod_{h in S} <v^h, v'^h>`.
/// Test-only counterpart of the kernel trick used in the forward pass.
pub fn phi_explicit<T: Scalar>(params: &ModelParams<T>, v: &[Vec<T>]) -> Vec<T> {
    let d = params.shape.vocab;
    let mut out = Vec::with_capacity(embedding_dim(d, &params.subsets));
    for (sub, &c) in params.subsets.subsets().iter().zip(&params.ffn) {
        let mut block = vec![c];
        for &h in sub.elems() {
            block = block
                .iter()
                .flat_map(|&p| v[h - 1].iter().map(move |&x| p * x))
                .collect();
        }
        out.extend(block);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;

    #[test]
    fn dimension_for_three_heads_degree_two() {
        let t = SubsetTable::new(3, 2);
        assert_eq!(embedding_dim(3, &t), 37);
    }

    #[test]
    fn one_hot_blocks_have_norm_sqrt_cd() {
        let shape = ModelShape::new(3, 3, 3, 2).unwrap();
        let mut p = ModelParams::<f64>::zeros(shape);
        p.ffn = vec![0.3, -1.0, 2.0, 0.5, 0.7, -0.2, 1.1];
        let v = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        let f = phi_explicit(&p, &v);
        assert_eq!(f.len(), 37);
        let norm2: f64 = f.iter().map(|x| x * x).sum();
        assert!((norm2 - p.c_norm()).abs() < 1e-12);
        // {1,2} block: index t1 * d + t2 = 1 * 3 + 0
        assert_eq!(f[1 + 9 + 3], 0.7);
    }
}
