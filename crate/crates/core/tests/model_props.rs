use gih_core::model::{
    embedding_dim, forward, forward_with, phi_explicit, FirstLayer, Masking, ModelParams,
    ModelShape,
};
use gih_core::train::misspecification;
use gih_core::Subset;
use proptest::prelude::*;

fn shape() -> ModelShape {
    ModelShape::new(3, 3, 3, 2).unwrap()
}

fn params_strategy() -> impl Strategy<Value = ModelParams<f64>> {
    (
        -5.0f64..5.0,
        prop::collection::vec(-3.0f64..3.0, 9),
        prop::collection::vec(-1.0f64..1.0, 7),
    )
        .prop_filter("C_D bounded away from zero", |(_, _, c)| {
            c.iter().map(|x| x * x).sum::<f64>() > 1e-3
        })
        .prop_map(|(a, w, c)| {
            let mut p = ModelParams::<f64>::zeros(shape());
            p.a = a;
            for (h, row) in p.rpe.iter_mut().enumerate() {
                row.copy_from_slice(&w[3 * h..3 * h + 3]);
            }
            p.ffn = c;
            p
        })
}

fn prompt_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..3, 4..40)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_equal_explicit_feature_products(p in params_strategy(), x in prompt_strategy()) {
        let tr = forward(&p, &x).unwrap();
        let f = &tr.first;
        let vq: Vec<Vec<f64>> = (0..3).map(|h| f.query_v(h).to_vec()).collect();
        let phi_q = phi_explicit(&p, &vq);
        prop_assert_eq!(phi_q.len(), embedding_dim(3, &p.subsets));
        for k in 0..f.num_keys() {
            let pos = f.first_key() + k;
            let vk: Vec<Vec<f64>> = (0..3).map(|h| f.v_at(pos, h).to_vec()).collect();
            let via_phi = dot(&phi_explicit(&p, &vk), &phi_q) / p.c_norm();
            prop_assert!((via_phi - tr.s[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn feature_inner_products_match_the_kernel(
        p in params_strategy(),
        raw in prop::collection::vec(0.0f64..1.0, 18),
    ) {
        let v: Vec<Vec<f64>> = raw[..9].chunks(3).map(|c| c.to_vec()).collect();
        let w: Vec<Vec<f64>> = raw[9..].chunks(3).map(|c| c.to_vec()).collect();
        let lhs = dot(&phi_explicit(&p, &v), &phi_explicit(&p, &w));
        let rhs: f64 = p
            .subsets
            .subsets()
            .iter()
            .zip(&p.ffn)
            .map(|(s, c)| c * c * s.elems().iter().map(|&h| dot(&v[h - 1], &w[h - 1])).product::<f64>())
            .sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12);
    }

    #[test]
    fn rescaling_c_changes_nothing(
        p in params_strategy(),
        x in prompt_strategy(),
        lambda in 0.01f64..100.0,
    ) {
        let base = forward(&p, &x).unwrap();
        let mut q = p.clone();
        q.ffn.iter_mut().for_each(|c| *c *= lambda);
        let scaled = forward(&q, &x).unwrap();
        for (a, b) in base.s.iter().zip(&scaled.s) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in base.attn2.iter().zip(&scaled.attn2) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in base.y.iter().zip(&scaled.y) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn output_is_a_distribution(
        p in params_strategy(),
        x in prompt_strategy(),
        a in -1000.0f64..1000.0,
        unmasked in any::<bool>(),
    ) {
        let mut p = p;
        p.a = a;
        let m = if unmasked { Masking::Unmasked } else { Masking::Masked };
        let tr = forward_with(&p, &x, m).unwrap();
        prop_assert!(tr.y.iter().all(|&v| v >= 0.0 && v.is_finite()));
        prop_assert!((tr.y.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(tr.s.iter().all(|&s| (-1e-12..=1.0 + 1e-12).contains(&s)));
        // every first-layer vector is a convex combination of one-hot tokens
        let f = &tr.first;
        for pos in f.first_key()..f.len_l() {
            for h in 0..3 {
                let v = f.v_at(pos, h);
                prop_assert!(v.iter().all(|&e| e >= 0.0));
                if pos > 0 {
                    prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn scores_stay_within_the_misspecification_bound(
        rho in 1.0f64..30.0,
        w in prop::collection::vec(-1.0f64..1.0, 9),
        c in prop::collection::vec(-0.3f64..0.3, 7),
        x in prop::collection::vec(0usize..3, 10..40),
    ) {
        let s_star = Subset::new(vec![1, 2]).unwrap();
        let mut p = ModelParams::<f64>::zeros(shape());
        for (h, row) in p.rpe.iter_mut().enumerate() {
            row.copy_from_slice(&w[3 * h..3 * h + 3]);
            row[h] += rho;
        }
        p.ffn = c;
        p.ffn[4] = 1.0;
        let (d1, d2) = misspecification(&p, &s_star).unwrap();
        let tr = forward(&p, &x).unwrap();
        let len_l = x.len();
        for (k, &s) in tr.s.iter().enumerate() {
            let pos = tr.first.first_key() + k;
            // 0-based key position pos is x_{pos+1}; the query is x_{L+1}
            let hit = s_star.elems().iter().all(|&h| x[pos - h] == x[len_l - h]);
            let gap = (s - if hit { 1.0 } else { 0.0 }).abs();
            prop_assert!(gap <= d1 + d2 + 1e-12, "gap {} > {} + {}", gap, d1, d2);
        }
    }
}

#[test]
fn first_layer_does_not_depend_on_a_or_c() {
    let x = vec![0, 1, 2, 2, 1, 0, 0, 1, 2, 1];
    let mut p = ModelParams::<f64>::standard_init(shape());
    let a = FirstLayer::new(&p, &x, Masking::Masked).unwrap();
    p.a = 7.0;
    p.ffn.iter_mut().for_each(|c| *c = -0.4);
    let b = FirstLayer::new(&p, &x, Masking::Masked).unwrap();
    assert_eq!(a, b);
}

#[test]
fn standard_init_window_weight() {
    let p = ModelParams::<f64>::standard_init(shape());
    let e3 = 3f64.exp();
    let want = e3 / (e3 + 2.0 * 0.01f64.exp());
    for h in 0..3 {
        assert!((p.rpe_softmax(h)[h] - want).abs() < 1e-15);
    }
    assert!((want - 0.9086).abs() < 1e-4);
}

#[test]
fn single_precision_agrees_with_double() {
    let p = ModelParams::<f64>::standard_init(shape());
    let x = vec![0, 1, 2, 0, 1, 2, 2, 1, 0, 0, 1, 1, 2, 0];
    let y64 = forward(&p, &x).unwrap().y;
    let y32 = forward(&p.cast::<f32>(), &x).unwrap().y;
    for (a, b) in y64.iter().zip(&y32) {
        assert!((a - *b as f64).abs() < 1e-5);
    }
}
