use std::sync::Arc;

use gih_core::info::{
    chi2_divergence, mi_symmetric_decomposition, modified_chi2_mi, modified_chi2_mi_window,
    select_information_set, vanilla_chi2_mi_window,
};
use gih_core::markov::{
    generate_sequence, read_batch, sample_kernel, sample_symmetric_kernel,
    stationary_distribution, window_index, window_stationary, window_tokens, write_batch,
    ChainBatch, ChainSpec, TransitionKernel,
};
use gih_core::{Subset, SubsetTable};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = Arc<ChainSpec>> {
    (2usize..=4, 1usize..=3, prop::collection::btree_set(1usize..=4, 1..=3), 0.05f64..2.0)
        .prop_map(|(d, _, parents, alpha)| {
            Arc::new(ChainSpec::new(d, parents.into_iter().collect(), alpha).unwrap())
        })
        .prop_filter("state space small enough", |s| s.states() <= 256)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_columns_are_distributions(spec in spec_strategy(), seed in any::<u64>()) {
        let k = sample_kernel::<f64>(&spec, seed);
        let d = spec.vocab();
        let mut min = f64::INFINITY;
        for c in 0..spec.columns() {
            let col = k.column(c);
            prop_assert_eq!(col.len(), d);
            prop_assert!((col.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(col.iter().all(|&p| p >= 0.0));
            min = col.iter().copied().fold(min, f64::min);
        }
        prop_assert_eq!(k.gamma_lb(), min);
        let sums = k.transition_matrix().column_sums();
        prop_assert!(sums.iter().all(|s| (s - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn stationary_law_is_fixed(spec in spec_strategy(), seed in any::<u64>()) {
        let k = sample_kernel::<f64>(&spec, seed);
        let st = stationary_distribution(&k).unwrap();
        prop_assert!((st.dist.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        prop_assert!(st.dist.iter().all(|&p| p >= 0.0));
        if k.gamma_lb() > 0.0 {
            prop_assert!(st.is_primitive);
        }
        let moved = k.transition_matrix().apply(&st.dist);
        let res: f64 = moved.iter().zip(&st.dist).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(res <= 1e-10, "residual {}", res);
    }

    #[test]
    fn window_laws_marginalize_consistently(spec in spec_strategy(), seed in any::<u64>()) {
        let k = sample_kernel::<f64>(&spec, seed);
        let d = spec.vocab();
        let w = spec.r_max() + 1;
        prop_assume!(d.pow(w as u32) <= 4096);
        let big = window_stationary(&k, w).unwrap().dist;
        let small = window_stationary(&k, w - 1).unwrap().dist;
        let tail = small.len();
        let mut old = vec![0.0; tail];
        let mut new = vec![0.0; tail];
        for (i, &p) in big.iter().enumerate() {
            old[i % tail] += p;
            new[i / d] += p;
        }
        for v in [old, new] {
            let e: f64 = v.iter().zip(&small).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(e <= 1e-10, "marginal error {}", e);
        }
    }

    #[test]
    fn sequences_are_reproducible(spec in spec_strategy(), seed in any::<u64>(), len in 5usize..60) {
        prop_assume!(len >= spec.r_max());
        let k = sample_kernel::<f64>(&spec, seed);
        let init = vec![1.0 / spec.states() as f64; spec.states()];
        let a = generate_sequence(&k, &init, len, seed ^ 1).unwrap();
        let b = generate_sequence(&k, &init, len, seed ^ 1).unwrap();
        prop_assert_eq!(a.len(), len + 1);
        prop_assert!(a.iter().all(|&t| t < spec.vocab()));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn window_index_round_trips(d in 2usize..5, toks in prop::collection::vec(0usize..4, 1..6)) {
        let toks: Vec<usize> = toks.into_iter().map(|t| t % d).collect();
        let idx = window_index(&toks, d);
        prop_assert_eq!(window_tokens(idx, d, toks.len()), toks);
    }

    #[test]
    fn symmetric_kernels_have_uniform_laws(d in 2usize..5, two in any::<bool>(), seed in any::<u64>()) {
        let parents = if two { vec![1, 2] } else { vec![2] };
        let spec = Arc::new(ChainSpec::new(d, parents, 1.0).unwrap());
        let k = sample_symmetric_kernel::<f64>(&spec, seed);
        let st = stationary_distribution(&k).unwrap();
        let u = 1.0 / st.dist.len() as f64;
        prop_assert!(st.dist.iter().all(|p| (p - u).abs() <= 1e-10));
    }

    #[test]
    fn modified_mi_scales_vanilla_under_symmetry(seed in any::<u64>()) {
        let spec = Arc::new(ChainSpec::new(3, vec![1, 2], 1.0).unwrap());
        let k = sample_symmetric_kernel::<f64>(&spec, seed);
        let law = window_stationary(&k, 4).unwrap().dist;
        // Z_S is uniform only when S spans at most r_n = 2 consecutive lags
        for s in SubsetTable::new(3, 3).subsets().iter().skip(1) {
            if s.max().unwrap() - s.elems()[0] >= 2 {
                continue;
            }
            let modified = modified_chi2_mi_window(&law, 3, s);
            let vanilla = vanilla_chi2_mi_window(&law, 3, s).unwrap();
            let scaled = vanilla / 3f64.powi(s.len() as i32);
            prop_assert!((modified - scaled).abs() <= 1e-12 * (1.0 + vanilla));
        }
    }

    #[test]
    fn modified_mi_is_nonnegative(spec in spec_strategy(), seed in any::<u64>()) {
        prop_assume!(spec.r_max() <= 3 && spec.vocab() <= 3);
        let k = sample_kernel::<f64>(&spec, seed);
        for s in SubsetTable::new(3, 2).subsets() {
            let v = modified_chi2_mi(s, std::slice::from_ref(&k), 3).unwrap();
            prop_assert!(v >= -1e-15);
        }
    }
}

#[test]
fn empty_set_carries_no_information() {
    let spec = Arc::new(ChainSpec::new(3, vec![1, 2], 0.3).unwrap());
    for seed in 0..10 {
        let k = sample_kernel::<f64>(&spec, seed);
        assert_eq!(modified_chi2_mi(&Subset::empty(), &[k], 3).unwrap(), 0.0);
    }
}

#[test]
fn chi2_of_known_pair() {
    // (0.5 - 0.25)^2 / 0.25 + (0.5 - 0.75)^2 / 0.75
    let v: f64 = chi2_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
    assert!((v - (0.25 + 1.0 / 12.0)).abs() < 1e-15);
}

#[test]
fn table_counts_and_order() {
    let t = SubsetTable::new(3, 2);
    assert_eq!(t.len(), 7);
    assert_eq!(t.codes(), ["000", "100", "010", "001", "110", "101", "011"]);
    assert_eq!(SubsetTable::new(5, 3).len(), 1 + 5 + 10 + 10);
}

#[test]
fn symmetric_decomposition_matches_direct_values() {
    let spec = Arc::new(ChainSpec::new(3, vec![1, 2], 1.0).unwrap());
    let kernels: Vec<TransitionKernel<f64>> =
        (0..5).map(|i| sample_symmetric_kernel(&spec, i)).collect();
    let s = Subset::new(vec![1, 2]).unwrap();
    let dec = mi_symmetric_decomposition(&s, &kernels, 3).unwrap();
    let direct = modified_chi2_mi(&s, &kernels, 3).unwrap();
    assert!((dec.log_vanilla - 2.0 * 3f64.ln() - direct.ln()).abs() < 1e-10);
}

#[test]
fn information_set_of_a_single_parent_chain() {
    let spec = Arc::new(ChainSpec::new(2, vec![2], 1.0).unwrap());
    let k = TransitionKernel::<f64>::perturbed_copy(Arc::clone(&spec), 0.9).unwrap();
    let r = select_information_set(&SubsetTable::new(3, 2), &[k], 3).unwrap();
    assert_eq!(r.s_star_code(), "010");
    assert!(r.info_gap > 0.0);
}

#[test]
fn batches_round_trip_through_files() {
    let spec = Arc::new(ChainSpec::new(3, vec![1, 2], 0.5).unwrap());
    let batch = ChainBatch::generate(&spec, 7, 20, 5, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.batch");
    write_batch(&path, &batch).unwrap();
    let back = read_batch(&path).unwrap();
    assert_eq!(back.sequences, batch.sequences);
    assert_eq!(back.len_l, 20);
    assert_eq!(back.seeds, batch.seeds);
}

#[test]
fn disjoint_index_ranges_give_distinct_data() {
    let spec = Arc::new(ChainSpec::new(3, vec![1, 2], 0.5).unwrap());
    let a = ChainBatch::generate(&spec, 5, 30, 9, 0).unwrap();
    let b = ChainBatch::generate(&spec, 5, 30, 9, 5).unwrap();
    let both = ChainBatch::generate(&spec, 10, 30, 9, 0).unwrap();
    assert_eq!(&both.sequences[..5], &a.sequences[..]);
    assert_eq!(&both.sequences[5..], &b.sequences[..]);
}
