use agifl_core::fedavg::aggregate;
use agifl_core::model::ParamVector;
use agifl_core::oracle;
use proptest::collection::vec;
use proptest::prelude::*;

fn updates_strategy() -> impl Strategy<Value = Vec<(Vec<f64>, usize)>> {
    (1usize..8).prop_flat_map(|len| vec((vec(-1e3f64..1e3, len), 1usize..1000), 1..10))
}

proptest! {
    #[test]
    fn aggregate_stays_in_the_convex_hull(updates in updates_strategy()) {
        let params: Vec<(ParamVector, usize)> = updates.iter().map(|(v, n)| (ParamVector::new(v.clone()), *n)).collect();
        let agg = aggregate(params.iter().map(|(p, n)| (p, *n))).unwrap();
        for i in 0..agg.len() {
            let lo = updates.iter().map(|(v, _)| v[i]).fold(f64::INFINITY, f64::min);
            let hi = updates.iter().map(|(v, _)| v[i]).fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
            prop_assert!(agg.as_slice()[i] >= lo - slack && agg.as_slice()[i] <= hi + slack);
        }
    }

    #[test]
    fn scaling_sample_counts_changes_nothing(updates in updates_strategy(), k in 2usize..50) {
        let params: Vec<(ParamVector, usize)> = updates.iter().map(|(v, n)| (ParamVector::new(v.clone()), *n)).collect();
        let a = aggregate(params.iter().map(|(p, n)| (p, *n))).unwrap();
        let b = aggregate(params.iter().map(|(p, n)| (p, *n * k))).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn matches_hand_rule(updates in updates_strategy()) {
        let params: Vec<(ParamVector, usize)> = updates.iter().map(|(v, n)| (ParamVector::new(v.clone()), *n)).collect();
        let ours = aggregate(params.iter().map(|(p, n)| (p, *n))).unwrap();
        let hand = oracle::weighted_mean(&updates.iter().map(|(v, n)| (v.clone(), *n as u64)).collect::<Vec<_>>()).unwrap();
        for (x, y) in ours.as_slice().iter().zip(&hand) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}
