use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;

use robust_itr::eval::{bpoe_oracle, bpoe_scan, cvar_oracle, empirical_v1};
use robust_itr::objective::{active_indices, epsilon_active_set, sampled_objective};
use robust_itr::{Criterion, DcObjective, KernelModel, SampleState, SurrogateLoss};

fn criterion() -> impl Strategy<Value = Criterion> {
    prop_oneof![
        (0.05..0.95f64).prop_map(|gamma| Criterion::Cvar { gamma }),
        (1..30u32).prop_map(|k| Criterion::Bpoe {
            tau: k as f64 * 0.1 + 0.05
        }),
        Just(Criterion::Mean),
    ]
}

prop_compose! {
    fn instance()(n in 2..25usize)(
        criterion in criterion(),
        x in prop::collection::vec(0.0..1.0f64, n),
        times in prop::collection::vec(1..40u32, n),
        signs in prop::collection::vec(any::<bool>(), n),
        weights in prop::collection::vec(0.0..3.0f64, n),
        beta in prop::collection::vec(-2.0..2.0f64, n),
        draws in prop::collection::vec(0..n, 1..3 * n),
    ) -> (DcObjective, DVector<f64>, Vec<usize>) {
        let x: Vec<Vec<f64>> = x.into_iter().map(|v| vec![v]).collect();
        let kernel = Arc::new(KernelModel::new(&x, Some(0.5), None).unwrap());
        let obj = DcObjective::new(
            criterion,
            kernel,
            times.into_iter().map(|t| t as f64 * 0.1).collect(),
            signs.into_iter().map(|s| if s { 1.0 } else { -1.0 }).collect(),
            weights,
            0.05,
            SurrogateLoss::default(),
        )
        .unwrap();
        (obj, DVector::from_vec(beta), draws)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn prefix_sums_match_direct_sums((obj, beta, draws) in instance()) {
        let state = SampleState::from_indices(obj.len(), &draws);
        let problem = obj.sampled(&state);
        let (_, u) = obj.margins(&beta);
        let fast = problem.inner_values(&u);
        for (k, v) in fast.iter().enumerate() {
            let direct = problem.inner_value_direct(&u, k);
            prop_assert!((v - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn sampled_dc_identity((obj, beta, draws) in instance()) {
        let state = SampleState::from_indices(obj.len(), &draws);
        let problem = obj.sampled(&state);
        let v = sampled_objective(&obj, &state, &beta);
        prop_assert!((problem.dc_value(&beta) - v).abs() <= 1e-10 * (1.0 + v.abs()));
    }

    #[test]
    fn active_sets_grow_with_epsilon((obj, beta, draws) in instance(), eps in 0.0..0.5f64) {
        let state = SampleState::from_indices(obj.len(), &draws);
        let e = obj.sampled(&state).evaluate(&beta);
        let small = epsilon_active_set(&obj, &state, &beta, eps);
        let large = epsilon_active_set(&obj, &state, &beta, 2.0 * eps + 1e-3);
        prop_assert!(e.argmin.iter().all(|k| small.contains(k)));
        prop_assert!(small.iter().all(|k| large.contains(k)));
        prop_assert_eq!(active_indices(&e.inner, 0.0), e.argmin);
    }

    #[test]
    fn sample_states_only_grow(n in 1..40usize, a in prop::collection::vec(0..40usize, 0..30), b in prop::collection::vec(0..40usize, 0..30)) {
        let a: Vec<usize> = a.into_iter().map(|i| i % n).collect();
        let b: Vec<usize> = b.into_iter().map(|i| i % n).collect();
        let before = SampleState::from_indices(n, &a);
        let mut after = before.clone();
        after.extend(&b);
        prop_assert!(after.contains(&before));
        prop_assert_eq!(after.len(), a.len() + b.len());
    }

    #[test]
    fn tail_mean_is_monotone_and_bounded(t in prop::collection::vec(0.0..10.0f64, 1..50), g in 0.01..0.98f64) {
        let lo = empirical_v1(&t, g);
        let hi = empirical_v1(&t, g + 0.01);
        let min = t.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        prop_assert!(hi >= lo - 1e-12);
        prop_assert!(lo >= g * min - 1e-12 && lo <= g * mean + 1e-12);
        prop_assert!((lo - cvar_oracle(&t, g)).abs() <= 1e-10);
    }

    #[test]
    fn buffered_probability_scan_matches_oracle(t in prop::collection::vec(0.0..10.0f64, 1..50), tau in 0.0..10.0f64) {
        let b = bpoe_oracle(&t, tau);
        prop_assert!((0.0..=1.0).contains(&b));
        let (scan, _) = bpoe_scan(&t, tau);
        prop_assert!((scan - b).abs() <= 1e-9, "scan {} oracle {}", scan, b);
    }
}
