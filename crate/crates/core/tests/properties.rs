use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use levyx_core::scenario::Scenario;
use levyx_core::switching::{potential, stationary, SwitchingModel};

/// Random irreducible chain: arbitrary weights plus a Hamiltonian cycle.
fn chain() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (1usize..=12).prop_flat_map(|n| {
        (
            prop::collection::vec(0.2f64..5.0, n),
            prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], n), n),
        )
            .prop_map(move |(q, w)| {
                let rows = (0..n)
                    .map(|i| {
                        let mut row = w[i].clone();
                        row[(i + 1) % n] += 0.5;
                        let s: f64 = row.iter().sum();
                        row.iter().map(|v| v / s).collect()
                    })
                    .collect();
                (q, rows)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn stationary_and_potential_identities((q, rows) in chain()) {
        let model = SwitchingModel::from_rows(q.clone(), &rows).unwrap();
        let sp = stationary(&model).unwrap();
        let r0 = potential(&model, &sp).unwrap();
        prop_assert!(sp.embedded_residual(&model) < 1e-10);
        prop_assert!(sp.generator_residual(&model) < 1e-10);
        prop_assert!(sp.identity_residual(&model) < 1e-12);
        prop_assert!((sp.pi.sum() - 1.0).abs() < 1e-12);
        prop_assert!((sp.rho.sum() - 1.0).abs() < 1e-12);
        prop_assert!(sp.pi.iter().all(|&p| p > 0.0));
        prop_assert!(r0.poisson_residual(&model) < 1e-8 * r0.condition.max(1.0));
        prop_assert!(r0.projection_residual() < 1e-8 * r0.condition.max(1.0));
        let inv_q_bar: f64 = sp.rho.iter().zip(&q).map(|(r, q)| r / q).sum();
        prop_assert!((sp.q_bar * inv_q_bar - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scenario_canonical_round_trip(
        (q, rows) in chain(),
        seed in any::<u64>(),
        b in -2.0f64..2.0,
        var in 0.0f64..3.0,
        xi0 in -1.0f64..1.0,
    ) {
        let doc = serde_json::json!({
            "seed": seed,
            "dimension": 1,
            "switching": { "q": q, "P": rows },
            "impulse": {
                "b": { "type": "const", "value": [b] },
                "small_law": { "type": "const", "law": { "kind": "gaussian", "cov": [[var]] } }
            },
            "initial": { "xi0": [xi0], "x0": 0 }
        });
        let s = Scenario::from_json_str(&doc.to_string()).unwrap();
        let canonical = s.canonical_json();
        let again = Scenario::from_json_str(&canonical).unwrap();
        prop_assert_eq!(&again.canonical_json(), &canonical);
        prop_assert_eq!(again.hash(), s.hash());
        let pretty = Scenario::from_json_str(&s.pretty_json()).unwrap();
        prop_assert_eq!(pretty.hash(), s.hash());
        prop_assert_eq!(s.seed, seed);
    }
}

#[test]
fn three_cycle_stationary_law() {
    let rows = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
    let model = SwitchingModel::from_rows(vec![1.0, 2.0, 3.0], &rows).unwrap();
    let sp = stationary(&model).unwrap();
    // Cycle: rho uniform, q̄ = 3 / (1 + 1/2 + 1/3) = 18/11.
    assert!((sp.q_bar - 18.0 / 11.0).abs() < 1e-12);
    let expected = DVector::from_vec(vec![6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]);
    assert!((&sp.pi - expected).amax() < 1e-12);
    let r0 = potential(&model, &sp).unwrap();
    let pi_rows = DMatrix::from_fn(3, 3, |_, j| sp.pi[j]);
    assert!((&r0.projector - pi_rows).amax() < 1e-15);
    assert!(r0.poisson_residual(&model) < 1e-12);
}
