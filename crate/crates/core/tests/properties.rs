use proptest::prelude::*;

use rhflow::fixtures;
use rhflow::flow::{deturck_vector, FlowState, SampleClock};
use rhflow::grid::{curvature, Grid, MapField, TargetSpec};
use rhflow::homogeneous::{closed_form, integrate_model, renormalize, HomogeneousState, Model, ModelKind};
use rhflow::io::{Checkpoint, CheckpointState, RngState, RunConfig};
use rhflow::schedule::CouplingSchedule;
use rhflow::RhError;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 24, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn unnormalized_runs_follow_the_linear_closed_form(alpha in 1.0f64..3.0, t in 0.05f64..1.0) {
        for kind in [ModelKind::Sphere2, ModelKind::ProductS2L] {
            let model = Model::new(kind, false);
            let traj = integrate_model(model, &CouplingSchedule::constant(alpha).unwrap(), t, 1e-3).unwrap();
            let exact = closed_form(model, alpha, t).unwrap();
            prop_assert!((traj.last().c - exact.c).abs() < 1e-10);
            prop_assert!((traj.last().d - exact.d).abs() < 1e-10);
        }
    }

    #[test]
    fn renormalized_product_has_unit_volume(alpha in 0.0f64..3.0) {
        let model = Model::new(ModelKind::ProductS2L, false);
        let sched = CouplingSchedule::constant(alpha).unwrap();
        let traj = integrate_model(model, &sched, 0.3, 1e-3).unwrap();
        let r = renormalize(&traj);
        for s in &r.samples {
            prop_assert!((s.c * s.d - 1.0).abs() < 1e-10);
        }
        prop_assert!(r.samples.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn schedule_values_stay_within_their_nodes(
        values in prop::collection::vec(0.0f64..4.0, 2..6),
        t in -1.0f64..6.0,
    ) {
        let times: Vec<f64> = (0..values.len()).map(|k| k as f64).collect();
        let sched = CouplingSchedule::piecewise_linear(times, values.clone()).unwrap();
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let v = sched.value(t);
        prop_assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
        prop_assert!(sched.min_on(0.0, values.len() as f64) >= lo - 1e-15);
        let h = 1e-7;
        if t > 0.0 && t + h < (values.len() - 1) as f64 && (t.fract() > 1e-6 && t.fract() < 1.0 - 2e-7) {
            let fd = (sched.value(t + h) - sched.value(t)) / h;
            prop_assert!((fd - sched.derivative(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn gauss_bonnet_on_the_torus(seed in 0u64..1000, amp in 0.05f64..0.4) {
        // Total curvature vanishes up to a discretization error that shrinks under refinement.
        let total = |n: usize| {
            let g = fixtures::smooth_metric(Grid::torus(2, n).unwrap(), seed, amp);
            let r = curvature(&g).unwrap().scalar;
            rhflow::grid::integrate(&g, &r).unwrap()
        };
        let (coarse, fine) = (total(24), total(48));
        prop_assert!(fine.abs() < 1e-3, "{fine}");
        prop_assert!(fine.abs() <= coarse.abs() / 8.0 || fine.abs() < 1e-10, "{coarse} -> {fine}");
    }

    #[test]
    fn deturck_field_vanishes_against_itself(seed in 0u64..1000, amp in 0.0f64..0.4) {
        let grid = Grid::torus(2, 16).unwrap();
        let g = fixtures::smooth_metric(grid, seed, amp);
        let v = deturck_vector(&g, &g).unwrap();
        prop_assert!(v.values.iter().all(|x| x[0].abs() < 1e-12 && x[1].abs() < 1e-12));
    }

    #[test]
    fn grid_checkpoints_round_trip(seed in 0u64..1000, index in 0usize..50, word_pos in 0u128..(1u128 << 70)) {
        let grid = Grid::torus(2, 8).unwrap();
        let state = FlowState::new(
            fixtures::smooth_metric(grid, seed, 0.2),
            fixtures::smooth_sphere_map(grid, seed + 1, 0.5, 1.0),
            TargetSpec::sphere(2, 1.0).unwrap(),
        )
        .unwrap();
        let ck = Checkpoint {
            state: CheckpointState::Grid(state),
            schedule: CouplingSchedule::piecewise_linear(vec![0.0, 1.0], vec![1.0, 0.5]).unwrap(),
            clock: SampleClock { origin: 0.25, index },
            rng: RngState { seed, word_pos },
        };
        let bytes = ck.to_bytes();
        prop_assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        prop_assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn corrupted_checkpoints_are_rejected(cut in 0usize..400, flip in 0usize..400, c in 0.1f64..2.0) {
        let ck = Checkpoint {
            state: CheckpointState::Homogeneous {
                model: Model::new(ModelKind::ProductS2L, false),
                state: HomogeneousState { t: 0.1, c, d: 1.2, alpha: 0.5 },
            },
            schedule: CouplingSchedule::constant(0.5).unwrap(),
            clock: SampleClock { origin: 0.0, index: 3 },
            rng: RngState { seed: 1, word_pos: 0 },
        };
        let bytes = ck.to_bytes();
        let cut = cut % bytes.len();
        match Checkpoint::from_bytes(&bytes[..cut]) {
            Err(RhError::Checkpoint { offset, .. }) => prop_assert!(offset <= cut),
            other => prop_assert!(false, "truncated to {cut} bytes: {other:?}"),
        }
        // A flipped byte either fails cleanly or decodes to a different value.
        let mut bad = bytes.clone();
        let i = flip % bad.len();
        bad[i] ^= 0x5a;
        if let Ok(decoded) = Checkpoint::from_bytes(&bad) {
            prop_assert_ne!(decoded, ck);
        }
    }

    #[test]
    fn config_rejects_non_positive_horizons(t_end in -5.0f64..0.0, alpha in 0.0f64..3.0) {
        let json = format!(
            r#"{{"scenario": "homogeneous", "homogeneous": {{"model": "sphere2"}}, "alpha": {alpha}, "t_end": {t_end}}}"#
        );
        match RunConfig::from_json(&json) {
            Err(RhError::Config { key, .. }) => prop_assert_eq!(key, "t_end"),
            other => prop_assert!(false, "{other:?}"),
        }
        let ok = format!(
            r#"{{"scenario": "homogeneous", "homogeneous": {{"model": "sphere2"}}, "alpha": {alpha}, "t_end": {}}}"#,
            -t_end + 0.1
        );
        let resolved = RunConfig::from_json(&ok).unwrap();
        prop_assert_eq!(resolved.schedule().value(0.0), alpha);
        // The resolved form parses back to itself.
        let again = RunConfig::from_json(&resolved.resolved_json()).unwrap();
        prop_assert_eq!(again.resolved_json(), resolved.resolved_json());
    }

    #[test]
    fn constant_maps_have_zero_energy(seed in 0u64..1000, x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let grid = Grid::torus(2, 12).unwrap();
        let n = (x * x + y * y + 1.0).sqrt();
        let phi = MapField::constant(grid, &[x / n, y / n, 1.0 / n]);
        let st = FlowState::new(fixtures::smooth_metric(grid, seed, 0.3), phi, TargetSpec::sphere(2, 1.0).unwrap()).unwrap();
        let d = rhflow::flow::diagnostics(&st, 1.0).unwrap();
        prop_assert!(d.sup_grad_phi_sq < 1e-28);
    }
}
