use hazardnav::controller::{
    mppi_step, rollout_cost, softmin_weights, ControlSequence, CostWeights, MppiConfig, PathTrack, RobotLimits,
    RobotState,
};
use hazardnav::{fuse, propagate_costs, Anxiety, AnxietyScoreMap, Cell, GaussianCostMap, GaussianParams, GridSpec, ObstacleMap, Pose2D};
use proptest::prelude::*;

/// 8 m x 3 m corridor with walls along both long sides.
fn corridor() -> GaussianCostMap {
    let spec = GridSpec::new(31, 81, 0.1, [0.0, 0.0]).unwrap();
    let mut obs = ObstacleMap::empty(spec);
    for col in 0..81 {
        obs.set(Cell::new(0, col), true);
        obs.set(Cell::new(30, col), true);
    }
    fuse(&obs, &GaussianCostMap::zeros(spec)).unwrap()
}

fn centerline() -> PathTrack {
    PathTrack::new((5..=75).map(|i| [i as f64 * 0.1, 1.5]).collect())
}

#[test]
fn mppi_converges_on_corridor_fixture() {
    let map = corridor();
    let path = centerline();
    let (config, weights, limits) = (MppiConfig::default(), CostWeights::default(), RobotLimits::default());
    let state = RobotState::at(Pose2D::new(0.5, 1.2, 0.3));
    let mut nominal = ControlSequence::zeros(config.horizon, config.dt);
    let initial = rollout_cost(&state, &nominal, &map, &path, &weights, &limits);
    for it in 0..50 {
        let out = mppi_step(&state, &nominal, &map, &path, &config, &weights, &limits, 1000 + it);
        let sum: f64 = out.weights.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12, "iteration {it}: weights sum to {sum}");
        assert!(out.weights.iter().all(|&w| w >= 0.0));
        assert!(!out.stuck);
        assert!(limits.within(out.command));
        assert!(out.optimized.controls.iter().all(|&u| limits.within(u)));
        nominal = out.optimized;
    }
    let last = rollout_cost(&state, &nominal, &map, &path, &weights, &limits);
    assert!(last <= initial, "cost rose from {initial} to {last}");
}

#[test]
fn rollout_through_halo_costs_more_than_around_it() {
    let spec = GridSpec::new(50, 60, 0.1, [0.0, 0.0]).unwrap();
    let mut anx = AnxietyScoreMap::empty(spec);
    anx.set(Cell::new(20, 30), Anxiety::new(3).unwrap());
    let map = propagate_costs(&anx, &GaussianParams::default()).unwrap();
    // path midway between the two rollouts so deviation terms match
    let path = PathTrack::new((0..=55).map(|i| [i as f64 * 0.1, 2.6]).collect());
    let (w, l) = (CostWeights::default(), RobotLimits::default());
    let go = ControlSequence::constant(30, 0.1, [1.0, 0.0]);
    let mut through = RobotState::at(Pose2D::new(1.0, 2.0, 0.0));
    let mut around = RobotState::at(Pose2D::new(1.0, 3.2, 0.0));
    through.v = 1.0;
    around.v = 1.0;
    let a = rollout_cost(&through, &go, &map, &path, &w, &l);
    let b = rollout_cost(&around, &go, &map, &path, &w, &l);
    assert!(a > b + 1.0, "through {a}, around {b}");
}

fn sequence(h: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-2.0f64..2.0, -3.0f64..3.0).prop_map(|(v, w)| [v, w]), h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmin_is_a_distribution(costs in prop::collection::vec(0.0f64..5000.0, 1..300), lambda in 0.01f64..100.0) {
        let w = softmin_weights(&costs, lambda);
        let sum: f64 = w.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        // the cheapest sample gets the largest weight
        let imin = costs.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        prop_assert!(w.iter().all(|&x| x <= w[imin]));
    }

    #[test]
    fn commands_stay_within_limits(
        x in 0.5f64..7.5, y in 0.4f64..2.6, th in -3.1f64..3.1, v in -1.0f64..1.0, om in -1.5f64..1.5,
        controls in sequence(10), seed in any::<u64>(),
    ) {
        let map = corridor();
        let limits = RobotLimits::default();
        let config = MppiConfig { samples: 32, horizon: 10, ..MppiConfig::default() };
        let state = RobotState { pose: Pose2D::new(x, y, th), v, omega: om };
        let nominal = ControlSequence { controls, dt: 0.1 };
        let out = mppi_step(&state, &nominal, &map, &centerline(), &config, &CostWeights::default(), &limits, seed);
        prop_assert!(limits.within(out.command));
        prop_assert!(out.nominal.controls.iter().all(|&u| limits.within(u)));
        prop_assert_eq!(out.nominal.horizon(), 10);
    }
}
