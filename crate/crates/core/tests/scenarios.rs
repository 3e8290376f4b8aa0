//! Simulation and training scenarios with known qualitative outcomes.

use aklab::bench::{run_overfit, run_sweep, ExperimentConfig};
use aklab::env::{
    bezier_pilot, default_pilot_template, sense, step, EnvironmentGrid, Extent, PdTracker, RobotState, DEFAULT_DT,
    DEFAULT_V_MAX, GOAL_RADIUS,
};
use aklab::gp::{GprModel, NormStats};
use aklab::kernels::{Kernel, RbfKernel};
use aklab::linalg::{cholesky, DenseMatrix};
use aklab::rng::SeededRng;

#[test]
fn robot_reaches_goal_from_rest() {
    for (i, heading) in [0.0, 1.0, 2.5, -3.0, std::f64::consts::PI].into_iter().enumerate() {
        let angle = i as f64 * 1.3;
        let goal = [5.0 * angle.cos(), 5.0 * angle.sin()];
        let mut s = RobotState::at_rest([0.0, 0.0], heading);
        let mut tracker = PdTracker::default();
        let limit = (60.0 / DEFAULT_DT) as usize;
        let reached = (0..limit).any(|_| {
            s = step(&s, tracker.action(&s, goal), DEFAULT_DT, DEFAULT_V_MAX);
            (s.position[0] - goal[0]).hypot(s.position[1] - goal[1]) <= GOAL_RADIUS
        });
        assert!(reached, "heading {heading}: stopped at {:?}", s.position);
    }
}

#[test]
fn sensor_noise_statistics() {
    let e = Extent::new(0.0, 1.0, 0.0, 1.0).unwrap();
    let zeros = EnvironmentGrid::from_fn(3, 3, e, |_, _| 0.0).unwrap();
    let hill = EnvironmentGrid::from_fn(3, 3, e, |x, y| 4.0 + x - y).unwrap();
    let mut rng = SeededRng::new(17);
    let n = 10_000;
    let flat: Vec<f64> = (0..n).map(|_| sense(&zeros, [0.3, 0.6], 0, &mut rng).unwrap().value).collect();
    let mean = flat.iter().sum::<f64>() / n as f64;
    let var = flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    assert!((var - 1.0).abs() < 0.05, "variance {var}");
    let at = [0.5, 0.25];
    let m = (0..n).map(|_| sense(&hill, at, 0, &mut rng).unwrap().value).sum::<f64>() / n as f64;
    assert!((m - 4.25).abs() < 0.05, "mean {m}");
}

#[test]
fn pilot_waypoints_stay_inside() {
    let e = Extent::new(0.0, 20.0, 0.0, 20.0).unwrap();
    let template = default_pilot_template();
    assert_eq!(template.len(), 18);
    let pts = bezier_pilot(&e, 50, &template).unwrap();
    assert_eq!(pts.len(), 50);
    assert!(pts.iter().all(|p| e.contains(*p)));
}

#[test]
fn rbf_training_loss_trends_down() {
    let mut rng = SeededRng::new(2);
    let x = DenseMatrix::from_fn(20, 2, |_, _| rng.uniform_range(-1.0, 1.0));
    let mut k = RbfKernel::new(0.3, 1.0).matrix(&x, &x).unwrap();
    k.add_diagonal(0.01);
    let l = cholesky(&k, 0.0).unwrap();
    let y = l.lower().matvec(&rng.standard_normal(20)).unwrap();
    let mut model = GprModel::new(Box::new(RbfKernel::new(0.5, 1.0)), 0.1, NormStats::identity(2));
    model.add_normalized(&x, &y).unwrap();
    let trace = model.optimize(200).unwrap();
    let window = |i: usize| trace[i - 20..i].iter().sum::<f64>() / 20.0;
    for i in 21..=trace.len() {
        assert!(window(i) <= window(i - 1) + 1e-9, "window average rose at {i}");
    }
}

/// Flexible kernels trained long on a small set: train MSLL keeps falling
/// while test MSLL turns back up after its minimum.
#[test]
fn flexible_kernels_overfit() {
    for name in ["gibbs", "dkl"] {
        let mut cfg = ExperimentConfig::default();
        cfg.env.kind = "step5".into();
        cfg.kernel.name = name.into();
        cfg.overfit.n_train = 200;
        cfg.overfit.iters = 1000;
        cfg.overfit.resolution = 30;
        cfg.overfit.record_every = 10;
        let trace = run_overfit(&cfg, 0).unwrap();
        let (best, min_test) = trace
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.test_msll.total_cmp(&b.1.test_msll))
            .map(|(i, r)| (i, r.test_msll))
            .unwrap();
        let tail_max = trace[trace.len() / 2..]
            .iter()
            .map(|r| r.test_msll)
            .fold(f64::NEG_INFINITY, f64::max);
        let last = trace.last().unwrap();
        assert!(tail_max > min_test, "{name}: test MSLL never rose");
        assert!(last.train_msll <= trace[best].train_msll, "{name}: train MSLL went up");
    }
}

#[test]
fn sweep_emits_one_summary_per_value() {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.seeds = 1;
    cfg.experiment.n_max = 40;
    cfg.experiment.pilot = 20;
    cfg.experiment.burn_in = 5;
    cfg.experiment.resolution = 10;
    cfg.sweep.values = vec![2.0, 5.0, 10.0];
    let out = run_sweep(&cfg, None).unwrap();
    let labels: Vec<&str> = out.iter().map(|s| s.label.as_str()).collect();
    assert_eq!(labels, ["num_bases=2", "num_bases=5", "num_bases=10"]);
    cfg.sweep.values.clear();
    assert!(run_sweep(&cfg, None).is_err());
}
