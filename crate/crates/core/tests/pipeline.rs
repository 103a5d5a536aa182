//! Dataset generation and learning on solved optimal-control problems.

use std::path::PathBuf;

use restraj_core::dataset::{build_dataset, AxisRange, GridConfig, ResidualDataset, Split};
use restraj_core::dynamics::RobotModel;
use restraj_core::gp::{GpConfig, GpModel};
use restraj_core::nn::{EnsembleModel, NnConfig};
use restraj_core::ocp::{solve_ocp, TranscriptionConfig};
use restraj_core::planner::{compose, plan, savings, uncertainty_rank, PlanRequest, Regressor};
use restraj_core::prior::ProblemSpec;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn pendulum_dataset() -> (RobotModel, ResidualDataset) {
    let model = RobotModel::load(config_path("pendulum.json")).unwrap();
    let grid = GridConfig::load(config_path("pendulum_grid.json")).unwrap();
    let ds = build_dataset(&model, &grid, &TranscriptionConfig::default()).unwrap();
    (model, ds)
}

fn test_variance(ds: &ResidualDataset) -> f64 {
    let (_, y) = ds.rows(Some(Split::Test));
    let mean = y.iter().map(|r| r[0]).sum::<f64>() / y.len() as f64;
    y.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / y.len() as f64
}

#[test]
fn double_integrator_residuals_vanish() {
    let model = RobotModel::double_integrator();
    let grid = GridConfig {
        t_f: AxisRange::new(1.0, 2.0, 2),
        q_0: vec![AxisRange::new(-0.5, 0.5, 2)],
        q_f: vec![AxisRange::new(-0.5, 0.5, 3)],
        frequency_hz: 200.0,
        filters: Vec::new(),
        points_per_trajectory: None,
        test_fraction: 0.2,
        split_seed: 0,
    };
    let ds = build_dataset(&model, &grid, &TranscriptionConfig::default()).unwrap();
    assert!(ds.metadata.failed.is_empty());
    assert_eq!(ds.trajectories.len(), 12);
    for t in &ds.trajectories {
        let worst = t.residuals.iter().map(|r| r[0].abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-4, "{:?}: {worst}", t.spec);
        assert!(t.residuals[0][0].abs() <= 1e-8);
        assert!(t.residuals.last().unwrap()[0].abs() <= 1e-8);
        assert_eq!(t.xi.len(), grid.points_for(t.spec.t_f));
    }
}

#[test]
fn pendulum_dataset_records_optimal_solutions() {
    let (model, ds) = pendulum_dataset();
    assert_eq!(ds.trajectories.len(), 8);
    assert_eq!(ds.num_samples(), 4 * 101 + 4 * 151);
    assert_eq!(ds.split(Split::Test).count(), 2);
    let rec = &ds.trajectories[0];
    let composed = compose(&model, &rec.spec, &rec.residuals).unwrap();
    assert_eq!(savings(&model, &composed, &rec.spec).unwrap(), rec.optimal_savings());
    assert!(rec.optimal_savings() > 0.0);

    let sol = solve_ocp(
        &model,
        &rec.spec,
        &TranscriptionConfig::with_intervals(rec.xi.len() - 1),
    )
    .unwrap();
    for (q, p) in sol.trajectory.q.iter().zip(rec.positions()) {
        assert!((q[0] - p[0]).abs() <= 1e-12);
    }
    // the collocation objective and the reconstructed energy agree to a fraction of a point
    let direct = savings(&model, &sol.trajectory, &rec.spec).unwrap();
    assert!((direct - rec.optimal_savings()).abs() <= 0.5, "{direct} vs {}", rec.optimal_savings());
}

#[test]
fn regressors_beat_the_mean_predictor() {
    let (model, ds) = pendulum_dataset();
    let var = test_variance(&ds);
    let nn_cfg = NnConfig {
        epochs: 200,
        ..NnConfig::load(config_path("nn_pendulum.json")).unwrap()
    };
    let nn = EnsembleModel::train(&ds, &nn_cfg).unwrap();
    assert!(nn.test_mse.unwrap() < var, "nn {:?} vs {var}", nn.test_mse);
    let gp = GpModel::fit(&ds, &GpConfig::load(config_path("gp.json")).unwrap()).unwrap();
    assert!(gp.data.test_mse.unwrap() < var, "gp {:?} vs {var}", gp.data.test_mse);

    let gp = Regressor::Gp(gp);
    for rec in ds.split(Split::Train) {
        let request = PlanRequest {
            spec: rec.spec.clone(),
            resolution: rec.xi.len(),
            samples: 20,
            seed: 0,
        };
        let r = plan(&request, &model, &gp).unwrap();
        assert!(r.best_energy <= r.mean_energy);
    }

    let inside: Vec<ProblemSpec> = ds.trajectories.iter().map(|t| t.spec.clone()).collect();
    let far = ProblemSpec::new(2.5, vec![1.2], vec![-1.4]).unwrap();
    let mut candidates = inside.clone();
    candidates.push(far.clone());
    let ranked = uncertainty_rank(&gp, &candidates, 33).unwrap();
    assert_eq!(ranked[0].0, far);
}
