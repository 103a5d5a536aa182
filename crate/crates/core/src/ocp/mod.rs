//! Ground-truth minimum-energy trajectories by direct transcription.
//!
//! [`transcribe`] builds a trapezoidal collocation NLP with the boundary
//! states eliminated; [`solve_ocp`] solves it warm-started from the cubic
//! prior, by default with Newton-type SQP steps and optionally with an
//! augmented Lagrangian method using limited-memory BFGS inner solves.

mod banded;
mod optim;
mod sqp;
mod transcription;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{RobotModel, Trajectory};
use crate::error::{Error, Result};
use crate::prior::ProblemSpec;

pub use optim::{
    augmented_lagrangian, lbfgs, AugLagReport, AugLagSettings, EqualityNlp, InnerOutcome, SparseRows,
};
pub use sqp::{sqp, SqpReport, SqpSettings};
pub use transcription::{NodeValues, Transcription};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlpMethod {
    Sqp,
    AugmentedLagrangian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranscriptionConfig {
    /// number of collocation intervals K
    pub intervals: usize,
    pub method: NlpMethod,
    /// SQP iterations or augmented Lagrangian outer iterations
    pub max_outer_iterations: usize,
    /// L-BFGS iterations per augmented Lagrangian subproblem
    pub max_inner_iterations: usize,
    /// max position defect (rad) and velocity defect (rad/s)
    pub defect_tolerance: f64,
    /// infinity norm of the Lagrangian gradient
    pub optimality_tolerance: f64,
    /// augmented Lagrangian penalty schedule
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub lbfgs_memory: usize,
}

impl Default for TranscriptionConfig {
    fn default() -> Self {
        TranscriptionConfig {
            intervals: 100,
            method: NlpMethod::Sqp,
            max_outer_iterations: 300,
            max_inner_iterations: 20_000,
            defect_tolerance: 1e-8,
            optimality_tolerance: 1e-9,
            penalty_initial: 10.0,
            penalty_growth: 10.0,
            lbfgs_memory: 30,
        }
    }
}

impl TranscriptionConfig {
    pub fn with_intervals(intervals: usize) -> Self {
        TranscriptionConfig {
            intervals,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.intervals < 10 {
            return Err(Error::InvalidConfig(format!("need at least 10 intervals, got {}", self.intervals)));
        }
        let positive = [
            ("defect_tolerance", self.defect_tolerance),
            ("optimality_tolerance", self.optimality_tolerance),
            ("penalty_initial", self.penalty_initial),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::InvalidConfig("penalty_growth must exceed 1".into()));
        }
        if self.max_outer_iterations == 0 || self.max_inner_iterations == 0 || self.lbfgs_memory == 0 {
            return Err(Error::InvalidConfig("iteration budgets and memory must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcpSolution {
    pub trajectory: Trajectory,
    pub converged: bool,
    /// largest collocation defect in physical units
    pub defect_norm: f64,
    /// optimal energy (J)
    pub objective: f64,
    pub iterations: usize,
    pub wall_time: f64,
}

struct Report {
    x: Vec<f64>,
    objective: f64,
    converged: bool,
    iterations: usize,
}

/// Builds the collocation NLP for `spec`.
pub fn transcribe<'a>(model: &'a RobotModel, spec: &ProblemSpec, config: &TranscriptionConfig) -> Result<Transcription<'a>> {
    model.validate()?;
    spec.validate()?;
    config.validate()?;
    if spec.dof() != model.dof() {
        return Err(Error::Dimension {
            what: "problem spec",
            expected: model.dof(),
            got: spec.dof(),
        });
    }
    Ok(Transcription::new(model, spec, config.intervals))
}

/// Solves the minimum-energy problem. Non-convergence is not an error: the
/// best iterate is returned with `converged = false`.
pub fn solve_ocp(model: &RobotModel, spec: &ProblemSpec, config: &TranscriptionConfig) -> Result<OcpSolution> {
    let start = Instant::now();
    let nlp = transcribe(model, spec, config)?;
    let x0 = nlp.prior_guess();
    let h = nlp.step();
    // constraints are defects divided by h
    let feasibility_tol = config.defect_tolerance / h;
    let report = match config.method {
        NlpMethod::Sqp => {
            let settings = SqpSettings {
                max_iterations: config.max_outer_iterations,
                feasibility_tol,
                optimality_tol: config.optimality_tolerance,
            };
            let r = sqp(&nlp, &x0, &settings);
            Report {
                x: r.x,
                objective: r.objective,
                converged: r.converged,
                iterations: r.iterations,
            }
        }
        NlpMethod::AugmentedLagrangian => {
            let settings = AugLagSettings {
                max_outer: config.max_outer_iterations,
                max_inner: config.max_inner_iterations,
                feasibility_tol,
                optimality_tol: config.optimality_tolerance,
                penalty_init: config.penalty_initial,
                penalty_growth: config.penalty_growth,
                penalty_max: 1e12,
                memory: config.lbfgs_memory,
            };
            let r = augmented_lagrangian(&nlp, &x0, &settings);
            Report {
                x: r.x,
                objective: r.objective,
                converged: r.converged,
                iterations: r.inner_iterations,
            }
        }
    };
    let (dq, dv) = nlp.max_defects(&report.x);
    let defect_norm = dq.max(dv);
    if !report.objective.is_finite() || report.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training(format!("OCP iterate became non-finite for spec {spec:?}")));
    }
    let converged = defect_norm <= config.defect_tolerance && report.converged;
    let nodes = nlp.unpack(&report.x);
    let trajectory = Trajectory {
        t_f: spec.t_f,
        times: Trajectory::uniform_times(spec.t_f, config.intervals),
        q: nodes.q,
        v: nodes.v,
        u: Some(nodes.u),
        energy: Some(report.objective),
    };
    log::debug!(
        "ocp t_f={} defect={:.2e} E={:.6} iterations={} converged={}",
        spec.t_f,
        defect_norm,
        report.objective,
        report.iterations,
        converged
    );
    Ok(OcpSolution {
        trajectory,
        converged,
        defect_norm,
        objective: report.objective,
        iterations: report.iterations,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Largest normwise relative error between the analytic gradient of
/// `f + w^T c` and central finite differences, over `trials` random
/// multiplier vectors at `x`.
pub fn gradient_check<P: EqualityNlp + ?Sized>(nlp: &P, x: &[f64], trials: usize, seed: u64) -> f64 {
    let d = nlp.dim();
    let m = nlp.num_constraints();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = vec![0.0; m];
    let mut analytic = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for _ in 0..trials.max(1) {
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        nlp.gradient(x, &w, &mut analytic);
        let mut phi = |z: &[f64]| {
            let f = nlp.evaluate(z, &mut c);
            f + c.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut z = x.to_vec();
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..d {
            let step = 1e-6 * x[i].abs().max(1.0);
            z[i] = x[i] + step;
            let fp = phi(&z);
            z[i] = x[i] - step;
            let fm = phi(&z);
            z[i] = x[i];
            let fd = (fp - fm) / (2.0 * step);
            err = err.max((fd - analytic[i]).abs());
            scale = scale.max(fd.abs());
        }
        worst = worst.max(err / scale.max(1e-8));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{cubic_prior, NormalizedTime};
    use std::f64::consts::PI;

    fn spec(t_f: f64, q0: f64, qf: f64) -> ProblemSpec {
        ProblemSpec::new(t_f, vec![q0], vec![qf]).unwrap()
    }

    #[test]
    fn pendulum_decision_dimension() {
        let model = RobotModel::pendulum();
        let nlp = transcribe(&model, &spec(1.0, 0.0, 0.5), &TranscriptionConfig::with_intervals(100)).unwrap();
        assert_eq!(nlp.dim(), 299);
        assert_eq!(nlp.num_constraints(), 200);
    }

    #[test]
    fn rejects_too_few_intervals() {
        let model = RobotModel::pendulum();
        let err = transcribe(&model, &spec(1.0, 0.0, 0.5), &TranscriptionConfig::with_intervals(5));
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn zero_is_feasible_at_equilibrium() {
        let model = RobotModel::pendulum();
        let nlp = transcribe(&model, &spec(1.0, 0.0, 0.0), &TranscriptionConfig::default()).unwrap();
        let x = vec![0.0; nlp.dim()];
        let mut c = vec![1.0; nlp.num_constraints()];
        let f = nlp.evaluate(&x, &mut c);
        assert_eq!(f, 0.0);
        assert!(c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn equilibrium_solve_is_zero() {
        let model = RobotModel::pendulum();
        let sol = solve_ocp(&model, &spec(1.0, 0.0, 0.0), &TranscriptionConfig::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.objective.abs() < 1e-12);
        assert!(sol.trajectory.u.unwrap().iter().all(|u| u[0].abs() < 1e-10));
    }

    /// Defects of the exact cubic under the double integrator shrink as K^-2.
    #[test]
    fn rollout_defects_are_second_order() {
        let model = RobotModel::double_integrator();
        let s = spec(1.0, 0.0, 1.0);
        let defect = |k: usize| {
            let nlp = transcribe(&model, &s, &TranscriptionConfig::with_intervals(k)).unwrap();
            let (dq, dv) = nlp.max_defects(&nlp.prior_guess());
            // raw defects are per interval; divide by h for the local rate
            dq.max(dv) / nlp.step()
        };
        let ratio = defect(40) / defect(80);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cases = [
            (RobotModel::double_integrator(), spec(1.0, 0.0, 1.0), 1e-6),
            (RobotModel::pendulum(), spec(1.2, 0.0, PI / 2.0), 1e-5),
        ];
        for (model, s, tol) in cases {
            let nlp = transcribe(&model, &s, &TranscriptionConfig::with_intervals(20)).unwrap();
            let x0 = nlp.prior_guess();
            assert!(gradient_check(&nlp, &x0, 3, 1) <= tol);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let xr: Vec<f64> = x0.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
            assert!(gradient_check(&nlp, &xr, 3, 2) <= tol, "{}", model.name);
        }
        let scara = RobotModel::scara();
        let s2 = ProblemSpec::new(1.0, vec![0.1, -0.3], vec![1.0, 0.4]).unwrap();
        let nlp = transcribe(&scara, &s2, &TranscriptionConfig::with_intervals(15)).unwrap();
        assert!(gradient_check(&nlp, &nlp.prior_guess(), 3, 3) <= 1e-5);
    }

    /// Delegates everything but the Jacobian, which falls back to gradient differences.
    struct GenericJacobian<'a>(&'a Transcription<'a>);
    impl EqualityNlp for GenericJacobian<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn num_constraints(&self) -> usize {
            self.0.num_constraints()
        }
        fn evaluate(&self, x: &[f64], c: &mut [f64]) -> f64 {
            self.0.evaluate(x, c)
        }
        fn gradient(&self, x: &[f64], w: &[f64], g: &mut [f64]) {
            self.0.gradient(x, w, g)
        }
    }

    #[test]
    fn sparse_jacobian_matches_gradient_differences() {
        let scara = RobotModel::scara();
        let s = ProblemSpec::new(1.0, vec![0.1, -0.3], vec![1.0, 0.4]).unwrap();
        let nlp = transcribe(&scara, &s, &TranscriptionConfig::with_intervals(12)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = nlp.prior_guess().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        let d = nlp.dim();
        let densify = |rows: SparseRows| {
            rows.into_iter()
                .map(|row| {
                    let mut dense = vec![0.0; d];
                    for (j, v) in row {
                        dense[j] += v;
                    }
                    dense
                })
                .collect::<Vec<_>>()
        };
        let got = densify(nlp.constraint_jacobian(&x));
        let want = densify(GenericJacobian(&nlp).constraint_jacobian(&x));
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
            assert!((g - w).abs() <= 1e-9 * w.abs().max(1.0), "{g} vs {w}");
        }
    }

    #[test]
    fn double_integrator_optimum_is_cubic() {
        let model = RobotModel::double_integrator();
        let s = spec(1.0, 0.0, 1.0);
        let sol = solve_ocp(&model, &s, &TranscriptionConfig::with_intervals(100)).unwrap();
        assert!(sol.converged, "defect {}", sol.defect_norm);
        let mut worst: f64 = 0.0;
        for (t, q) in sol.trajectory.times.iter().zip(&sol.trajectory.q) {
            let xi = NormalizedTime::new((t / s.t_f).min(1.0)).unwrap();
            worst = worst.max((q[0] - cubic_prior(&s, xi)[0]).abs());
        }
        assert!(worst <= 1e-4, "max deviation {worst}");
        assert!((sol.objective - 12.0).abs() < 1e-2);
    }

    #[test]
    fn pendulum_energy_is_mesh_consistent() {
        let model = RobotModel::pendulum();
        let s = spec(1.2, 0.0, PI / 2.0);
        let e100 = solve_ocp(&model, &s, &TranscriptionConfig::with_intervals(100)).unwrap();
        let e200 = solve_ocp(&model, &s, &TranscriptionConfig::with_intervals(200)).unwrap();
        assert!(e100.converged && e200.converged);
        let rel = (e100.objective - e200.objective).abs() / e200.objective.abs();
        assert!(rel <= 0.01, "relative change {rel}");
    }

    #[test]
    fn solution_never_exceeds_prior_energy() {
        let model = RobotModel::pendulum();
        let s = spec(1.0, -0.3, 0.7);
        let cfg = TranscriptionConfig::with_intervals(60);
        let nlp = transcribe(&model, &s, &cfg).unwrap();
        let mut c = vec![0.0; nlp.num_constraints()];
        let prior_energy = nlp.evaluate(&nlp.prior_guess(), &mut c);
        let sol = solve_ocp(&model, &s, &cfg).unwrap();
        assert!(sol.converged);
        assert!(sol.objective <= prior_energy + 1e-6);
        let q = &sol.trajectory.q;
        assert_eq!(q[0], s.q_0);
        assert_eq!(q[q.len() - 1], s.q_f);
        assert_eq!(sol.trajectory.v[0], vec![0.0]);
    }

    #[test]
    fn gravity_free_solutions_are_time_reversible() {
        // reversal symmetry holds for the continuous problem; the discrete
        // mirror mismatch must vanish at second order
        let mut model = RobotModel::scara();
        model.friction = vec![0.0, 0.0];
        let fwd = ProblemSpec::new(1.0, vec![0.0, 0.2], vec![1.0, -0.4]).unwrap();
        let bwd = ProblemSpec::new(1.0, fwd.q_f.clone(), fwd.q_0.clone()).unwrap();
        let mismatch = |k: usize| {
            let cfg = TranscriptionConfig::with_intervals(k);
            let a = solve_ocp(&model, &fwd, &cfg).unwrap();
            let b = solve_ocp(&model, &bwd, &cfg).unwrap();
            assert!(a.converged && b.converged);
            let mut worst: f64 = 0.0;
            for i in 0..=k {
                for j in 0..2 {
                    worst = worst.max((a.trajectory.q[i][j] - b.trajectory.q[k - i][j]).abs());
                }
            }
            (worst, (a.objective - b.objective).abs())
        };
        let (coarse, coarse_gap) = mismatch(50);
        let (fine, fine_gap) = mismatch(100);
        assert!(fine < 0.35 * coarse, "mirror deviation {coarse} -> {fine}");
        assert!(fine_gap < coarse_gap, "energy gap {coarse_gap} -> {fine_gap}");
    }
}
