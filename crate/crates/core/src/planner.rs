//! Composition of the prior with learned residuals, best-sample selection,
//! savings, uncertainty ranking and the active-learning driver.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{input_row, ResidualDataset, Split, TrajectoryRecord};
use crate::dynamics::{trapezoid, RobotModel, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::gp::{GpConfig, GpModel};
use crate::nn::{mean_std, EnsembleModel, NnConfig, OutputMode};
use crate::ocp::{solve_ocp, TranscriptionConfig};
use crate::prior::{cubic_prior, normalized_grid, prior_kinematics, NormalizedTime, ProblemSpec};

/// Trajectory `prior + residual` on the uniform grid implied by `residuals.len()`.
///
/// Residual velocities are central differences in the interior and exactly
/// zero at both ends; residual accelerations are second differences with
/// one-sided four-point stencils at the ends. Controls come from inverse
/// dynamics and the energy from trapezoidal quadrature of the power.
pub fn compose(model: &RobotModel, spec: &ProblemSpec, residuals: &[Vec<f64>]) -> Result<Trajectory> {
    let n = model.dof();
    check_dim("spec", n, spec.dof())?;
    let m = residuals.len();
    if m < 2 {
        return Err(crate::Error::InvalidConfig(format!("need at least 2 grid points, got {m}")));
    }
    for r in residuals {
        check_dim("residual", n, r.len())?;
    }
    let grid = normalized_grid(m);
    let h = 1.0 / (m - 1) as f64;
    let (tf, tf2) = (spec.t_f, spec.t_f * spec.t_f);
    let (pq, pv, pa) = prior_kinematics(spec, &grid);
    let mut q = Vec::with_capacity(m);
    let mut v = Vec::with_capacity(m);
    let mut u = Vec::with_capacity(m);
    let mut power = Vec::with_capacity(m);
    for k in 0..m {
        let r = |i: usize, j: usize| residuals[i][j];
        let mut qk = vec![0.0; n];
        let mut vk = vec![0.0; n];
        let mut ak = vec![0.0; n];
        for j in 0..n {
            let (dr, d2r) = if k == 0 {
                let d2 = if m >= 4 { (2.0 * r(0, j) - 5.0 * r(1, j) + 4.0 * r(2, j) - r(3, j)) / (h * h) } else { 0.0 };
                (0.0, d2)
            } else if k == m - 1 {
                let d2 = if m >= 4 {
                    (2.0 * r(k, j) - 5.0 * r(k - 1, j) + 4.0 * r(k - 2, j) - r(k - 3, j)) / (h * h)
                } else {
                    0.0
                };
                (0.0, d2)
            } else {
                (
                    (r(k + 1, j) - r(k - 1, j)) / (2.0 * h),
                    (r(k + 1, j) - 2.0 * r(k, j) + r(k - 1, j)) / (h * h),
                )
            };
            qk[j] = pq[k][j] + r(k, j);
            vk[j] = pv[k][j] + dr / tf;
            ak[j] = pa[k][j] + d2r / tf2;
        }
        let uk = model.inverse_raw(&qk, &vk, &ak)[..n].to_vec();
        power.push(model.power_raw(&vk, &uk));
        q.push(qk);
        v.push(vk);
        u.push(uk);
    }
    let times: Vec<f64> = grid.iter().map(|x| x * tf).collect();
    let energy = trapezoid(&times, &power);
    Ok(Trajectory {
        t_f: tf,
        times,
        q,
        v,
        u: Some(u),
        energy: Some(energy),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    Nn,
    Gp,
}

impl std::fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegressorKind::Nn => "nn",
            RegressorKind::Gp => "gp",
        })
    }
}

/// Residual predictions on a normalized-time grid, indexed `[point][joint]`.
#[derive(Debug, Clone)]
pub struct GridPrediction {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    /// candidate residual trajectories
    pub samples: Vec<Vec<Vec<f64>>>,
}

/// A trained residual regressor of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Regressor {
    Nn(EnsembleModel),
    Gp(GpModel),
}

impl Regressor {
    pub fn kind(&self) -> RegressorKind {
        match self {
            Regressor::Nn(_) => RegressorKind::Nn,
            Regressor::Gp(_) => RegressorKind::Gp,
        }
    }

    pub fn dof(&self) -> usize {
        match self {
            Regressor::Nn(m) => m.dof(),
            Regressor::Gp(m) => m.dof(),
        }
    }

    /// Mean, standard deviation and up to `samples` candidates. Ensemble
    /// candidates are the first members; GP candidates are posterior draws.
    pub fn predict_grid(&self, spec: &ProblemSpec, grid: &[f64], samples: usize, seed: u64) -> Result<GridPrediction> {
        check_dim("spec", self.dof(), spec.dof())?;
        let rows: Vec<Vec<f64>> = grid.iter().map(|&xi| input_row(xi, spec)).collect();
        match self {
            Regressor::Nn(m) => {
                let members = m.member_outputs(&rows)?;
                let mut mean = Vec::with_capacity(rows.len());
                let mut std = Vec::with_capacity(rows.len());
                for i in 0..rows.len() {
                    let at: Vec<Vec<f64>> = members.iter().map(|o| o[i].clone()).collect();
                    let (mu, sd) = mean_std(&at);
                    mean.push(mu);
                    std.push(sd);
                }
                let samples = members.into_iter().take(samples).collect();
                Ok(GridPrediction { mean, std, samples })
            }
            Regressor::Gp(m) => {
                let (mean, std, samples) = m.predict_and_sample(&rows, samples, seed)?;
                Ok(GridPrediction { mean, std, samples })
            }
        }
    }

    /// Mean epistemic standard deviation over the probe grid and joints.
    pub fn uncertainty(&self, spec: &ProblemSpec, probe: &[f64]) -> Result<f64> {
        let p = self.predict_grid(spec, probe, 0, 0)?;
        let count = (probe.len() * self.dof()).max(1) as f64;
        Ok(p.std.iter().flatten().sum::<f64>() / count)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        match self {
            Regressor::Nn(m) => m.save(path),
            Regressor::Gp(m) => m.save(path),
        }
    }

    /// Loads either family, dispatching on the `format` field.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct Header {
            format: String,
        }
        let header: Header = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        match header.format.as_str() {
            crate::nn::FORMAT => Ok(Regressor::Nn(EnsembleModel::load(path)?)),
            crate::gp::FORMAT => Ok(Regressor::Gp(GpModel::load(path)?)),
            other => Err(Error::parse(path, format!("unknown regressor format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRequest {
    pub spec: ProblemSpec,
    /// output grid points including both ends
    pub resolution: usize,
    /// candidate residuals drawn from the regressor
    pub samples: usize,
    pub seed: u64,
}

impl PlanRequest {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.resolution < 2 || self.samples == 0 {
            return Err(Error::InvalidConfig(format!(
                "resolution must be at least 2 and samples at least 1 (got {} and {})",
                self.resolution, self.samples
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    /// lowest-energy candidate; the mean prediction is a candidate too
    pub best: Trajectory,
    pub best_energy: f64,
    /// index into `sample_energies`, or `None` when the mean prediction won
    pub best_sample: Option<usize>,
    pub sample_energies: Vec<f64>,
    pub mean: Trajectory,
    pub mean_energy: f64,
    /// mean and max of the epistemic standard deviation over the grid
    pub uncertainty_mean: f64,
    pub uncertainty_max: f64,
    pub wall_time: f64,
}

/// Composes the prior with every candidate residual and keeps the lowest-energy trajectory.
pub fn plan(request: &PlanRequest, model: &RobotModel, regressor: &Regressor) -> Result<PlanResult> {
    let start = Instant::now();
    request.validate()?;
    let grid = normalized_grid(request.resolution);
    let pred = regressor.predict_grid(&request.spec, &grid, request.samples, request.seed)?;
    let mean = compose(model, &request.spec, &pred.mean)?;
    let mean_energy = mean.energy.expect("compose sets the energy");
    let candidates = pred
        .samples
        .iter()
        .map(|r| compose(model, &request.spec, r))
        .collect::<Result<Vec<_>>>()?;
    let sample_energies: Vec<f64> = candidates.iter().map(|t| t.energy.expect("energy set")).collect();
    let mut best_sample = None;
    let mut best_energy = mean_energy;
    for (i, &e) in sample_energies.iter().enumerate() {
        if e < best_energy {
            best_energy = e;
            best_sample = Some(i);
        }
    }
    let best = match best_sample {
        Some(i) => candidates[i].clone(),
        None => mean.clone(),
    };
    let stds: Vec<f64> = pred.std.iter().flatten().copied().collect();
    let uncertainty_mean = stds.iter().sum::<f64>() / stds.len().max(1) as f64;
    let uncertainty_max = stds.iter().copied().fold(0.0, f64::max);
    Ok(PlanResult {
        best,
        best_energy,
        best_sample,
        sample_energies,
        mean,
        mean_energy,
        uncertainty_mean,
        uncertainty_max,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Energy of the cubic prior on a uniform grid of `points` points.
pub fn prior_energy(model: &RobotModel, spec: &ProblemSpec, points: usize) -> Result<f64> {
    let zero = vec![vec![0.0; spec.dof()]; points];
    Ok(compose(model, spec, &zero)?.energy.expect("energy set"))
}

/// Percent energy saved relative to the prior evaluated on the same grid.
pub fn savings(model: &RobotModel, trajectory: &Trajectory, spec: &ProblemSpec) -> Result<f64> {
    let e_prior = prior_energy(model, spec, trajectory.q.len())?;
    if !(e_prior > 0.0) {
        return Err(Error::DegeneratePriorEnergy(e_prior));
    }
    let mut t = trajectory.clone();
    let e = match t.energy {
        Some(e) => e,
        None => model.trajectory_energy(&mut t)?,
    };
    Ok(100.0 * (e_prior - e) / e_prior)
}

/// Candidate specs by descending uncertainty; ties in lexicographic spec order.
pub fn uncertainty_rank(regressor: &Regressor, candidates: &[ProblemSpec], probe_points: usize) -> Result<Vec<(ProblemSpec, f64)>> {
    let probe = normalized_grid(probe_points);
    let mut scored = candidates
        .iter()
        .map(|s| Ok((s.clone(), regressor.uncertainty(s, &probe)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.lex_cmp(&b.0)));
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveLearnConfig {
    pub transcription: TranscriptionConfig,
    /// sampling frequency of the new ground-truth trajectories (Hz)
    pub frequency_hz: f64,
    pub probe_points: usize,
    /// candidates per plan when measuring savings
    pub plan_samples: usize,
    pub seed: u64,
}

impl Default for ActiveLearnConfig {
    fn default() -> Self {
        ActiveLearnConfig {
            transcription: TranscriptionConfig::default(),
            frequency_hz: 100.0,
            probe_points: 33,
            plan_samples: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveLearnEntry {
    pub spec: ProblemSpec,
    pub uncertainty: f64,
    /// best-sample savings before and after the update (%)
    pub savings_before: Option<f64>,
    pub savings_after: Option<f64>,
    pub optimal_savings: Option<f64>,
    /// `None` when the spec was used; otherwise why it was skipped
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveLearnReport {
    pub regressor: RegressorKind,
    pub entries: Vec<ActiveLearnEntry>,
    pub new_samples: usize,
}

fn plan_savings(model: &RobotModel, regressor: &Regressor, spec: &ProblemSpec, points: usize, samples: usize, seed: u64) -> Result<f64> {
    let request = PlanRequest {
        spec: spec.clone(),
        resolution: points,
        samples,
        seed,
    };
    let result = plan(&request, model, regressor)?;
    savings(model, &result.best, spec)
}

/// Solves the `k` most uncertain candidates and folds their solutions into
/// the regressor: GP by conditioning, ensemble by fine-tuning on the original
/// training rows enriched with the new ones.
pub fn active_learn(
    regressor: &Regressor,
    model: &RobotModel,
    original: &ResidualDataset,
    candidates: &[ProblemSpec],
    k: usize,
    config: &ActiveLearnConfig,
) -> Result<(Regressor, ActiveLearnReport)> {
    let mut report = ActiveLearnReport {
        regressor: regressor.kind(),
        entries: Vec::new(),
        new_samples: 0,
    };
    if k == 0 || candidates.is_empty() {
        return Ok((regressor.clone(), report));
    }
    let ranked = uncertainty_rank(regressor, candidates, config.probe_points)?;
    let selected: Vec<(ProblemSpec, f64)> = ranked.into_iter().take(k).collect();
    let specs: Vec<ProblemSpec> = selected.iter().map(|(s, _)| s.clone()).collect();
    let solved = solve_records(model, &specs, config.frequency_hz, &config.transcription, Split::Train);

    let mut new_x = Vec::new();
    let mut new_y = Vec::new();
    let mut used = Vec::new();
    for ((spec, score), outcome) in selected.iter().zip(solved) {
        let mut entry = ActiveLearnEntry {
            spec: spec.clone(),
            uncertainty: *score,
            savings_before: None,
            savings_after: None,
            optimal_savings: None,
            skipped: None,
        };
        match outcome {
            Ok(record) => {
                let points = record.xi.len();
                entry.optimal_savings = Some(record.optimal_savings());
                entry.savings_before = Some(plan_savings(model, regressor, spec, points, config.plan_samples, config.seed)?);
                for (&xi, r) in record.xi.iter().zip(&record.residuals) {
                    new_x.push(input_row(xi, spec));
                    new_y.push(r.clone());
                }
                used.push((report.entries.len(), points));
            }
            Err(e) => {
                log::warn!("active learning skips {spec:?}: {e}");
                entry.skipped = Some(e.to_string());
            }
        }
        report.entries.push(entry);
    }
    report.new_samples = new_x.len();
    let updated = match regressor {
        Regressor::Gp(gp) => Regressor::Gp(gp.add_data(&new_x, &new_y)?),
        Regressor::Nn(nn) => {
            let (ox, oy) = original.rows(Some(Split::Train));
            Regressor::Nn(nn.fine_tune(
                (&ox, &oy),
                (&new_x, &new_y),
                nn.config.fine_tune_epochs,
                nn.config.fine_tune_learning_rate,
            )?)
        }
    };
    for (i, points) in used {
        let spec = report.entries[i].spec.clone();
        report.entries[i].savings_after = Some(plan_savings(model, &updated, &spec, points, config.plan_samples, config.seed)?);
    }
    Ok((updated, report))
}

/// Ground-truth records for `specs` sampled at `frequency_hz`, solved in parallel.
/// Non-converged solves come back as errors.
pub fn solve_records(
    model: &RobotModel,
    specs: &[ProblemSpec],
    frequency_hz: f64,
    transcription: &TranscriptionConfig,
    split: Split,
) -> Vec<Result<TrajectoryRecord>> {
    specs
        .par_iter()
        .map(|spec| {
            let points = ((spec.t_f * frequency_hz).round() as usize + 1).max(11);
            let mut cfg = transcription.clone();
            cfg.intervals = points - 1;
            let sol = solve_ocp(model, spec, &cfg)?;
            if !sol.converged {
                return Err(Error::Training(format!("OCP did not converge (defect {:.2e})", sol.defect_norm)));
            }
            TrajectoryRecord::from_positions(model, spec, &sol.trajectory.q, split)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSet {
    Train,
    Test,
    Outside,
}

impl std::fmt::Display for EvalSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalSet::Train => "train",
            EvalSet::Test => "test",
            EvalSet::Outside => "outside",
        })
    }
}

impl From<Split> for EvalSet {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => EvalSet::Train,
            Split::Test => EvalSet::Test,
        }
    }
}

/// Savings of one regressor on one ground-truth trajectory (%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsRow {
    pub spec: ProblemSpec,
    pub set: EvalSet,
    pub regressor: RegressorKind,
    pub optimal: f64,
    pub best: f64,
    pub mean: f64,
    pub uncertainty: f64,
}

/// Plans every record at its own resolution and reports savings against its optimum.
pub fn evaluate(
    model: &RobotModel,
    regressor: &Regressor,
    records: &[(TrajectoryRecord, EvalSet)],
    samples: usize,
    seed: u64,
) -> Result<Vec<SavingsRow>> {
    records
        .iter()
        .map(|(rec, set)| {
            let request = PlanRequest {
                spec: rec.spec.clone(),
                resolution: rec.xi.len(),
                samples,
                seed,
            };
            let result = plan(&request, model, regressor)?;
            Ok(SavingsRow {
                spec: rec.spec.clone(),
                set: *set,
                regressor: regressor.kind(),
                optimal: rec.optimal_savings(),
                best: savings(model, &result.best, &rec.spec)?,
                mean: savings(model, &result.mean, &rec.spec)?,
                uncertainty: result.uncertainty_mean,
            })
        })
        .collect()
}

/// Boundary errors of one model on one spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryViolation {
    pub spec: ProblemSpec,
    pub split: Option<Split>,
    /// mean over joints and both ends of `|q(end) - q_end|` (rad)
    pub position: f64,
    /// mean over joints and both ends of the one-sided finite-difference speed (rad/s)
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub model: String,
    pub violations: Vec<BoundaryViolation>,
    pub mean_position: f64,
    pub mean_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub nn: NnConfig,
    pub gp: GpConfig,
    /// rows the plain GP is conditioned on, mirroring an inducing-point budget
    pub vanilla_gp_rows: usize,
    /// normalized-time step of the boundary speed estimate
    pub velocity_step: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            nn: NnConfig::default(),
            gp: GpConfig::default(),
            vanilla_gp_rows: 100,
            velocity_step: 1e-6,
        }
    }
}

/// A model predicting positions for rows `(xi, t_f, q_0, q_f)`.
type PositionFn<'a> = Box<dyn Fn(&[Vec<f64>]) -> Result<Vec<Vec<f64>>> + 'a>;

fn measure_violations(name: &str, predict: &PositionFn, specs: &[(ProblemSpec, Option<Split>)], step: f64) -> Result<AblationEntry> {
    let mut violations = Vec::with_capacity(specs.len());
    for (spec, split) in specs {
        let rows: Vec<Vec<f64>> = [0.0, step, 1.0 - step, 1.0].iter().map(|&x| input_row(x, spec)).collect();
        let q = predict(&rows)?;
        let n = spec.dof();
        let mut pos = 0.0;
        let mut vel = 0.0;
        for j in 0..n {
            pos += (q[0][j] - spec.q_0[j]).abs() + (q[3][j] - spec.q_f[j]).abs();
            vel += ((q[1][j] - q[0][j]).abs() + (q[3][j] - q[2][j]).abs()) / (step * spec.t_f);
        }
        violations.push(BoundaryViolation {
            spec: spec.clone(),
            split: *split,
            position: pos / (2 * n) as f64,
            velocity: vel / (2 * n) as f64,
        });
    }
    let count = violations.len().max(1) as f64;
    Ok(AblationEntry {
        model: name.into(),
        mean_position: violations.iter().map(|v| v.position).sum::<f64>() / count,
        mean_velocity: violations.iter().map(|v| v.velocity).sum::<f64>() / count,
        violations,
    })
}

/// Positions `prior + residual` at raw rows.
fn add_prior(rows: &[Vec<f64>], residuals: Vec<Vec<f64>>, dof: usize) -> Vec<Vec<f64>> {
    rows.iter()
        .zip(residuals)
        .map(|(row, r)| {
            let spec = ProblemSpec {
                t_f: row[1],
                q_0: row[2..2 + dof].to_vec(),
                q_f: row[2 + dof..2 + 2 * dof].to_vec(),
            };
            let p = cubic_prior(&spec, NormalizedTime::new(row[0]).expect("row time in [0, 1]"));
            p.iter().zip(&r).map(|(a, b)| a + b).collect()
        })
        .collect()
}

/// Trains unconstrained position regressors (plain MLP ensemble, plain RBF GP)
/// on the train split and compares their boundary errors with the given
/// residual models on every dataset spec and the extra outside specs.
pub fn ablate_naive(
    dataset: &ResidualDataset,
    residual_models: &[(&str, &Regressor)],
    outside: &[ProblemSpec],
    config: &AblationConfig,
) -> Result<Vec<AblationEntry>> {
    let dof = dataset.dof;
    let position_rows = |split: Split| {
        let (x, r) = dataset.rows(Some(split));
        let q = add_prior(&x, r, dof);
        (x, q)
    };
    let (xt, qt) = position_rows(Split::Train);
    let (xs, qs) = position_rows(Split::Test);
    let vanilla_nn = EnsembleModel::train_rows(&xt, &qt, &xs, &qs, &config.nn, OutputMode::Raw)?;
    let mut gp_cfg = config.gp.clone();
    gp_cfg.boundary_scaling = false;
    gp_cfg.max_rows = config.vanilla_gp_rows;
    let vanilla_gp = GpModel::fit_rows(&xt, &qt, &gp_cfg)?;

    let mut specs: Vec<(ProblemSpec, Option<Split>)> =
        dataset.trajectories.iter().map(|t| (t.spec.clone(), Some(t.split))).collect();
    specs.extend(outside.iter().map(|s| (s.clone(), None)));

    let step = config.velocity_step;
    let mut entries = Vec::new();
    let nn_fn: PositionFn = Box::new(|rows| {
        let outs = vanilla_nn.member_outputs(rows)?;
        Ok((0..rows.len())
            .map(|i| mean_std(&outs.iter().map(|o| o[i].clone()).collect::<Vec<_>>()).0)
            .collect())
    });
    entries.push(measure_violations("vanilla_nn", &nn_fn, &specs, step)?);
    let gp_fn: PositionFn = Box::new(|rows| Ok(vanilla_gp.mean_std(rows)?.0));
    entries.push(measure_violations("vanilla_gp", &gp_fn, &specs, step)?);
    for (name, reg) in residual_models {
        let f: PositionFn = Box::new(move |rows| {
            let residuals = match reg {
                Regressor::Nn(m) => {
                    let outs = m.member_outputs(rows)?;
                    (0..rows.len())
                        .map(|i| mean_std(&outs.iter().map(|o| o[i].clone()).collect::<Vec<_>>()).0)
                        .collect()
                }
                Regressor::Gp(m) => m.mean_std(rows)?.0,
            };
            Ok(add_prior(rows, residuals, dof))
        });
        entries.push(measure_violations(name, &f, &specs, step)?);
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub regressor: RegressorKind,
    pub resolution: usize,
    pub samples: usize,
    pub repetitions: usize,
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
    /// one tenth of the task time
    pub limit: f64,
    pub pass: bool,
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Wall-time distribution of [`plan`] against the limit `t_f / 10`.
pub fn bench_latency(request: &PlanRequest, model: &RobotModel, regressor: &Regressor, repetitions: usize) -> Result<LatencyStats> {
    let repetitions = repetitions.max(1);
    // one warm-up call keeps allocation effects out of the distribution
    plan(request, model, regressor)?;
    let mut times = Vec::with_capacity(repetitions);
    for i in 0..repetitions {
        let mut req = request.clone();
        req.seed = request.seed.wrapping_add(i as u64);
        let start = Instant::now();
        plan(&req, model, regressor)?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let limit = request.spec.t_f / 10.0;
    let p99 = percentile(&times, 99.0);
    Ok(LatencyStats {
        regressor: regressor.kind(),
        resolution: request.resolution,
        samples: request.samples,
        repetitions,
        mean: times.iter().sum::<f64>() / times.len() as f64,
        p50: percentile(&times, 50.0),
        p99,
        max: *times.last().expect("non-empty"),
        limit,
        pass: p99 < limit,
    })
}
