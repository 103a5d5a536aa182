//! Grid enumeration of problem specs, ground-truth generation and residual storage.
//!
//! A dataset directory holds `residuals.csv`, one row per sample with
//! columns `traj, xi, tf, q0_*, qf_*, r_*`, and `metadata.json` with the
//! per-trajectory split and energies plus the generation settings.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::RobotModel;
use crate::error::{check_dim, Error, Result};
use crate::ocp::{solve_ocp, TranscriptionConfig};
use crate::planner::compose;
use crate::prior::{cubic_prior, normalized_grid, NormalizedTime, ProblemSpec};

pub const FORMAT_VERSION: u32 = 1;
const RESIDUALS_FILE: &str = "residuals.csv";
const METADATA_FILE: &str = "metadata.json";

/// `samples` evenly spaced values from `min` to `max`; a single sample is `min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
    pub samples: usize,
}

impl AxisRange {
    pub fn new(min: f64, max: f64, samples: usize) -> Self {
        AxisRange { min, max, samples }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.samples == 1 {
            return vec![self.min];
        }
        let last = (self.samples - 1) as f64;
        (0..self.samples)
            .map(|i| {
                if i + 1 == self.samples {
                    self.max
                } else {
                    self.min + (self.max - self.min) * i as f64 / last
                }
            })
            .collect()
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.samples == 0 || !self.min.is_finite() || !self.max.is_finite() || self.min > self.max {
            return Err(Error::InvalidConfig(format!(
                "{what}: need finite min <= max and at least one sample, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Predicate a spec must satisfy to enter the dataset. Joints are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpecFilter {
    /// `max_j |q_f,j - q_0,j| > threshold`
    MinDisplacement { threshold: f64 },
    /// `|q_f,j| > |q_0,j|`
    MonotoneMagnitude { joint: usize },
    /// `q_f,j > q_0,j`
    Increasing { joint: usize },
}

impl SpecFilter {
    /// Strict inequalities with a small margin, so grid values that are equal
    /// up to rounding never pass.
    pub fn accepts(&self, spec: &ProblemSpec) -> bool {
        const MARGIN: f64 = 1e-9;
        match *self {
            SpecFilter::MinDisplacement { threshold } => spec
                .q_0
                .iter()
                .zip(&spec.q_f)
                .any(|(a, b)| (b - a).abs() > threshold + MARGIN),
            SpecFilter::MonotoneMagnitude { joint } => spec.q_f[joint].abs() > spec.q_0[joint].abs() + MARGIN,
            SpecFilter::Increasing { joint } => spec.q_f[joint] > spec.q_0[joint] + MARGIN,
        }
    }

    fn joint(&self) -> Option<usize> {
        match *self {
            SpecFilter::MinDisplacement { .. } => None,
            SpecFilter::MonotoneMagnitude { joint } | SpecFilter::Increasing { joint } => Some(joint),
        }
    }
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_f: AxisRange,
    /// one range per joint
    pub q_0: Vec<AxisRange>,
    pub q_f: Vec<AxisRange>,
    /// sampling frequency of stored trajectories (Hz)
    pub frequency_hz: f64,
    #[serde(default)]
    pub filters: Vec<SpecFilter>,
    /// fixed samples per trajectory instead of `t_f * frequency_hz + 1`
    #[serde(default)]
    pub points_per_trajectory: Option<usize>,
    /// fraction of trajectories held out for testing
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

impl GridConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let grid: GridConfig = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn dof(&self) -> usize {
        self.q_0.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.t_f.validate("t_f")?;
        if self.t_f.min <= 0.0 {
            return Err(Error::InvalidConfig("t_f range must be positive".into()));
        }
        if self.q_0.is_empty() || self.q_0.len() != self.q_f.len() {
            return Err(Error::InvalidConfig(format!(
                "q_0 and q_f need one range per joint ({} vs {})",
                self.q_0.len(),
                self.q_f.len()
            )));
        }
        for r in self.q_0.iter().chain(&self.q_f) {
            r.validate("joint range")?;
        }
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "frequency must be positive, got {}",
                self.frequency_hz
            )));
        }
        if let Some(j) = self.filters.iter().filter_map(SpecFilter::joint).find(|&j| j >= self.dof()) {
            return Err(Error::InvalidConfig(format!("filter joint {j} out of range")));
        }
        if self.points_per_trajectory.is_some_and(|p| p < 11) {
            return Err(Error::InvalidConfig("at least 11 points per trajectory are required".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::InvalidConfig(format!(
                "test fraction must lie in [0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }

    /// Stored samples for a trajectory of duration `t_f`; also the collocation node count.
    pub fn points_for(&self, t_f: f64) -> usize {
        self.points_per_trajectory
            .unwrap_or_else(|| (t_f * self.frequency_hz).round() as usize + 1)
            .max(11)
    }

    /// Number of specs before filtering.
    pub fn unfiltered_count(&self) -> usize {
        self.t_f.samples
            * self
                .q_0
                .iter()
                .chain(&self.q_f)
                .map(|r| r.samples)
                .product::<usize>()
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

/// Cartesian product of `t_f`, `q_0` and `q_f` samples that pass every filter,
/// ordered with `t_f` slowest and the last final joint fastest.
pub fn enumerate_specs(grid: &GridConfig) -> Result<Vec<ProblemSpec>> {
    grid.validate()?;
    let n = grid.dof();
    let mut axes = vec![grid.t_f.values()];
    axes.extend(grid.q_0.iter().chain(&grid.q_f).map(AxisRange::values));
    let specs: Vec<ProblemSpec> = cartesian(&axes)
        .into_iter()
        .map(|p| ProblemSpec {
            t_f: p[0],
            q_0: p[1..1 + n].to_vec(),
            q_f: p[1 + n..].to_vec(),
        })
        .filter(|s| grid.filters.iter().all(|f| f.accepts(s)))
        .collect();
    if specs.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(specs)
}

/// Specs from a file holding either a JSON array of specs or a grid config.
pub fn load_specs(path: impl AsRef<Path>) -> Result<Vec<ProblemSpec>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    if value.is_array() {
        let specs: Vec<ProblemSpec> = serde_json::from_value(value).map_err(|e| Error::parse(path, e))?;
        for s in &specs {
            s.validate()?;
        }
        Ok(specs)
    } else {
        let grid: GridConfig = serde_json::from_value(value).map_err(|e| Error::parse(path, e))?;
        enumerate_specs(&grid)
    }
}

/// Regression input `(xi, t_f, q_0, q_f)`.
pub fn input_row(xi: f64, spec: &ProblemSpec) -> Vec<f64> {
    let mut row = Vec::with_capacity(1 + 1 + 2 * spec.dof());
    row.push(xi);
    row.extend(spec.features());
    row
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One ground-truth trajectory as residuals against the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub spec: ProblemSpec,
    pub split: Split,
    /// uniform normalized-time grid including both ends
    pub xi: Vec<f64>,
    /// `q*(xi) - p(xi)` per grid point
    pub residuals: Vec<Vec<f64>>,
    /// energy of the optimal positions evaluated like any planned trajectory (J)
    pub optimal_energy: f64,
    /// energy of the cubic prior on the same grid (J)
    pub prior_energy: f64,
}

impl TrajectoryRecord {
    /// Builds a record from optimal positions on a uniform grid.
    pub fn from_positions(model: &RobotModel, spec: &ProblemSpec, q: &[Vec<f64>], split: Split) -> Result<Self> {
        let xi = normalized_grid(q.len());
        let residuals: Vec<Vec<f64>> = xi
            .iter()
            .zip(q)
            .map(|(&x, qk)| {
                let p = cubic_prior(spec, NormalizedTime::new(x)?);
                check_dim("trajectory positions", p.len(), qk.len())?;
                Ok(qk.iter().zip(&p).map(|(a, b)| a - b).collect())
            })
            .collect::<Result<_>>()?;
        let optimal_energy = compose(model, spec, &residuals)?.energy.unwrap_or(f64::NAN);
        let zero = vec![vec![0.0; spec.dof()]; xi.len()];
        let prior_energy = compose(model, spec, &zero)?.energy.unwrap_or(f64::NAN);
        Ok(TrajectoryRecord {
            spec: spec.clone(),
            split,
            xi,
            residuals,
            optimal_energy,
            prior_energy,
        })
    }

    /// Percent energy saved by the optimum relative to the prior.
    pub fn optimal_savings(&self) -> f64 {
        100.0 * (self.prior_energy - self.optimal_energy) / self.prior_energy
    }

    /// Positions `prior + residual`.
    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.xi
            .iter()
            .zip(&self.residuals)
            .map(|(&x, r)| {
                let p = cubic_prior(&self.spec, NormalizedTime::new(x).expect("grid in [0, 1]"));
                p.iter().zip(r).map(|(a, b)| a + b).collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSpec {
    pub spec: ProblemSpec,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub format_version: u32,
    pub model_name: String,
    pub model_fingerprint: String,
    pub grid: Option<GridConfig>,
    pub transcription: Option<TranscriptionConfig>,
    /// specs whose solve failed or did not converge; excluded from the samples
    pub failed: Vec<FailedSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualDataset {
    pub dof: usize,
    pub trajectories: Vec<TrajectoryRecord>,
    pub metadata: DatasetMetadata,
}

/// Per-trajectory entry of `metadata.json`; samples live in the CSV.
#[derive(Serialize, Deserialize)]
struct StoredTrajectory {
    spec: ProblemSpec,
    split: Split,
    samples: usize,
    optimal_energy: f64,
    prior_energy: f64,
}

#[derive(Serialize, Deserialize)]
struct StoredMetadata {
    dof: usize,
    #[serde(flatten)]
    metadata: DatasetMetadata,
    trajectories: Vec<StoredTrajectory>,
}

impl ResidualDataset {
    pub fn empty(model: &RobotModel) -> Self {
        ResidualDataset {
            dof: model.dof(),
            trajectories: Vec::new(),
            metadata: DatasetMetadata {
                format_version: FORMAT_VERSION,
                model_name: model.name.clone(),
                model_fingerprint: model.fingerprint(),
                grid: None,
                transcription: None,
                failed: Vec::new(),
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        2 + 2 * self.dof
    }

    pub fn num_samples(&self) -> usize {
        self.trajectories.iter().map(|t| t.xi.len()).sum()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &TrajectoryRecord> {
        self.trajectories.iter().filter(move |t| t.split == split)
    }

    /// Flat regression table `(inputs, targets)`, optionally restricted to one split.
    pub fn rows(&self, split: Option<Split>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for t in self.trajectories.iter().filter(|t| split.is_none_or(|s| t.split == s)) {
            for (&xi, r) in t.xi.iter().zip(&t.residuals) {
                x.push(input_row(xi, &t.spec));
                y.push(r.clone());
            }
        }
        (x, y)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(RESIDUALS_FILE);
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::parse(&csv_path, e))?;
        w.write_record(csv_header(self.dof)).map_err(|e| Error::parse(&csv_path, e))?;
        for (i, t) in self.trajectories.iter().enumerate() {
            for (xi, r) in t.xi.iter().zip(&t.residuals) {
                let mut rec = vec![i.to_string()];
                rec.extend(input_row(*xi, &t.spec).iter().chain(r).map(f64::to_string));
                w.write_record(&rec).map_err(|e| Error::parse(&csv_path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;

        let stored = StoredMetadata {
            dof: self.dof,
            metadata: self.metadata.clone(),
            trajectories: self
                .trajectories
                .iter()
                .map(|t| StoredTrajectory {
                    spec: t.spec.clone(),
                    split: t.split,
                    samples: t.xi.len(),
                    optimal_energy: t.optimal_energy,
                    prior_energy: t.prior_energy,
                })
                .collect(),
        };
        let meta_path = dir.join(METADATA_FILE);
        let json = serde_json::to_string_pretty(&stored).expect("metadata serializes");
        fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join(METADATA_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let stored: StoredMetadata = serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, e))?;
        if stored.metadata.format_version != FORMAT_VERSION {
            return Err(Error::parse(
                &meta_path,
                format!("unsupported format version {}", stored.metadata.format_version),
            ));
        }
        let dof = stored.dof;
        let csv_path = dir.join(RESIDUALS_FILE);
        let mut r = csv::Reader::from_path(&csv_path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(&csv_path, io),
            other => Error::parse(&csv_path, format!("{other:?}")),
        })?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::parse(&csv_path, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        if header != csv_header(dof) {
            return Err(Error::parse(
                &csv_path,
                format!("unexpected header {header:?}, expected {:?}", csv_header(dof)),
            ));
        }
        let mut trajectories: Vec<TrajectoryRecord> = stored
            .trajectories
            .into_iter()
            .map(|t| TrajectoryRecord {
                spec: t.spec,
                split: t.split,
                xi: Vec::with_capacity(t.samples),
                residuals: Vec::with_capacity(t.samples),
                optimal_energy: t.optimal_energy,
                prior_energy: t.prior_energy,
            })
            .collect();
        let width = csv_header(dof).len();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(&csv_path, e))?;
            let bad = |msg: String| Error::parse(&csv_path, format!("row {}: {msg}", line + 2));
            if rec.len() != width {
                return Err(bad(format!("expected {width} fields, got {}", rec.len())));
            }
            let index: usize = rec[0].parse().map_err(|e| bad(format!("trajectory index: {e}")))?;
            let values: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|f| f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}"))))
                .collect::<Result<_>>()?;
            let t = trajectories
                .get_mut(index)
                .ok_or_else(|| bad(format!("unknown trajectory {index}")))?;
            if values[1..2 + 2 * dof] != input_row(0.0, &t.spec)[1..] {
                return Err(bad("spec columns disagree with metadata".into()));
            }
            t.xi.push(values[0]);
            t.residuals.push(values[2 + 2 * dof..].to_vec());
        }
        Ok(ResidualDataset {
            dof,
            trajectories,
            metadata: stored.metadata,
        })
    }
}

fn csv_header(dof: usize) -> Vec<String> {
    let mut h = vec!["traj".to_string(), "xi".into(), "tf".into()];
    h.extend((1..=dof).map(|j| format!("q0_{j}")));
    h.extend((1..=dof).map(|j| format!("qf_{j}")));
    h.extend((1..=dof).map(|j| format!("r_{j}")));
    h
}

/// Seeded assignment of whole trajectories to train or test, stratified by
/// `strata` (equal keys form one stratum). Each stratum sends
/// `round(test_fraction * size)` trajectories to test; at least one trajectory
/// overall is tested and at least one trained when `count >= 2`.
pub fn assign_splits(strata: &[f64], test_fraction: f64, seed: u64) -> Vec<Split> {
    let count = strata.len();
    let mut keys: Vec<f64> = strata.to_vec();
    keys.sort_by(f64::total_cmp);
    keys.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![Split::Train; count];
    let mut tests = 0;
    let mut leftovers = Vec::new();
    for key in keys {
        let mut members: Vec<usize> = (0..count).filter(|&i| strata[i] == key).collect();
        members.shuffle(&mut rng);
        let take = ((members.len() as f64 * test_fraction).round() as usize).min(members.len());
        for &i in &members[..take] {
            splits[i] = Split::Test;
        }
        tests += take;
        leftovers.extend_from_slice(&members[take..]);
    }
    if test_fraction > 0.0 && count >= 2 {
        if tests == 0 {
            let i = leftovers[rng.random_range(0..leftovers.len())];
            splits[i] = Split::Test;
        } else if tests == count {
            splits[rng.random_range(0..count)] = Split::Train;
        }
    }
    splits
}

/// Solves every grid spec and stores the converged solutions as residuals.
/// Failed or non-converged specs are recorded in the metadata and skipped.
pub fn build_dataset(model: &RobotModel, grid: &GridConfig, config: &TranscriptionConfig) -> Result<ResidualDataset> {
    model.validate()?;
    config.validate()?;
    check_dim("grid joints", model.dof(), grid.dof())?;
    let specs = enumerate_specs(grid)?;
    let outcomes: Vec<std::result::Result<TrajectoryRecord, FailedSpec>> = specs
        .par_iter()
        .map(|spec| {
            let fail = |reason: String| FailedSpec {
                spec: spec.clone(),
                reason,
            };
            let mut cfg = config.clone();
            cfg.intervals = grid.points_for(spec.t_f) - 1;
            let sol = solve_ocp(model, spec, &cfg).map_err(|e| fail(e.to_string()))?;
            if !sol.converged {
                return Err(fail(format!(
                    "not converged after {} iterations (defect {:.2e})",
                    sol.iterations, sol.defect_norm
                )));
            }
            TrajectoryRecord::from_positions(model, spec, &sol.trajectory.q, Split::Train)
                .map_err(|e| fail(e.to_string()))
        })
        .collect();
    let mut dataset = ResidualDataset::empty(model);
    dataset.metadata.grid = Some(grid.clone());
    dataset.metadata.transcription = Some(config.clone());
    for outcome in outcomes {
        match outcome {
            Ok(t) => dataset.trajectories.push(t),
            Err(f) => {
                log::warn!("skipping spec {:?}: {}", f.spec, f.reason);
                dataset.metadata.failed.push(f);
            }
        }
    }
    let strata: Vec<f64> = dataset.trajectories.iter().map(|t| t.spec.t_f).collect();
    let splits = assign_splits(&strata, grid.test_fraction, grid.split_seed);
    for (t, s) in dataset.trajectories.iter_mut().zip(splits) {
        t.split = s;
    }
    Ok(dataset)
}

/// Per-column affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Constant columns get unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::InvalidConfig("cannot standardize zero rows".into()))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            check_dim("standardizer input", d, r.len())?;
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v: f64| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(json: &str) -> GridConfig {
        serde_json::from_str(json).unwrap()
    }

    const PENDULUM_GRID: &str = include_str!("../../../configs/pendulum_grid.json");
    const SCARA_GRID: &str = include_str!("../../../configs/scara_grid.json");

    fn spec(t_f: f64, q0: f64, qf: f64) -> ProblemSpec {
        ProblemSpec::new(t_f, vec![q0], vec![qf]).unwrap()
    }

    fn record(s: ProblemSpec, split: Split, residuals: Vec<f64>) -> TrajectoryRecord {
        TrajectoryRecord {
            spec: s,
            split,
            xi: normalized_grid(residuals.len()),
            residuals: residuals.into_iter().map(|r| vec![r]).collect(),
            optimal_energy: 1.25,
            prior_energy: 2.5,
        }
    }

    #[test]
    fn axis_values_hit_both_ends_exactly() {
        let v = AxisRange::new(-PI / 4.0, PI / 4.0, 4).values();
        assert_eq!(v.len(), 4);
        assert_eq!(v[0], -PI / 4.0);
        assert_eq!(v[3], PI / 4.0);
        assert!((v[1] + PI / 12.0).abs() < 1e-15);
        assert_eq!(AxisRange::new(2.0, 3.0, 1).values(), vec![2.0]);
    }

    #[test]
    fn pendulum_grid_keeps_eight_outward_moves() {
        let g = grid(PENDULUM_GRID);
        assert_eq!(g.unfiltered_count(), 32);
        let specs = enumerate_specs(&g).unwrap();
        assert_eq!(specs.len(), 8);
        for s in &specs {
            assert!(s.q_f[0].abs() > s.q_0[0].abs());
            assert!((s.q_0[0].abs() - PI / 12.0).abs() < 1e-12);
        }
        assert_eq!(g.points_for(1.0), 101);
        assert_eq!(g.points_for(1.5), 151);
    }

    #[test]
    fn scara_grid_keeps_increasing_first_joint() {
        let g = grid(SCARA_GRID);
        assert_eq!(g.unfiltered_count(), 192);
        let specs = enumerate_specs(&g).unwrap();
        assert_eq!(specs.len(), 144);
        assert!(specs.iter().all(|s| s.q_f[0] > s.q_0[0]));
    }

    #[test]
    fn filters_reject_boundary_equalities() {
        let s = spec(1.0, 0.5, -0.5);
        assert!(!SpecFilter::MonotoneMagnitude { joint: 0 }.accepts(&s));
        assert!(!SpecFilter::Increasing { joint: 0 }.accepts(&spec(1.0, 0.5, 0.5)));
        assert!(!SpecFilter::MinDisplacement { threshold: 1.0 }.accepts(&s));
        assert!(SpecFilter::MinDisplacement { threshold: 0.99 }.accepts(&s));
    }

    #[test]
    fn filtering_everything_is_an_error() {
        let mut g = grid(PENDULUM_GRID);
        g.filters.push(SpecFilter::MinDisplacement { threshold: 10.0 });
        assert!(matches!(enumerate_specs(&g), Err(Error::EmptyGrid)));
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let mut g = grid(PENDULUM_GRID);
        g.t_f.min = 0.0;
        assert!(g.validate().is_err());
        let mut g = grid(PENDULUM_GRID);
        g.q_f.pop();
        assert!(g.validate().is_err());
        let mut g = grid(PENDULUM_GRID);
        g.filters.push(SpecFilter::Increasing { joint: 1 });
        assert!(g.validate().is_err());
        let mut g = grid(PENDULUM_GRID);
        g.test_fraction = 1.0;
        assert!(g.validate().is_err());
        assert!(serde_json::from_str::<GridConfig>(&PENDULUM_GRID.replace("\"split_seed\"", "\"seed\"")).is_err());
    }

    #[test]
    fn load_specs_reads_lists_and_grids() {
        let dir = tempfile::tempdir().unwrap();
        let list = dir.path().join("specs.json");
        fs::write(&list, r#"[{"t_f": 1.2, "q_0": [-0.5], "q_f": [0.6]}]"#).unwrap();
        assert_eq!(load_specs(&list).unwrap(), vec![spec(1.2, -0.5, 0.6)]);
        let g = dir.path().join("grid.json");
        fs::write(&g, PENDULUM_GRID).unwrap();
        assert_eq!(load_specs(&g).unwrap().len(), 8);
        fs::write(&list, r#"[{"t_f": -1.0, "q_0": [0.0], "q_f": [0.6]}]"#).unwrap();
        assert!(load_specs(&list).is_err());
    }

    #[test]
    fn positions_reconstruct_prior_plus_residual() {
        let model = RobotModel::pendulum();
        let s = spec(1.2, -0.3, 0.7);
        let xi = normalized_grid(31);
        let q: Vec<Vec<f64>> = xi
            .iter()
            .map(|&x| vec![-0.3 + 1.0 * (3.0 * x * x - 2.0 * x * x * x) + 0.05 * (PI * x).sin()])
            .collect();
        let rec = TrajectoryRecord::from_positions(&model, &s, &q, Split::Train).unwrap();
        for (a, b) in rec.positions().iter().zip(&q) {
            assert!((a[0] - b[0]).abs() <= 1e-12);
        }
        for (r, &x) in rec.residuals.iter().zip(&xi) {
            assert!((r[0] - 0.05 * (PI * x).sin()).abs() <= 1e-12);
        }
        assert!(rec.prior_energy > 0.0 && rec.optimal_energy.is_finite());
    }

    #[test]
    fn save_load_is_bit_exact() {
        let mut ds = ResidualDataset::empty(&RobotModel::pendulum());
        ds.trajectories.push(record(spec(1.0, 0.1, 0.7), Split::Train, vec![0.0, 1.0 / 3.0, -2e-17, 0.0]));
        ds.trajectories.push(record(spec(1.5, -0.1, -0.7), Split::Test, vec![0.0, 0.1, 0.2, 0.3, 0.0]));
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(ResidualDataset::load(dir.path()).unwrap(), ds);

        let empty = ResidualDataset::empty(&RobotModel::pendulum());
        let dir = tempfile::tempdir().unwrap();
        empty.save(dir.path()).unwrap();
        let back = ResidualDataset::load(dir.path()).unwrap();
        assert_eq!(back, empty);
        assert_eq!(back.num_samples(), 0);
    }

    #[test]
    fn corrupted_files_are_parse_errors() {
        let mut ds = ResidualDataset::empty(&RobotModel::pendulum());
        ds.trajectories.push(record(spec(1.0, 0.1, 0.7), Split::Train, vec![0.0, 0.2, 0.0]));
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let csv_path = dir.path().join(RESIDUALS_FILE);
        let text = fs::read_to_string(&csv_path).unwrap();

        fs::write(&csv_path, text.replacen("r_1", "residual", 1)).unwrap();
        assert!(matches!(ResidualDataset::load(dir.path()), Err(Error::Parse { .. })));
        fs::write(&csv_path, text.replacen(",0.2\n", ",abc\n", 1)).unwrap();
        assert!(matches!(ResidualDataset::load(dir.path()), Err(Error::Parse { .. })));
        fs::write(&csv_path, text.replace("\n0,", "\n7,")).unwrap();
        assert!(matches!(ResidualDataset::load(dir.path()), Err(Error::Parse { .. })));
        fs::remove_file(&csv_path).unwrap();
        assert!(matches!(ResidualDataset::load(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn rows_follow_split() {
        let mut ds = ResidualDataset::empty(&RobotModel::pendulum());
        ds.trajectories.push(record(spec(1.0, 0.1, 0.7), Split::Train, vec![0.0, 0.2, 0.0]));
        ds.trajectories.push(record(spec(1.5, 0.2, 0.6), Split::Test, vec![0.0, 0.3, 0.4, 0.0]));
        let (x, y) = ds.rows(Some(Split::Test));
        assert_eq!(x.len(), 4);
        assert_eq!(x[1], vec![1.0 / 3.0, 1.5, 0.2, 0.6]);
        assert_eq!(y[2], vec![0.4]);
        assert_eq!(ds.rows(None).0.len(), ds.num_samples());
        assert_eq!(ds.input_dim(), 4);
    }

    #[test]
    fn standardizer_centres_and_scales() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
        assert_eq!(s.apply(&[3.0, 5.0]), vec![1.0, 0.0]);
        assert!(Standardizer::fit(&[]).is_err());
    }

    #[test]
    fn split_is_stratified_per_key() {
        let strata: Vec<f64> = (0..20).map(|i| if i < 10 { 1.0 } else { 2.0 }).collect();
        let s = assign_splits(&strata, 0.2, 3);
        for key in [1.0, 2.0] {
            let tests = (0..20).filter(|&i| strata[i] == key && s[i] == Split::Test).count();
            assert_eq!(tests, 2);
        }
        assert_eq!(assign_splits(&[1.0], 0.2, 0), vec![Split::Train]);
        assert!(assign_splits(&[1.0, 1.0, 1.0], 0.0, 0).iter().all(|&x| x == Split::Train));
    }

    proptest! {
        #[test]
        fn split_partitions_every_trajectory(
            strata in prop::collection::vec(0u8..4, 0..40),
            frac in 0.0f64..0.95,
            seed in any::<u64>(),
        ) {
            let keys: Vec<f64> = strata.iter().map(|&k| f64::from(k)).collect();
            let s = assign_splits(&keys, frac, seed);
            prop_assert_eq!(s.len(), keys.len());
            prop_assert_eq!(&s, &assign_splits(&keys, frac, seed));
            let tests = s.iter().filter(|&&x| x == Split::Test).count();
            if frac > 0.0 && keys.len() >= 2 {
                prop_assert!(tests >= 1 && tests < keys.len());
            }
            if frac == 0.0 {
                prop_assert_eq!(tests, 0);
            }
        }

        #[test]
        fn enumerated_specs_pass_all_filters(
            lo in -1.5f64..0.0,
            hi in 0.01f64..1.5,
            n in 1usize..5,
            threshold in 0.0f64..1.0,
        ) {
            let g = GridConfig {
                t_f: AxisRange::new(1.0, 2.0, 2),
                q_0: vec![AxisRange::new(lo, hi, n)],
                q_f: vec![AxisRange::new(lo, hi, n)],
                frequency_hz: 100.0,
                filters: vec![SpecFilter::MinDisplacement { threshold }],
                points_per_trajectory: None,
                test_fraction: 0.2,
                split_seed: 0,
            };
            match enumerate_specs(&g) {
                Ok(specs) => {
                    prop_assert!(specs.len() <= g.unfiltered_count());
                    for s in specs {
                        prop_assert!((s.q_f[0] - s.q_0[0]).abs() > threshold);
                    }
                }
                Err(e) => prop_assert!(matches!(e, Error::EmptyGrid)),
            }
        }
    }
}
