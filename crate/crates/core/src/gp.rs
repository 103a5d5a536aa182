//! Gaussian-process residual regressor with a boundary-vanishing kernel.
//!
//! The kernel is `k(x1, x2) = s(xi1) * sigma^2 * exp(-sum_d (z1_d - z2_d)^2 / l_d^2) * s(xi2)`
//! where `z` is the standardized input `(xi, t_f, q_0, q_f)` and `s` the
//! boundary scaling function of the raw normalized time. Every posterior
//! mean, variance and sample therefore vanishes at `xi = 0` and `xi = 1`.
//! Each joint has an independent single-output GP.

use std::fs;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ResidualDataset, Split, Standardizer};
use crate::error::{check_dim, Error, Result};
use crate::prior::{scaling, scaling_derivative};

pub const FORMAT: &str = "restraj-gp";
pub const FORMAT_VERSION: u32 = 1;

/// Jitter schedule for kernel matrices, relative to the mean diagonal.
const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// rows used for the marginal-likelihood optimization
    pub fit_subsample: usize,
    /// rows kept for conditioning; larger training sets are subsampled
    pub max_rows: usize,
    /// posterior samples per plan
    pub samples: usize,
    /// refit hyperparameters when new data is added
    pub refit_on_add: bool,
    /// multiply the RBF by `s(xi1) s(xi2)`; disabling it gives a plain RBF for ablations
    pub boundary_scaling: bool,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            learning_rate: 1e-2,
            epochs: 100,
            fit_subsample: 400,
            max_rows: 4000,
            samples: 100,
            refit_on_add: false,
            boundary_scaling: true,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: GpConfig = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("GP learning rate must be positive".into()));
        }
        if self.fit_subsample == 0 || self.max_rows == 0 || self.samples == 0 {
            return Err(Error::InvalidConfig("GP row budgets and sample count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    /// one lengthscale per standardized input dimension
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl GpHyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if self.lengthscales.iter().all(|&l| ok(l)) && ok(self.signal_variance) && ok(self.noise_variance) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("hyperparameters must be positive: {self:?}")))
        }
    }

    fn to_log(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        p.push(self.signal_variance.ln());
        p.push(self.noise_variance.ln());
        p
    }

    fn from_log(p: &[f64]) -> Self {
        let d = p.len() - 2;
        GpHyperparams {
            lengthscales: p[..d].iter().map(|v| v.exp()).collect(),
            signal_variance: p[d].exp(),
            noise_variance: p[d + 1].exp(),
        }
    }
}

/// An input prepared for kernel evaluation: raw normalized time and standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelInput {
    pub xi: f64,
    pub z: Vec<f64>,
}

impl KernelInput {
    pub fn new(row: &[f64], standardizer: &Standardizer) -> Self {
        KernelInput {
            xi: row[0],
            z: standardizer.apply(row),
        }
    }
}

/// Boundary-vanishing kernel. `xi_scale` is the standardization scale of the
/// normalized-time column, needed for derivatives with respect to raw `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryKernel<'a> {
    pub hyper: &'a GpHyperparams,
    pub xi_scale: f64,
    /// false for a plain RBF
    pub scaled: bool,
}

impl BoundaryKernel<'_> {
    fn s(&self, xi: f64) -> f64 {
        if self.scaled {
            scaling(xi)
        } else {
            1.0
        }
    }

    fn ds(&self, xi: f64) -> f64 {
        if self.scaled {
            scaling_derivative(xi)
        } else {
            0.0
        }
    }

    fn rbf(&self, a: &KernelInput, b: &KernelInput) -> f64 {
        let r2: f64 = a
            .z
            .iter()
            .zip(&b.z)
            .zip(&self.hyper.lengthscales)
            .map(|((x, y), l)| (x - y) * (x - y) / (l * l))
            .sum();
        (-r2).exp()
    }

    pub fn k(&self, a: &KernelInput, b: &KernelInput) -> f64 {
        self.s(a.xi) * self.hyper.signal_variance * self.rbf(a, b) * self.s(b.xi)
    }

    /// `d rbf / d xi_a` divided by `rbf`.
    fn rbf_log_grad(&self, a: &KernelInput, b: &KernelInput) -> f64 {
        let l = self.hyper.lengthscales[0];
        -2.0 * (a.z[0] - b.z[0]) / (l * l * self.xi_scale)
    }

    /// `dk / d xi_a`.
    pub fn k10(&self, a: &KernelInput, b: &KernelInput) -> f64 {
        let r = self.rbf(a, b);
        let g1 = self.rbf_log_grad(a, b);
        self.hyper.signal_variance * self.s(b.xi) * (self.ds(a.xi) * r + self.s(a.xi) * g1 * r)
    }

    /// `d^2 k / d xi_a d xi_b`.
    pub fn k11(&self, a: &KernelInput, b: &KernelInput) -> f64 {
        let r = self.rbf(a, b);
        let g1 = self.rbf_log_grad(a, b);
        let g2 = -g1;
        let l = self.hyper.lengthscales[0];
        // d/dxi_b of (g1 r) = (d g1 / d xi_b) r + g1 g2 r
        let dg1 = 2.0 / (l * l * self.xi_scale * self.xi_scale);
        let r12 = (dg1 + g1 * g2) * r;
        let (s1, d1) = (self.s(a.xi), self.ds(a.xi));
        let (s2, d2) = (self.s(b.xi), self.ds(b.xi));
        self.hyper.signal_variance * (d1 * d2 * r + d1 * s2 * g2 * r + s1 * d2 * g1 * r + s1 * s2 * r12)
    }

    pub fn gram(&self, xs: &[KernelInput]) -> DMatrix<f64> {
        let n = xs.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.k(&xs[i], &xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    pub fn cross(&self, a: &[KernelInput], b: &[KernelInput]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.k(&a[i], &b[j]))
    }
}

/// Cholesky of `k + jitter * mean_diag * I` with the jitter doubled until it succeeds.
fn cholesky_with_jitter(mut k: DMatrix<f64>, start: f64, max: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let scale = (k.trace() / n.max(1) as f64).abs().max(1e-300);
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = start;
    let mut added = 0.0;
    while jitter <= max {
        let delta = jitter * scale - added;
        for i in 0..n {
            k[(i, i)] += delta;
        }
        added = jitter * scale;
        if let Some(c) = Cholesky::new(k.clone()) {
            return Ok((c, jitter));
        }
        jitter *= 2.0;
    }
    Err(Error::NotPositiveDefinite { size: n, jitter: max })
}

/// Conditioned single-output GP.
#[derive(Debug, Clone)]
struct JointPosterior {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl JointPosterior {
    fn new(kernel: &BoundaryKernel, xs: &[KernelInput], y: &DVector<f64>) -> Result<Self> {
        let mut k = kernel.gram(xs);
        for i in 0..xs.len() {
            k[(i, i)] += kernel.hyper.noise_variance;
        }
        let (chol, jitter) = cholesky_with_jitter(k, JITTER_START, JITTER_MAX)?;
        if jitter > 0.0 {
            log::debug!("GP kernel matrix needed relative jitter {jitter:e}");
        }
        let alpha = chol.solve(y);
        Ok(JointPosterior { chol, alpha })
    }
}

/// Serialized form: training rows and hyperparameters; factorizations are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpData {
    pub format: String,
    pub version: u32,
    pub config: GpConfig,
    pub standardizer: Standardizer,
    /// per-joint hyperparameters
    pub hyper: Vec<GpHyperparams>,
    /// raw rows `(xi, t_f, q_0, q_f)`
    pub inputs: Vec<Vec<f64>>,
    /// residual rows, one value per joint
    pub targets: Vec<Vec<f64>>,
    /// log marginal likelihood per joint at the end of fitting
    pub log_likelihood: Vec<f64>,
    /// mean squared error of the posterior mean on the test rows (rad^2)
    pub test_mse: Option<f64>,
}

/// Posterior moments of one joint at a batch of test rows.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct GpModel {
    pub data: GpData,
    points: Vec<KernelInput>,
    joints: Vec<JointPosterior>,
}

impl PartialEq for GpModel {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl GpModel {
    /// Conditions on the stored rows with the stored hyperparameters.
    pub fn from_data(data: GpData) -> Result<Self> {
        let n = data.hyper.len();
        let d = data.standardizer.mean.len();
        for h in &data.hyper {
            h.validate()?;
            check_dim("GP lengthscales", d, h.lengthscales.len())?;
        }
        for (x, y) in data.inputs.iter().zip(&data.targets) {
            check_dim("GP input", d, x.len())?;
            check_dim("GP target", n, y.len())?;
        }
        check_dim("GP targets", data.inputs.len(), data.targets.len())?;
        let points: Vec<KernelInput> = data
            .inputs
            .iter()
            .map(|r| KernelInput::new(r, &data.standardizer))
            .collect();
        let joints = (0..n)
            .map(|j| {
                let y = DVector::from_iterator(points.len(), data.targets.iter().map(|t| t[j]));
                JointPosterior::new(&kernel_for(&data, j), &points, &y)
            })
            .collect::<Result<_>>()?;
        Ok(GpModel { data, points, joints })
    }

    pub fn dof(&self) -> usize {
        self.data.hyper.len()
    }

    pub fn input_dim(&self) -> usize {
        self.data.standardizer.mean.len()
    }

    pub fn kernel(&self, joint: usize) -> BoundaryKernel<'_> {
        kernel_for(&self.data, joint)
    }

    pub fn prepare(&self, rows: &[Vec<f64>]) -> Result<Vec<KernelInput>> {
        rows.iter()
            .map(|r| {
                check_dim("GP input", self.input_dim(), r.len())?;
                if !(0.0..=1.0).contains(&r[0]) {
                    return Err(Error::NormalizedTimeOutOfRange(r[0]));
                }
                Ok(KernelInput::new(r, &self.data.standardizer))
            })
            .collect()
    }

    /// Fits hyperparameters on the train split and conditions on it.
    pub fn fit(dataset: &ResidualDataset, config: &GpConfig) -> Result<Self> {
        let (xt, yt) = dataset.rows(Some(Split::Train));
        let mut model = Self::fit_rows(&xt, &yt, config)?;
        let (xs, ys) = dataset.rows(Some(Split::Test));
        if !xs.is_empty() {
            model.data.test_mse = Some(model.mse(&xs, &ys)?);
        }
        Ok(model)
    }

    /// Adam ascent on the exact log marginal likelihood of a row subsample,
    /// independently per joint, followed by conditioning on up to `max_rows` rows.
    pub fn fit_rows(inputs: &[Vec<f64>], targets: &[Vec<f64>], config: &GpConfig) -> Result<Self> {
        config.validate()?;
        check_dim("GP targets", inputs.len(), targets.len())?;
        let n = targets
            .first()
            .ok_or_else(|| Error::InvalidConfig("no training rows".into()))?
            .len();
        let standardizer = Standardizer::fit(inputs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let keep = subsample_indices(inputs.len(), config.max_rows, &mut rng);
        let inputs: Vec<Vec<f64>> = keep.iter().map(|&i| inputs[i].clone()).collect();
        let targets: Vec<Vec<f64>> = keep.iter().map(|&i| targets[i].clone()).collect();
        let fit_idx = subsample_indices(inputs.len(), config.fit_subsample, &mut rng);
        let fit_points: Vec<KernelInput> = fit_idx
            .iter()
            .map(|&i| KernelInput::new(&inputs[i], &standardizer))
            .collect();
        let d = standardizer.mean.len();
        let mut hyper = Vec::with_capacity(n);
        let mut lml = Vec::with_capacity(n);
        for j in 0..n {
            let y = DVector::from_iterator(fit_idx.len(), fit_idx.iter().map(|&i| targets[i][j]));
            let init = initial_hyperparams(&fit_points, &y, d, config.boundary_scaling);
            let (h, value) = optimize_hyperparams(&fit_points, &y, init, standardizer.scale[0], config)?;
            log::info!("GP joint {j}: log marginal likelihood {value:.4e}, {h:?}");
            hyper.push(h);
            lml.push(value);
        }
        Self::from_data(GpData {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            config: config.clone(),
            standardizer,
            hyper,
            inputs,
            targets,
            log_likelihood: lml,
            test_mse: None,
        })
    }

    /// Posterior mean and covariance of one joint at the given rows.
    pub fn posterior(&self, joint: usize, rows: &[Vec<f64>]) -> Result<Posterior> {
        let test = self.prepare(rows)?;
        Ok(self.posterior_prepared(joint, &test, true))
    }

    fn posterior_prepared(&self, joint: usize, test: &[KernelInput], full_cov: bool) -> Posterior {
        let kernel = self.kernel(joint);
        let m = test.len();
        if self.points.is_empty() {
            return Posterior {
                mean: DVector::zeros(m),
                cov: if full_cov {
                    kernel.gram(test)
                } else {
                    DMatrix::from_diagonal(&DVector::from_iterator(m, test.iter().map(|t| kernel.k(t, t))))
                },
            };
        }
        let post = &self.joints[joint];
        let ks = kernel.cross(&self.points, test);
        let mean = ks.transpose() * &post.alpha;
        let v = post.chol.l().solve_lower_triangular(&ks).expect("triangular factor is invertible");
        let cov = if full_cov {
            let mut c = kernel.gram(test) - v.transpose() * &v;
            // exact zeros where the prior variance vanishes
            for i in 0..m {
                if kernel.s(test[i].xi) == 0.0 {
                    c.row_mut(i).fill(0.0);
                    c.column_mut(i).fill(0.0);
                }
            }
            c
        } else {
            let diag = DVector::from_iterator(
                m,
                (0..m).map(|i| (kernel.k(&test[i], &test[i]) - v.column(i).norm_squared()).max(0.0)),
            );
            DMatrix::from_diagonal(&diag)
        };
        Posterior { mean, cov }
    }

    /// Posterior mean and standard deviation at each row, indexed `[row][joint]`.
    pub fn mean_std(&self, rows: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let test = self.prepare(rows)?;
        let mut mean = vec![vec![0.0; self.dof()]; rows.len()];
        let mut std = vec![vec![0.0; self.dof()]; rows.len()];
        for j in 0..self.dof() {
            let p = self.posterior_prepared(j, &test, false);
            for i in 0..rows.len() {
                mean[i][j] = p.mean[i];
                std[i][j] = p.cov[(i, i)].max(0.0).sqrt();
            }
        }
        Ok((mean, std))
    }

    /// `count` joint posterior draws over the rows, indexed `[sample][row][joint]`.
    pub fn sample(&self, rows: &[Vec<f64>], count: usize, seed: u64) -> Result<Vec<Vec<Vec<f64>>>> {
        Ok(self.predict_and_sample(rows, count, seed)?.2)
    }

    /// Mean, standard deviation and draws from one posterior evaluation per
    /// joint. Draws equal [`Self::sample`]; moments equal [`Self::mean_std`] up to rounding.
    #[allow(clippy::type_complexity)]
    pub fn predict_and_sample(
        &self,
        rows: &[Vec<f64>],
        count: usize,
        seed: u64,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)> {
        let test = self.prepare(rows)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rows.len();
        let mut mean = vec![vec![0.0; self.dof()]; m];
        let mut std = vec![vec![0.0; self.dof()]; m];
        let mut out = vec![vec![vec![0.0; self.dof()]; m]; count];
        for j in 0..self.dof() {
            let p = self.posterior_prepared(j, &test, count > 0);
            for i in 0..m {
                mean[i][j] = p.mean[i];
                std[i][j] = p.cov[(i, i)].max(0.0).sqrt();
            }
            if count == 0 {
                continue;
            }
            let draws = sample_gaussian(&p.mean, &p.cov, count, &mut rng)?;
            for (s, draw) in draws.iter().enumerate() {
                for i in 0..m {
                    out[s][i][j] = draw[i];
                }
            }
        }
        Ok((mean, std, out))
    }

    /// Mean squared error of the posterior mean (rad^2).
    pub fn mse(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
        if inputs.is_empty() {
            return Ok(0.0);
        }
        let (mean, _) = self.mean_std(inputs)?;
        let mut total = 0.0;
        for (m, t) in mean.iter().zip(targets) {
            for (a, b) in m.iter().zip(t) {
                total += (a - b) * (a - b);
            }
        }
        Ok(total / (inputs.len() * self.dof()) as f64)
    }

    /// Extends the training set and reconditions; hyperparameters are kept
    /// unless the configuration asks for a refit.
    pub fn add_data(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Self> {
        check_dim("GP targets", inputs.len(), targets.len())?;
        if inputs.is_empty() {
            return Ok(self.clone());
        }
        let mut data = self.data.clone();
        data.inputs.extend_from_slice(inputs);
        data.targets.extend_from_slice(targets);
        if data.config.refit_on_add {
            let mut refit = Self::fit_rows(&data.inputs, &data.targets, &data.config)?;
            refit.data.standardizer = self.data.standardizer.clone();
            return Self::from_data(refit.data);
        }
        Self::from_data(data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(&self.data).expect("GP serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let data: GpData = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if data.format != FORMAT || data.version != FORMAT_VERSION {
            return Err(Error::parse(
                path,
                format!("expected {FORMAT} v{FORMAT_VERSION}, found {} v{}", data.format, data.version),
            ));
        }
        Self::from_data(data)
    }
}

fn kernel_for(data: &GpData, joint: usize) -> BoundaryKernel<'_> {
    BoundaryKernel {
        hyper: &data.hyper[joint],
        xi_scale: data.standardizer.scale[0],
        scaled: data.config.boundary_scaling,
    }
}

fn subsample_indices(n: usize, budget: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= budget {
        return (0..n).collect();
    }
    let mut idx = sample(rng, n, budget).into_vec();
    idx.sort_unstable();
    idx
}

/// Unit lengthscales, signal variance matching the target power through the
/// scaling function, and noise at one percent of the target power.
fn initial_hyperparams(points: &[KernelInput], y: &DVector<f64>, d: usize, scaled: bool) -> GpHyperparams {
    let n = y.len().max(1) as f64;
    let power = (y.norm_squared() / n).max(1e-12);
    let s2 = if scaled {
        (points.iter().map(|p| scaling(p.xi).powi(2)).sum::<f64>() / n).max(1e-12)
    } else {
        1.0
    };
    GpHyperparams {
        lengthscales: vec![1.0; d],
        signal_variance: power / s2,
        noise_variance: 1e-2 * power,
    }
}

/// Log marginal likelihood and its gradient with respect to the log hyperparameters.
fn log_marginal_likelihood(
    points: &[KernelInput],
    y: &DVector<f64>,
    hyper: &GpHyperparams,
    xi_scale: f64,
    scaled: bool,
) -> Result<(f64, Vec<f64>)> {
    let n = points.len();
    let kernel = BoundaryKernel { hyper, xi_scale, scaled };
    let kf = kernel.gram(points);
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += hyper.noise_variance;
    }
    let (chol, _) = cholesky_with_jitter(k, JITTER_START, JITTER_MAX)?;
    let alpha = chol.solve(y);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let value = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    // W = alpha alpha^T - K^-1; dL/dtheta = 0.5 tr(W dK/dtheta)
    let w = &alpha * alpha.transpose() - chol.inverse();
    let d = hyper.lengthscales.len();
    let mut grad = vec![0.0; d + 2];
    for i in 0..n {
        for j in 0..n {
            let wk = w[(i, j)] * kf[(i, j)];
            if wk == 0.0 {
                continue;
            }
            for (g, ((a, b), l)) in grad
                .iter_mut()
                .zip(points[i].z.iter().zip(&points[j].z).zip(&hyper.lengthscales))
            {
                *g += 0.5 * wk * 2.0 * (a - b) * (a - b) / (l * l);
            }
            grad[d] += 0.5 * wk;
        }
    }
    grad[d + 1] = 0.5 * hyper.noise_variance * w.trace();
    Ok((value, grad))
}

fn optimize_hyperparams(
    points: &[KernelInput],
    y: &DVector<f64>,
    init: GpHyperparams,
    xi_scale: f64,
    config: &GpConfig,
) -> Result<(GpHyperparams, f64)> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    let mut p = init.to_log();
    let mut m = vec![0.0; p.len()];
    let mut v = vec![0.0; p.len()];
    let mut best = (init.clone(), log_marginal_likelihood(points, y, &init, xi_scale, config.boundary_scaling)?.0);
    for t in 1..=config.epochs {
        let h = GpHyperparams::from_log(&p);
        let (value, grad) = log_marginal_likelihood(points, y, &h, xi_scale, config.boundary_scaling)?;
        if value > best.1 {
            best = (h, value);
        }
        let (c1, c2) = (1.0 - BETA1.powi(t as i32), 1.0 - BETA2.powi(t as i32));
        for i in 0..p.len() {
            // ascent on the likelihood
            let g = -grad[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            p[i] -= config.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
        }
    }
    let last = GpHyperparams::from_log(&p);
    let value = log_marginal_likelihood(points, y, &last, xi_scale, config.boundary_scaling)?.0;
    if value > best.1 {
        best = (last, value);
    }
    Ok(best)
}

/// Draws from `N(mean, cov)`. Rows with zero variance are returned as the
/// mean exactly; the rest use a Cholesky factor with relative jitter.
pub fn sample_gaussian(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DVector<f64>>> {
    let m = mean.len();
    let max_diag = (0..m).map(|i| cov[(i, i)]).fold(0.0, f64::max);
    let active: Vec<usize> = (0..m).filter(|&i| cov[(i, i)] > 1e-14 * max_diag && cov[(i, i)] > 0.0).collect();
    let sub = DMatrix::from_fn(active.len(), active.len(), |a, b| cov[(active[a], active[b])]);
    let factor = if active.is_empty() {
        None
    } else {
        Some(cholesky_with_jitter(sub, 1e-10, JITTER_MAX)?.0.unpack())
    };
    Ok((0..count)
        .map(|_| {
            let mut draw = mean.clone();
            if let Some(l) = &factor {
                let z = DVector::from_iterator(active.len(), (0..active.len()).map(|_| StandardNormal.sample(rng)));
                let lz = l * z;
                for (a, &i) in active.iter().enumerate() {
                    draw[i] += lz[a];
                }
            }
            draw
        })
        .collect())
}
