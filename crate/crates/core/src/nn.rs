//! Ensemble of tanh MLPs regressing trajectory residuals.
//!
//! A member maps standardized inputs `(xi, t_f, q_0, q_f)` to a raw output
//! `o`; the residual is `s(xi) * c * o` with a fixed per-joint scale `c`,
//! so it vanishes with its time derivative at `xi = 0` and `xi = 1` for any
//! weights. Members differ only in their random initialization and batch
//! order and are trained with AdamW on the mean squared error.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{input_row, ResidualDataset, Split, Standardizer};
use crate::error::{check_dim, Error, Result};
use crate::prior::{scaling, ProblemSpec};

pub const FORMAT: &str = "restraj-nn-ensemble";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub members: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// rows per optimizer step; `None` trains full batch
    pub batch_size: Option<usize>,
    pub fine_tune_epochs: usize,
    pub fine_tune_learning_rate: f64,
    /// rows per fine-tuning step; `None` fine-tunes full batch
    pub fine_tune_batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig {
            hidden_layers: 2,
            hidden_width: 50,
            members: 10,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            epochs: 500,
            batch_size: None,
            fine_tune_epochs: 200,
            fine_tune_learning_rate: 1e-4,
            fine_tune_batch_size: Some(64),
            seed: 0,
        }
    }
}

impl NnConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: NnConfig = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.hidden_width == 0 || self.members == 0 || self.batch_size == Some(0) || self.fine_tune_batch_size == Some(0) {
            return Err(Error::InvalidConfig(
                "hidden layers, width, members and batch size must be at least 1".into(),
            ));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) || !positive(self.weight_decay) || !positive(self.fine_tune_learning_rate) {
            return Err(Error::InvalidConfig("learning rates and weight decay must be positive".into()));
        }
        Ok(())
    }
}

/// Dense layer `y = W x + b` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Fully connected network with tanh hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases.
    pub fn random(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit)),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").weights.nrows()
    }

    /// Activations of every layer for a batch stored row-wise; the last entry is the raw output.
    fn forward_batch(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = acts.last().expect("input present");
            let mut z = prev * layer.weights.transpose();
            for mut row in z.row_iter_mut() {
                row += layer.bias.transpose();
            }
            if i + 1 < self.layers.len() {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    /// Raw output for a batch stored row-wise.
    pub fn output(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_batch(x).pop().expect("output present")
    }

    /// Parameter gradients from the output gradient `d_out`, given cached activations.
    fn backward(&self, acts: &[DMatrix<f64>], d_out: DMatrix<f64>) -> Vec<Layer> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out;
        for i in (0..self.layers.len()).rev() {
            let input = &acts[i];
            let weights = delta.transpose() * input;
            let bias = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            if i > 0 {
                let mut back = &delta * &self.layers[i].weights;
                back.zip_apply(&acts[i], |d, a| *d *= 1.0 - a * a);
                delta = back;
            }
            grads.push(Layer { weights, bias });
        }
        grads.reverse();
        grads
    }

    fn parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if index < layer.weights.len() {
                return &mut layer.weights.as_mut_slice()[index];
            }
            index -= layer.weights.len();
            if index < layer.bias.len() {
                return &mut layer.bias.as_mut_slice()[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
        .collect()
}

/// AdamW with decoupled weight decay applied to every parameter.
struct AdamW {
    lr: f64,
    weight_decay: f64,
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Mlp, lr: f64, weight_decay: f64) -> Self {
        let zeros = Mlp::zeros(&sizes_of(net)).layers;
        AdamW {
            lr,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Mlp, grads: &[Layer]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let (lr, wd) = (self.lr, self.weight_decay);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] *= 1.0 - lr * wd;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            update(
                layer.weights.as_mut_slice(),
                g.weights.as_slice(),
                m.weights.as_mut_slice(),
                v.weights.as_mut_slice(),
            );
            update(
                layer.bias.as_mut_slice(),
                g.bias.as_slice(),
                m.bias.as_mut_slice(),
                v.bias.as_mut_slice(),
            );
        }
    }
}

fn sizes_of(net: &Mlp) -> Vec<usize> {
    let mut sizes = vec![net.input_dim()];
    sizes.extend(net.layers.iter().map(|l| l.weights.nrows()));
    sizes
}

/// Training rows already split into standardized inputs, boundary factors and targets.
struct Batchable {
    x: DMatrix<f64>,
    factor: Vec<f64>,
    y: DMatrix<f64>,
}

/// Mean squared error in target units, with each joint divided by its scale.
fn loss_and_output_grad(pred: &DMatrix<f64>, target: &DMatrix<f64>, factor: &[f64], scale: &[f64]) -> (f64, DMatrix<f64>) {
    let (b, n) = pred.shape();
    let denom = (b * n) as f64;
    let mut loss = 0.0;
    let mut d_out = DMatrix::zeros(b, n);
    for i in 0..b {
        for j in 0..n {
            let e = (pred[(i, j)] - target[(i, j)]) / scale[j];
            loss += e * e / denom;
            // d/do of (s c o - r)^2 / c^2 is 2 s (s c o - r) / c
            d_out[(i, j)] = 2.0 * factor[i] * e / denom;
        }
    }
    (loss, d_out)
}

/// How raw network outputs become predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// `s(xi) * c * o`: boundary-vanishing residual
    ScaledResidual,
    /// `c * o`: unconstrained target, used for ablations
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub format: String,
    pub version: u32,
    pub config: NnConfig,
    pub mode: OutputMode,
    pub members: Vec<Mlp>,
    pub standardizer: Option<Standardizer>,
    /// per-joint output scale `c`
    pub output_scale: Vec<f64>,
    /// training loss per epoch, per member
    pub history: Vec<Vec<f64>>,
    /// mean squared error on the training rows after training (rad^2)
    pub train_mse: Option<f64>,
    /// mean squared error on the test rows after training (rad^2)
    pub test_mse: Option<f64>,
}

/// Mean, population standard deviation and member values at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

impl EnsembleModel {
    /// Randomly initialized, untrained ensemble.
    pub fn initialize(
        config: &NnConfig,
        mode: OutputMode,
        standardizer: Standardizer,
        output_scale: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let sizes = layer_sizes(config, standardizer.mean.len(), output_scale.len());
        let members = (0..config.members)
            .map(|m| Mlp::random(&sizes, &mut member_rng(config.seed, m)))
            .collect();
        Ok(EnsembleModel {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            config: config.clone(),
            mode,
            members,
            standardizer: Some(standardizer),
            output_scale,
            history: Vec::new(),
            train_mse: None,
            test_mse: None,
        })
    }

    /// Ensemble whose every weight is zero; predicts a zero residual everywhere.
    pub fn zeros(config: &NnConfig, input_dim: usize, dof: usize) -> Self {
        let sizes = layer_sizes(config, input_dim, dof);
        EnsembleModel {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            config: config.clone(),
            mode: OutputMode::ScaledResidual,
            members: (0..config.members).map(|_| Mlp::zeros(&sizes)).collect(),
            standardizer: Some(Standardizer {
                mean: vec![0.0; input_dim],
                scale: vec![1.0; input_dim],
            }),
            output_scale: vec![1.0; dof],
            history: Vec::new(),
            train_mse: None,
            test_mse: None,
        }
    }

    pub fn dof(&self) -> usize {
        self.output_scale.len()
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    fn boundary_factor(&self, xi: f64) -> f64 {
        match self.mode {
            OutputMode::ScaledResidual => scaling(xi),
            OutputMode::Raw => 1.0,
        }
    }

    fn prepare(&self, inputs: &[Vec<f64>], targets: Option<&[Vec<f64>]>) -> Result<Batchable> {
        let std = self.standardizer.as_ref().ok_or(Error::MissingStandardization)?;
        let d = self.input_dim();
        let n = self.dof();
        for row in inputs {
            check_dim("network input", d, row.len())?;
        }
        let x = DMatrix::from_fn(inputs.len(), d, |i, j| (inputs[i][j] - std.mean[j]) / std.scale[j]);
        let factor = inputs.iter().map(|r| self.boundary_factor(r[0])).collect();
        let y = match targets {
            Some(t) => {
                for row in t {
                    check_dim("network target", n, row.len())?;
                }
                DMatrix::from_fn(t.len(), n, |i, j| t[i][j])
            }
            None => DMatrix::zeros(0, n),
        };
        Ok(Batchable { x, factor, y })
    }

    fn scale_outputs(&self, raw: &mut DMatrix<f64>, factor: &[f64]) {
        for (i, mut row) in raw.row_iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= factor[i] * self.output_scale[j];
            }
        }
    }

    /// Predictions of every member for rows `(xi, t_f, q_0, q_f)`, indexed `[member][row][joint]`.
    pub fn member_outputs(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
        let batch = self.prepare(inputs, None)?;
        Ok(self
            .members
            .iter()
            .map(|m| {
                let mut out = m.output(&batch.x);
                self.scale_outputs(&mut out, &batch.factor);
                out.row_iter().map(|r| r.iter().copied().collect()).collect()
            })
            .collect())
    }

    /// Residual of one member at `(xi, spec)`.
    pub fn forward(&self, member: usize, xi: f64, spec: &ProblemSpec) -> Result<Vec<f64>> {
        let batch = self.prepare(&[input_row(xi, spec)], None)?;
        let mut out = self.members[member].output(&batch.x);
        self.scale_outputs(&mut out, &batch.factor);
        Ok(out.row(0).iter().copied().collect())
    }

    pub fn predict(&self, xi: f64, spec: &ProblemSpec) -> Result<Prediction> {
        let samples: Vec<Vec<f64>> = self
            .member_outputs(&[input_row(xi, spec)])?
            .into_iter()
            .map(|mut rows| rows.swap_remove(0))
            .collect();
        let (mean, std) = mean_std(&samples);
        Ok(Prediction { mean, std, samples })
    }

    /// Mean squared error in target units over the given rows, using the ensemble mean.
    pub fn mse(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
        if inputs.is_empty() {
            return Ok(0.0);
        }
        let outs = self.member_outputs(inputs)?;
        let m = outs.len() as f64;
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, t) in targets.iter().enumerate() {
            for (j, tj) in t.iter().enumerate() {
                let mean: f64 = outs.iter().map(|o| o[i][j]).sum::<f64>() / m;
                total += (mean - tj) * (mean - tj);
                count += 1;
            }
        }
        Ok(total / count as f64)
    }

    /// Trains every member for `epochs` epochs from its current weights.
    fn fit_members(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        epochs: usize,
        lr: f64,
        batch_size: Option<usize>,
    ) -> Result<()> {
        if inputs.is_empty() || epochs == 0 {
            return Ok(());
        }
        let data = self.prepare(inputs, Some(targets))?;
        let batch_size = batch_size.unwrap_or(inputs.len()).min(inputs.len());
        let weight_decay = self.config.weight_decay;
        let seed = self.config.seed;
        let round = self.history.first().map_or(0, Vec::len) as u64;
        let scale = self.output_scale.clone();
        let results: Vec<Result<(Mlp, Vec<f64>)>> = self
            .members
            .par_iter()
            .enumerate()
            .map(|(idx, net)| {
                let mut net = net.clone();
                let mut rng = member_rng(seed ^ round.wrapping_mul(0x9e37_79b9), idx + 1_000);
                let mut opt = AdamW::new(&net, lr, weight_decay);
                let mut order: Vec<usize> = (0..data.x.nrows()).collect();
                let mut losses = Vec::with_capacity(epochs);
                for epoch in 0..epochs {
                    order.shuffle(&mut rng);
                    let mut epoch_loss = 0.0;
                    for chunk in order.chunks(batch_size) {
                        let xb = data.x.select_rows(chunk);
                        let yb = data.y.select_rows(chunk);
                        let fb: Vec<f64> = chunk.iter().map(|&i| data.factor[i]).collect();
                        let acts = net.forward_batch(&xb);
                        let mut pred = acts.last().expect("output").clone();
                        for (i, mut row) in pred.row_iter_mut().enumerate() {
                            for (j, v) in row.iter_mut().enumerate() {
                                *v *= fb[i] * scale[j];
                            }
                        }
                        let (loss, d_out) = loss_and_output_grad(&pred, &yb, &fb, &scale);
                        if !loss.is_finite() {
                            return Err(Error::Training(format!(
                                "member {idx}: non-finite loss at epoch {epoch} (learning rate {lr} may be too high)"
                            )));
                        }
                        epoch_loss += loss * chunk.len() as f64 / order.len() as f64;
                        let grads = net.backward(&acts, d_out);
                        opt.step(&mut net, &grads);
                    }
                    losses.push(epoch_loss);
                }
                Ok((net, losses))
            })
            .collect();
        let mut history = Vec::with_capacity(results.len());
        for (slot, res) in self.members.iter_mut().zip(results) {
            let (net, losses) = res?;
            *slot = net;
            history.push(losses);
        }
        if self.history.is_empty() {
            self.history = history;
        } else {
            for (h, more) in self.history.iter_mut().zip(history) {
                h.extend(more);
            }
        }
        Ok(())
    }

    /// Trains a fresh ensemble on the train split; the test split is only evaluated.
    pub fn train(dataset: &ResidualDataset, config: &NnConfig) -> Result<Self> {
        let (xt, yt) = dataset.rows(Some(Split::Train));
        let (xs, ys) = dataset.rows(Some(Split::Test));
        Self::train_rows(&xt, &yt, &xs, &ys, config, OutputMode::ScaledResidual)
    }

    /// Trains on explicit rows. The standardizer and output scale are fit on the training rows.
    pub fn train_rows(
        x_train: &[Vec<f64>],
        y_train: &[Vec<f64>],
        x_test: &[Vec<f64>],
        y_test: &[Vec<f64>],
        config: &NnConfig,
        mode: OutputMode,
    ) -> Result<Self> {
        config.validate()?;
        let first = y_train
            .first()
            .ok_or_else(|| Error::InvalidConfig("no training rows".into()))?;
        let standardizer = Standardizer::fit(x_train)?;
        let n = first.len();
        // c_j makes the raw output of order one: rms(r_j) / rms(factor)
        let factor_ms: f64 = x_train
            .iter()
            .map(|r| match mode {
                OutputMode::ScaledResidual => scaling(r[0]).powi(2),
                OutputMode::Raw => 1.0,
            })
            .sum::<f64>()
            / x_train.len() as f64;
        let output_scale = (0..n)
            .map(|j| {
                let ms = y_train.iter().map(|r| r[j] * r[j]).sum::<f64>() / y_train.len() as f64;
                let c = (ms / factor_ms).sqrt();
                if c > 1e-12 && c.is_finite() {
                    c
                } else {
                    1.0
                }
            })
            .collect();
        let mut model = Self::initialize(config, mode, standardizer, output_scale)?;
        model.fit_members(x_train, y_train, config.epochs, config.learning_rate, config.batch_size)?;
        model.train_mse = Some(model.mse(x_train, y_train)?);
        model.test_mse = if x_test.is_empty() {
            None
        } else {
            Some(model.mse(x_test, y_test)?)
        };
        log::info!(
            "trained {} members: train mse {:.3e}, test mse {:?}",
            model.members.len(),
            model.train_mse.unwrap_or(f64::NAN),
            model.test_mse
        );
        Ok(model)
    }

    /// Continues training every member on `original` rows enriched with `extra`
    /// rows; standardization and output scale stay frozen.
    pub fn fine_tune(
        &self,
        original: (&[Vec<f64>], &[Vec<f64>]),
        extra: (&[Vec<f64>], &[Vec<f64>]),
        epochs: usize,
        lr: f64,
    ) -> Result<Self> {
        let mut model = self.clone();
        if epochs == 0 || (original.0.is_empty() && extra.0.is_empty()) {
            return Ok(model);
        }
        let mut x = original.0.to_vec();
        x.extend_from_slice(extra.0);
        let mut y = original.1.to_vec();
        y.extend_from_slice(extra.1);
        model.fit_members(&x, &y, epochs, lr, self.config.fine_tune_batch_size)?;
        model.train_mse = Some(model.mse(&x, &y)?);
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self).expect("model serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: EnsembleModel = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if model.format != FORMAT || model.version != FORMAT_VERSION {
            return Err(Error::parse(
                path,
                format!("expected {FORMAT} v{FORMAT_VERSION}, found {} v{}", model.format, model.version),
            ));
        }
        if model.members.is_empty() {
            return Err(Error::parse(path, "ensemble has no members"));
        }
        Ok(model)
    }

    /// Largest normwise relative error between backpropagated parameter
    /// gradients of the training loss and central finite differences.
    pub fn gradient_check(&self, member: usize, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
        let data = self.prepare(inputs, Some(targets))?;
        let scale = &self.output_scale;
        let loss_of = |net: &Mlp| -> (f64, Vec<DMatrix<f64>>, DMatrix<f64>) {
            let acts = net.forward_batch(&data.x);
            let mut pred = acts.last().expect("output").clone();
            self.scale_outputs(&mut pred, &data.factor);
            let (loss, d_out) = loss_and_output_grad(&pred, &data.y, &data.factor, scale);
            (loss, acts, d_out)
        };
        let net = &self.members[member];
        let (_, acts, d_out) = loss_of(net);
        let analytic = flatten(&net.backward(&acts, d_out));
        let mut probe = net.clone();
        let mut err: f64 = 0.0;
        let mut norm: f64 = 0.0;
        for (i, a) in analytic.iter().enumerate() {
            let w = *probe.param_mut(i);
            let h = 1e-6 * w.abs().max(1.0);
            *probe.param_mut(i) = w + h;
            let fp = loss_of(&probe).0;
            *probe.param_mut(i) = w - h;
            let fm = loss_of(&probe).0;
            *probe.param_mut(i) = w;
            let fd = (fp - fm) / (2.0 * h);
            err = err.max((fd - a).abs());
            norm = norm.max(fd.abs());
        }
        debug_assert_eq!(analytic.len(), net.parameters());
        Ok(err / norm.max(1e-300))
    }
}

fn layer_sizes(config: &NnConfig, input_dim: usize, dof: usize) -> Vec<usize> {
    let mut sizes = vec![input_dim];
    sizes.extend(std::iter::repeat_n(config.hidden_width, config.hidden_layers));
    sizes.push(dof);
    sizes
}

fn member_rng(seed: u64, member: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member as u64);
    rng
}

/// Element-wise mean and population standard deviation across samples.
pub fn mean_std(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let m = samples.len() as f64;
    let n = samples.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..n).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / m).collect();
    let std = (0..n)
        .map(|j| (samples.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / m).sqrt())
        .collect();
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TrajectoryRecord;
    use crate::prior::{normalized_grid, NormalizedTime};
    use proptest::prelude::*;

    fn spec(t_f: f64, q0: f64, qf: f64) -> ProblemSpec {
        ProblemSpec::new(t_f, vec![q0], vec![qf]).unwrap()
    }

    fn small_config(members: usize, width: usize) -> NnConfig {
        NnConfig {
            hidden_width: width,
            members,
            epochs: 50,
            ..Default::default()
        }
    }

    fn random_model(seed: u64, members: usize) -> EnsembleModel {
        let standardizer = Standardizer {
            mean: vec![0.5, 1.2, 0.1, -0.2],
            scale: vec![0.3, 0.25, 0.5, 0.6],
        };
        let cfg = NnConfig {
            seed,
            ..small_config(members, 8)
        };
        EnsembleModel::initialize(&cfg, OutputMode::ScaledResidual, standardizer, vec![0.7]).unwrap()
    }

    /// Residual table with `r = s(xi) * (0.1 q_f + 0.05 t_f)`.
    fn synthetic_dataset(zero: bool) -> ResidualDataset {
        let mut ds = ResidualDataset::empty(&crate::dynamics::RobotModel::pendulum());
        let specs = [
            spec(1.0, -0.4, 0.5),
            spec(1.2, 0.2, -0.6),
            spec(1.4, 0.0, 0.7),
            spec(1.1, 0.3, 0.6),
            spec(1.3, -0.2, -0.5),
        ];
        for (i, s) in specs.iter().enumerate() {
            let xi = normalized_grid(21);
            let residuals = xi
                .iter()
                .map(|&x| {
                    let a = if zero { 0.0 } else { 0.1 * s.q_f[0] + 0.05 * s.t_f };
                    vec![scaling(x) * a]
                })
                .collect();
            ds.trajectories.push(TrajectoryRecord {
                spec: s.clone(),
                split: if i == 4 { Split::Test } else { Split::Train },
                xi,
                residuals,
                optimal_energy: 1.0,
                prior_energy: 2.0,
            });
        }
        ds
    }

    /// Independent scalar forward pass.
    fn hand_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (k, layer) in net.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.weights.nrows()];
            for (i, zi) in z.iter_mut().enumerate() {
                *zi = layer.bias[i] + (0..a.len()).map(|j| layer.weights[(i, j)] * a[j]).sum::<f64>();
                if k + 1 < net.layers.len() {
                    *zi = zi.tanh();
                }
            }
            a = z;
        }
        a
    }

    #[test]
    fn midpoint_output_is_sixteenth_of_scaled_raw_output() {
        let model = random_model(3, 2);
        let s = spec(1.3, 0.2, -0.4);
        let std = model.standardizer.as_ref().unwrap();
        let x = std.apply(&input_row(0.5, &s));
        for m in 0..2 {
            let o = hand_forward(&model.members[m], &x)[0];
            let r = model.forward(m, 0.5, &s).unwrap()[0];
            assert!((r - 0.0625 * 0.7 * o).abs() <= 1e-15 * o.abs().max(1.0));
        }
    }

    #[test]
    fn std_matches_hand_computed_population_std() {
        let model = random_model(11, 5);
        let s = spec(1.1, -0.1, 0.6);
        let p = model.predict(0.37, &s).unwrap();
        let vals: Vec<f64> = (0..5).map(|m| model.forward(m, 0.37, &s).unwrap()[0]).collect();
        let mean = vals.iter().sum::<f64>() / 5.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((p.mean[0] - mean).abs() < 1e-15);
        assert!((p.std[0] - var.sqrt()).abs() < 1e-15);
        assert_eq!(p.samples.len(), 5);
    }

    #[test]
    fn single_member_has_zero_std() {
        let model = random_model(5, 1);
        let p = model.predict(0.4, &spec(1.0, 0.1, 0.5)).unwrap();
        assert_eq!(p.std, vec![0.0]);
    }

    #[test]
    fn zero_ensemble_predicts_zero_residual() {
        let model = EnsembleModel::zeros(&NnConfig::default(), 4, 1);
        let p = model.predict(0.3, &spec(1.0, 0.1, 0.5)).unwrap();
        assert_eq!(p.mean, vec![0.0]);
        assert_eq!(p.std, vec![0.0]);
    }

    #[test]
    fn missing_standardization_is_reported() {
        let mut model = random_model(1, 1);
        model.standardizer = None;
        assert!(matches!(model.forward(0, 0.5, &spec(1.0, 0.0, 0.5)), Err(Error::MissingStandardization)));
    }

    #[test]
    fn gradient_check_single_hidden_unit() {
        let ds = synthetic_dataset(false);
        let (x, y) = ds.rows(Some(Split::Train));
        let cfg = NnConfig {
            hidden_layers: 1,
            hidden_width: 1,
            members: 1,
            ..Default::default()
        };
        let standardizer = Standardizer::fit(&x).unwrap();
        let model = EnsembleModel::initialize(&cfg, OutputMode::ScaledResidual, standardizer, vec![0.3]).unwrap();
        assert!(model.gradient_check(0, &x, &y).unwrap() <= 1e-5);
    }

    #[test]
    fn gradient_check_full_network_through_scaling() {
        let ds = synthetic_dataset(false);
        let (x, y) = ds.rows(Some(Split::Train));
        let standardizer = Standardizer::fit(&x).unwrap();
        let model =
            EnsembleModel::initialize(&NnConfig::default(), OutputMode::ScaledResidual, standardizer, vec![0.3]).unwrap();
        assert!(model.gradient_check(0, &x[..12], &y[..12]).unwrap() <= 1e-5);
    }

    #[test]
    fn adamw_first_step_matches_closed_form() {
        // first bias-corrected step is -lr * g / (|g| + eps) after decay
        let mut net = Mlp::zeros(&[1, 1]);
        net.layers[0].weights[(0, 0)] = 2.0;
        net.layers[0].bias[0] = -1.0;
        let mut grads = Mlp::zeros(&[1, 1]).layers;
        grads[0].weights[(0, 0)] = 0.5;
        grads[0].bias[0] = -3.0;
        let mut opt = AdamW::new(&net, 0.1, 0.01);
        opt.step(&mut net, &grads);
        let expect = |p: f64, g: f64| p * (1.0 - 0.1 * 0.01) - 0.1 * g / (g.abs() + AdamW::EPS);
        assert!((net.layers[0].weights[(0, 0)] - expect(2.0, 0.5)).abs() < 1e-15);
        assert!((net.layers[0].bias[0] - expect(-1.0, -3.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_residuals_train_to_zero() {
        let ds = synthetic_dataset(true);
        let cfg = NnConfig {
            epochs: 1000,
            weight_decay: 0.5,
            ..small_config(2, 8)
        };
        let model = EnsembleModel::train(&ds, &cfg).unwrap();
        assert!(model.test_mse.unwrap() <= 1e-6, "mse {:?} {:?}", model.train_mse, model.test_mse);
    }

    #[test]
    fn training_beats_mean_predictor_and_is_deterministic() {
        let ds = synthetic_dataset(false);
        let cfg = NnConfig {
            epochs: 300,
            ..small_config(2, 16)
        };
        let a = EnsembleModel::train(&ds, &cfg).unwrap();
        let b = EnsembleModel::train(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        let (_, ys) = ds.rows(Some(Split::Test));
        let mean = ys.iter().map(|r| r[0]).sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / ys.len() as f64;
        assert!(a.test_mse.unwrap() < var, "test mse {:?} vs variance {var}", a.test_mse);
        assert_eq!(a.history.len(), 2);
        assert_eq!(a.history[0].len(), 300);
    }

    #[test]
    fn fine_tune_without_data_or_epochs_is_identity() {
        let model = random_model(2, 2);
        let empty: Vec<Vec<f64>> = Vec::new();
        assert_eq!(model.fine_tune((&empty, &empty), (&empty, &empty), 200, 1e-4).unwrap(), model);
        let ds = synthetic_dataset(false);
        let (x, y) = ds.rows(None);
        assert_eq!(model.fine_tune((&x, &y), (&empty, &empty), 0, 1e-4).unwrap(), model);
    }

    #[test]
    fn fine_tune_on_fitted_rows_keeps_test_error() {
        let ds = synthetic_dataset(false);
        let cfg = NnConfig {
            epochs: 300,
            ..small_config(2, 16)
        };
        let model = EnsembleModel::train(&ds, &cfg).unwrap();
        let (xt, yt) = ds.rows(Some(Split::Train));
        let (xs, ys) = ds.rows(Some(Split::Test));
        let tuned = model.fine_tune((&xt, &yt), (&xt[..20], &yt[..20]), 200, 1e-4).unwrap();
        let before = model.mse(&xs, &ys).unwrap();
        let after = tuned.mse(&xs, &ys).unwrap();
        assert!(after <= 1.1 * before, "test mse {before} -> {after}");
        assert_eq!(tuned.standardizer, model.standardizer);
    }

    #[test]
    fn save_load_round_trips_bit_exact() {
        let ds = synthetic_dataset(false);
        let model = EnsembleModel::train(&ds, &small_config(2, 4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nn.json");
        model.save(&path).unwrap();
        assert_eq!(EnsembleModel::load(&path).unwrap(), model);
    }

    #[test]
    fn load_rejects_foreign_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nn.json");
        let mut model = random_model(0, 1);
        model.format = "something-else".into();
        model.save(&path).unwrap();
        assert!(matches!(EnsembleModel::load(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn config_validation() {
        for cfg in [
            NnConfig {
                hidden_width: 0,
                ..Default::default()
            },
            NnConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            NnConfig {
                batch_size: Some(0),
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
        assert!(NnConfig::default().validate().is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn boundaries_vanish_for_any_weights(
            seed in 0u64..1_000,
            t_f in 0.3f64..4.0,
            q0 in -3.0f64..3.0,
            qf in -3.0f64..3.0,
        ) {
            let model = random_model(seed, 3);
            let s = spec(t_f, q0, qf);
            for xi in [0.0, 1.0] {
                let p = model.predict(xi, &s).unwrap();
                prop_assert_eq!(&p.mean, &vec![0.0]);
                prop_assert_eq!(&p.std, &vec![0.0]);
                for m in &p.samples {
                    prop_assert_eq!(m, &vec![0.0]);
                }
            }
            let h = 1e-6;
            for m in 0..3 {
                let d0 = (model.forward(m, h, &s).unwrap()[0] - model.forward(m, 0.0, &s).unwrap()[0]) / h;
                let d1 = (model.forward(m, 1.0, &s).unwrap()[0] - model.forward(m, 1.0 - h, &s).unwrap()[0]) / h;
                prop_assert!(d0.abs() <= 1e-4 && d1.abs() <= 1e-4);
                let q = crate::prior::cubic_prior(&s, NormalizedTime::new(0.0).unwrap())[0] + model.forward(m, 0.0, &s).unwrap()[0];
                prop_assert!((q - q0).abs() <= 1e-9);
            }
        }

        #[test]
        fn std_vanishes_where_members_agree(seed in 0u64..1_000, xi in 0.0f64..1.0) {
            let mut model = random_model(seed, 1);
            let net = model.members[0].clone();
            model.members = vec![net.clone(), net.clone(), net];
            let p = model.predict(xi, &spec(1.0, 0.2, 0.7)).unwrap();
            prop_assert!(p.std[0] <= 1e-15);
        }
    }
}
