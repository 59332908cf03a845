//! Two-branch feedforward embedding model trained with Adam and mixup.
//!
//! One branch consumes the reduced spectrogram, the other the band spectrum.
//! Each branch outputs `D/2` values; the two halves are concatenated and
//! projected onto the unit sphere.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binfmt::{BinReader, BinWriter};
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::features::{clip_features, ClipFeatures, FeatureConfig, Waveform};
use crate::geometry::{glorot_rows, sphere_project, EmbeddingVector};
use crate::loss_heads::{
    evaluate_head, update_adaptive_scale, AdaptiveScaleState, CenterBank, HeadConfig, HeadEvaluation,
    TargetDistribution,
};

pub const MODEL_MAGIC: &[u8] = b"ADPJ1";

const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    LeakyRelu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::LeakyRelu if z > 0.0 => z,
            Activation::LeakyRelu => LEAKY_SLOPE * z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu if z > 0.0 => 1.0,
            Activation::LeakyRelu => LEAKY_SLOPE,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::LeakyRelu => 1,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Activation::Identity),
            1 => Some(Activation::LeakyRelu),
            _ => None,
        }
    }
}

/// Dense layer `y = act(W x + b)` with `W` stored row-major (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Self {
            weights: vec![0.0; self.weights.len()],
            bias: self.bias.as_ref().map(|b| vec![0.0; b.len()]),
            ..*self
        }
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = self.weights.chunks_exact(self.inputs).map(|row| dot(row, x)).collect();
        if let Some(b) = &self.bias {
            z.iter_mut().zip(b).for_each(|(zi, bi)| *zi += bi);
        }
        z
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Architecture of both branches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub spectrogram_input: usize,
    pub spectrum_input: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub bias: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 || !self.embedding_dim.is_multiple_of(2) {
            return Err(Error::ConfigInvalid(format!("embedding dimension {} must be even and >= 2", self.embedding_dim)));
        }
        if self.spectrogram_input == 0 || self.spectrum_input == 0 || self.hidden.contains(&0) {
            return Err(Error::ConfigInvalid("layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spectrogram_branch: Vec<Layer>,
    pub spectrum_branch: Vec<Layer>,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut branch = |input: usize| {
            let mut widths = vec![input];
            widths.extend(&spec.hidden);
            widths.push(spec.embedding_dim / 2);
            let n = widths.len() - 1;
            widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| Layer {
                    inputs: w[0],
                    outputs: w[1],
                    activation: if i + 1 == n { Activation::Identity } else { Activation::LeakyRelu },
                    weights: glorot_rows(w[1], w[0], &mut rng).into_iter().flatten().collect(),
                    bias: spec.bias.then(|| vec![0.0; w[1]]),
                })
                .collect::<Vec<_>>()
        };
        let spectrogram_branch = branch(spec.spectrogram_input);
        let spectrum_branch = branch(spec.spectrum_input);
        Ok(Self { spectrogram_branch, spectrum_branch })
    }

    pub fn embedding_dim(&self) -> usize {
        self.spectrogram_branch.last().map_or(0, |l| l.outputs) + self.spectrum_branch.last().map_or(0, |l| l.outputs)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            spectrogram_branch: self.spectrogram_branch.iter().map(Layer::zeros_like).collect(),
            spectrum_branch: self.spectrum_branch.iter().map(Layer::zeros_like).collect(),
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.spectrogram_branch.iter().chain(&self.spectrum_branch)
    }

    /// Parameter buffers in serialization order.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in self.layers() {
            out.push(l.weights.as_slice());
            if let Some(b) = &l.bias {
                out.push(b.as_slice());
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in self.spectrogram_branch.iter_mut().chain(self.spectrum_branch.iter_mut()) {
            out.push(l.weights.as_mut_slice());
            if let Some(b) = &mut l.bias {
                out.push(b.as_mut_slice());
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    fn scale_by(&mut self, factor: f64) {
        for b in self.buffers_mut() {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.buffers_mut().into_iter().zip(other.buffers()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(MODEL_MAGIC);
        w.u32(self.embedding_dim()).u32(2);
        for branch in [&self.spectrogram_branch, &self.spectrum_branch] {
            w.u32(branch.len());
            for l in branch {
                w.u32(l.inputs).u32(l.outputs).u8(l.activation.tag()).u8(l.bias.is_some() as u8);
            }
        }
        for buf in self.buffers() {
            w.f64s(buf);
        }
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::open(path, MODEL_MAGIC)?;
        let d = r.u32()?;
        if r.u32()? != 2 {
            return Err(r.err("expected two branches"));
        }
        let mut shapes = Vec::new();
        for _ in 0..2 {
            let n = r.u32()?;
            let mut layers = Vec::with_capacity(n);
            for _ in 0..n {
                let inputs = r.u32()?;
                let outputs = r.u32()?;
                let activation = Activation::from_tag(r.u8()?).ok_or_else(|| r.err("unknown activation"))?;
                let bias = r.u8()? != 0;
                layers.push((inputs, outputs, activation, bias));
            }
            shapes.push(layers);
        }
        let mut branches = Vec::new();
        for layers in shapes {
            let mut branch = Vec::new();
            let mut prev: Option<usize> = None;
            for (inputs, outputs, activation, bias) in layers {
                if prev.is_some_and(|p| p != inputs) {
                    return Err(r.err("layer dimensions do not chain"));
                }
                prev = Some(outputs);
                let weights = r.f64s(inputs * outputs)?;
                let bias = if bias { Some(r.f64s(outputs)?) } else { None };
                branch.push(Layer { inputs, outputs, activation, weights, bias });
            }
            branches.push(branch);
        }
        r.finish()?;
        let spectrum_branch = branches.pop().unwrap_or_default();
        let spectrogram_branch = branches.pop().unwrap_or_default();
        let params = Self { spectrogram_branch, spectrum_branch };
        if params.embedding_dim() != d {
            return Err(Error::Format { path: path.to_path_buf(), reason: "embedding dimension mismatch".into() });
        }
        Ok(params)
    }
}

/// Activations cached for backpropagation through one branch.
struct BranchTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn branch_forward(layers: &[Layer], x: &[f64]) -> Result<(Vec<f64>, BranchTrace)> {
    let first = layers.first().ok_or_else(|| Error::ConfigInvalid("empty branch".into()))?;
    if x.len() != first.inputs {
        return Err(Error::DimensionMismatch { expected: first.inputs, found: x.len() });
    }
    let mut trace = BranchTrace { inputs: Vec::with_capacity(layers.len()), pre: Vec::with_capacity(layers.len()) };
    let mut a = x.to_vec();
    for l in layers {
        let z = l.pre_activation(&a);
        let next = z.iter().map(|&v| l.activation.apply(v)).collect();
        trace.inputs.push(a);
        trace.pre.push(z);
        a = next;
    }
    Ok((a, trace))
}

fn branch_backward(layers: &[Layer], trace: &BranchTrace, grad_out: &[f64], grads: &mut [Layer]) {
    let mut g = grad_out.to_vec();
    for (i, l) in layers.iter().enumerate().rev() {
        let dz: Vec<f64> = g.iter().zip(&trace.pre[i]).map(|(gi, zi)| gi * l.activation.derivative(*zi)).collect();
        let input = &trace.inputs[i];
        let gl = &mut grads[i];
        for (row, dzo) in gl.weights.chunks_exact_mut(l.inputs).zip(&dz) {
            row.iter_mut().zip(input).for_each(|(w, a)| *w += dzo * a);
        }
        if let Some(b) = &mut gl.bias {
            b.iter_mut().zip(&dz).for_each(|(bi, d)| *bi += d);
        }
        if i > 0 {
            let mut prev = vec![0.0; l.inputs];
            for (row, dzo) in l.weights.chunks_exact(l.inputs).zip(&dz) {
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += dzo * w);
            }
            g = prev;
        }
    }
}

struct ForwardTrace {
    raw: Vec<f64>,
    spectrogram: BranchTrace,
    spectrum: BranchTrace,
}

fn forward_trace(params: &ModelParams, x: &ClipFeatures) -> Result<ForwardTrace> {
    let (mut raw, spectrogram) = branch_forward(&params.spectrogram_branch, &x.spectrogram)?;
    let (b, spectrum) = branch_forward(&params.spectrum_branch, &x.spectrum)?;
    raw.extend(b);
    Ok(ForwardTrace { raw, spectrogram, spectrum })
}

/// Concatenated branch outputs before normalization.
pub fn forward_raw(params: &ModelParams, x: &ClipFeatures) -> Result<Vec<f64>> {
    Ok(forward_trace(params, x)?.raw)
}

/// Unit-norm embedding of one clip.
pub fn forward(params: &ModelParams, x: &ClipFeatures) -> Result<EmbeddingVector> {
    sphere_project(&forward_raw(params, x)?)
}

/// Parameter gradients of the head loss for one sample.
pub fn backward(
    params: &ModelParams,
    x: &ClipFeatures,
    target: &TargetDistribution,
    head: &HeadConfig,
    bank: &CenterBank,
    scale: &AdaptiveScaleState,
) -> Result<(ModelParams, HeadEvaluation)> {
    let mut grads = params.zeros_like();
    let eval = accumulate_backward(params, x, target, head, bank, scale, &mut grads)?;
    Ok((grads, eval))
}

fn accumulate_backward(
    params: &ModelParams,
    x: &ClipFeatures,
    target: &TargetDistribution,
    head: &HeadConfig,
    bank: &CenterBank,
    scale: &AdaptiveScaleState,
    grads: &mut ModelParams,
) -> Result<HeadEvaluation> {
    let trace = forward_trace(params, x)?;
    let eval = evaluate_head(&trace.raw, target, head, bank, scale)?;
    let half = params.spectrogram_branch.last().map_or(0, |l| l.outputs);
    let (ga, gb) = eval.output.gradient.split_at(half);
    branch_backward(&params.spectrogram_branch, &trace.spectrogram, ga, &mut grads.spectrogram_branch);
    branch_backward(&params.spectrum_branch, &trace.spectrum, gb, &mut grads.spectrum_branch);
    Ok(eval)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias correction over every parameter buffer.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.buffers().iter().map(|b| vec![0.0; b.len()]).collect();
        Self { cfg, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (((p, g), m), v) in params.buffers_mut().into_iter().zip(grads.buffers()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
            }
        }
    }
}

/// One labeled normal training clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub features: ClipFeatures,
    /// Present when the clip was ingested from audio; mixup then happens on
    /// the waveform.
    pub waveform: Option<Waveform>,
    pub class_index: usize,
    pub domain: Domain,
    pub section: String,
}

/// Mixes two samples with coefficient `lambda` on `a`.
pub fn mixup_pair(
    a: &TrainingSample,
    b: &TrainingSample,
    lambda: f64,
    n_classes: usize,
    features: &FeatureConfig,
) -> Result<(ClipFeatures, TargetDistribution)> {
    let target = TargetDistribution::mixed(n_classes, a.class_index, b.class_index, lambda)?;
    if let (Some(wa), Some(wb)) = (&a.waveform, &b.waveform) {
        let mixed = Waveform::mix(wa, wb, lambda)?;
        return Ok((clip_features(&mixed, features)?, target));
    }
    let mix = |x: &[f64], y: &[f64]| -> Result<Vec<f64>> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
        }
        Ok(x.iter().zip(y).map(|(p, q)| lambda * p + (1.0 - lambda) * q).collect())
    };
    let feats = ClipFeatures {
        spectrogram: mix(&a.features.spectrogram, &b.features.spectrogram)?,
        spectrum: mix(&a.features.spectrum, &b.features.spectrum)?,
    };
    Ok((feats, target))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub mixup: bool,
    pub seed: u64,
    pub head: HeadConfig,
    pub frozen_scale: bool,
    pub model: ModelSpec,
    pub features: FeatureConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::ConfigInvalid("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigInvalid("batch size must be at least 1".into()));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean per-sample training loss of every epoch.
    pub loss_history: Vec<f64>,
    pub final_scale: AdaptiveScaleState,
}

/// Mini-batch training with the center bank held fixed.
pub fn train(config: &TrainConfig, dataset: &[TrainingSample], bank: &CenterBank) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_classes = bank.n_classes();
    if let Some(s) = dataset.iter().find(|s| s.class_index >= n_classes) {
        return Err(Error::Data(format!("class index {} out of range for {n_classes} classes", s.class_index)));
    }
    if bank.dim() != config.model.embedding_dim {
        return Err(Error::DimensionMismatch { expected: config.model.embedding_dim, found: bank.dim() });
    }

    let mut params = ModelParams::init(&config.model, config.seed)?;
    let mut adam = Adam::new(config.adam, &params);
    let mut scale = AdaptiveScaleState::new(n_classes, config.frozen_scale);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_ba7c);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let partners: Option<Vec<(usize, f64)>> = config.mixup.then(|| {
                let mut p = batch.to_vec();
                p.shuffle(&mut rng);
                p.into_iter().map(|j| (j, rng.random_range(0.0..=1.0))).collect()
            });
            let mut grads = params.zeros_like();
            let mut angles = Vec::with_capacity(batch.len());
            let mut sums = Vec::with_capacity(batch.len());
            for (pos, &i) in batch.iter().enumerate() {
                let a = &dataset[i];
                let (x, target) = match &partners {
                    Some(p) => {
                        let (j, lambda) = p[pos];
                        mixup_pair(a, &dataset[j], lambda, n_classes, &config.features)?
                    }
                    None => (a.features.clone(), TargetDistribution::one_hot(n_classes, a.class_index)?),
                };
                let eval = accumulate_backward(&params, &x, &target, &config.head, bank, &scale, &mut grads)?;
                epoch_loss += eval.output.value;
                angles.push(eval.angle_true);
                sums.push(eval.logit_sum);
            }
            grads.scale_by(1.0 / batch.len() as f64);
            adam.step(&mut params, &grads);
            if config.head.head.uses_scale() {
                scale = update_adaptive_scale(scale, &angles, &sums)?;
            }
        }
        history.push(epoch_loss / dataset.len() as f64);
    }
    if !params.is_finite() {
        return Err(Error::Data("training diverged to non-finite parameters".into()));
    }
    Ok(TrainOutcome { params, loss_history: history, final_scale: scale })
}

/// Sums gradients of several samples; exposed for batch-level checks.
pub fn batch_gradient(
    params: &ModelParams,
    samples: &[(ClipFeatures, TargetDistribution)],
    head: &HeadConfig,
    bank: &CenterBank,
    scale: &AdaptiveScaleState,
) -> Result<ModelParams> {
    let mut total = params.zeros_like();
    for (x, t) in samples {
        let (g, _) = backward(params, x, t, head, bank, scale)?;
        total.add_assign(&g);
    }
    Ok(total)
}
