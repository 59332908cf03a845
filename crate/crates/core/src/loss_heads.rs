//! The five training objectives: compactness, compactness + CCE, AdaCos,
//! sub-cluster AdaCos and AdaProj.
//!
//! All heads except plain compactness turn per-class logits into a loss via
//! [`softmax_cce`]. Logits carry no bias terms and the center banks are never
//! updated by training.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    dot, glorot_rows, norm, orthonormalize, sphere_project, subspace_cosine, subspace_cosine_with_grad,
    EmbeddingVector, SubspaceBasis,
};

/// Lower bound on the adaptive scale; keeps `s_hat > 0` for two-class
/// problems where `ln(N - 1) = 0`.
pub const MIN_SCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossHead {
    Compactness,
    CompactnessCce,
    AdaCos,
    SubClusterAdaCos,
    AdaProj,
}

impl LossHead {
    pub const ALL: [LossHead; 5] = [
        LossHead::Compactness,
        LossHead::CompactnessCce,
        LossHead::AdaCos,
        LossHead::SubClusterAdaCos,
        LossHead::AdaProj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossHead::Compactness => "compactness",
            LossHead::CompactnessCce => "compactness-cce",
            LossHead::AdaCos => "adacos",
            LossHead::SubClusterAdaCos => "subcluster-adacos",
            LossHead::AdaProj => "adaproj",
        }
    }

    /// Whether the head has a softmax whose scale is adapted.
    pub fn uses_scale(self) -> bool {
        !matches!(self, LossHead::Compactness)
    }
}

impl fmt::Display for LossHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossHead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossHead::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown loss head '{s}'")))
    }
}

/// How class subspaces are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CenterInit {
    /// Glorot-uniform draw followed by exact orthonormalization.
    #[default]
    Orthonormal,
    /// Glorot-uniform draw, rows only normalized to unit length.
    RawGlorot,
}

impl FromStr for CenterInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthonormal" => Ok(CenterInit::Orthonormal),
            "glorot" => Ok(CenterInit::RawGlorot),
            _ => Err(Error::ConfigInvalid(format!("unknown center init '{s}'"))),
        }
    }
}

/// Frozen class centers.
#[derive(Debug, Clone, PartialEq)]
pub enum CenterBank {
    /// One unit center per class.
    Single(Vec<EmbeddingVector>),
    /// `M` unit centers per class.
    SubCluster(Vec<Vec<EmbeddingVector>>),
    /// One subspace per class.
    Subspace(Vec<SubspaceBasis>),
}

impl CenterBank {
    /// Draws the bank a head needs. `subspace_dim` is only used by AdaProj and
    /// `subclusters` only by sub-cluster AdaCos.
    pub fn random(
        head: LossHead,
        n_classes: usize,
        dim: usize,
        subspace_dim: usize,
        subclusters: usize,
        init: CenterInit,
        seed: u64,
    ) -> Result<Self> {
        if n_classes == 0 || dim == 0 {
            return Err(Error::ConfigInvalid("center bank needs at least one class and dimension".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit_rows = |count: usize, rng: &mut ChaCha8Rng| -> Result<Vec<EmbeddingVector>> {
            glorot_rows(count, dim, rng).iter().map(|r| sphere_project(r)).collect()
        };
        match head {
            LossHead::Compactness | LossHead::CompactnessCce | LossHead::AdaCos => {
                Ok(CenterBank::Single(unit_rows(n_classes, &mut rng)?))
            }
            LossHead::SubClusterAdaCos => {
                if subclusters == 0 {
                    return Err(Error::ConfigInvalid("sub-cluster count must be at least 1".into()));
                }
                let all = unit_rows(n_classes * subclusters, &mut rng)?;
                Ok(CenterBank::SubCluster(all.chunks(subclusters).map(|c| c.to_vec()).collect()))
            }
            LossHead::AdaProj => {
                if subspace_dim == 0 || subspace_dim >= dim {
                    return Err(Error::InvalidDims { subspace: subspace_dim, embedding: dim });
                }
                let bases = (0..n_classes)
                    .map(|_| {
                        let raw = glorot_rows(subspace_dim, dim, &mut rng);
                        match init {
                            CenterInit::Orthonormal => orthonormalize(&raw),
                            CenterInit::RawGlorot => SubspaceBasis::from_unit_rows(&raw),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(CenterBank::Subspace(bases))
            }
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            CenterBank::Single(c) => c.len(),
            CenterBank::SubCluster(c) => c.len(),
            CenterBank::Subspace(b) => b.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CenterBank::Single(c) => c[0].dim(),
            CenterBank::SubCluster(c) => c[0][0].dim(),
            CenterBank::Subspace(b) => b[0].ambient_dim(),
        }
    }

    /// Hash over the exact bit patterns of every stored value.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mut feed = |v: &[f64]| v.iter().for_each(|x| x.to_bits().hash(&mut h));
        match self {
            CenterBank::Single(c) => c.iter().for_each(|e| feed(e.as_slice())),
            CenterBank::SubCluster(c) => c.iter().flatten().for_each(|e| feed(e.as_slice())),
            CenterBank::Subspace(b) => b.iter().for_each(|s| feed(s.as_flat())),
        }
        h.finish()
    }
}

/// The AdaCos scale `s_hat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveScaleState {
    pub s_hat: f64,
    pub n_classes: usize,
    /// When set, updates are no-ops and `s_hat` stays at its initial value.
    pub frozen: bool,
}

impl AdaptiveScaleState {
    /// `s_hat_0 = sqrt(2) * ln(N - 1)`, floored at [`MIN_SCALE`].
    pub fn new(n_classes: usize, frozen: bool) -> Self {
        let s0 = if n_classes > 2 { std::f64::consts::SQRT_2 * ((n_classes - 1) as f64).ln() } else { 0.0 };
        Self { s_hat: s0.max(MIN_SCALE), n_classes, frozen }
    }

    pub fn fixed(s_hat: f64) -> Self {
        Self { s_hat, n_classes: 0, frozen: true }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One AdaCos scale step from per-sample angles to the true class and
/// per-sample sums `sum_{k != true} exp(s_hat cos theta_k)`.
pub fn update_adaptive_scale(
    state: AdaptiveScaleState,
    batch_angles_true: &[f64],
    batch_logit_sums: &[f64],
) -> Result<AdaptiveScaleState> {
    if batch_angles_true.is_empty() || batch_logit_sums.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if state.frozen {
        return Ok(state);
    }
    let b_avg = batch_logit_sums.iter().sum::<f64>() / batch_logit_sums.len() as f64;
    let theta_med = median(&mut batch_angles_true.to_vec());
    let s = b_avg.ln() / theta_med.min(std::f64::consts::FRAC_PI_4).cos();
    let s_hat = if s.is_finite() { s.max(MIN_SCALE) } else { state.s_hat };
    Ok(AdaptiveScaleState { s_hat, ..state })
}

/// Class weights for cross-entropy; one-hot or mixup-mixed.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    weights: Vec<f64>,
}

impl TargetDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidTarget("no classes".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidTarget("weights must be finite and nonnegative".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidTarget(format!("weights sum to {s}")));
        }
        Ok(Self { weights })
    }

    pub fn one_hot(n_classes: usize, class: usize) -> Result<Self> {
        if class >= n_classes {
            return Err(Error::InvalidTarget(format!("class {class} out of range for {n_classes} classes")));
        }
        let mut w = vec![0.0; n_classes];
        w[class] = 1.0;
        Ok(Self { weights: w })
    }

    /// `lambda` on class `a`, `1 - lambda` on class `b`.
    pub fn mixed(n_classes: usize, a: usize, b: usize, lambda: f64) -> Result<Self> {
        if a >= n_classes || b >= n_classes || !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidTarget("bad mixup classes or coefficient".into()));
        }
        let mut w = vec![0.0; n_classes];
        w[a] += lambda;
        w[b] += 1.0 - lambda;
        Ok(Self { weights: w })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Class carrying the largest weight (lowest index on ties).
    pub fn dominant_class(&self) -> usize {
        let mut best = 0;
        for (k, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = k;
            }
        }
        best
    }
}

/// Loss value and its gradient with respect to the loss input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Cosine to a unit center and its gradient with respect to raw `x`.
fn center_cosine_with_grad(u: &[f64], xn: f64, c: &[f64]) -> (f64, Vec<f64>) {
    let cos = dot(u, c);
    let g = u.iter().zip(c).map(|(ui, ci)| (ci - cos * ui) / xn).collect();
    (cos, g)
}

fn check_dim(x: &[f64], bank: &CenterBank) -> Result<()> {
    if x.len() != bank.dim() {
        return Err(Error::DimensionMismatch { expected: bank.dim(), found: x.len() });
    }
    Ok(())
}

/// Subspace distances `s_hat * 2 (1 - cos_k)`, in `[0, 2 s_hat]`.
///
/// These are distance-valued; the training softmax consumes their negation.
pub fn adaproj_logits(x: &[f64], bank: &CenterBank, scale: &AdaptiveScaleState) -> Result<Vec<f64>> {
    let CenterBank::Subspace(bases) = bank else {
        return Err(Error::BankMismatch("AdaProj needs subspace bases".into()));
    };
    check_dim(x, bank)?;
    bases.iter().map(|b| Ok(scale.s_hat * 2.0 * (1.0 - subspace_cosine(x, b)?))).collect()
}

/// `s_hat * <x/|x|, c_k>`.
pub fn adacos_logits(x: &[f64], bank: &CenterBank, scale: &AdaptiveScaleState) -> Result<Vec<f64>> {
    let CenterBank::Single(centers) = bank else {
        return Err(Error::BankMismatch("AdaCos needs single centers".into()));
    };
    check_dim(x, bank)?;
    let u = sphere_project(x)?;
    Ok(centers.iter().map(|c| scale.s_hat * dot(u.as_slice(), c.as_slice())).collect())
}

fn log_mean_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + (s / values.len() as f64).ln()
}

/// `log((1/M) sum_m exp(s_hat <x/|x|, c_{k,m}>))`.
pub fn subcluster_adacos_logits(x: &[f64], bank: &CenterBank, scale: &AdaptiveScaleState) -> Result<Vec<f64>> {
    let CenterBank::SubCluster(classes) = bank else {
        return Err(Error::BankMismatch("sub-cluster AdaCos needs sub-cluster centers".into()));
    };
    check_dim(x, bank)?;
    let u = sphere_project(x)?;
    Ok(classes
        .iter()
        .map(|subs| {
            let z: Vec<f64> = subs.iter().map(|c| scale.s_hat * dot(u.as_slice(), c.as_slice())).collect();
            log_mean_exp(&z)
        })
        .collect())
}

/// `|x/|x| - c|^2` and its gradient with respect to raw `x`.
pub fn compactness_loss(x: &[f64], class_center: &EmbeddingVector) -> Result<LossOutput> {
    if x.len() != class_center.dim() {
        return Err(Error::DimensionMismatch { expected: class_center.dim(), found: x.len() });
    }
    let u = sphere_project(x)?;
    let (cos, g) = center_cosine_with_grad(u.as_slice(), norm(x), class_center.as_slice());
    Ok(LossOutput { value: 2.0 - 2.0 * cos, gradient: g.into_iter().map(|v| -2.0 * v).collect() })
}

/// Cross-entropy of `softmax(logits)` against `target`; the gradient is with
/// respect to the logits.
pub fn softmax_cce(logits: &[f64], target: &TargetDistribution) -> Result<LossOutput> {
    if logits.len() != target.weights.len() {
        return Err(Error::DimensionMismatch { expected: target.weights.len(), found: logits.len() });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(logits.len());
    for (l, &t) in logits.iter().zip(&target.weights) {
        let log_p = l - lse;
        if t > 0.0 {
            value -= t * log_p;
        }
        gradient.push(log_p.exp() - t);
    }
    Ok(LossOutput { value: value.max(0.0), gradient })
}

/// Head selection plus the knobs that shape its loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub head: LossHead,
    /// Feed `-L` (rather than `L`) into the AdaProj softmax.
    pub adaproj_negate: bool,
    pub compactness_weight: f64,
    pub cce_weight: f64,
}

impl HeadConfig {
    pub fn new(head: LossHead) -> Self {
        Self { head, adaproj_negate: true, compactness_weight: 1.0, cce_weight: 1.0 }
    }
}

/// Per-sample loss together with the statistics the scale update needs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadEvaluation {
    pub output: LossOutput,
    /// Angle to the dominant target class.
    pub angle_true: f64,
    /// `sum_{k != true} exp(s_hat cos theta_k)`.
    pub logit_sum: f64,
    /// Softmax logits (empty for plain compactness).
    pub logits: Vec<f64>,
}

/// Per-class cosines and their gradients with respect to raw `x`.
///
/// Sub-cluster classes report the log-mean-exp aggregate divided by `s_hat`
/// as their cosine; AdaProj reports the subspace cosine.
fn class_cosines(x: &[f64], bank: &CenterBank, s_hat: f64) -> Result<Vec<(f64, Vec<f64>)>> {
    let u = sphere_project(x)?;
    let xn = norm(x);
    match bank {
        CenterBank::Single(cs) => Ok(cs.iter().map(|c| center_cosine_with_grad(u.as_slice(), xn, c.as_slice())).collect()),
        CenterBank::SubCluster(classes) => Ok(classes
            .iter()
            .map(|subs| {
                let parts: Vec<(f64, Vec<f64>)> =
                    subs.iter().map(|c| center_cosine_with_grad(u.as_slice(), xn, c.as_slice())).collect();
                let z: Vec<f64> = parts.iter().map(|(c, _)| s_hat * c).collect();
                let agg = log_mean_exp(&z);
                let mut g = vec![0.0; x.len()];
                for ((_, gm), zm) in parts.iter().zip(&z) {
                    // softmax weight of sub-cluster m
                    let w = (zm - agg).exp() / subs.len() as f64;
                    for (gi, v) in g.iter_mut().zip(gm) {
                        *gi += w * v;
                    }
                }
                (agg / s_hat, g)
            })
            .collect()),
        CenterBank::Subspace(bases) => bases.iter().map(|b| subspace_cosine_with_grad(x, b)).collect(),
    }
}

fn bank_matches(head: LossHead, bank: &CenterBank) -> bool {
    matches!(
        (head, bank),
        (LossHead::Compactness | LossHead::CompactnessCce | LossHead::AdaCos, CenterBank::Single(_))
            | (LossHead::SubClusterAdaCos, CenterBank::SubCluster(_))
            | (LossHead::AdaProj, CenterBank::Subspace(_))
    )
}

/// Full loss of one sample for the configured head, with its gradient with
/// respect to the raw (unnormalized) embedding.
pub fn evaluate_head(
    x: &[f64],
    target: &TargetDistribution,
    cfg: &HeadConfig,
    bank: &CenterBank,
    scale: &AdaptiveScaleState,
) -> Result<HeadEvaluation> {
    if !bank_matches(cfg.head, bank) {
        return Err(Error::BankMismatch(format!("{} cannot use this center bank", cfg.head)));
    }
    check_dim(x, bank)?;
    if target.weights.len() != bank.n_classes() {
        return Err(Error::DimensionMismatch { expected: bank.n_classes(), found: target.weights.len() });
    }
    let s = scale.s_hat;
    let cosines = class_cosines(x, bank, s)?;
    let d = x.len();

    let (logits, jac): (Vec<f64>, Vec<Vec<f64>>) = match cfg.head {
        LossHead::Compactness => (Vec::new(), Vec::new()),
        LossHead::AdaProj => {
            let sign = if cfg.adaproj_negate { -1.0 } else { 1.0 };
            cosines
                .iter()
                .map(|(c, g)| (sign * s * 2.0 * (1.0 - c), g.iter().map(|v| -sign * 2.0 * s * v).collect()))
                .unzip()
        }
        _ => cosines.iter().map(|(c, g)| (s * c, g.iter().map(|v| s * v).collect())).unzip(),
    };

    let mut value = 0.0;
    let mut gradient = vec![0.0; d];
    if !logits.is_empty() {
        let cce = softmax_cce(&logits, target)?;
        let w = if cfg.head == LossHead::CompactnessCce { cfg.cce_weight } else { 1.0 };
        value += w * cce.value;
        for (dl, row) in cce.gradient.iter().zip(&jac) {
            for (gi, v) in gradient.iter_mut().zip(row) {
                *gi += w * dl * v;
            }
        }
    }
    if matches!(cfg.head, LossHead::Compactness | LossHead::CompactnessCce) {
        let w = if cfg.head == LossHead::CompactnessCce { cfg.compactness_weight } else { 1.0 };
        for ((cos, g), &t) in cosines.iter().zip(&target.weights) {
            if t == 0.0 {
                continue;
            }
            value += w * t * (2.0 - 2.0 * cos);
            for (gi, v) in gradient.iter_mut().zip(g) {
                *gi -= w * t * 2.0 * v;
            }
        }
    }

    let true_class = target.dominant_class();
    let angle_true = cosines[true_class].0.clamp(-1.0, 1.0).acos();
    let logit_sum = cosines
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != true_class)
        .map(|(_, (c, _))| (s * c).exp())
        .sum();
    Ok(HeadEvaluation { output: LossOutput { value, gradient }, angle_true, logit_sum, logits })
}

/// Loss value only; convenient for finite-difference checks.
pub fn head_loss_value(
    x: &[f64],
    target: &TargetDistribution,
    cfg: &HeadConfig,
    bank: &CenterBank,
    scale: &AdaptiveScaleState,
) -> Result<f64> {
    Ok(evaluate_head(x, target, cfg, bank, scale)?.output.value)
}
