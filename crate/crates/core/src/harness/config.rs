//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::embedding_net::{AdamConfig, ModelSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::harness::synthetic::SyntheticSpec;
use crate::loss_heads::{CenterInit, HeadConfig, LossHead};
use crate::metrics::DEFAULT_P;
use crate::scoring_backend::KMeansConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic,
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub loss_head: LossHead,
    pub embedding_dim: usize,
    pub subspace_dim: usize,
    pub subclusters: usize,
    pub kmeans_k: usize,
    pub kmeans_restarts: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: usize,
    pub seed_base: u64,
    pub adam: AdamConfig,
    pub mixup: bool,
    pub frozen_scale: bool,
    pub adaproj_negate: bool,
    pub compactness_weight: f64,
    pub cce_weight: f64,
    pub center_init: CenterInit,
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub bias: bool,
    pub features: FeatureConfig,
    pub p_auc: f64,
    pub dataset: DatasetSource,
    pub synthetic: SyntheticSpec,
    pub sweep_dims: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            loss_head: LossHead::AdaProj,
            embedding_dim: 512,
            subspace_dim: 32,
            subclusters: 32,
            kmeans_k: 32,
            kmeans_restarts: 4,
            epochs: 10,
            batch_size: 64,
            seeds: 10,
            seed_base: 0,
            adam: AdamConfig::default(),
            mixup: true,
            frozen_scale: false,
            adaproj_negate: true,
            compactness_weight: 1.0,
            cce_weight: 1.0,
            center_init: CenterInit::Orthonormal,
            hidden_units: 128,
            hidden_layers: 2,
            bias: false,
            features: FeatureConfig::default(),
            p_auc: DEFAULT_P,
            dataset: DatasetSource::Synthetic,
            synthetic: SyntheticSpec::default(),
            sweep_dims: vec![4, 8, 16, 32, 64],
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::ConfigInvalid(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::ConfigInvalid(format!("{key}: expected true/false, got '{v}'"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

impl ExperimentConfig {
    /// Parses config text; relative manifest paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigInvalid(format!("line {}: expected 'key = value'", lineno + 1)))?;
            cfg.set(key.trim(), value.trim(), base_dir)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn set(&mut self, key: &str, v: &str, base_dir: &Path) -> Result<()> {
        let s = &mut self.synthetic;
        match key {
            "loss_head" => self.loss_head = v.parse()?,
            "embedding_dim" => self.embedding_dim = parse_num(key, v)?,
            "subspace_dim" => self.subspace_dim = parse_num(key, v)?,
            "subclusters" => self.subclusters = parse_num(key, v)?,
            "kmeans_k" => self.kmeans_k = parse_num(key, v)?,
            "kmeans_restarts" => self.kmeans_restarts = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "seeds" => self.seeds = parse_num(key, v)?,
            "seed_base" => self.seed_base = parse_num(key, v)?,
            "learning_rate" => self.adam.learning_rate = parse_num(key, v)?,
            "beta1" => self.adam.beta1 = parse_num(key, v)?,
            "beta2" => self.adam.beta2 = parse_num(key, v)?,
            "adam_epsilon" => self.adam.epsilon = parse_num(key, v)?,
            "mixup" => self.mixup = parse_bool(key, v)?,
            "frozen_scale" => self.frozen_scale = parse_bool(key, v)?,
            "adaproj_negate" => self.adaproj_negate = parse_bool(key, v)?,
            "compactness_weight" => self.compactness_weight = parse_num(key, v)?,
            "cce_weight" => self.cce_weight = parse_num(key, v)?,
            "center_init" => self.center_init = v.parse()?,
            "hidden_units" => self.hidden_units = parse_num(key, v)?,
            "hidden_layers" => self.hidden_layers = parse_num(key, v)?,
            "bias" => self.bias = parse_bool(key, v)?,
            "frame" => self.features.frame = parse_num(key, v)?,
            "hop" => self.features.hop = parse_num(key, v)?,
            "spectrum_bins" => self.features.spectrum_bins = parse_num(key, v)?,
            "p_auc" => self.p_auc = parse_num(key, v)?,
            "dataset" => {
                self.dataset = match v {
                    "synthetic" => DatasetSource::Synthetic,
                    _ => return Err(Error::ConfigInvalid(format!("dataset must be 'synthetic' or set 'manifest', got '{v}'"))),
                }
            }
            "manifest" => self.dataset = DatasetSource::Manifest(base_dir.join(v)),
            "sweep_dims" => self.sweep_dims = parse_list(key, v)?,
            "synth_sections" => s.sections = parse_num(key, v)?,
            "synth_latent_dim" => s.latent_dim = parse_num(key, v)?,
            "synth_perturbation" => s.perturbation = parse_num(key, v)?,
            "synth_noise" => s.noise = parse_num(key, v)?,
            "synth_domain_shift" => s.domain_shift = parse_num(key, v)?,
            "synth_source_train" => s.source_train = parse_num(key, v)?,
            "synth_target_train" => s.target_train = parse_num(key, v)?,
            "synth_test_normal" => s.test_normal = parse_num(key, v)?,
            "synth_test_anomalous" => s.test_anomalous = parse_num(key, v)?,
            "synth_spectrogram_dim" => s.spectrogram_dim = parse_num(key, v)?,
            "synth_spectrum_dim" => s.spectrum_dim = parse_num(key, v)?,
            "synth_seed" => s.seed = parse_num(key, v)?,
            _ => return Err(Error::ConfigInvalid(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embedding_dim", self.embedding_dim),
            ("subspace_dim", self.subspace_dim),
            ("subclusters", self.subclusters),
            ("kmeans_k", self.kmeans_k),
            ("kmeans_restarts", self.kmeans_restarts),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("seeds", self.seeds),
            ("hidden_units", self.hidden_units),
            ("frame", self.features.frame),
            ("hop", self.features.hop),
            ("spectrum_bins", self.features.spectrum_bins),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::ConfigInvalid(format!("{k} must be at least 1")));
        }
        if self.subspace_dim >= self.embedding_dim {
            return Err(Error::InvalidDims { subspace: self.subspace_dim, embedding: self.embedding_dim });
        }
        if !self.embedding_dim.is_multiple_of(2) {
            return Err(Error::ConfigInvalid("embedding_dim must be even (two branches of D/2)".into()));
        }
        if !(self.p_auc > 0.0 && self.p_auc <= 1.0) {
            return Err(Error::InvalidP(self.p_auc));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::ConfigInvalid("invalid Adam hyperparameters".into()));
        }
        if self.compactness_weight < 0.0 || self.cce_weight < 0.0 {
            return Err(Error::ConfigInvalid("loss weights must be nonnegative".into()));
        }
        if self.sweep_dims.is_empty() {
            return Err(Error::ConfigInvalid("sweep_dims must not be empty".into()));
        }
        if matches!(self.dataset, DatasetSource::Synthetic) {
            self.synthetic.validate()?;
        }
        Ok(())
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            head: self.loss_head,
            adaproj_negate: self.adaproj_negate,
            compactness_weight: self.compactness_weight,
            cce_weight: self.cce_weight,
        }
    }

    pub fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig { k: self.kmeans_k, restarts: self.kmeans_restarts, ..KMeansConfig::default() }
    }

    pub fn train_config(&self, spectrogram_input: usize, spectrum_input: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: self.adam,
            mixup: self.mixup,
            seed,
            head: self.head_config(),
            frozen_scale: self.frozen_scale,
            model: ModelSpec {
                spectrogram_input,
                spectrum_input,
                hidden: vec![self.hidden_units; self.hidden_layers],
                embedding_dim: self.embedding_dim,
                bias: self.bias,
            },
            features: self.features,
        }
    }

    /// Trial seeds, offset by `seed_base`.
    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed_base + i).collect()
    }

    /// Canonical text form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("loss_head", self.loss_head.to_string());
        kv("embedding_dim", self.embedding_dim.to_string());
        kv("subspace_dim", self.subspace_dim.to_string());
        kv("subclusters", self.subclusters.to_string());
        kv("kmeans_k", self.kmeans_k.to_string());
        kv("kmeans_restarts", self.kmeans_restarts.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seeds", self.seeds.to_string());
        kv("seed_base", self.seed_base.to_string());
        kv("learning_rate", self.adam.learning_rate.to_string());
        kv("beta1", self.adam.beta1.to_string());
        kv("beta2", self.adam.beta2.to_string());
        kv("adam_epsilon", self.adam.epsilon.to_string());
        kv("mixup", self.mixup.to_string());
        kv("frozen_scale", self.frozen_scale.to_string());
        kv("adaproj_negate", self.adaproj_negate.to_string());
        kv("compactness_weight", self.compactness_weight.to_string());
        kv("cce_weight", self.cce_weight.to_string());
        kv(
            "center_init",
            match self.center_init {
                CenterInit::Orthonormal => "orthonormal".into(),
                CenterInit::RawGlorot => "glorot".into(),
            },
        );
        kv("hidden_units", self.hidden_units.to_string());
        kv("hidden_layers", self.hidden_layers.to_string());
        kv("bias", self.bias.to_string());
        kv("frame", self.features.frame.to_string());
        kv("hop", self.features.hop.to_string());
        kv("spectrum_bins", self.features.spectrum_bins.to_string());
        kv("p_auc", self.p_auc.to_string());
        match &self.dataset {
            DatasetSource::Synthetic => kv("dataset", "synthetic".into()),
            DatasetSource::Manifest(p) => kv("manifest", p.display().to_string()),
        }
        kv("sweep_dims", self.sweep_dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","));
        let s = &self.synthetic;
        kv("synth_sections", s.sections.to_string());
        kv("synth_latent_dim", s.latent_dim.to_string());
        kv("synth_perturbation", s.perturbation.to_string());
        kv("synth_noise", s.noise.to_string());
        kv("synth_domain_shift", s.domain_shift.to_string());
        kv("synth_source_train", s.source_train.to_string());
        kv("synth_target_train", s.target_train.to_string());
        kv("synth_test_normal", s.test_normal.to_string());
        kv("synth_test_anomalous", s.test_anomalous.to_string());
        kv("synth_spectrogram_dim", s.spectrogram_dim.to_string());
        kv("synth_spectrum_dim", s.spectrum_dim.to_string());
        kv("synth_seed", s.seed.to_string());
        o
    }
}
