//! Multi-seed experiments: train, embed, fit per-section scorers, score and
//! evaluate; plus the subspace-dimension sweep and the loss-head comparison.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{Domain, Split};
use crate::embedding_net::{forward, train, ModelParams, TrainingSample};
use crate::error::{Error, Result};
use crate::geometry::EmbeddingVector;
use crate::harness::config::{DatasetSource, ExperimentConfig};
use crate::harness::manifest::Dataset;
use crate::harness::synthetic::generate;
use crate::loss_heads::{CenterBank, LossHead};
use crate::metrics::{
    evaluate_by_domain, evaluate_sections, harmonic_mean, official_score, write_domain_results_csv,
    write_results_csv, write_scores_csv, ScoredSample, SectionResult,
};
use crate::scoring_backend::{anomaly_score, fit, ScorerModel};

/// Builds the dataset named by the config, generating synthetic data in memory.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Synthetic => {
            let d = generate(&cfg.synthetic)?;
            Dataset::from_parts(d.rows, d.features)
        }
        DatasetSource::Manifest(p) => Dataset::load(p, &cfg.features),
    }
}

/// SplitMix64 step, used to derive independent sub-seeds from a trial seed.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trained network plus one scorer per section.
#[derive(Debug, Clone)]
pub struct TrainedSystem {
    pub params: ModelParams,
    pub scorers: BTreeMap<String, ScorerModel>,
    pub loss_history: Vec<f64>,
}

pub fn train_system(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<TrainedSystem> {
    cfg.validate()?;
    let n_classes = data.classes.len();
    let training: Vec<TrainingSample> = data
        .samples
        .iter()
        .filter(|s| s.row.split == Split::Train)
        .map(|s| TrainingSample {
            features: s.features.clone(),
            waveform: s.waveform.clone(),
            class_index: data.class_index(&s.row).expect("training rows define the classes"),
            domain: s.row.domain,
            section: s.row.section_id(),
        })
        .collect();
    let bank = CenterBank::random(
        cfg.loss_head,
        n_classes,
        cfg.embedding_dim,
        cfg.subspace_dim,
        cfg.subclusters,
        cfg.center_init,
        derive_seed(seed, 1),
    )?;
    let (spec_in, spectrum_in) = data.input_dims();
    let outcome = train(&cfg.train_config(spec_in, spectrum_in, derive_seed(seed, 2)), &training, &bank)?;

    let mut source: BTreeMap<String, Vec<EmbeddingVector>> = BTreeMap::new();
    let mut target: BTreeMap<String, Vec<EmbeddingVector>> = BTreeMap::new();
    for s in data.samples.iter().filter(|s| s.row.split == Split::Train) {
        let e = forward(&outcome.params, &s.features)?;
        let bucket = if s.row.domain == Domain::Source { &mut source } else { &mut target };
        bucket.entry(s.row.section_id()).or_default().push(e);
    }
    let kmeans = cfg.kmeans_config();
    let mut scorers = BTreeMap::new();
    for (i, section) in data.sections().into_iter().enumerate() {
        let src = source.get(&section).map(Vec::as_slice).unwrap_or(&[]);
        if src.is_empty() {
            return Err(Error::Data(format!("section {section} has no source-domain training clips")));
        }
        let tgt = target.get(&section).map(Vec::as_slice).unwrap_or(&[]);
        let model = fit(src, tgt, &kmeans, derive_seed(seed, 100 + i as u64), &section)?;
        scorers.insert(section, model);
    }
    Ok(TrainedSystem { params: outcome.params, scorers, loss_history: outcome.loss_history })
}

/// Scores every test clip, in manifest order.
pub fn score_test_split(system: &TrainedSystem, data: &Dataset) -> Result<Vec<ScoredSample>> {
    data.samples
        .iter()
        .filter(|s| s.row.split == Split::Test)
        .map(|s| {
            let section = s.row.section_id();
            let scorer = system
                .scorers
                .get(&section)
                .ok_or_else(|| Error::Data(format!("no scorer for section {section}")))?;
            Ok(ScoredSample {
                sample_id: s.row.id.clone(),
                section,
                domain: s.row.domain,
                label: s.row.label,
                score: anomaly_score(scorer, &forward(&system.params, &s.features)?),
            })
        })
        .collect()
}

impl TrainedSystem {
    /// Writes `model.adpj` and `scorers/<section>.km`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("scorers"))?;
        self.params.save(&dir.join("model.adpj"))?;
        for (section, s) in &self.scorers {
            s.save(&dir.join("scorers").join(format!("{section}.km")))?;
        }
        write_loss_history(&dir.join("loss_history.csv"), &self.loss_history)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let params = ModelParams::load(&dir.join("model.adpj"))?;
        let mut scorers = BTreeMap::new();
        let mut entries: Vec<_> = fs::read_dir(dir.join("scorers"))?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let path = e.path();
            if path.extension().is_some_and(|x| x == "km") {
                let s = ScorerModel::load(&path)?;
                scorers.insert(s.section.clone(), s);
            }
        }
        Ok(Self { params, scorers, loss_history: Vec::new() })
    }
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub seed: u64,
    pub results: Vec<SectionResult>,
    pub official: f64,
    pub scores: Vec<ScoredSample>,
    pub loss_history: Vec<f64>,
}

pub fn run_trial(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<TrialOutcome> {
    let system = train_system(cfg, data, seed)?;
    let scores = score_test_split(&system, data)?;
    let results = evaluate_sections(&scores, cfg.p_auc)?;
    let official = official_score(&results)?;
    Ok(TrialOutcome { seed, results, official, scores, loss_history: system.loss_history })
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub trials: Vec<TrialOutcome>,
    pub official_mean: f64,
    pub official_std: f64,
    pub ensemble_scores: Vec<ScoredSample>,
    pub ensemble_results: Vec<SectionResult>,
}

impl ExperimentReport {
    fn from_trials(trials: Vec<TrialOutcome>, p: f64) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::EmptyInput);
        }
        let officials: Vec<f64> = trials.iter().map(|t| t.official).collect();
        let (official_mean, official_std) = mean_std(&officials);
        let n = trials.len() as f64;
        let ensemble_scores: Vec<ScoredSample> = trials[0]
            .scores
            .iter()
            .enumerate()
            .map(|(i, s)| ScoredSample { score: trials.iter().map(|t| t.scores[i].score).sum::<f64>() / n, ..s.clone() })
            .collect();
        let ensemble_results = evaluate_sections(&ensemble_scores, p)?;
        Ok(Self { trials, official_mean, official_std, ensemble_scores, ensemble_results })
    }

    /// Per-trial mean over sections of `f`'s metric, then mean/std across trials.
    fn metric_summary(&self, f: impl Fn(&SectionResult) -> f64) -> (f64, f64) {
        let per_trial: Vec<f64> =
            self.trials.iter().map(|t| harmonic_mean(&t.results.iter().map(&f).collect::<Vec<_>>())).collect();
        mean_std(&per_trial)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_loss_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "epoch,loss")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trial(dir: &Path, t: &TrialOutcome, p: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_results_csv(create(&dir.join("results.csv"))?, &t.results)?;
    write_scores_csv(create(&dir.join("scores.csv"))?, &t.scores)?;
    write_domain_results_csv(create(&dir.join("results_by_domain.csv"))?, &evaluate_by_domain(&t.scores, p)?)?;
    write_loss_history(&dir.join("loss_history.csv"), &t.loss_history)
}

/// `section,metric,mean,std` across trials, closing with the official score.
fn write_aggregate(path: &Path, trials: &[TrialOutcome]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "section,metric,mean,std")?;
    for (i, r) in trials[0].results.iter().enumerate() {
        for (name, get) in [("auc", (|r: &SectionResult| r.auc) as fn(&SectionResult) -> f64), ("pauc", |r| r.pauc)] {
            let (m, s) = mean_std(&trials.iter().map(|t| get(&t.results[i])).collect::<Vec<_>>());
            writeln!(w, "{},{name},{m},{s}", r.section)?;
        }
    }
    let (m, s) = mean_std(&trials.iter().map(|t| t.official).collect::<Vec<_>>());
    writeln!(w, "ALL,official,{m},{s}")?;
    w.flush()?;
    Ok(())
}

fn write_summary(out: &Path, trials: &[TrialOutcome], report: Option<&ExperimentReport>) -> Result<()> {
    write_aggregate(&out.join("aggregate.csv"), trials)?;
    if let Some(r) = report {
        write_scores_csv(create(&out.join("ensemble_scores.csv"))?, &r.ensemble_scores)?;
        write_results_csv(create(&out.join("ensemble_results.csv"))?, &r.ensemble_results)?;
    }
    Ok(())
}

/// Runs one trial per configured seed. With `out`, each trial's files are
/// written as soon as it finishes; if a later trial fails, the aggregate of
/// the completed trials is still written before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset, out: Option<&Path>) -> Result<ExperimentReport> {
    cfg.validate()?;
    if let Some(o) = out {
        fs::create_dir_all(o)?;
    }
    let mut trials = Vec::new();
    for seed in cfg.trial_seeds() {
        log::info!("{}: trial seed {seed}", cfg.loss_head);
        let t = match run_trial(cfg, data, seed) {
            Ok(t) => t,
            Err(e) => {
                if let (Some(o), false) = (out, trials.is_empty()) {
                    write_summary(o, &trials, None)?;
                }
                return Err(e);
            }
        };
        log::info!("{}: seed {seed} official {}", cfg.loss_head, t.official);
        if let Some(o) = out {
            write_trial(&o.join(format!("trial_{seed}")), &t, cfg.p_auc)?;
        }
        trials.push(t);
    }
    let report = ExperimentReport::from_trials(trials, cfg.p_auc)?;
    if let Some(o) = out {
        write_summary(o, &report.trials, Some(&report))?;
    }
    Ok(report)
}

/// Runs the AdaProj head once per subspace dimension (ascending, shared
/// seeds) and writes `sweep.csv` with `subspace_dim,official_mean,official_std`.
pub fn sweep_subspace_dim(
    cfg: &ExperimentConfig,
    data: &Dataset,
    dims: &[usize],
    out: Option<&Path>,
) -> Result<Vec<(usize, f64, f64)>> {
    let mut dims = dims.to_vec();
    dims.sort_unstable();
    dims.dedup();
    if dims.is_empty() {
        return Err(Error::ConfigInvalid("no subspace dimensions to sweep".into()));
    }
    if let Some(&bad) = dims.iter().find(|&&j| j == 0 || j >= cfg.embedding_dim) {
        return Err(Error::InvalidDims { subspace: bad, embedding: cfg.embedding_dim });
    }
    let mut rows = Vec::with_capacity(dims.len());
    for &j in &dims {
        let run = ExperimentConfig { loss_head: LossHead::AdaProj, subspace_dim: j, ..cfg.clone() };
        let sub = out.map(|o| o.join(format!("J_{j}")));
        let r = run_experiment(&run, data, sub.as_deref())?;
        rows.push((j, r.official_mean, r.official_std));
    }
    if let Some(o) = out {
        let mut w = create(&o.join("sweep.csv"))?;
        writeln!(w, "subspace_dim,official_mean,official_std")?;
        for (j, m, s) in &rows {
            writeln!(w, "{j},{m},{s}")?;
        }
        w.flush()?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub head: LossHead,
    pub auc: (f64, f64),
    pub pauc: (f64, f64),
    pub official: (f64, f64),
}

/// Runs every loss head with otherwise identical settings and writes
/// `comparison.csv`. AUC and pAUC columns are per-trial harmonic means over
/// sections, summarized across trials.
pub fn compare(cfg: &ExperimentConfig, data: &Dataset, out: Option<&Path>) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for head in LossHead::ALL {
        let run = ExperimentConfig { loss_head: head, ..cfg.clone() };
        let sub = out.map(|o| o.join(head.name()));
        let r = run_experiment(&run, data, sub.as_deref())?;
        rows.push(ComparisonRow {
            head,
            auc: r.metric_summary(|s| s.auc),
            pauc: r.metric_summary(|s| s.pauc),
            official: (r.official_mean, r.official_std),
        });
    }
    if let Some(o) = out {
        let mut w = create(&o.join("comparison.csv"))?;
        writeln!(w, "loss_head,auc_mean,auc_std,pauc_mean,pauc_std,official_mean,official_std")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.head, r.auc.0, r.auc.1, r.pauc.0, r.pauc.1, r.official.0, r.official.1
            )?;
        }
        w.flush()?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synthetic::SyntheticSpec;
    use crate::metrics::read_results_csv;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            embedding_dim: 16,
            subspace_dim: 2,
            subclusters: 2,
            kmeans_k: 4,
            kmeans_restarts: 1,
            epochs: 2,
            batch_size: 8,
            seeds: 2,
            hidden_units: 8,
            hidden_layers: 1,
            synthetic: SyntheticSpec {
                sections: 2,
                source_train: 12,
                target_train: 3,
                test_normal: 4,
                test_anomalous: 4,
                spectrogram_dim: 6,
                spectrum_dim: 6,
                latent_dim: 2,
                ..SyntheticSpec::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(0, 1), derive_seed(1, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn mean_std_matches_hand_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn experiment_writes_consistent_files() {
        let cfg = tiny();
        let data = load_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&cfg, &data, Some(dir.path())).unwrap();
        assert_eq!(report.trials.len(), 2);

        // Aggregate mean equals the mean of the per-trial official rows.
        let per_trial: Vec<f64> = [0u64, 1]
            .iter()
            .map(|s| read_results_csv(File::open(dir.path().join(format!("trial_{s}/results.csv"))).unwrap()).unwrap().1)
            .collect();
        let agg = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
        let last = agg.lines().last().unwrap();
        let mean: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
        assert!((mean - (per_trial[0] + per_trial[1]) / 2.0).abs() < 1e-12);
        assert!(last.starts_with("ALL,official,"));

        // Ensemble scores are the per-sample mean of trial scores.
        let e = &report.ensemble_scores[3];
        let want = (report.trials[0].scores[3].score + report.trials[1].scores[3].score) / 2.0;
        assert!((e.score - want).abs() < 1e-15);
        for f in ["ensemble_scores.csv", "ensemble_results.csv", "trial_1/results_by_domain.csv", "trial_0/loss_history.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }

        let again = tempfile::tempdir().unwrap();
        run_experiment(&cfg, &data, Some(again.path())).unwrap();
        assert_eq!(agg, fs::read_to_string(again.path().join("aggregate.csv")).unwrap());
    }

    #[test]
    fn saved_system_scores_identically() {
        let cfg = tiny();
        let data = load_dataset(&cfg).unwrap();
        let sys = train_system(&cfg, &data, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        sys.save(dir.path()).unwrap();
        let back = TrainedSystem::load(dir.path()).unwrap();
        assert_eq!(score_test_split(&sys, &data).unwrap(), score_test_split(&back, &data).unwrap());
    }

    #[test]
    fn sweep_rejects_large_dims_and_sorts() {
        let cfg = tiny();
        let data = load_dataset(&cfg).unwrap();
        assert!(matches!(
            sweep_subspace_dim(&cfg, &data, &[2, 16], None),
            Err(Error::InvalidDims { subspace: 16, embedding: 16 })
        ));
        let cfg = ExperimentConfig { seeds: 1, epochs: 1, ..cfg };
        let dir = tempfile::tempdir().unwrap();
        let rows = sweep_subspace_dim(&cfg, &data, &[4, 1, 2], Some(dir.path())).unwrap();
        assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2, 4]);
        let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("subspace_dim,official_mean,official_std\n1,"));
    }
}
