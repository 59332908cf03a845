//! Spherical k-means over source-domain normal embeddings plus target-domain
//! reference embeddings. The anomaly score of a clip is its smallest cosine
//! distance to any of these rows.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binfmt::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::geometry::{dot, norm, EmbeddingVector, EPS_NORM};

pub const SCORER_MAGIC: &[u8] = b"ADPJ-KM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Independent seedings; the lowest-cost result is kept.
    pub restarts: usize,
    /// Single-point transfer passes after Lloyd convergence.
    pub refine: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { k: 32, max_iter: 100, restarts: 4, refine: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub means: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// `sum_i (1 - <x_i, m_{a(i)}>)` for the final assignment.
    pub cost: f64,
    /// Cost after every update of the kept run, in order.
    pub history: Vec<f64>,
}

fn nearest(x: &[f64], means: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, m) in means.iter().enumerate() {
        let c = dot(x, m);
        if c > best.1 {
            best = (j, c);
        }
    }
    best
}

fn assignment_cost(points: &[&[f64]], means: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let assign = points
        .iter()
        .map(|x| {
            let (j, c) = nearest(x, means);
            cost += 1.0 - c;
            j
        })
        .collect();
    (assign, cost)
}

fn farthest_point_seeds(points: &[&[f64]], k: usize, first: usize) -> Vec<Vec<f64>> {
    let mut means = vec![points[first].to_vec()];
    let mut min_dist: Vec<f64> = points.iter().map(|x| 1.0 - dot(x, points[first])).collect();
    while means.len() < k {
        let mut pick = 0;
        for (i, d) in min_dist.iter().enumerate() {
            if *d > min_dist[pick] {
                pick = i;
            }
        }
        means.push(points[pick].to_vec());
        for (i, x) in points.iter().enumerate() {
            min_dist[i] = min_dist[i].min(1.0 - dot(x, points[pick]));
        }
    }
    means
}

fn cluster_sums(points: &[&[f64]], assign: &[usize], k: usize, d: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0; k];
    for (x, &a) in points.iter().zip(assign) {
        counts[a] += 1;
        sums[a].iter_mut().zip(x.iter()).for_each(|(s, v)| *s += v);
    }
    (sums, counts)
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > EPS_NORM).then(|| v.iter().map(|x| x / n).collect())
}

fn lloyd(points: &[&[f64]], mut means: Vec<Vec<f64>>, max_iter: usize, history: &mut Vec<f64>) -> Vec<Vec<f64>> {
    let k = means.len();
    let d = points[0].len();
    let mut prev: Option<Vec<usize>> = None;
    for _ in 0..max_iter {
        let (assign, _) = assignment_cost(points, &means);
        if prev.as_ref() == Some(&assign) {
            break;
        }
        let (sums, counts) = cluster_sums(points, &assign, k, d);
        for j in 0..k {
            if counts[j] > 0 {
                if let Some(m) = normalized(&sums[j]) {
                    means[j] = m;
                }
            }
        }
        // re-seed empty clusters with the worst-fit point of a shared cluster
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let worst = (0..points.len())
                .filter(|&i| counts[assign[i]] > 1)
                .max_by(|&a, &b| {
                    let da = 1.0 - dot(points[a], &means[assign[a]]);
                    let db = 1.0 - dot(points[b], &means[assign[b]]);
                    da.total_cmp(&db).then(b.cmp(&a))
                });
            if let Some(i) = worst {
                means[j] = points[i].to_vec();
            }
        }
        history.push(assignment_cost(points, &means).1);
        prev = Some(assign);
    }
    means
}

/// Moves single points between clusters while that lowers the partition
/// cost `sum_C (|C| - |sum_{x in C} x|)`.
fn transfer_refine(points: &[&[f64]], means: Vec<Vec<f64>>, history: &mut Vec<f64>) -> Vec<Vec<f64>> {
    let k = means.len();
    let d = points[0].len();
    let (mut assign, _) = assignment_cost(points, &means);
    let (mut sums, mut counts) = cluster_sums(points, &assign, k, d);
    let shifted_norm = |s: &[f64], x: &[f64], sign: f64| -> f64 {
        s.iter().zip(x).map(|(a, b)| (a + sign * b) * (a + sign * b)).sum::<f64>().sqrt()
    };
    let mut moved = true;
    let mut passes = 0;
    while moved && passes < 100 {
        moved = false;
        passes += 1;
        for (i, x) in points.iter().enumerate() {
            let a = assign[i];
            if counts[a] <= 1 {
                continue;
            }
            let gain_leave = norm(&sums[a]) - shifted_norm(&sums[a], x, -1.0);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let delta = gain_leave + norm(&sums[b]) - shifted_norm(&sums[b], x, 1.0);
                if delta < -1e-12 && best.is_none_or(|(_, bd)| delta < bd) {
                    best = Some((b, delta));
                }
            }
            if let Some((b, _)) = best {
                sums[a].iter_mut().zip(x.iter()).for_each(|(s, v)| *s -= v);
                sums[b].iter_mut().zip(x.iter()).for_each(|(s, v)| *s += v);
                counts[a] -= 1;
                counts[b] += 1;
                assign[i] = b;
                moved = true;
            }
        }
        if moved {
            let current: f64 = (0..k).map(|j| counts[j] as f64 - norm(&sums[j])).sum();
            history.push(current);
        }
    }
    sums.iter().zip(means).map(|(s, m)| normalized(s).unwrap_or(m)).collect()
}

/// Spherical k-means: cosine assignment, re-normalized means, farthest-point
/// seeding, `k` capped at the number of points.
pub fn spherical_kmeans(points: &[&[f64]], cfg: &KMeansConfig, seed: u64) -> Result<KMeansFit> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: p.len() });
    }
    if cfg.k == 0 {
        return Err(Error::ConfigInvalid("k must be at least 1".into()));
    }
    let k = cfg.k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..cfg.restarts.max(1) {
        let first = rng.random_range(0..points.len());
        let mut history = Vec::new();
        let mut means = lloyd(points, farthest_point_seeds(points, k, first), cfg.max_iter, &mut history);
        if cfg.refine {
            means = transfer_refine(points, means, &mut history);
        }
        let (assignment, cost) = assignment_cost(points, &means);
        if best.as_ref().is_none_or(|b| cost < b.cost - 1e-12) {
            best = Some(KMeansFit { means, assignment, cost, history });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Per-section scorer: k-means means plus target-domain references.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    pub means: Vec<EmbeddingVector>,
    pub target_refs: Vec<EmbeddingVector>,
    pub section: String,
}

/// Fits the scorer of one section.
pub fn fit(
    source: &[EmbeddingVector],
    target: &[EmbeddingVector],
    cfg: &KMeansConfig,
    seed: u64,
    section: &str,
) -> Result<ScorerModel> {
    if source.is_empty() {
        return Err(Error::EmptyInput);
    }
    let d = source[0].dim();
    if let Some(t) = target.iter().find(|t| t.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: t.dim() });
    }
    let points: Vec<&[f64]> = source.iter().map(|e| e.as_slice()).collect();
    let km = spherical_kmeans(&points, cfg, seed)?;
    let means = km.means.into_iter().map(EmbeddingVector::from_unit).collect::<Result<Vec<_>>>()?;
    Ok(ScorerModel { means, target_refs: target.to_vec(), section: section.to_string() })
}

/// Smallest cosine distance `1 - <x, r>` over means and target references, in `[0, 2]`.
pub fn anomaly_score(model: &ScorerModel, x: &EmbeddingVector) -> f64 {
    model
        .means
        .iter()
        .chain(&model.target_refs)
        .map(|r| 1.0 - dot(x.as_slice(), r.as_slice()))
        .fold(f64::INFINITY, f64::min)
        .clamp(0.0, 2.0)
}

impl ScorerModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.means.first().map_or(0, |m| m.dim());
        let mut w = BinWriter::new(SCORER_MAGIC);
        w.u32(d).u32(self.means.len()).u32(self.target_refs.len()).str(&self.section);
        for r in self.means.iter().chain(&self.target_refs) {
            w.f64s(r.as_slice());
        }
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::open(path, SCORER_MAGIC)?;
        let d = r.u32()?;
        let n_means = r.u32()?;
        let n_refs = r.u32()?;
        let section = r.str()?;
        let rows = |n: usize, r: &mut BinReader| -> Result<Vec<EmbeddingVector>> {
            (0..n).map(|_| EmbeddingVector::from_unit(r.f64s(d)?)).collect()
        };
        let means = rows(n_means, &mut r)?;
        let target_refs = rows(n_refs, &mut r)?;
        r.finish()?;
        Ok(Self { means, target_refs, section })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sphere_project;

    fn unit(v: &[f64]) -> EmbeddingVector {
        sphere_project(v).unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> EmbeddingVector {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        unit(&v)
    }

    #[test]
    fn planted_antipodal_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dir = random_unit(&mut rng, 16);
        let mut pts = Vec::new();
        for sign in [1.0, -1.0] {
            for _ in 0..30 {
                let v: Vec<f64> = dir.as_slice().iter().map(|x| sign * x + rng.random_range(-0.05..0.05)).collect();
                pts.push(unit(&v));
            }
        }
        let model = fit(&pts, &[], &KMeansConfig { k: 2, ..Default::default() }, 1, "s").unwrap();
        assert_eq!(model.means.len(), 2);
        for sign in [1.0, -1.0] {
            let best = model
                .means
                .iter()
                .map(|m| 1.0 - sign * dot(m.as_slice(), dir.as_slice()))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.01, "{best}");
        }
        assert!(model.target_refs.is_empty());
    }

    #[test]
    fn k_is_capped_at_sample_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<EmbeddingVector> = (0..5).map(|_| random_unit(&mut rng, 8)).collect();
        let model = fit(&pts, &[], &KMeansConfig::default(), 3, "s").unwrap();
        assert_eq!(model.means.len(), 5);
        for p in &pts {
            assert!(model.means.iter().any(|m| m.as_slice().iter().zip(p.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12)));
        }
        assert!(matches!(fit(&[], &[], &KMeansConfig::default(), 3, "s"), Err(Error::EmptyInput)));
    }

    #[test]
    fn score_examples() {
        let m = ScorerModel {
            means: vec![unit(&[1.0, 0.0, 0.0]), unit(&[0.0, 1.0, 0.0])],
            target_refs: vec![unit(&[0.0, 0.0, 1.0])],
            section: "s".into(),
        };
        assert!(anomaly_score(&m, &unit(&[1.0, 0.0, 0.0])).abs() < 1e-15);
        assert!(anomaly_score(&m, &unit(&[0.0, 0.0, 1.0])).abs() < 1e-15);
        let only = ScorerModel { means: vec![unit(&[1.0, 0.0])], target_refs: vec![unit(&[1.0, 0.0])], section: "s".into() };
        assert!((anomaly_score(&only, &unit(&[-1.0, 0.0])) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn adding_a_reference_never_raises_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = ScorerModel { means: vec![random_unit(&mut rng, 6)], target_refs: vec![], section: "s".into() };
        let probes: Vec<EmbeddingVector> = (0..50).map(|_| random_unit(&mut rng, 6)).collect();
        for _ in 0..5 {
            let before: Vec<f64> = probes.iter().map(|p| anomaly_score(&m, p)).collect();
            m.target_refs.push(random_unit(&mut rng, 6));
            for (p, b) in probes.iter().zip(before) {
                let s = anomaly_score(&m, p);
                assert!(s <= b);
                assert!((0.0..=2.0).contains(&s));
            }
        }
    }

    #[test]
    fn objective_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let pts: Vec<EmbeddingVector> = (0..200).map(|_| random_unit(&mut rng, 5)).collect();
            let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
            let fit = spherical_kmeans(&refs, &KMeansConfig { k: 8, restarts: 1, ..Default::default() }, 2).unwrap();
            for w in fit.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", fit.history);
            }
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<EmbeddingVector> = (0..100).map(|_| random_unit(&mut rng, 12)).collect();
        let a = fit(&pts, &pts[..3], &KMeansConfig { k: 6, ..Default::default() }, 4, "s").unwrap();
        let b = fit(&pts, &pts[..3], &KMeansConfig { k: 6, ..Default::default() }, 4, "s").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scorer_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.km");
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = ScorerModel {
            means: (0..3).map(|_| random_unit(&mut rng, 4)).collect(),
            target_refs: (0..2).map(|_| random_unit(&mut rng, 4)).collect(),
            section: "fan_00".into(),
        };
        m.save(&path).unwrap();
        assert_eq!(&std::fs::read(&path).unwrap()[..8], b"ADPJ-KM1");
        assert_eq!(ScorerModel::load(&path).unwrap(), m);
    }
}
