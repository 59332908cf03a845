//! Planted-subspace synthetic data standing in for machine sections.
//!
//! Every section owns a random mean and an orthonormal latent basis of
//! dimension `latent_dim` in the joint feature space (spectrogram part
//! followed by spectrum part). A normal clip is
//! `mean + basis * z + noise * eps` with `z, eps ~ N(0, I)`; target-domain
//! clips additionally carry `domain_shift * basis * u` for a fixed unit
//! latent direction `u`. An anomaly adds a random direction orthogonal to
//! the section's latent span scaled to length `perturbation`.
//!
//! Defaults: 4 sections, latent dim 8, noise 0.3, perturbation 3.0, domain
//! shift 0.5, 100 source and 10 target training clips per section, 25 normal
//! and 25 anomalous test clips per section and domain, 32 + 32 feature dims.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::binfmt::write_feature_blob;
use crate::data::{Domain, Label, Split};
use crate::error::{Error, Result};
use crate::features::ClipFeatures;
use crate::geometry::{dot, norm, random_basis_with};
use crate::harness::manifest::{write_manifest, ManifestRow};

pub const MACHINE_TYPE: &str = "synth";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub sections: usize,
    pub latent_dim: usize,
    pub perturbation: f64,
    pub noise: f64,
    pub domain_shift: f64,
    pub source_train: usize,
    pub target_train: usize,
    /// Normal test clips per domain.
    pub test_normal: usize,
    /// Anomalous test clips per domain.
    pub test_anomalous: usize,
    pub spectrogram_dim: usize,
    pub spectrum_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            sections: 4,
            latent_dim: 8,
            perturbation: 3.0,
            noise: 0.3,
            domain_shift: 0.5,
            source_train: 100,
            target_train: 10,
            test_normal: 25,
            test_anomalous: 25,
            spectrogram_dim: 32,
            spectrum_dim: 32,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn feature_dim(&self) -> usize {
        self.spectrogram_dim + self.spectrum_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        if self.sections == 0 || self.source_train == 0 || self.test_normal == 0 || self.test_anomalous == 0 {
            return bad("section and sample counts must be at least 1");
        }
        if self.spectrogram_dim == 0 || self.spectrum_dim == 0 {
            return bad("feature dimensions must be at least 1");
        }
        if self.latent_dim == 0 || self.latent_dim >= self.feature_dim() {
            return bad("latent dimension must lie in [1, feature dimension)");
        }
        // Zero perturbation is the null case: anomalies equal fresh normals.
        if !(self.perturbation >= 0.0 && self.perturbation.is_finite()) {
            return bad("perturbation must be finite and nonnegative");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.domain_shift.is_finite()) {
            return bad("noise must be finite and nonnegative, domain shift finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Rows reference `blobs/<id>.ft`.
    pub rows: Vec<ManifestRow>,
    pub features: Vec<ClipFeatures>,
}

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let f = spec.feature_dim();
    let l = spec.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::new();
    let mut features = Vec::new();

    for sec in 0..spec.sections {
        let section = format!("{sec:02}");
        let mean = gaussian(f, &mut rng);
        let basis = random_basis_with(l, f, &mut rng)?;
        let mut u = gaussian(l, &mut rng);
        let un = norm(&u);
        u.iter_mut().for_each(|v| *v /= un);
        let shift = basis.combine(&u);

        let plan = [
            (Domain::Source, Split::Train, Label::Normal, spec.source_train),
            (Domain::Target, Split::Train, Label::Normal, spec.target_train),
            (Domain::Source, Split::Test, Label::Normal, spec.test_normal),
            (Domain::Source, Split::Test, Label::Anomalous, spec.test_anomalous),
            (Domain::Target, Split::Test, Label::Normal, spec.test_normal),
            (Domain::Target, Split::Test, Label::Anomalous, spec.test_anomalous),
        ];
        for (domain, split, label, count) in plan {
            for i in 0..count {
                let z = gaussian(l, &mut rng);
                let eps = gaussian(f, &mut rng);
                let inspan = basis.combine(&z);
                let mut x: Vec<f64> =
                    (0..f).map(|d| mean[d] + inspan[d] + spec.noise * eps[d]).collect();
                if domain == Domain::Target {
                    x.iter_mut().zip(&shift).for_each(|(v, s)| *v += spec.domain_shift * s);
                }
                if label == Label::Anomalous {
                    let g = gaussian(f, &mut rng);
                    let coef = basis.coefficients(&g);
                    let back = basis.combine(&coef);
                    let perp: Vec<f64> = g.iter().zip(&back).map(|(a, b)| a - b).collect();
                    let pn = norm(&perp);
                    debug_assert!(dot(&perp, basis.row(0)).abs() < 1e-9 * pn.max(1.0));
                    x.iter_mut().zip(&perp).for_each(|(v, p)| *v += spec.perturbation * p / pn);
                }
                let id = format!("s{section}_{}_{}_{}_{i:04}", domain.as_str(), split.as_str(), label.as_str());
                rows.push(ManifestRow {
                    path: format!("blobs/{id}.ft"),
                    id,
                    machine_type: MACHINE_TYPE.into(),
                    section: section.clone(),
                    domain,
                    split,
                    label,
                    attributes: String::new(),
                });
                let spectrum = x.split_off(spec.spectrogram_dim);
                features.push(ClipFeatures { spectrogram: x, spectrum });
            }
        }
    }
    Ok(SyntheticData { rows, features })
}

/// Writes `manifest.csv` and `blobs/*.ft` under `dir`.
pub fn write_dataset(data: &SyntheticData, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("blobs"))?;
    for (row, feat) in data.rows.iter().zip(&data.features) {
        write_feature_blob(&dir.join(&row.path), &feat.spectrogram, &feat.spectrum)?;
    }
    write_manifest(&dir.join("manifest.csv"), &data.rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            sections: 2,
            source_train: 5,
            target_train: 2,
            test_normal: 3,
            test_anomalous: 3,
            spectrogram_dim: 6,
            spectrum_dim: 4,
            latent_dim: 3,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn counts_and_determinism() {
        let spec = small();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 2 * (5 + 2 + 4 * 3));
        assert!(a.features.iter().all(|f| f.spectrogram.len() == 6 && f.spectrum.len() == 4));
        assert!(a.rows.iter().filter(|r| r.split == Split::Train).all(|r| r.label == Label::Normal));
        let c = generate(&SyntheticSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn noiseless_normals_lie_on_the_planted_affine_subspace() {
        // With zero noise, differences of same-section source normals span at
        // most latent_dim dimensions; anomalies leave that span.
        let spec = SyntheticSpec { noise: 0.0, perturbation: 2.0, sections: 1, source_train: 12, ..small() };
        let data = generate(&spec).unwrap();
        let joined: Vec<Vec<f64>> =
            data.features.iter().map(|f| f.spectrogram.iter().chain(&f.spectrum).copied().collect()).collect();
        let normals: Vec<&Vec<f64>> = data
            .rows
            .iter()
            .zip(&joined)
            .filter(|(r, _)| r.domain == Domain::Source && r.label == Label::Normal)
            .map(|(_, x)| x)
            .collect();
        let diffs: Vec<Vec<f64>> =
            normals[1..8].iter().map(|x| x.iter().zip(normals[0]).map(|(a, b)| a - b).collect()).collect();
        let rank = match crate::geometry::orthonormalize(&diffs) {
            Err(Error::RankDeficient { rank, .. }) => rank,
            other => panic!("expected rank deficiency, got {other:?}"),
        };
        assert_eq!(rank, spec.latent_dim);
    }

    #[test]
    fn rejects_invalid_specs() {
        for spec in [
            SyntheticSpec { perturbation: -1.0, ..small() },
            SyntheticSpec { latent_dim: 10, ..small() },
            SyntheticSpec { sections: 0, ..small() },
            SyntheticSpec { noise: f64::NAN, ..small() },
        ] {
            assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));
        }
        assert!(generate(&SyntheticSpec { perturbation: 0.0, ..small() }).is_ok());
    }
}
