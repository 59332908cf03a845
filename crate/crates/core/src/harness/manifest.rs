//! Manifest CSV ingestion and the in-memory dataset built from it.

use std::collections::BTreeMap;
use std::path::Path;

use crate::binfmt::read_feature_blob;
use crate::data::{Domain, Label, Split};
use crate::error::{Error, Result};
use crate::features::{clip_features, ClipFeatures, FeatureConfig, Waveform};

pub const MANIFEST_HEADER: [&str; 8] = ["id", "path", "machine_type", "section", "domain", "split", "label", "attributes"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    /// Feature blob or WAV file, relative to the manifest's directory.
    pub path: String,
    pub machine_type: String,
    pub section: String,
    pub domain: Domain,
    pub split: Split,
    pub label: Label,
    pub attributes: String,
}

impl ManifestRow {
    /// Scoring and evaluation unit.
    pub fn section_id(&self) -> String {
        format!("{}_{}", self.machine_type, self.section)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.id.as_str(),
            &r.path,
            &r.machine_type,
            &r.section,
            r.domain.as_str(),
            r.split.as_str(),
            r.label.as_str(),
            &r.attributes,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?;
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Data(format!("manifest header must be {}", MANIFEST_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = ManifestRow {
            id: rec[0].to_string(),
            path: rec[1].to_string(),
            machine_type: rec[2].to_string(),
            section: rec[3].to_string(),
            domain: rec[4].parse()?,
            split: rec[5].parse()?,
            label: rec[6].parse()?,
            attributes: rec[7].to_string(),
        };
        if row.split == Split::Train && row.label != Label::Normal {
            return Err(Error::Data(format!("row {}: training clip '{}' is not labeled normal", i + 1, row.id)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub row: ManifestRow,
    pub features: ClipFeatures,
    pub waveform: Option<Waveform>,
}

/// Samples plus the auxiliary class list, one class per
/// `(machine_type, section, attributes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: Vec<(String, String, String)>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let first = &samples[0].features;
        let dims = (first.spectrogram.len(), first.spectrum.len());
        if let Some(s) = samples.iter().find(|s| (s.features.spectrogram.len(), s.features.spectrum.len()) != dims) {
            return Err(Error::Data(format!("clip '{}' has inconsistent feature dimensions", s.row.id)));
        }
        let mut classes: Vec<_> = samples
            .iter()
            .filter(|s| s.row.split == Split::Train)
            .map(|s| Self::key(&s.row))
            .collect();
        classes.sort();
        classes.dedup();
        if classes.is_empty() {
            return Err(Error::Data("manifest has no training clips".into()));
        }
        Ok(Self { samples, classes })
    }

    fn key(r: &ManifestRow) -> (String, String, String) {
        (r.machine_type.clone(), r.section.clone(), r.attributes.clone())
    }

    /// Training class of a row, if its key occurs in the training split.
    pub fn class_index(&self, row: &ManifestRow) -> Option<usize> {
        self.classes.binary_search(&Self::key(row)).ok()
    }

    pub fn input_dims(&self) -> (usize, usize) {
        let f = &self.samples[0].features;
        (f.spectrogram.len(), f.spectrum.len())
    }

    pub fn sections(&self) -> Vec<String> {
        let mut s: Vec<String> = self.samples.iter().map(|s| s.row.section_id()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn from_parts(rows: Vec<ManifestRow>, features: Vec<ClipFeatures>) -> Result<Self> {
        Self::new(
            rows.into_iter()
                .zip(features)
                .map(|(row, features)| Sample { row, features, waveform: None })
                .collect(),
        )
    }

    /// Reads a manifest and every clip it references. `.wav` paths go through
    /// feature extraction and keep their waveform; anything else is read as a
    /// feature blob.
    pub fn load(manifest: &Path, features: &FeatureConfig) -> Result<Self> {
        let base = manifest.parent().unwrap_or(Path::new("."));
        let rows = read_manifest(manifest)?;
        let mut samples = Vec::with_capacity(rows.len());
        let mut seen = BTreeMap::new();
        for row in rows {
            if seen.insert(row.id.clone(), ()).is_some() {
                return Err(Error::Data(format!("duplicate clip id '{}'", row.id)));
            }
            let path = base.join(&row.path);
            let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
            let (feats, waveform) = if is_wav {
                let w = Waveform::read_wav(&path)?;
                (clip_features(&w, features)?, Some(w))
            } else {
                let (spectrogram, spectrum) = read_feature_blob(&path)?;
                (ClipFeatures { spectrogram, spectrum }, None)
            };
            samples.push(Sample { row, features: feats, waveform });
        }
        Self::new(samples)
    }
}
