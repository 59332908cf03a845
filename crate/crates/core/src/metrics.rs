//! Per-section AUC and standardized partial AUC, and the harmonic-mean
//! official score.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::data::{Domain, Label};
use crate::error::{Error, Result};

/// Default upper false-positive rate of the partial AUC.
pub const DEFAULT_P: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub sample_id: String,
    pub section: String,
    pub domain: Domain,
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionResult {
    pub section: String,
    pub auc: f64,
    pub pauc: f64,
}

/// Trapezoidal ROC area for `FPR in [0, limit]`, thresholds taken at every
/// distinct score in descending order so tied scores form one diagonal step.
fn roc_area(normals: &[f64], anomalies: &[f64], limit: f64) -> Result<f64> {
    if normals.is_empty() || anomalies.is_empty() {
        return Err(Error::EmptyClass);
    }
    if normals.iter().chain(anomalies).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut all: Vec<(f64, bool)> =
        normals.iter().map(|&s| (s, false)).chain(anomalies.iter().map(|&s| (s, true))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (nn, na) = (normals.len() as f64, anomalies.len() as f64);
    let (mut fp, mut tp) = (0usize, 0usize);
    let (mut x0, mut y0) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x1, y1) = (fp as f64 / nn, tp as f64 / na);
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            if x0 < limit {
                let y = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
                area += (limit - x0) * (y0 + y) / 2.0;
            }
            break;
        }
        x0 = x1;
        y0 = y1;
    }
    Ok(area)
}

/// Probability that an anomaly outscores a normal clip, ties counted 1/2.
pub fn auc(normals: &[f64], anomalies: &[f64]) -> Result<f64> {
    roc_area(normals, anomalies, 1.0)
}

/// McClish-standardized ROC area over `FPR in [0, p]`.
///
/// The raw area `A_p` is mapped through `0.5 (1 + (A_p - p^2/2) / (p - p^2/2))`,
/// so a perfect detector scores 1, a chance-level one 0.5, and `p = 1`
/// reproduces [`auc`].
pub fn pauc(normals: &[f64], anomalies: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidP(p));
    }
    let area = roc_area(normals, anomalies, p)?;
    if p == 1.0 {
        return Ok(area);
    }
    let min_area = 0.5 * p * p;
    Ok((0.5 * (1.0 + (area - min_area) / (p - min_area))).clamp(0.0, 1.0))
}

/// `n / sum(1/v)`; zero as soon as any value is nonpositive or the list is empty.
pub fn harmonic_mean(values: &[f64]) -> f64 {
    if values.is_empty() || values.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>()
}

/// Harmonic mean over every section's AUC and pAUC.
pub fn official_score(results: &[SectionResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyInput);
    }
    let values: Vec<f64> = results.iter().flat_map(|r| [r.auc, r.pauc]).collect();
    Ok(harmonic_mean(&values))
}

fn split_by_label<'a>(samples: impl Iterator<Item = &'a ScoredSample>) -> (Vec<f64>, Vec<f64>) {
    let mut normals = Vec::new();
    let mut anomalies = Vec::new();
    for s in samples {
        match s.label {
            Label::Normal => normals.push(s.score),
            Label::Anomalous => anomalies.push(s.score),
            Label::Unknown => {}
        }
    }
    (normals, anomalies)
}

/// Section metrics with source and target test clips pooled, sorted by section.
pub fn evaluate_sections(samples: &[ScoredSample], p: f64) -> Result<Vec<SectionResult>> {
    let mut by_section: BTreeMap<&str, Vec<&ScoredSample>> = BTreeMap::new();
    for s in samples {
        by_section.entry(&s.section).or_default().push(s);
    }
    if by_section.is_empty() {
        return Err(Error::EmptyInput);
    }
    by_section
        .into_iter()
        .map(|(section, rows)| {
            let (n, a) = split_by_label(rows.into_iter());
            Ok(SectionResult { section: section.to_string(), auc: auc(&n, &a)?, pauc: pauc(&n, &a, p)? })
        })
        .collect()
}

/// Supplementary per-(section, domain) metrics. Domains lacking either class
/// are skipped.
pub fn evaluate_by_domain(samples: &[ScoredSample], p: f64) -> Result<Vec<(String, Domain, f64, f64)>> {
    let mut groups: BTreeMap<(&str, Domain), Vec<&ScoredSample>> = BTreeMap::new();
    for s in samples {
        groups.entry((&s.section, s.domain)).or_default().push(s);
    }
    let mut out = Vec::new();
    for ((section, domain), rows) in groups {
        let (n, a) = split_by_label(rows.into_iter());
        if n.is_empty() || a.is_empty() {
            continue;
        }
        out.push((section.to_string(), domain, auc(&n, &a)?, pauc(&n, &a, p)?));
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

/// `section,domain_scope,auc,pauc` plus a closing `ALL,official,<h>,<h>` row.
pub fn write_results_csv<W: Write>(out: W, results: &[SectionResult]) -> Result<()> {
    let official = official_score(results)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["section", "domain_scope", "auc", "pauc"]).map_err(csv_err)?;
    for r in results {
        w.write_record([r.section.as_str(), "all", &r.auc.to_string(), &r.pauc.to_string()]).map_err(csv_err)?;
    }
    let h = official.to_string();
    w.write_record(["ALL", "official", &h, &h]).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<(Vec<SectionResult>, f64)> {
    let mut r = csv::Reader::from_reader(input);
    let mut results = Vec::new();
    let mut official = None;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Data(format!("bad number in column {i}")))
        };
        if &rec[0] == "ALL" && &rec[1] == "official" {
            official = Some(num(2)?);
        } else {
            results.push(SectionResult { section: rec[0].to_string(), auc: num(2)?, pauc: num(3)? });
        }
    }
    let official = official.ok_or_else(|| Error::Data("results file lacks the official row".into()))?;
    Ok((results, official))
}

pub fn write_domain_results_csv<W: Write>(out: W, rows: &[(String, Domain, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["section", "domain", "auc", "pauc"]).map_err(csv_err)?;
    for (s, d, a, p) in rows {
        w.write_record([s.as_str(), d.as_str(), &a.to_string(), &p.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `sample_id,section,domain,label,score`.
pub fn write_scores_csv<W: Write>(out: W, samples: &[ScoredSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id", "section", "domain", "label", "score"]).map_err(csv_err)?;
    for s in samples {
        w.write_record([
            s.sample_id.as_str(),
            s.section.as_str(),
            s.domain.as_str(),
            s.label.as_str(),
            &s.score.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(input: R) -> Result<Vec<ScoredSample>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sample_id", "section", "domain", "label", "score"] {
        return Err(Error::Data("unexpected scores header".into()));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(ScoredSample {
                sample_id: rec[0].to_string(),
                section: rec[1].to_string(),
                domain: rec[2].parse()?,
                label: rec[3].parse()?,
                score: rec[4].parse().map_err(|_| Error::Data(format!("bad score '{}'", &rec[4])))?,
            })
        })
        .collect()
}
