use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::labels::LabelFile;
use super::parity::{empirical_distribution, merge_race_for_bls, statistical_parity, BLS_RACES, FAIRFACE_RACES};
use crate::error::{Error, Result};
use crate::manifest::GenerationManifest;
use crate::types::{AttributeDistribution, ProbabilityVector};

/// Labels that mark an image as unlabeled (for example, no face found).
pub const UNLABELED: [&str; 3] = ["", "no_face", "none"];

const MERGE_NOTE: &str =
    "race labels collapsed onto White/Black/Asian/Hispanic; Middle Eastern and Indian dropped and the rest renormalized";

pub enum LabelSource<'a> {
    /// Use each entry's sampled assignment as its label.
    Assignments,
    External(&'a LabelFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub empirical: ProbabilityVector,
    pub target: ProbabilityVector,
    pub sp: f64,
    /// Images counted in `empirical`.
    pub n: usize,
    pub excluded: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub run_id: String,
    pub labels: String,
    pub complete: bool,
    pub categories: IndexMap<String, CategoryReport>,
}

/// Compare a run's label distribution with `target` (the run's own target
/// when `None`) per category.
pub fn evaluate_run(
    manifest: &GenerationManifest,
    labels: LabelSource<'_>,
    target: Option<&AttributeDistribution>,
) -> Result<EvaluationReport> {
    let target = target.unwrap_or(&manifest.config.distribution);
    if manifest.entries.is_empty() {
        return Err(Error::validation("manifest has no entries"));
    }
    let label_tag = match &labels {
        LabelSource::Assignments => "self".to_string(),
        LabelSource::External(f) => format!("external:{}", f.source.as_deref().unwrap_or("labels")),
    };
    if let LabelSource::External(file) = &labels {
        let missing: Vec<String> = manifest
            .entries
            .iter()
            .map(|e| e.image_id())
            .filter(|id| !file.contains(id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Coverage(missing));
        }
    }

    let mut categories = IndexMap::new();
    for (category, tv) in target.iter() {
        let mut raw = Vec::with_capacity(manifest.entries.len());
        let mut excluded = 0;
        for e in &manifest.entries {
            let label = match &labels {
                LabelSource::Assignments => e.assignment.get(category).ok_or_else(|| {
                    Error::validation(format!("entry {} has no `{category}` assignment", e.index))
                })?,
                LabelSource::External(file) => file.label(&e.image_id(), category).unwrap_or(""),
            };
            if UNLABELED.iter().any(|u| label.trim().eq_ignore_ascii_case(u)) {
                excluded += 1;
            } else {
                raw.push(label.trim().to_string());
            }
        }
        if raw.is_empty() {
            return Err(Error::validation(format!("no labeled images for `{category}`")));
        }
        let (empirical, notes) = empirical_for(&raw, tv)?;
        let sp = statistical_parity(&empirical, tv)?;
        categories.insert(
            category.to_string(),
            CategoryReport { empirical, target: tv.clone(), sp, n: raw.len(), excluded, notes },
        );
    }
    Ok(EvaluationReport {
        run_id: manifest.run_id.clone(),
        labels: label_tag,
        complete: manifest.is_complete(),
        categories,
    })
}

fn canonical(s: &str) -> String {
    let lower = s.trim().to_lowercase().replace([' ', '-'], "_");
    if lower == "latino_hispanic" {
        "hispanic".into()
    } else {
        lower
    }
}

fn empirical_for(raw: &[String], target: &ProbabilityVector) -> Result<(ProbabilityVector, Vec<String>)> {
    let target_keys: Vec<String> = target.labels().iter().map(|l| canonical(l)).collect();
    let direct = raw.iter().all(|l| target_keys.contains(&canonical(l)));
    if direct {
        let mapped: Vec<&str> = raw
            .iter()
            .map(|l| {
                let k = canonical(l);
                target.labels()[target_keys.iter().position(|t| *t == k).expect("checked")].as_str()
            })
            .collect();
        return Ok((empirical_distribution(&mapped, target.labels())?, Vec::new()));
    }

    let bls: Vec<String> = BLS_RACES.iter().map(|l| canonical(l)).collect();
    let mut sorted_target = target_keys.clone();
    sorted_target.sort();
    let mut sorted_bls = bls.clone();
    sorted_bls.sort();
    let fairface: Vec<String> = FAIRFACE_RACES.iter().map(|l| canonical(l)).collect();
    if sorted_target == sorted_bls && raw.iter().all(|l| fairface.contains(&canonical(l))) {
        let mapped: Vec<&str> = raw
            .iter()
            .map(|l| FAIRFACE_RACES[fairface.iter().position(|f| *f == canonical(l)).expect("checked")])
            .collect();
        let merged = merge_race_for_bls(&empirical_distribution(&mapped, &FAIRFACE_RACES)?)?;
        let values = target
            .labels()
            .iter()
            .map(|t| {
                let k = canonical(t);
                merged.values()[bls.iter().position(|b| *b == k).expect("same label set")]
            })
            .collect();
        let pv = ProbabilityVector::new(target.labels().to_vec(), values)?;
        return Ok((pv, vec![MERGE_NOTE.to_string()]));
    }

    let unknown = raw
        .iter()
        .find(|l| !target_keys.contains(&canonical(l)))
        .expect("some label did not match");
    Err(Error::UnknownLabel { label: unknown.clone() })
}

impl EvaluationReport {
    /// Plain-text table: one SP row per category, then the per-label breakdown.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self.categories.keys().map(String::len).max().unwrap_or(8).max(8);
        let _ = writeln!(out, "run {} (labels: {})", self.run_id, self.labels);
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>5}  {:>8}", "category", "n", "excl", "SP");
        for (c, r) in &self.categories {
            let _ = writeln!(out, "{:<width$}  {:>6}  {:>5}  {:>8.4}", c, r.n, r.excluded, r.sp);
        }
        for (c, r) in &self.categories {
            let _ = writeln!(out, "\n{c}");
            let lw = r.target.labels().iter().map(String::len).max().unwrap_or(5).max(5);
            let _ = writeln!(out, "  {:<lw$}  {:>9}  {:>9}", "label", "empirical", "target");
            for ((l, e), t) in r.empirical.iter().zip(r.target.values()) {
                let _ = writeln!(out, "  {:<lw$}  {:>9.4}  {:>9.4}", l, e, t);
            }
            for note in &r.notes {
                let _ = writeln!(out, "  note: {note}");
            }
        }
        if !self.complete {
            let _ = writeln!(out, "\nwarning: run is incomplete");
        }
        out
    }
}
