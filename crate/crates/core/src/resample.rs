//! Fair attribute distributions, seeded assignment sampling, and the
//! deterministic prompt rewrites used when no language model is available.

use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{stream, StreamTag};
use crate::types::{
    normalize_weights, AttributeAssignment, AttributeCatalog, AttributeDistribution,
    ProbabilityVector, PromptText,
};

/// Categories a statistics row must supply.
pub const STATISTICS_CATEGORIES: [&str; 2] = ["gender", "race"];

const ALIASES: [(&str, &str); 1] = [("hispanic", "latino_hispanic")];

const ENTIGEN_SUFFIX: &str = " irrespective of their gender and race";

/// Per-occupation gender and race shares.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatisticsTable {
    rows: IndexMap<String, IndexMap<String, ProbabilityVector>>,
}

impl StatisticsTable {
    /// Build from raw weights; each category is normalized independently.
    pub fn from_raw(raw: IndexMap<String, IndexMap<String, IndexMap<String, f64>>>) -> Result<Self> {
        let mut rows = IndexMap::new();
        for (occupation, cats) in raw {
            let mut row = IndexMap::new();
            for (category, weights) in cats {
                let pairs: Vec<(String, f64)> = weights.into_iter().collect();
                let pv = normalize_weights(&pairs).map_err(|e| {
                    Error::validation(format!("statistics row `{occupation}`/{category}: {e}"))
                })?;
                row.insert(category.to_lowercase(), pv);
            }
            rows.insert(occupation, row);
        }
        Ok(StatisticsTable { rows })
    }

    /// Read the JSON format `{occupation: {category: {label: weight}}}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_raw(serde_json::from_str(text)?)
    }

    pub fn occupations(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    /// Row lookup ignoring case, underscores and hyphens.
    pub fn row(&self, occupation: &str) -> Result<&IndexMap<String, ProbabilityVector>> {
        let want = occupation_key(occupation);
        self.rows
            .iter()
            .find(|(k, _)| occupation_key(k) == want)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::NotFound(format!("statistics row for occupation `{occupation}`")))
    }
}

fn occupation_key(s: &str) -> String {
    s.trim().to_lowercase().replace(['_', '-'], " ")
}

impl Default for StatisticsTable {
    /// Five occupations with 2024 U.S. labor-statistics shares, in percent.
    fn default() -> Self {
        let rows: [(&str, [f64; 2], [f64; 4]); 5] = [
            ("CEO", [33.0, 67.0], [82.2, 5.8, 6.1, 5.8]),
            ("Doctor", [44.5, 55.5], [64.6, 7.0, 22.2, 6.2]),
            ("Computer Programmer", [17.8, 82.2], [65.7, 8.3, 16.0, 10.1]),
            ("Nurse", [86.8, 13.2], [67.0, 14.7, 9.1, 9.1]),
            ("Housekeeper", [87.7, 12.3], [51.3, 10.2, 3.1, 35.3]),
        ];
        let raw = rows
            .iter()
            .map(|(occ, g, r)| {
                let gender: IndexMap<String, f64> =
                    ["female", "male"].iter().map(|s| s.to_string()).zip(g.iter().copied()).collect();
                let race: IndexMap<String, f64> = ["White", "Black", "Asian", "Hispanic"]
                    .iter()
                    .map(|s| s.to_string())
                    .zip(r.iter().copied())
                    .collect();
                let cats: IndexMap<String, IndexMap<String, f64>> =
                    [("gender".to_string(), gender), ("race".to_string(), race)].into_iter().collect();
                (occ.to_string(), cats)
            })
            .collect();
        StatisticsTable::from_raw(raw).expect("built-in table is valid")
    }
}

/// How the target distribution is chosen.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetSpec {
    Uniform,
    Statistics {
        #[serde(skip)]
        table: StatisticsTable,
        occupation: String,
    },
    Custom { distribution: AttributeDistribution },
}

impl TargetSpec {
    /// Parse `uniform`, `stats:<occupation>` (built-in table),
    /// `stats:<file>:<occupation>`, `custom:<file>` or a bare path to a JSON
    /// distribution file.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.eq_ignore_ascii_case("uniform") {
            return Ok(TargetSpec::Uniform);
        }
        if let Some(rest) = t.strip_prefix("stats:").or_else(|| t.strip_prefix("statistics:")) {
            return match rest.rsplit_once(':') {
                Some((file, occ)) if !file.is_empty() => {
                    Ok(TargetSpec::Statistics { table: StatisticsTable::load(file)?, occupation: occ.to_string() })
                }
                _ => Ok(TargetSpec::Statistics { table: StatisticsTable::default(), occupation: rest.to_string() }),
            };
        }
        let t = t.strip_prefix("custom:").unwrap_or(t);
        let text = std::fs::read_to_string(t)
            .map_err(|e| Error::validation(format!("target `{t}` is not uniform, stats:<occupation>, or a readable file: {e}")))?;
        Ok(TargetSpec::Custom { distribution: serde_json::from_str(&text)? })
    }

    /// Short human-readable label, e.g. `stats:CEO`.
    pub fn describe(&self) -> String {
        match self {
            TargetSpec::Uniform => "uniform".into(),
            TargetSpec::Statistics { occupation, .. } => format!("stats:{occupation}"),
            TargetSpec::Custom { .. } => "custom".into(),
        }
    }
}

/// Distribution plus any matching warnings raised while building it.
#[derive(Debug, Clone, PartialEq)]
pub struct FairDistribution {
    pub distribution: AttributeDistribution,
    pub warnings: Vec<String>,
}

pub fn build_fair_distribution(catalog: &AttributeCatalog, spec: &TargetSpec) -> Result<FairDistribution> {
    let mut warnings = Vec::new();
    let distribution = match spec {
        TargetSpec::Uniform => AttributeDistribution::uniform(catalog)?,
        TargetSpec::Custom { distribution } => {
            distribution.check_against(catalog)?;
            distribution.clone()
        }
        TargetSpec::Statistics { table, occupation } => {
            let row = table.row(occupation)?;
            for needed in STATISTICS_CATEGORIES {
                if !row.contains_key(needed) {
                    return Err(Error::NotFound(format!(
                        "statistics row `{occupation}` has no `{needed}` weights"
                    )));
                }
                if catalog.attributes(needed).is_none() {
                    return Err(Error::NotFound(format!(
                        "catalog has no `{needed}` category to match statistics against"
                    )));
                }
            }
            let mut cats = IndexMap::new();
            for (category, attrs) in catalog.categories() {
                let pv = match row.get(&category.to_lowercase()) {
                    Some(stats) => match_statistics(category, attrs, stats, &mut warnings)?,
                    None => ProbabilityVector::uniform(attrs)?,
                };
                cats.insert(category.to_string(), pv);
            }
            AttributeDistribution::new(cats)
        }
    };
    Ok(FairDistribution { distribution, warnings })
}

fn label_key(s: &str) -> String {
    let lower = s.trim().to_lowercase().replace(' ', "_");
    ALIASES
        .iter()
        .find(|(a, b)| lower == *a || lower == *b)
        .map_or(lower, |(a, _)| a.to_string())
}

fn match_statistics(
    category: &str,
    attrs: &[String],
    stats: &ProbabilityVector,
    warnings: &mut Vec<String>,
) -> Result<ProbabilityVector> {
    let weights: Vec<f64> = attrs
        .iter()
        .map(|a| {
            let key = label_key(a);
            stats.iter().find(|(l, _)| label_key(l) == key).map_or_else(
                || {
                    warnings.push(format!("{category}: `{a}` has no statistics entry; weight set to 0"));
                    0.0
                },
                |(_, w)| w,
            )
        })
        .collect();
    for (label, _) in stats.iter() {
        if !attrs.iter().any(|a| label_key(a) == label_key(label)) {
            warnings.push(format!("{category}: statistics label `{label}` has no catalog attribute"));
        }
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        warnings.push(format!("{category}: no attribute matched the statistics; using uniform weights"));
        return ProbabilityVector::uniform(attrs);
    }
    let pairs: Vec<(&str, f64)> = attrs.iter().map(String::as_str).zip(weights).collect();
    normalize_weights(&pairs)
}

/// Draw one attribute per category by inverse CDF on a stream keyed by
/// `(seed, index, category)`.
pub fn sample_assignment(dist: &AttributeDistribution, seed: u64, index: u64) -> AttributeAssignment {
    dist.iter()
        .map(|(category, pv)| {
            let u: f64 = stream(StreamTag::Assignment, seed, index, category).random();
            (category.to_string(), pv.labels()[inverse_cdf(pv.values(), u)].clone())
        })
        .collect()
}

fn inverse_cdf(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// `y` followed by the assigned values, comma separated, in assignment order.
pub fn fallback_fuse(y: &PromptText, assignment: &AttributeAssignment) -> Result<PromptText> {
    if assignment.is_empty() {
        return Err(Error::validation("cannot fuse an empty assignment"));
    }
    let values: Vec<&str> = assignment.iter().map(|(_, v)| v).collect();
    PromptText::new(format!("{}, {}", y.as_str(), values.join(", ")))
}

/// Append the ENTIGEN ethical intervention for `profession`.
pub fn entigen_transform(y: &PromptText, profession: &str) -> Result<PromptText> {
    let profession = profession.trim();
    if profession.is_empty() {
        return Err(Error::validation("profession must not be empty"));
    }
    PromptText::new(format!("{}, if all individuals can be {profession}{ENTIGEN_SUFFIX}", y.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(json: &str) -> AttributeCatalog {
        serde_json::from_str(json).unwrap()
    }

    fn gender_race() -> AttributeCatalog {
        catalog(r#"{"gender":["male","female"],"race":["White","Asian","Black","Latino_Hispanic"]}"#)
    }

    #[test]
    fn uniform_thirds() {
        let c = catalog(r#"{"gender":["male","female","non-binary"],"age":["young","old"]}"#);
        let d = build_fair_distribution(&c, &TargetSpec::Uniform).unwrap().distribution;
        let g = d.get("gender").unwrap();
        assert!(g.values().iter().all(|&v| v == g.values()[0]));
        assert!((g.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((g.values()[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn target_spec_forms() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("bls.json");
        std::fs::write(
            &file,
            r#"{"CEO": {"gender": {"male": 67, "female": 33}, "race": {"White": 1, "Black": 1, "Asian": 1, "Hispanic": 1}}}"#,
        )
        .unwrap();
        let spec = TargetSpec::parse(&format!("stats:{}:CEO", file.display())).unwrap();
        assert_eq!(spec.describe(), "stats:CEO");
        let d = build_fair_distribution(&gender_race(), &spec).unwrap();
        assert!((d.distribution.get("gender").unwrap().get("female").unwrap() - 0.33).abs() < 1e-12);
        assert!(TargetSpec::parse("stats:/no/such/file.json:CEO").is_err());

        let custom = dir.path().join("d.json");
        let uniform = AttributeDistribution::uniform(&gender_race()).unwrap();
        std::fs::write(&custom, serde_json::to_string(&uniform).unwrap()).unwrap();
        let spec = TargetSpec::parse(&format!("custom:{}", custom.display())).unwrap();
        assert_eq!(spec, TargetSpec::Custom { distribution: uniform });
        assert_eq!(TargetSpec::parse(" Uniform ").unwrap(), TargetSpec::Uniform);
    }

    #[test]
    fn ceo_gender_weights() {
        let spec = TargetSpec::parse("stats:CEO").unwrap();
        let d = build_fair_distribution(&gender_race(), &spec).unwrap();
        let g = d.distribution.get("gender").unwrap();
        assert!((g.get("female").unwrap() - 0.33).abs() < 1e-12);
        assert!((g.get("male").unwrap() - 0.67).abs() < 1e-12);
        assert_eq!(g.labels(), &["male".to_string(), "female".to_string()]);
        // Latino_Hispanic picks up the Hispanic share through the alias
        let r = d.distribution.get("race").unwrap();
        assert!((r.get("Latino_Hispanic").unwrap() - 0.058 / 0.999).abs() < 1e-12);
        assert!(d.warnings.is_empty(), "{:?}", d.warnings);
    }

    #[test]
    fn housekeeper_race_normalized() {
        let d = build_fair_distribution(&gender_race(), &TargetSpec::parse("stats:housekeeper").unwrap())
            .unwrap()
            .distribution;
        let r = d.get("race").unwrap();
        let total = 51.3 + 10.2 + 3.1 + 35.3;
        assert!((r.get("White").unwrap() - 51.3 / total).abs() < 1e-12);
        assert!((r.get("White").unwrap() - 0.51351).abs() < 1e-5);
    }

    #[test]
    fn unmatched_attribute_gets_zero_and_warning() {
        let c = catalog(r#"{"gender":["male","female","non-binary"],"race":["White","Black"]}"#);
        let d = build_fair_distribution(&c, &TargetSpec::parse("stats:Nurse").unwrap()).unwrap();
        assert_eq!(d.distribution.get("gender").unwrap().get("non-binary"), Some(0.0));
        assert!(d.warnings.iter().any(|w| w.contains("non-binary")));
        let r = d.distribution.get("race").unwrap();
        assert!((r.get("White").unwrap() - 67.0 / 81.7).abs() < 1e-12);
    }

    #[test]
    fn other_categories_fall_back_to_uniform() {
        let c = catalog(r#"{"gender":["male","female"],"race":["White","Black"],"age":["young","middle","old"]}"#);
        let d = build_fair_distribution(&c, &TargetSpec::parse("stats:Doctor").unwrap()).unwrap();
        assert_eq!(d.distribution.get("age").unwrap(), &ProbabilityVector::uniform(&["young", "middle", "old"]).unwrap());
    }

    #[test]
    fn statistics_errors() {
        assert!(build_fair_distribution(&gender_race(), &TargetSpec::parse("stats:astronaut").unwrap()).is_err());
        let c = catalog(r#"{"gender":["male","female"],"age":["young","old"]}"#);
        assert!(build_fair_distribution(&c, &TargetSpec::parse("stats:CEO").unwrap()).is_err());
    }

    #[test]
    fn custom_validated() {
        let c = catalog(r#"{"gender":["male","female"],"age":["young","old"]}"#);
        let good: AttributeDistribution = serde_json::from_str(
            r#"{"gender":{"labels":["male","female"],"values":[0.2,0.8]},"age":{"labels":["young","old"],"values":[0.5,0.5]}}"#,
        )
        .unwrap();
        let d = build_fair_distribution(&c, &TargetSpec::Custom { distribution: good.clone() }).unwrap();
        assert_eq!(d.distribution, good);
        let bad: AttributeDistribution = serde_json::from_str(
            r#"{"gender":{"labels":["male","robot"],"values":[0.2,0.8]},"age":{"labels":["young","old"],"values":[0.5,0.5]}}"#,
        )
        .unwrap();
        assert!(build_fair_distribution(&c, &TargetSpec::Custom { distribution: bad }).is_err());
    }

    #[test]
    fn table_file_percentages() {
        let t = StatisticsTable::from_json(
            r#"{"Pilot":{"gender":{"female":10,"male":90},"race":{"White":50,"Black":50}}}"#,
        )
        .unwrap();
        let row = t.row("pilot").unwrap();
        assert_eq!(row["gender"].values(), &[0.1, 0.9]);
    }

    #[test]
    fn degenerate_weight_always_wins() {
        let c = catalog(r#"{"gender":["male","female"],"age":["young","old"]}"#);
        let mut cats = IndexMap::new();
        cats.insert("gender".to_string(), ProbabilityVector::new(vec!["male".into(), "female".into()], vec![0.0, 1.0]).unwrap());
        cats.insert("age".to_string(), ProbabilityVector::new(vec!["young".into(), "old".into()], vec![1.0, 0.0]).unwrap());
        let d = AttributeDistribution::new(cats);
        d.check_against(&c).unwrap();
        for i in 0..200 {
            let a = sample_assignment(&d, 42, i);
            assert_eq!(a.get("gender"), Some("female"));
            assert_eq!(a.get("age"), Some("young"));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = build_fair_distribution(&gender_race(), &TargetSpec::Uniform).unwrap().distribution;
        assert_eq!(sample_assignment(&d, 3, 17), sample_assignment(&d, 3, 17));
    }

    fn frequencies(d: &AttributeDistribution, category: &str, n: u64, seed: u64) -> Vec<f64> {
        let pv = d.get(category).unwrap();
        let mut counts = vec![0.0; pv.len()];
        for i in 0..n {
            let a = sample_assignment(d, seed, i);
            let k = pv.labels().iter().position(|l| l == a.get(category).unwrap()).unwrap();
            counts[k] += 1.0;
        }
        counts.iter().map(|c| c / n as f64).collect()
    }

    #[test]
    fn ceo_gender_frequencies_at_ten_thousand() {
        let d = build_fair_distribution(&gender_race(), &TargetSpec::parse("stats:CEO").unwrap())
            .unwrap()
            .distribution;
        let f = frequencies(&d, "gender", 10_000, 1);
        assert!((f[0] - 0.67).abs() < 0.015 && (f[1] - 0.33).abs() < 0.015, "{f:?}");
    }

    #[test]
    fn marginals_converge_and_categories_independent() {
        let d = build_fair_distribution(&gender_race(), &TargetSpec::parse("stats:Nurse").unwrap())
            .unwrap()
            .distribution;
        let n = 100_000u64;
        let mut male = vec![0.0; n as usize];
        let mut white = vec![0.0; n as usize];
        let g = d.get("gender").unwrap();
        let r = d.get("race").unwrap();
        let mut gc = vec![0.0; g.len()];
        let mut rc = vec![0.0; r.len()];
        for i in 0..n {
            let a = sample_assignment(&d, 99, i);
            let gi = g.labels().iter().position(|l| l == a.get("gender").unwrap()).unwrap();
            let ri = r.labels().iter().position(|l| l == a.get("race").unwrap()).unwrap();
            gc[gi] += 1.0;
            rc[ri] += 1.0;
            male[i as usize] = (gi == 0) as u8 as f64;
            white[i as usize] = (ri == 0) as u8 as f64;
        }
        for (pv, counts) in [(g, &gc), (r, &rc)] {
            for (p, c) in pv.values().iter().zip(counts.iter()) {
                let bound = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
                assert!((c / n as f64 - p).abs() < bound.max(1e-12), "p={p} f={}", c / n as f64);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mm, mw) = (mean(&male), mean(&white));
        let cov: f64 = male.iter().zip(&white).map(|(a, b)| (a - mm) * (b - mw)).sum::<f64>() / n as f64;
        let corr = cov / (mm * (1.0 - mm) * mw * (1.0 - mw)).sqrt();
        assert!(corr.abs() < 0.02, "correlation {corr}");
    }

    #[test]
    fn fallback_examples() {
        let y = PromptText::new("A portrait of a person reading a book").unwrap();
        let a: AttributeAssignment = [("gender", "female"), ("age", "elderly")].into_iter().collect();
        assert_eq!(
            fallback_fuse(&y, &a).unwrap().as_str(),
            "A portrait of a person reading a book, female, elderly"
        );
        let a: AttributeAssignment = [("gender", "male")].into_iter().collect();
        assert_eq!(fallback_fuse(&y, &a).unwrap().as_str(), "A portrait of a person reading a book, male");
        assert!(fallback_fuse(&y, &AttributeAssignment::default()).is_err());
    }

    #[test]
    fn entigen_examples() {
        let y = PromptText::new("A headshot of a CEO").unwrap();
        assert_eq!(
            entigen_transform(&y, "CEO").unwrap().as_str(),
            "A headshot of a CEO, if all individuals can be CEO irrespective of their gender and race"
        );
        assert!(entigen_transform(&y, "  ").is_err());
        let twice = entigen_transform(&entigen_transform(&y, "CEO").unwrap(), "CEO").unwrap();
        assert_eq!(twice.as_str().matches("if all individuals").count(), 2);
    }

    proptest::proptest! {
        #[test]
        fn entigen_suffix_is_fixed(y in "[A-Za-z ]{1,30}[A-Za-z]", p in "[A-Za-z]{1,12}") {
            let out = entigen_transform(&PromptText::new(y).unwrap(), &p).unwrap();
            let words: Vec<&str> = out.as_str().split_whitespace().rev().take(9).collect();
            let suffix: Vec<&str> = words.into_iter().rev().collect();
            let expected: Vec<&str> = "can be X irrespective of their gender and race".split(' ').collect();
            proptest::prop_assert_eq!(&suffix[3..], &expected[3..]);
            proptest::prop_assert!(out.as_str().ends_with(ENTIGEN_SUFFIX));
        }
    }
}
