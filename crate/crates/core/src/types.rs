//! Schema types shared across the toolkit.
//!
//! Nothing here knows about fairness; these are just validated containers for
//! prompts, attribute catalogs and the probability vectors placed over them.

use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::PROB_TOLERANCE;

/// The input text a generation is conditioned on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptText(String);

impl PromptText {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(Error::validation("prompt text is empty"));
        }
        Ok(PromptText(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for PromptText {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        PromptText::new(s)
    }
}

impl From<PromptText> for String {
    fn from(p: PromptText) -> String {
        p.0
    }
}

impl fmt::Display for PromptText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for PromptText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// A single broken catalog rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    TooFewCategories { found: usize },
    TooFewAttributes { category: String, found: usize },
    DuplicateAttribute { category: String, attribute: String },
    EmptyCategoryName,
    EmptyAttributeName { category: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewCategories { found } => {
                write!(f, "only {found} categories; at least 2 categories are required")
            }
            Violation::TooFewAttributes { category, found } => write!(
                f,
                "category {category} has {found} attribute(s); each category must list 2 or more attributes"
            ),
            Violation::DuplicateAttribute { category, attribute } => {
                write!(f, "category {category} lists attribute {attribute} more than once")
            }
            Violation::EmptyCategoryName => f.write_str("a category name is empty"),
            Violation::EmptyAttributeName { category } => {
                write!(f, "category {category} contains an empty attribute name")
            }
        }
    }
}

/// Ordered map from category name to its attribute values.
///
/// Construction trims outer whitespace from every name but does not enforce
/// the catalog rules; call [`AttributeCatalog::validated`] or
/// [`validate_catalog`] for that. Serializes to the canonical
/// `{"category": ["attr", ...], ...}` object.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "IndexMap<String, Vec<String>>", into = "IndexMap<String, Vec<String>>")]
pub struct AttributeCatalog {
    categories: IndexMap<String, Vec<String>>,
}

impl From<IndexMap<String, Vec<String>>> for AttributeCatalog {
    fn from(map: IndexMap<String, Vec<String>>) -> Self {
        let categories = map
            .into_iter()
            .map(|(k, v)| {
                (
                    k.trim().to_string(),
                    v.into_iter().map(|a| a.trim().to_string()).collect(),
                )
            })
            .collect();
        AttributeCatalog { categories }
    }
}

impl From<AttributeCatalog> for IndexMap<String, Vec<String>> {
    fn from(c: AttributeCatalog) -> Self {
        c.categories
    }
}

impl<K, V, A> FromIterator<(K, V)> for AttributeCatalog
where
    K: Into<String>,
    V: IntoIterator<Item = A>,
    A: Into<String>,
{
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        let map: IndexMap<String, Vec<String>> = iter
            .into_iter()
            .map(|(k, v)| (k.into(), v.into_iter().map(Into::into).collect()))
            .collect();
        map.into()
    }
}

impl AttributeCatalog {
    /// Build and validate in one step.
    pub fn validated(map: IndexMap<String, Vec<String>>) -> Result<Self> {
        let catalog = AttributeCatalog::from(map);
        let violations = validate_catalog(&catalog);
        if violations.is_empty() {
            Ok(catalog)
        } else {
            Err(Error::Catalog(violations))
        }
    }

    pub fn categories(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.categories.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn category_names(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    pub fn attributes(&self, category: &str) -> Option<&[String]> {
        self.categories.get(category).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn category_index(&self, category: &str) -> Option<usize> {
        self.categories.get_index_of(category)
    }

    /// Keep only the named categories, in catalog order.
    pub fn retain_categories(&self, keep: &[String]) -> AttributeCatalog {
        let categories = self
            .categories
            .iter()
            .filter(|(k, _)| keep.iter().any(|c| c.trim() == k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        AttributeCatalog { categories }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("catalog serialization cannot fail")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serialization cannot fail")
    }
}

/// Check every catalog rule and return all violations (empty means valid).
pub fn validate_catalog(catalog: &AttributeCatalog) -> Vec<Violation> {
    let mut out = Vec::new();
    if catalog.len() < 2 {
        out.push(Violation::TooFewCategories { found: catalog.len() });
    }
    for (category, attrs) in catalog.categories() {
        if category.is_empty() {
            out.push(Violation::EmptyCategoryName);
        }
        if attrs.len() < 2 {
            out.push(Violation::TooFewAttributes {
                category: category.to_string(),
                found: attrs.len(),
            });
        }
        let mut seen = HashSet::new();
        for attr in attrs {
            if attr.is_empty() {
                out.push(Violation::EmptyAttributeName {
                    category: category.to_string(),
                });
            } else if !seen.insert(attr.as_str()) {
                out.push(Violation::DuplicateAttribute {
                    category: category.to_string(),
                    attribute: attr.clone(),
                });
            }
        }
    }
    out
}

/// Labelled probabilities over a finite outcome set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProbabilityVector")]
pub struct ProbabilityVector {
    labels: Vec<String>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawProbabilityVector {
    labels: Vec<String>,
    values: Vec<f64>,
}

impl TryFrom<RawProbabilityVector> for ProbabilityVector {
    type Error = Error;
    fn try_from(raw: RawProbabilityVector) -> Result<Self> {
        ProbabilityVector::new(raw.labels, raw.values)
    }
}

impl ProbabilityVector {
    pub fn new(labels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if labels.len() != values.len() {
            return Err(Error::validation(format!(
                "{} labels but {} values",
                labels.len(),
                values.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::validation("probability vector has no outcomes"));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::validation(format!("duplicate label `{l}`")));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::validation(format!("invalid probability {v}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::validation(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbabilityVector { labels, values })
    }

    /// Uniform distribution over `labels`.
    pub fn uniform<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::validation("probability vector has no outcomes"));
        }
        ProbabilityVector::new(
            labels.iter().map(|l| l.as_ref().to_string()).collect(),
            vec![1.0 / n as f64; n],
        )
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.labels.iter().map(String::as_str).zip(self.values.iter().copied())
    }
}

/// Scale nonnegative weights so they sum to one, preserving label order.
pub fn normalize_weights<S: AsRef<str>>(raw: &[(S, f64)]) -> Result<ProbabilityVector> {
    if raw.is_empty() {
        return Err(Error::validation("no weights to normalize"));
    }
    if let Some((l, v)) = raw.iter().find(|(_, v)| !v.is_finite() || *v < 0.0) {
        return Err(Error::validation(format!(
            "weight for `{}` is {v}; weights must be nonnegative",
            l.as_ref()
        )));
    }
    let sum: f64 = raw.iter().map(|(_, v)| v).sum();
    if sum <= 0.0 {
        return Err(Error::validation("weights sum to zero"));
    }
    let labels = raw.iter().map(|(l, _)| l.as_ref().trim().to_string()).collect();
    let values = raw.iter().map(|(_, v)| v / sum).collect();
    ProbabilityVector::new(labels, values)
}

/// Per-category probability weights over a catalog's attributes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeDistribution {
    categories: IndexMap<String, ProbabilityVector>,
}

impl AttributeDistribution {
    pub fn new(categories: IndexMap<String, ProbabilityVector>) -> Self {
        AttributeDistribution { categories }
    }

    pub fn uniform(catalog: &AttributeCatalog) -> Result<Self> {
        let categories = catalog
            .categories()
            .map(|(c, attrs)| Ok((c.to_string(), ProbabilityVector::uniform(attrs)?)))
            .collect::<Result<_>>()?;
        Ok(AttributeDistribution { categories })
    }

    /// Require exactly the catalog's categories and attributes, in any order.
    pub fn check_against(&self, catalog: &AttributeCatalog) -> Result<()> {
        for (category, attrs) in catalog.categories() {
            let pv = self.categories.get(category).ok_or_else(|| {
                Error::validation(format!("distribution has no weights for category `{category}`"))
            })?;
            let mut mine: Vec<&str> = pv.labels().iter().map(String::as_str).collect();
            let mut theirs: Vec<&str> = attrs.iter().map(String::as_str).collect();
            mine.sort_unstable();
            theirs.sort_unstable();
            if mine != theirs {
                return Err(Error::LabelMismatch {
                    left: pv.labels().to_vec(),
                    right: attrs.to_vec(),
                });
            }
        }
        if let Some(extra) = self
            .categories
            .keys()
            .find(|k| catalog.attributes(k).is_none())
        {
            return Err(Error::validation(format!("unknown category `{extra}`")));
        }
        Ok(())
    }

    pub fn get(&self, category: &str) -> Option<&ProbabilityVector> {
        self.categories.get(category)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ProbabilityVector)> {
        self.categories.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

/// One sampled attribute value per category.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeAssignment {
    values: IndexMap<String, String>,
}

impl AttributeAssignment {
    pub fn new(values: IndexMap<String, String>) -> Self {
        AttributeAssignment { values }
    }

    pub fn get(&self, category: &str) -> Option<&str> {
        self.values.get(category).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_against(&self, catalog: &AttributeCatalog) -> Result<()> {
        for (category, value) in self.iter() {
            let attrs = catalog
                .attributes(category)
                .ok_or_else(|| Error::UnknownLabel { label: category.to_string() })?;
            if !attrs.iter().any(|a| a == value) {
                return Err(Error::UnknownLabel { label: value.to_string() });
            }
        }
        Ok(())
    }

    /// `category: value` pairs joined by `", "`.
    pub fn describe(&self) -> String {
        self.iter()
            .map(|(c, v)| format!("{c}: {v}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for AttributeAssignment {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        AttributeAssignment {
            values: iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}
