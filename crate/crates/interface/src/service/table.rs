use fairguide_core::{validate_catalog, AttributeCatalog, AttributeDistribution, ProbabilityVector, Violation};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Slider weights by category, then attribute.
pub type WeightTable = IndexMap<String, IndexMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TableErrors {
    pub violations: Vec<Violation>,
    pub weight_errors: Vec<String>,
}

impl TableErrors {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty() && self.weight_errors.is_empty()
    }
}

pub fn uniform_table(catalog: &AttributeCatalog) -> WeightTable {
    catalog
        .categories()
        .map(|(c, attrs)| {
            let w = 1.0 / attrs.len() as f64;
            (c.to_string(), attrs.iter().map(|a| (a.clone(), w)).collect())
        })
        .collect()
}

pub fn table_distribution(table: &WeightTable) -> AttributeDistribution {
    AttributeDistribution::new(
        table
            .iter()
            .map(|(c, row)| {
                let pv = ProbabilityVector::new(row.keys().cloned().collect(), row.values().copied().collect())
                    .expect("table rows are normalized");
                (c.clone(), pv)
            })
            .collect(),
    )
}

/// Validate `catalog` and rescale `weights` to sum to one per category, in
/// catalog order.
///
/// Categories without weights become uniform. An attribute without a weight
/// gets the mean of its category's given weights (1 if none were given).
pub fn normalize_table(catalog: &AttributeCatalog, weights: &WeightTable) -> Result<WeightTable, TableErrors> {
    let mut errors = TableErrors { violations: validate_catalog(catalog), ..Default::default() };
    for (category, row) in weights {
        let Some(attrs) = catalog.attributes(category) else {
            errors.weight_errors.push(format!("weights given for unknown category `{category}`"));
            continue;
        };
        for (attr, w) in row {
            if !attrs.contains(attr) {
                errors.weight_errors.push(format!("{category}: weight given for unknown attribute `{attr}`"));
            }
            if !w.is_finite() || *w < 0.0 {
                errors.weight_errors.push(format!("{category}: weight for `{attr}` must be a nonnegative number"));
            }
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    let mut out = WeightTable::new();
    for (category, attrs) in catalog.categories() {
        let given = weights.get(category);
        let raw: Vec<f64> = match given {
            None => vec![1.0; attrs.len()],
            Some(row) => {
                let present: Vec<f64> = attrs.iter().filter_map(|a| row.get(a).copied()).collect();
                let fill = if present.is_empty() { 1.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
                attrs.iter().map(|a| row.get(a).copied().unwrap_or(fill)).collect()
            }
        };
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            errors.weight_errors.push(format!("{category}: weights sum to zero"));
            continue;
        }
        out.insert(category.to_string(), attrs.iter().cloned().zip(raw.iter().map(|w| w / total)).collect());
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}
