use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Rows of feature vectors, optionally keyed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    rows: DMatrix<f64>,
    ids: Option<Vec<String>>,
    normalized: bool,
}

impl EmbeddingSet {
    pub fn new(rows: DMatrix<f64>, ids: Option<Vec<String>>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::validation("embedding set is empty"));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("embedding set has non-finite entries"));
        }
        if let Some(ids) = &ids {
            if ids.len() != rows.nrows() {
                return Err(Error::validation("one image id per row is required"));
            }
            let mut sorted: Vec<&String> = ids.iter().collect();
            sorted.sort_unstable();
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::validation(format!("duplicate image id `{}`", w[0])));
            }
        }
        Ok(EmbeddingSet { rows, ids, normalized: false })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::validation("ragged embedding rows"));
        }
        EmbeddingSet::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]), None)
    }

    /// Read a headerless CSV of floats. A first column that does not parse
    /// as a number is taken as the image id.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut ids = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut with_ids: Option<bool> = None;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.iter().all(str::is_empty) {
                continue;
            }
            let has_id = *with_ids.get_or_insert_with(|| rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()));
            let mut fields = rec.iter();
            if has_id {
                ids.push(fields.next().unwrap_or_default().to_string());
            }
            let row = fields
                .map(|f| f.parse::<f64>().map_err(|_| Error::validation(format!("not a number: `{f}`"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let mut set = EmbeddingSet::from_rows(&rows)?;
        if with_ids == Some(true) {
            set.ids = Some(ids);
            EmbeddingSet::new(set.rows, set.ids)
        } else {
            Ok(set)
        }
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dimension(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// True when rows were rescaled to unit norm by [`EmbeddingSet::unit_normalized`].
    pub fn normalized(&self) -> bool {
        self.normalized
    }

    /// Copy with every row scaled to unit norm. Zero rows are rejected.
    pub fn unit_normalized(&self) -> Result<Self> {
        let mut rows = self.rows.clone();
        for mut r in rows.row_iter_mut() {
            let norm = r.norm();
            if norm == 0.0 {
                return Err(Error::validation("cannot normalize a zero embedding"));
            }
            r /= norm;
        }
        Ok(EmbeddingSet { rows, ids: self.ids.clone(), normalized: true })
    }

    pub fn mean(&self) -> DVector<f64> {
        self.rows.row_mean().transpose()
    }

    /// Sample covariance with denominator `n - 1`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.len();
        if n < 2 {
            return Err(Error::validation("covariance needs at least two rows"));
        }
        let mean = self.rows.row_mean();
        let mut centered = self.rows.clone();
        for mut r in centered.row_iter_mut() {
            r -= &mean;
        }
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        Ok((&cov + cov.transpose()) * 0.5)
    }
}

/// Trace of the sample covariance: total feature variance.
pub fn trace_diversity(e: &EmbeddingSet) -> Result<f64> {
    Ok(e.covariance()?.trace().max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClipAlignment {
    pub mean: f64,
    /// Set when any input vector was rescaled to unit norm.
    pub renormalized: bool,
}

/// Mean cosine between a text embedding and each image embedding.
pub fn clip_alignment_mean(text: &[f64], images: &EmbeddingSet) -> Result<ClipAlignment> {
    if text.len() != images.dimension() {
        return Err(Error::Dimension { expected: images.dimension(), found: text.len() });
    }
    let mut text = DVector::from_column_slice(text);
    let mut renormalized = false;
    let tn = text.norm();
    if tn == 0.0 {
        return Err(Error::validation("text embedding is zero"));
    }
    if (tn - 1.0).abs() > 1e-6 {
        text /= tn;
        renormalized = true;
    }
    let mut total = 0.0;
    for r in images.rows.row_iter() {
        let n = r.norm();
        if n == 0.0 {
            return Err(Error::validation("image embedding is zero"));
        }
        let mut dot = r.transpose().dot(&text);
        if (n - 1.0).abs() > 1e-6 {
            dot /= n;
            renormalized = true;
        }
        total += dot;
    }
    Ok(ClipAlignment { mean: total / images.len() as f64, renormalized })
}

/// Fréchet distance between Gaussian fits of two embedding sets.
///
/// The cross term `tr((S_a S_b)^{1/2})` is evaluated as
/// `tr((S_a^{1/2} S_b S_a^{1/2})^{1/2})`, which has the same eigenvalues but
/// is symmetric, so both roots come from symmetric eigendecompositions with
/// negative eigenvalues clamped to zero.
pub fn frechet_distance(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::Dimension { expected: a.dimension(), found: b.dimension() });
    }
    frechet_from_moments(&a.mean(), &a.covariance()?, &b.mean(), &b.covariance()?)
}

/// Fréchet distance between `N(mu_a, cov_a)` and `N(mu_b, cov_b)`.
pub fn frechet_from_moments(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(Error::Dimension { expected: d, found: mu_b.len() });
    }
    let root_a = psd_sqrt(cov_a);
    let inner = &root_a * cov_b * &root_a;
    let cross: f64 = SymmetricEigen::new((&inner + inner.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    let diff = mu_a - mu_b;
    let value = diff.norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}
