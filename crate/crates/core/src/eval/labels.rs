use std::path::Path;

use indexmap::IndexMap;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Predicted demographic labels per image, read from a CSV with header
/// `image_id,category,label`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelFile {
    pub source: Option<String>,
    rows: IndexMap<String, IndexMap<String, String>>,
}

#[derive(Deserialize)]
struct Row {
    image_id: String,
    category: String,
    label: String,
}

impl LabelFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = Self::read_csv(std::fs::File::open(path)?)?;
        file.source = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        Ok(file)
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        for need in ["image_id", "category", "label"] {
            if !headers.iter().any(|h| h == need) {
                return Err(Error::validation(format!("label file lacks a `{need}` column")));
            }
        }
        let mut out = LabelFile::default();
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            out.insert(&row.image_id, &row.category, &row.label)?;
        }
        Ok(out)
    }

    /// Add one label; an `(image, category)` pair may appear only once.
    pub fn insert(&mut self, image_id: &str, category: &str, label: &str) -> Result<()> {
        let cats = self.rows.entry(image_id.to_string()).or_default();
        if cats.insert(category.to_string(), label.to_string()).is_some() {
            return Err(Error::validation(format!(
                "image `{image_id}` has more than one `{category}` label"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.rows.contains_key(image_id)
    }

    pub fn label(&self, image_id: &str, category: &str) -> Option<&str> {
        self.rows.get(image_id)?.get(category).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}
