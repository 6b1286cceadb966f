use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Categorical,
    Numerical,
}

/// One raw column of a tabular dataset.
///
/// Categorical fields expand to one one-hot feature per category. Numerical
/// fields map to a single feature min-max scaled into `[0, 1]` with the stored
/// bounds; bounds left unset are learned from data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl FieldSchema {
    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: FieldKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
            min: None,
            max: None,
        }
    }

    pub fn numerical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FieldKind::Numerical,
            categories: Vec::new(),
            min: None,
            max: None,
        }
    }

    pub fn with_bounds(mut self, min: f64, max: f64) -> Self {
        self.min = Some(min);
        self.max = Some(max);
        self
    }

    /// Number of encoded feature columns this field expands to.
    pub fn width(&self) -> usize {
        match self.kind {
            FieldKind::Categorical => self.categories.len(),
            FieldKind::Numerical => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            FieldKind::Categorical => {
                if self.categories.is_empty() {
                    return Err(Error::Schema(format!(
                        "categorical field `{}` has no categories",
                        self.name
                    )));
                }
                let mut seen = std::collections::HashSet::new();
                for c in &self.categories {
                    if !seen.insert(c.as_str()) {
                        return Err(Error::Schema(format!(
                            "categorical field `{}` lists category `{c}` twice",
                            self.name
                        )));
                    }
                }
            }
            FieldKind::Numerical => {
                if let (Some(lo), Some(hi)) = (self.min, self.max) {
                    if !(lo <= hi) {
                        return Err(Error::Schema(format!(
                            "numerical field `{}` has min {lo} > max {hi}",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Min-max scale `v` into `[0, 1]`, clamping out-of-range values.
    /// Degenerate bounds (`min == max`) encode as the constant 0.
    pub fn scale(&self, v: f64) -> f64 {
        let (lo, hi) = (self.min.unwrap_or(0.0), self.max.unwrap_or(1.0));
        if hi <= lo {
            return 0.0;
        }
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

/// Where an encoded feature column comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRef {
    pub field: usize,
    /// Category index for one-hot columns, `None` for numerical columns.
    pub category: Option<usize>,
}

pub fn feature_map(schema: &[FieldSchema]) -> Vec<FeatureRef> {
    let mut map = Vec::new();
    for (field, f) in schema.iter().enumerate() {
        match f.kind {
            FieldKind::Categorical => {
                map.extend((0..f.categories.len()).map(|c| FeatureRef {
                    field,
                    category: Some(c),
                }));
            }
            FieldKind::Numerical => map.push(FeatureRef {
                field,
                category: None,
            }),
        }
    }
    map
}

pub fn feature_names(schema: &[FieldSchema]) -> Vec<String> {
    feature_map(schema)
        .iter()
        .map(|r| {
            let f = &schema[r.field];
            match r.category {
                Some(c) => format!("{}={}", f.name, f.categories[c]),
                None => f.name.clone(),
            }
        })
        .collect()
}
