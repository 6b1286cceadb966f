//! Tabular data model: encoded feature matrix, labels, schema and the
//! transforms the rest of the crate applies to it.

mod csv_io;
mod schema;
mod split;
mod synthetic;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

pub use csv_io::{load_csv, numerical_schema, read_relevance, write_csv, write_relevance, LABEL_COLUMN};
pub use schema::{feature_map, feature_names, FeatureRef, FieldKind, FieldSchema};
pub use split::{split, split_sizes, SplitSpec};
pub use synthetic::{gen_syn, logit, positive_probability, relevant_features, SynKind, SYN_DIM};

use crate::error::{Error, Result};

/// Encoded tabular dataset.
///
/// `x` holds model inputs in `[0, 1]`. `raw` holds the pre-scaling values of
/// the same columns (one-hot columns are identical in both); it is kept so
/// numerical bounds can be refitted on a training split and so synthetic
/// generators can be checked against their label formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub raw: Array2<f64>,
    pub y: Vec<u8>,
    pub schema: Vec<FieldSchema>,
    pub featmap: Vec<FeatureRef>,
    /// Ground-truth per-row feature relevance (synthetic data only).
    pub relevance: Option<Array2<bool>>,
}

impl Dataset {
    /// Build a dataset from raw column values, encoding them with `schema`.
    /// Numerical fields without bounds get them fitted from `raw`.
    pub fn from_raw(
        raw: Array2<f64>,
        y: Vec<u8>,
        mut schema: Vec<FieldSchema>,
        relevance: Option<Array2<bool>>,
    ) -> Result<Self> {
        for f in &schema {
            f.validate()?;
        }
        let featmap = feature_map(&schema);
        if raw.ncols() != featmap.len() {
            return Err(Error::Shape(format!(
                "schema expands to {} features but raw matrix has {} columns",
                featmap.len(),
                raw.ncols()
            )));
        }
        if raw.nrows() != y.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} labels",
                raw.nrows(),
                y.len()
            )));
        }
        if let Some(r) = &relevance {
            if r.dim() != raw.dim() {
                return Err(Error::Shape("relevance shape differs from data".into()));
            }
        }
        if let Some(bad) = y.iter().position(|&v| v > 1) {
            return Err(Error::InvalidLabel {
                row: bad,
                value: y[bad].to_string(),
            });
        }
        fill_missing_bounds(&mut schema, &featmap, &raw);
        let x = encode(&raw, &schema, &featmap);
        let ds = Self {
            x,
            raw,
            y,
            schema,
            featmap,
            relevance,
        };
        ds.check_invariants()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.x
            .row(i)
            .to_slice()
            .expect("dataset rows are stored contiguously")
    }

    pub fn label(&self, i: usize) -> u8 {
        self.y[i]
    }

    pub fn feature_names(&self) -> Vec<String> {
        feature_names(&self.schema)
    }

    pub fn positive_rate(&self) -> f64 {
        if self.y.is_empty() {
            return 0.0;
        }
        self.y.iter().map(|&v| v as f64).sum::<f64>() / self.y.len() as f64
    }

    /// Rows `idx` in the given order, sharing the schema.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            raw: self.raw.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            schema: self.schema.clone(),
            featmap: self.featmap.clone(),
            relevance: self.relevance.as_ref().map(|r| r.select(Axis(0), idx)),
        }
    }

    /// Refit numerical bounds on this dataset's raw values and re-encode.
    pub fn refit_bounds(&mut self) {
        for f in self.schema.iter_mut() {
            if f.kind == FieldKind::Numerical {
                f.min = None;
                f.max = None;
            }
        }
        fill_missing_bounds(&mut self.schema, &self.featmap, &self.raw);
        self.x = encode(&self.raw, &self.schema, &self.featmap);
    }

    /// Re-encode with another dataset's schema (bounds), clamping into `[0, 1]`.
    pub fn reencode_with(&mut self, schema: &[FieldSchema]) -> Result<()> {
        if feature_map(schema) != self.featmap {
            return Err(Error::Schema("schemas expand to different feature maps".into()));
        }
        self.schema = schema.to_vec();
        self.x = encode(&self.raw, &self.schema, &self.featmap);
        Ok(())
    }

    /// Replace the encoded matrix, keeping labels and schema.
    pub fn with_x(&self, x: Array2<f64>) -> Result<Dataset> {
        if x.dim() != self.x.dim() {
            return Err(Error::Shape(format!(
                "replacement matrix {:?} differs from {:?}",
                x.dim(),
                self.x.dim()
            )));
        }
        let ds = Dataset {
            x,
            ..self.clone()
        };
        ds.check_invariants()?;
        Ok(ds)
    }

    /// Concatenate rows of datasets sharing a feature layout.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        for p in parts {
            if p.featmap != first.featmap {
                return Err(Error::Schema("datasets have different feature maps".into()));
            }
        }
        let xs: Vec<_> = parts.iter().map(|p| p.x.view()).collect();
        let raws: Vec<_> = parts.iter().map(|p| p.raw.view()).collect();
        let relevance = if parts.iter().all(|p| p.relevance.is_some()) {
            let rs: Vec<_> = parts
                .iter()
                .map(|p| p.relevance.as_ref().unwrap().view())
                .collect();
            Some(ndarray::concatenate(Axis(0), &rs).map_err(|e| Error::Shape(e.to_string()))?)
        } else {
            None
        };
        Ok(Dataset {
            x: ndarray::concatenate(Axis(0), &xs).map_err(|e| Error::Shape(e.to_string()))?,
            raw: ndarray::concatenate(Axis(0), &raws).map_err(|e| Error::Shape(e.to_string()))?,
            y: parts.iter().flat_map(|p| p.y.iter().copied()).collect(),
            schema: first.schema.clone(),
            featmap: first.featmap.clone(),
            relevance,
        })
    }

    /// Every encoded value lies in `[0, 1]` and one-hot groups sum to at most 1.
    pub fn check_invariants(&self) -> Result<()> {
        if self.featmap.len() != self.d() {
            return Err(Error::Shape("feature map length differs from d".into()));
        }
        if let Some(((i, j), v)) = self
            .x
            .indexed_iter()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Shape(format!(
                "encoded value {v} at ({i}, {j}) is outside [0, 1]"
            )));
        }
        for (i, row) in self.x.outer_iter().enumerate() {
            check_one_hot_groups(&self.featmap, row, i)?;
        }
        Ok(())
    }
}

fn check_one_hot_groups(featmap: &[FeatureRef], row: ArrayView1<f64>, i: usize) -> Result<()> {
    let mut j = 0;
    while j < featmap.len() {
        let field = featmap[j].field;
        let mut end = j;
        let mut sum = 0.0;
        while end < featmap.len() && featmap[end].field == field {
            sum += row[end];
            end += 1;
        }
        if featmap[j].category.is_some() && sum > 1.0 + 1e-12 {
            return Err(Error::Shape(format!(
                "row {i}: one-hot group for field {field} sums to {sum}"
            )));
        }
        j = end;
    }
    Ok(())
}

fn fill_missing_bounds(schema: &mut [FieldSchema], featmap: &[FeatureRef], raw: &Array2<f64>) {
    for (j, r) in featmap.iter().enumerate() {
        let f = &mut schema[r.field];
        if f.kind != FieldKind::Numerical || (f.min.is_some() && f.max.is_some()) {
            continue;
        }
        let col = raw.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
        if lo == hi {
            log::warn!("numerical field `{}` is constant; encoding as 0", f.name);
        }
        f.min.get_or_insert(lo);
        f.max.get_or_insert(hi);
    }
}

fn encode(raw: &Array2<f64>, schema: &[FieldSchema], featmap: &[FeatureRef]) -> Array2<f64> {
    let mut x = raw.clone();
    for (j, r) in featmap.iter().enumerate() {
        let f = &schema[r.field];
        if f.kind == FieldKind::Numerical {
            x.column_mut(j).mapv_inplace(|v| f.scale(v));
        }
    }
    x
}

/// `X' = P ⊙ X` with labels unchanged.
pub fn apply_reweight(ds: &Dataset, weights: &Array2<f64>) -> Result<Dataset> {
    if weights.dim() != ds.x.dim() {
        return Err(Error::Shape(format!(
            "weights {:?} vs data {:?}",
            weights.dim(),
            ds.x.dim()
        )));
    }
    if weights.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument("weights must lie in [0, 1]".into()));
    }
    ds.with_x(&ds.x * weights)
}
