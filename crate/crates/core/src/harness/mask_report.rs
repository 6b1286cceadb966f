//! Per-row view of selector masks against ground-truth relevance.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::pipeline::DiwiftModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRow {
    pub index: usize,
    pub mask: Vec<u8>,
    pub selected: Vec<String>,
    pub relevance: Option<Vec<u8>>,
    /// `None` when nothing is selected.
    pub precision: Option<f64>,
    /// `None` when the row has no relevant feature.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub feature_names: Vec<String>,
    pub rows: Vec<MaskRow>,
    /// Pooled over rows: `Σ hits / Σ selected` and `Σ hits / Σ relevant`.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub(crate) fn precision_recall(mask: &[u8], relevance: &[u8]) -> (usize, usize, usize) {
    let hits = mask.iter().zip(relevance).filter(|(&m, &r)| m == 1 && r == 1).count();
    let selected = mask.iter().filter(|&&m| m == 1).count();
    let relevant = relevance.iter().filter(|&&r| r == 1).count();
    (hits, selected, relevant)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Mask bits (hard selection, threshold applied) of `model` on `rows` of `ds`.
pub fn mask_report(model: &DiwiftModel, ds: &Dataset, rows: &[usize]) -> Result<MaskReport> {
    let names = ds.feature_names();
    let (mut hits, mut sel, mut rel) = (0, 0, 0);
    let mut out = Vec::with_capacity(rows.len());
    for &i in rows {
        if i >= ds.n() {
            return Err(Error::IndexOutOfRange { index: i, n: ds.n() });
        }
        let x = ds.row(i);
        let mask: Vec<u8> = model
            .mask(x)?
            .iter()
            .zip(x)
            .map(|(&m, &v)| u8::from(m > 0.0 && v != 0.0))
            .collect();
        let relevance: Option<Vec<u8>> = ds
            .relevance
            .as_ref()
            .map(|r| r.row(i).iter().map(|&b| u8::from(b)).collect());
        let (precision, recall) = match &relevance {
            Some(r) => {
                let (h, s, n) = precision_recall(&mask, r);
                hits += h;
                sel += s;
                rel += n;
                (ratio(h, s), ratio(h, n))
            }
            None => (None, None),
        };
        out.push(MaskRow {
            index: i,
            selected: mask
                .iter()
                .zip(&names)
                .filter(|(&m, _)| m == 1)
                .map(|(_, n)| n.clone())
                .collect(),
            mask,
            relevance,
            precision,
            recall,
        });
    }
    let has_truth = ds.relevance.is_some();
    Ok(MaskReport {
        feature_names: names,
        rows: out,
        precision: if has_truth { ratio(hits, sel) } else { None },
        recall: if has_truth { ratio(hits, rel) } else { None },
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

impl MaskReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in &self.rows {
            let _ = write!(s, "row {:>6}: [{}]", row.index, row.selected.join(", "));
            if let Some(r) = &row.relevance {
                let truth: Vec<&str> = r
                    .iter()
                    .zip(&self.feature_names)
                    .filter(|(&b, _)| b == 1)
                    .map(|(_, n)| n.as_str())
                    .collect();
                let _ = write!(
                    s,
                    "  truth [{}]  precision {}  recall {}",
                    truth.join(", "),
                    fmt_opt(row.precision),
                    fmt_opt(row.recall)
                );
            }
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "pooled precision {}  recall {}",
            fmt_opt(self.precision),
            fmt_opt(self.recall)
        );
        s
    }

    /// `row,<features…>,precision,recall` with `*` marking selected entries
    /// that are also relevant.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,");
        s.push_str(&self.feature_names.join(","));
        s.push_str(",precision,recall\n");
        for row in &self.rows {
            let cells: Vec<String> = row
                .mask
                .iter()
                .enumerate()
                .map(|(k, &m)| {
                    let star = row.relevance.as_ref().is_some_and(|r| r[k] == 1);
                    format!("{m}{}", if star { "*" } else { "" })
                })
                .collect();
            let _ = writeln!(
                s,
                "{},{},{},{}",
                row.index,
                cells.join(","),
                fmt_opt(row.precision),
                fmt_opt(row.recall)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_conventions() {
        let rel = [0, 1, 1, 0];
        let (h, s, n) = precision_recall(&[0, 1, 1, 0], &rel);
        assert_eq!((ratio(h, s), ratio(h, n)), (Some(1.0), Some(1.0)));
        let (h, s, n) = precision_recall(&[0, 1, 0, 0], &rel);
        assert_eq!((ratio(h, s), ratio(h, n)), (Some(1.0), Some(0.5)));
        let (h, s, n) = precision_recall(&[0, 0, 0, 0], &rel);
        assert_eq!((ratio(h, s), ratio(h, n)), (None, Some(0.0)));
    }
}
