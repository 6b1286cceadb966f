//! CSV ingestion and export.
//!
//! Dialect: comma separated, header row, UTF-8, `.` decimal separator and no
//! quoting. An empty categorical cell is a missing value and encodes as an
//! all-zero one-hot group.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, FieldKind, FieldSchema};
use crate::error::{Error, Result};

pub const LABEL_COLUMN: &str = "_label";

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_label(row: usize, value: &str) -> Result<u8> {
    match value.parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(0),
        Ok(v) if v == 1.0 => Ok(1),
        _ => Err(Error::InvalidLabel {
            row,
            value: value.to_string(),
        }),
    }
}

/// Load `path` and encode it with `schema`. Row indices in errors count data
/// rows from 0, excluding the header.
pub fn load_csv(path: &Path, schema: &[FieldSchema], label_column: &str) -> Result<Dataset> {
    for f in schema {
        f.validate()?;
    }
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let label_pos = position(label_column)?;
    let field_pos = schema
        .iter()
        .map(|f| position(&f.name))
        .collect::<Result<Vec<_>>>()?;
    let lookups: Vec<HashMap<&str, usize>> = schema
        .iter()
        .map(|f| {
            f.categories
                .iter()
                .enumerate()
                .map(|(i, c)| (c.as_str(), i))
                .collect()
        })
        .collect();
    let d: usize = schema.iter().map(FieldSchema::width).sum();

    let mut values = Vec::new();
    let mut y = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |pos: usize| record.get(pos).unwrap_or("");
        y.push(parse_label(row, cell(label_pos))?);
        for ((f, &pos), lookup) in schema.iter().zip(&field_pos).zip(&lookups) {
            let value = cell(pos);
            match f.kind {
                FieldKind::Categorical => {
                    let mut group = vec![0.0; f.categories.len()];
                    if !value.is_empty() {
                        let c = lookup.get(value).ok_or_else(|| Error::UnknownCategory {
                            row,
                            field: f.name.clone(),
                            value: value.to_string(),
                        })?;
                        group[*c] = 1.0;
                    }
                    values.extend(group);
                }
                FieldKind::Numerical => {
                    let v = value
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::InvalidNumber {
                            row,
                            field: f.name.clone(),
                            value: value.to_string(),
                        })?;
                    values.push(v);
                }
            }
        }
    }
    let n = y.len();
    let raw = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::from_raw(raw, y, schema.to_vec(), None)
}

/// Write raw field values plus a `_label` column. Loading the file back with
/// the dataset's schema reproduces the dataset.
/// A schema treating every column except `label_column` as numerical.
pub fn numerical_schema(path: &Path, label_column: &str) -> Result<Vec<FieldSchema>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    if !headers.iter().any(|h| h == label_column) {
        return Err(Error::MissingColumn(label_column.to_string()));
    }
    Ok(headers
        .iter()
        .filter(|h| *h != label_column)
        .map(FieldSchema::numerical)
        .collect())
}

pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(BufWriter::new(file));
    let mut header: Vec<String> = ds.schema.iter().map(|f| f.name.clone()).collect();
    header.push(LABEL_COLUMN.to_string());
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut record = Vec::with_capacity(header.len());
        let mut j = 0;
        for f in &ds.schema {
            match f.kind {
                FieldKind::Numerical => {
                    record.push(format!("{}", ds.raw[(i, j)]));
                    j += 1;
                }
                FieldKind::Categorical => {
                    let width = f.categories.len();
                    let hot = (0..width).find(|&c| ds.raw[(i, j + c)] > 0.5);
                    record.push(hot.map(|c| f.categories[c].clone()).unwrap_or_default());
                    j += width;
                }
            }
        }
        record.push(ds.y[i].to_string());
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Relevance sidecar: one line per row holding the `;`-separated 0-based
/// indices of the relevant encoded features.
pub fn write_relevance(relevance: &Array2<bool>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in relevance.outer_iter() {
        let idx: Vec<String> = row
            .iter()
            .enumerate()
            .filter(|(_, &r)| r)
            .map(|(k, _)| k.to_string())
            .collect();
        writeln!(w, "{}", idx.join(";")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_relevance(path: &Path, d: usize) -> Result<Array2<bool>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut row = vec![false; d];
        for tok in line.split(';').map(str::trim).filter(|t| !t.is_empty()) {
            let k: usize = tok
                .parse()
                .map_err(|_| Error::Schema(format!("relevance line {i}: bad index `{tok}`")))?;
            if k >= d {
                return Err(Error::IndexOutOfRange { index: k, n: d });
            }
            row[k] = true;
        }
        rows.extend(row);
    }
    let n = rows.len() / d.max(1);
    Array2::from_shape_vec((n, d), rows).map_err(|e| Error::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn schema() -> Vec<FieldSchema> {
        vec![
            FieldSchema::categorical("color", ["a", "b", "c"]),
            FieldSchema::numerical("age").with_bounds(10.0, 30.0),
        ]
    }

    #[test]
    fn one_hot_and_min_max_encoding() {
        let f = write("age,color,y\n10,b,1\n30,a,0\n40,,1\n");
        let ds = load_csv(f.path(), &schema(), "y").unwrap();
        assert_eq!(ds.row(0), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(ds.row(1), &[1.0, 0.0, 0.0, 1.0]);
        // out-of-range clamps; missing category is an all-zero group
        assert_eq!(ds.row(2), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(ds.y, vec![1, 0, 1]);
    }

    #[test]
    fn error_paths() {
        let f = write("age,color\n10,b\n");
        assert!(matches!(
            load_csv(f.path(), &schema(), "y"),
            Err(Error::MissingColumn(c)) if c == "y"
        ));
        let f = write("age,color,y\n10,b,1\n10,b,2\n");
        assert!(matches!(
            load_csv(f.path(), &schema(), "y"),
            Err(Error::InvalidLabel { row: 1, .. })
        ));
        let f = write("age,color,y\n10,b,1\n10,b,0\n12,zzz,1\n");
        assert!(matches!(
            load_csv(f.path(), &schema(), "y"),
            Err(Error::UnknownCategory { row: 2, .. })
        ));
        let f = write("age,color,y\nold,b,1\n");
        assert!(matches!(
            load_csv(f.path(), &schema(), "y"),
            Err(Error::InvalidNumber { row: 0, .. })
        ));
    }

    #[test]
    fn constant_numeric_column_encodes_zero() {
        let f = write("k,y\n5,1\n5,0\n");
        let ds = load_csv(f.path(), &[FieldSchema::numerical("k")], "y").unwrap();
        assert!(ds.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn export_reload_round_trip() {
        let f = write("age,color,y\n10,b,1\n25.5,,0\n30,c,1\n");
        let ds = load_csv(f.path(), &schema(), "y").unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, out.path()).unwrap();
        let back = load_csv(out.path(), &ds.schema, LABEL_COLUMN).unwrap();
        assert_eq!(back.x, ds.x);
        assert_eq!(back.y, ds.y);
    }
}
