use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Train/valid/test ratios and the shuffle seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [3.0, 1.0, 1.0],
            seed: 0,
        }
    }
}

/// Part sizes: valid and test get `floor(n·r/Σr)`, train keeps the remainder.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<(usize, usize, usize)> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || !(total > 0.0) {
        return Err(Error::Split(format!("invalid ratios {ratios:?}")));
    }
    let part = |r: f64| ((n as f64) * r / total).floor() as usize;
    let valid = part(ratios[1]);
    let test = part(ratios[2]);
    let train = n - valid - test;
    if train == 0 || valid == 0 || test == 0 {
        return Err(Error::Split(format!(
            "n = {n} with ratios {ratios:?} leaves an empty part ({train}, {valid}, {test})"
        )));
    }
    Ok((train, valid, test))
}

/// Seeded shuffle into train/valid/test. Numerical bounds are refitted on the
/// training part and applied to all three.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let n = ds.n();
    if n < 5 {
        return Err(Error::Split(format!("need at least 5 rows, got {n}")));
    }
    let (n_train, n_valid, _) = split_sizes(n, spec.ratios)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(spec.seed));
    let mut train = ds.select_rows(&idx[..n_train]);
    let mut valid = ds.select_rows(&idx[n_train..n_train + n_valid]);
    let mut test = ds.select_rows(&idx[n_train + n_valid..]);
    train.refit_bounds();
    valid.reencode_with(&train.schema)?;
    test.reencode_with(&train.schema)?;
    for part in [&train, &valid, &test] {
        part.check_invariants()?;
    }
    Ok((train, valid, test))
}
