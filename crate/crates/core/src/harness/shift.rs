//! Distribution-shift protocol: train on a biased source, validate and test
//! on disjoint halves of an unbiased one.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{compare, DataSpec, ExperimentConfig, ExperimentReport, Method};
use crate::dataset::{gen_syn, Dataset, SynKind};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stage_rng, Stage};

/// Acceptance probability of a synthetic row into the biased training source.
pub const ACCEPT_POSITIVE: f64 = 0.9;
pub const ACCEPT_NEGATIVE: f64 = 0.5;

/// `n` synthetic rows, each drawn row kept with probability 0.9 when `y = 1`
/// and 0.5 when `y = 0`.
pub fn biased_sample(kind: SynKind, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("biased sample needs n >= 1".into()));
    }
    let mut accept = stage_rng(seed, Stage::Shift, 0);
    let mut parts = Vec::new();
    let mut have = 0;
    let mut round = 0u64;
    while have < n {
        let batch = gen_syn(kind, n, derive_seed(seed, Stage::Data, round))?;
        let keep: Vec<usize> = (0..batch.n())
            .filter(|&i| {
                let p = if batch.label(i) == 1 {
                    ACCEPT_POSITIVE
                } else {
                    ACCEPT_NEGATIVE
                };
                accept.random::<f64>() < p
            })
            .take(n - have)
            .collect();
        have += keep.len();
        parts.push(batch.select_rows(&keep));
        round += 1;
    }
    let refs: Vec<&Dataset> = parts.iter().collect();
    let mut ds = Dataset::concat(&refs)?;
    ds.refit_bounds();
    ds.check_invariants()?;
    Ok(ds)
}

/// Train as given; `unbiased` shuffled by `seed` and halved into valid/test.
/// Bounds are refitted on train.
pub(crate) fn shifted_parts(
    train: &Dataset,
    unbiased: &Dataset,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if train.featmap != unbiased.featmap
        || train.schema.iter().map(|f| &f.name).ne(unbiased.schema.iter().map(|f| &f.name))
    {
        return Err(Error::Schema("biased and unbiased sources have different schemas".into()));
    }
    if unbiased.n() < 2 {
        return Err(Error::Split("unbiased source needs at least 2 rows".into()));
    }
    let mut idx: Vec<usize> = (0..unbiased.n()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let half = unbiased.n() / 2;
    let mut tr = train.clone();
    tr.refit_bounds();
    let mut valid = unbiased.select_rows(&idx[..half]);
    let mut test = unbiased.select_rows(&idx[half..]);
    valid.reencode_with(&tr.schema)?;
    test.reencode_with(&tr.schema)?;
    Ok((tr, valid, test))
}

/// Compare methods when training on `biased` and evaluating on halves of
/// `unbiased` (re-halved per repeat).
pub fn shift_experiment(
    biased: &Dataset,
    unbiased: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    shifted_parts(biased, unbiased, 0)?;
    let mut rep = compare(
        &DataSpec::Shift {
            train: biased.clone(),
            unbiased: unbiased.clone(),
        },
        cfg,
    )?;
    rep.name = "shift".into();
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub shifted: ExperimentReport,
    pub unshifted: ExperimentReport,
    /// Per method: unshifted mean AUC − shifted mean AUC.
    pub drops: Vec<(Method, f64)>,
}

impl ShiftReport {
    pub fn drop(&self, m: Method) -> Option<f64> {
        self.drops.iter().find(|(k, _)| *k == m).map(|(_, d)| *d)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n{}", self.shifted.to_text(), self.unshifted.to_text());
        for (m, d) in &self.drops {
            s.push_str(&format!("AUC drop under shift, {m}: {d:.4}\n"));
        }
        s
    }
}

/// Synthetic shift: per repeat, a biased training sample of `n_train` rows
/// and an unbiased pool of `n_unbiased` rows halved into valid/test; the
/// unshifted counterpart trains on an unbiased sample of the same size and
/// shares valid/test.
pub fn synthetic_shift_experiment(
    kind: SynKind,
    n_train: usize,
    n_unbiased: usize,
    cfg: &ExperimentConfig,
) -> Result<ShiftReport> {
    let run = |biased: bool| -> Result<ExperimentReport> {
        let mut rep = compare(
            &DataSpec::SyntheticShift {
                kind,
                n_train,
                n_unbiased,
                biased,
            },
            cfg,
        )?;
        rep.name = if biased { "shift" } else { "no-shift" }.into();
        Ok(rep)
    };
    let shifted = run(true)?;
    let unshifted = run(false)?;
    let drops = cfg
        .methods
        .iter()
        .filter_map(|&m| Some((m, unshifted.mean_auc(m)? - shifted.mean_auc(m)?)))
        .collect();
    Ok(ShiftReport {
        shifted,
        unshifted,
        drops,
    })
}

pub(crate) fn synthetic_shift_parts(
    kind: SynKind,
    n_train: usize,
    n_unbiased: usize,
    biased: bool,
    run_seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let pool = gen_syn(kind, n_unbiased, derive_seed(run_seed, Stage::Shift, 1))?;
    let train = if biased {
        biased_sample(kind, n_train, derive_seed(run_seed, Stage::Shift, 0))?
    } else {
        gen_syn(kind, n_train, derive_seed(run_seed, Stage::Shift, 2))?
    };
    shifted_parts(&train, &pool, derive_seed(run_seed, Stage::Split, 0))
}
