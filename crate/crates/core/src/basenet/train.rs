use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::derivatives::{accumulate_grad, loss, Instance};
use super::BaseParams;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Mini-batch SGD settings for the base classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub hidden_size: usize,
    /// Number of hidden layers; 0 gives (convex) logistic regression.
    pub hidden_layers: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Retain the parameters after every epoch.
    pub keep_checkpoints: bool,
    /// Return the epoch with the lowest validation loss instead of the last.
    pub select_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            l2: 1e-4,
            hidden_size: 50,
            hidden_layers: 2,
            batch_size: 64,
            epochs: 60,
            seed: 0,
            keep_checkpoints: false,
            select_best: true,
        }
    }
}

impl TrainConfig {
    pub fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_size; self.hidden_layers]
    }

    /// Hard errors for unusable values; warnings for values outside the
    /// customary search ranges.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.l2 >= 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be > 0 and l2 >= 0".into()));
        }
        if !(1e-5..=1e-1).contains(&self.learning_rate) {
            log::warn!("learning rate {} outside [1e-5, 1e-1]", self.learning_rate);
        }
        if !(1e-6..=1.0).contains(&self.l2) {
            log::warn!("l2 {} outside [1e-6, 1]", self.l2);
        }
        if self.hidden_layers > 0 && ![50, 100, 150, 200].contains(&self.hidden_size) {
            log::warn!("hidden size {} outside {{50, 100, 150, 200}}", self.hidden_size);
        }
        if !(64..=2048).contains(&self.batch_size) || !self.batch_size.is_power_of_two() {
            log::warn!("batch size {} outside {{64, …, 2048}}", self.batch_size);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the state before training.
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: BaseParams,
    pub history: Vec<EpochRecord>,
    /// Parameters after epoch `e` at index `e - 1` (when retained).
    pub checkpoints: Vec<BaseParams>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn checkpoint(&self, epoch: usize) -> Result<&BaseParams> {
        epoch
            .checked_sub(1)
            .and_then(|e| self.checkpoints.get(e))
            .ok_or(Error::MissingCheckpoint(epoch))
    }
}

pub(crate) fn mean_loss(theta: &BaseParams, ds: &Dataset) -> f64 {
    if ds.n() == 0 {
        return 0.0;
    }
    (0..ds.n())
        .map(|i| loss(theta, Instance::new(ds.row(i), ds.label(i))))
        .sum::<f64>()
        / ds.n() as f64
}

/// Initialise from `cfg.seed` and train.
pub fn train(ds: &Dataset, valid: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let init = BaseParams::init(ds.d(), &cfg.hidden(), cfg.seed)?;
    train_from(init, ds, valid, cfg)
}

/// Mini-batch SGD on `mean loss + (l2/2)‖θ‖²` starting from `init`.
pub fn train_from(
    init: BaseParams,
    ds: &Dataset,
    valid: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.n() == 0 {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if init.input_dim() != ds.d() {
        return Err(Error::Shape(format!(
            "model expects {} features, data has {}",
            init.input_dim(),
            ds.d()
        )));
    }
    let mut rng = rng_from_seed(cfg.seed ^ 0x5EED_0F_7EA1);
    let mut theta = init;
    let p = theta.flat_dim();
    let record = |epoch: usize, theta: &BaseParams| -> Result<EpochRecord> {
        if !crate::linalg::all_finite(&theta.to_flat()) {
            return Err(Error::Diverged {
                epoch,
                detail: "parameters became non-finite; lower the learning rate".into(),
            });
        }
        let train_loss = mean_loss(theta, ds);
        let valid_loss = valid.map(|v| mean_loss(theta, v));
        if !train_loss.is_finite() || valid_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                detail: format!("loss is {train_loss}; lower the learning rate"),
            });
        }
        Ok(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
        })
    };

    let mut history = vec![record(0, &theta)?];
    let mut checkpoints = Vec::new();
    let mut best: Option<(f64, usize, BaseParams)> = None;
    let mut order: Vec<usize> = (0..ds.n()).collect();
    let mut grad = vec![0.0; p];
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                accumulate_grad(&theta, Instance::new(ds.row(i), ds.label(i)), scale, &mut grad);
            }
            if cfg.l2 > 0.0 {
                crate::linalg::axpy(cfg.l2, &theta.to_flat(), &mut grad);
            }
            theta.axpy_flat(-cfg.learning_rate, &grad);
        }
        let rec = record(epoch, &theta)?;
        if cfg.select_best {
            if let Some(v) = rec.valid_loss {
                if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                    best = Some((v, epoch, theta.clone()));
                }
            }
        }
        history.push(rec);
        if cfg.keep_checkpoints {
            checkpoints.push(theta.clone());
        }
    }
    let (params, best_epoch) = match best {
        Some((_, e, t)) => (t, e),
        None => (theta, cfg.epochs),
    };
    Ok(TrainOutcome {
        params,
        history,
        checkpoints,
        best_epoch,
    })
}
