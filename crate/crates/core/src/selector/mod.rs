//! Self-attention feature selector and its influence-weighted training loop.

mod attention;
mod joint;
mod network;
mod optim;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use attention::{attention, attention_weights, softmax_rows};
pub use joint::{train_joint, JointOutcome};
pub use network::{probs_from_scores, SelectorDims, SelectorDocument, SelectorParams, Tensor};
pub use optim::{Adam, Optimizer};

use crate::basenet::BaseParams;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::influence::{feature_influence_retrying, LissaConfig};
use crate::rng::{derive_seed, rng_from_seed, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempSchedule {
    pub tau_min: f64,
    pub t_max: usize,
}

/// `τ = max(τ_min, 1 − (1 − τ_min)·t/t_max)`.
pub fn temperature(t: usize, sched: TempSchedule) -> f64 {
    if t >= sched.t_max {
        return sched.tau_min;
    }
    // written around τ_min so both endpoints are exact in floating point
    let rest = 1.0 - t as f64 / sched.t_max as f64;
    (sched.tau_min + (1.0 - sched.tau_min) * rest).max(sched.tau_min)
}

/// `(1/n)·Σᵢ φᵢ·(pᵢ ⊙ 1(xᵢ))`.
pub fn selection_loss(phi: &Array2<f64>, p: &Array2<f64>, x: &Array2<f64>) -> f64 {
    assert_eq!(phi.dim(), p.dim(), "influence and probability shapes differ");
    assert_eq!(phi.dim(), x.dim(), "influence and feature shapes differ");
    let n = phi.nrows();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = phi
        .iter()
        .zip(p.iter())
        .zip(x.iter())
        .filter(|(_, &xk)| xk != 0.0)
        .map(|((f, pk), _)| f * pk)
        .sum();
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub gate_hidden: usize,
    pub tau_min: f64,
    /// Epoch count and annealing horizon.
    pub t_max: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Stop once the relative change of the epoch loss stays below this for
    /// `plateau_patience` epochs; 0 disables.
    pub plateau_tolerance: f64,
    pub plateau_patience: usize,
    pub seed: u64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            heads: 2,
            gate_hidden: 64,
            tau_min: 1e-3,
            t_max: 30,
            learning_rate: 1e-2,
            batch_size: 256,
            optimizer: Optimizer::Adam,
            plateau_tolerance: 0.0,
            plateau_patience: 3,
            seed: 0,
        }
    }
}

impl SelectorConfig {
    pub fn dims(&self, features: usize) -> SelectorDims {
        SelectorDims {
            features,
            embed_dim: self.embed_dim,
            heads: self.heads,
            gate_hidden: self.gate_hidden,
        }
    }

    pub fn schedule(&self) -> TempSchedule {
        TempSchedule {
            tau_min: self.tau_min,
            t_max: self.t_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min > 0.0 && self.tau_min <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau_min must lie in (0, 1], got {}",
                self.tau_min
            )));
        }
        if self.t_max == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("t_max and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("selector learning_rate must be > 0".into()));
        }
        if self.tau_min < 1e-3 {
            log::warn!("tau_min {} below 1e-3", self.tau_min);
        }
        self.dims(1).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorEpoch {
    pub epoch: usize,
    pub tau: f64,
    /// Selection loss after the epoch's updates, under that epoch's `φ`.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorOutcome {
    pub params: SelectorParams,
    pub trace: Vec<SelectorEpoch>,
    /// `φ` used in the last epoch.
    pub influence: Array2<f64>,
    /// LiSSA loss scale behind the last `φ`, when it came from LiSSA.
    pub influence_scale: Option<f64>,
    /// Largest damping any epoch needed after divergence retries.
    pub influence_damping: Option<f64>,
}

/// Mean gradient of `Σₖ gᵢₖ·pᵢₖ` over `rows`, reduced in a fixed order.
pub(crate) fn batch_prob_grad(
    w: &SelectorParams,
    x: &Array2<f64>,
    d_prob: &Array2<f64>,
    rows: &[usize],
    tau: f64,
) -> Vec<f64> {
    const CHUNK: usize = 16;
    let scale = 1.0 / rows.len() as f64;
    let partials: Vec<Vec<f64>> = rows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; w.len()];
            for &i in chunk {
                w.accumulate_prob_grad(
                    x.row(i).as_slice().expect("row-major data"),
                    tau,
                    d_prob.row(i).as_slice().expect("row-major influence"),
                    scale,
                    &mut g,
                );
            }
            g
        })
        .collect();
    let mut grad = vec![0.0; w.len()];
    for part in partials {
        grad.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
    }
    grad
}

/// Selector training with a caller-supplied influence source.
///
/// `influence(t, p_train, p_valid)` returns `φ` for epoch `t`; it is held
/// fixed while the epoch's mini-batches descend the selection loss.
pub fn train_selector_with<F>(
    train: &Dataset,
    valid: &Dataset,
    cfg: &SelectorConfig,
    mut influence: F,
) -> Result<SelectorOutcome>
where
    F: FnMut(usize, &Array2<f64>, &Array2<f64>) -> Result<Array2<f64>>,
{
    cfg.validate()?;
    if train.n() == 0 {
        return Err(Error::InvalidArgument("selector needs training rows".into()));
    }
    if valid.d() != train.d() {
        return Err(Error::Shape("train and valid widths differ".into()));
    }
    let mut w = SelectorParams::init(cfg.dims(train.d()), derive_seed(cfg.seed, Stage::Selector, 0))?;
    let mut opt = cfg.optimizer.build(w.len(), cfg.learning_rate);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, Stage::Selector, 1));
    let sched = cfg.schedule();
    let mut order: Vec<usize> = (0..train.n()).collect();
    let mut trace = Vec::with_capacity(cfg.t_max);
    let mut phi = Array2::zeros(train.x.raw_dim());
    let mut flat = 0;
    for t in 0..cfg.t_max {
        let tau = temperature(t, sched);
        let p_train = w.select_prob_matrix(&train.x, tau);
        let p_valid = w.select_prob_matrix(&valid.x, tau);
        phi = influence(t, &p_train, &p_valid)?;
        if phi.dim() != train.x.dim() {
            return Err(Error::Shape(format!(
                "influence matrix {:?} does not match training data {:?}",
                phi.dim(),
                train.x.dim()
            )));
        }
        order.shuffle(&mut rng);
        for rows in order.chunks(cfg.batch_size) {
            let grad = batch_prob_grad(&w, &train.x, &phi, rows, tau);
            opt.step(&mut w.values, &grad);
        }
        let loss = selection_loss(&phi, &w.select_prob_matrix(&train.x, tau), &train.x);
        if !loss.is_finite() || !w.all_finite() {
            return Err(Error::Diverged {
                epoch: t,
                detail: format!("selection loss {loss}"),
            });
        }
        log::debug!("selector epoch {t}: tau {tau:.4} loss {loss:.6e}");
        if let Some(prev) = trace.last().map(|e: &SelectorEpoch| e.loss) {
            let rel = (loss - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            flat = if cfg.plateau_tolerance > 0.0 && rel <= cfg.plateau_tolerance {
                flat + 1
            } else {
                0
            };
        }
        trace.push(SelectorEpoch { epoch: t, tau, loss });
        if cfg.plateau_patience > 0 && flat >= cfg.plateau_patience {
            log::info!("selector loss plateaued after epoch {t}");
            break;
        }
    }
    Ok(SelectorOutcome {
        params: w,
        trace,
        influence: phi,
        influence_scale: None,
        influence_damping: None,
    })
}

/// Train the selector against feature-level influence under the pretrained
/// base model `theta`, refreshing `φ` once per epoch.
pub fn train_selector(
    theta: &BaseParams,
    train: &Dataset,
    valid: &Dataset,
    cfg: &SelectorConfig,
    lissa: &LissaConfig,
) -> Result<SelectorOutcome> {
    lissa.validate()?;
    let mut scale = None;
    let mut damping = lissa.damping;
    let mut out = train_selector_with(train, valid, cfg, |t, p_train, p_valid| {
        let epoch_cfg = LissaConfig {
            seed: derive_seed(lissa.seed, Stage::Lissa, t as u64),
            ..lissa.clone()
        };
        let fi = feature_influence_retrying(
            theta,
            train,
            valid,
            Some(p_train),
            Some(p_valid),
            &epoch_cfg,
        )?;
        scale = Some(fi.estimate.scale);
        damping = damping.max(fi.estimate.damping);
        Ok(fi.matrix())
    })?;
    out.influence_scale = scale;
    out.influence_damping = Some(damping);
    Ok(out)
}
