//! Feature-level influence functions.
//!
//! For a pretrained `θ̂`, the influence of feature `k` of training row `i` on
//! the total validation loss is
//!
//! ```text
//! φᵢ = −[Σⱼ ∇_θ l(pⱼ⊙xⱼ, yⱼ, θ̂)]ᵀ (H(p) + λI)⁻¹ ∇ₓ∇_θ l(pᵢ⊙xᵢ, yᵢ, θ̂)
//! ```
//!
//! computed in three steps: the summed validation gradient `μ`, one
//! stochastic inverse-HVP `h = (H + λI)⁻¹μ`, then per training row the input
//! gradient of `hᵀ∇_θ l`.

mod lissa;
mod oracle;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use lissa::{
    auto_scale, inverse_hvp, top_eigenvalue, HessianOperator, LissaConfig, LissaEstimate,
    NetHessian,
};
pub use oracle::{optimal_perturbation, oracle_mask, oracle_masks, predict_loss_change};

use crate::basenet::{grad_theta, mixed_vjp, BaseParams, Instance};
use crate::dataset::{apply_reweight, Dataset};
use crate::error::{Error, Result};

/// Per-feature influence `φᵢ` of training row `index` on the validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceVector {
    pub index: usize,
    pub values: Vec<f64>,
}

fn reweighted(ds: &Dataset, weights: Option<&Array2<f64>>) -> Result<Option<Dataset>> {
    weights.map(|w| apply_reweight(ds, w)).transpose()
}

/// `μ = Σⱼ ∇_θ l(pⱼ⊙xⱼ, yⱼ, θ̂)`; `None` weights mean all ones.
pub fn validation_grad(
    theta: &BaseParams,
    valid: &Dataset,
    weights: Option<&Array2<f64>>,
) -> Result<Vec<f64>> {
    if valid.n() == 0 {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    let rw = reweighted(valid, weights)?;
    let ds = rw.as_ref().unwrap_or(valid);
    Ok(summed_grad(theta, ds))
}

fn summed_grad(theta: &BaseParams, ds: &Dataset) -> Vec<f64> {
    // Fixed-size chunks reduced in order keep the sum independent of thread count.
    let partials: Vec<Vec<f64>> = (0..ds.n())
        .collect::<Vec<_>>()
        .par_chunks(256)
        .map(|chunk| {
            let mut g = vec![0.0; theta.flat_dim()];
            for &j in chunk {
                crate::basenet::accumulate_grad(
                    theta,
                    Instance::new(ds.row(j), ds.label(j)),
                    1.0,
                    &mut g,
                );
            }
            g
        })
        .collect();
    let mut mu = vec![0.0; theta.flat_dim()];
    for p in partials {
        crate::linalg::axpy(1.0, &p, &mut mu);
    }
    mu
}

/// Estimate `(H_θ̂(P) + λI)⁻¹μ` over the reweighted training set.
pub fn lissa_inverse_hvp(
    theta: &BaseParams,
    train: &Dataset,
    weights: Option<&Array2<f64>>,
    mu: &[f64],
    cfg: &LissaConfig,
) -> Result<LissaEstimate> {
    let rw = reweighted(train, weights)?;
    let data = rw.as_ref().unwrap_or(train);
    inverse_hvp(&NetHessian { theta, data }, mu, cfg)
}

/// `φ(zᵢ, zⱼ) = −∇_θ l(zⱼ)ᵀ (H + λI)⁻¹ ∇ₓ∇_θ l(zᵢ)`, with the Hessian taken
/// over `train`.
pub fn influence_pair(
    theta: &BaseParams,
    train: &Dataset,
    zi: Instance,
    zj: Instance,
    cfg: &LissaConfig,
) -> Result<Vec<f64>> {
    let g = grad_theta(theta, zj);
    let est = lissa_inverse_hvp(theta, train, None, &g, cfg)?;
    Ok(negated(mixed_vjp(theta, zi, &est.h)))
}

fn negated(mut v: Vec<f64>) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x = -*x);
    v
}

/// Influence vectors for every training row, plus the shared inverse-HVP.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureInfluence {
    pub vectors: Vec<InfluenceVector>,
    pub estimate: LissaEstimate,
}

impl FeatureInfluence {
    pub fn matrix(&self) -> Array2<f64> {
        influence_matrix(&self.vectors)
    }
}

pub fn influence_matrix(vectors: &[InfluenceVector]) -> Array2<f64> {
    let d = vectors.first().map_or(0, |v| v.values.len());
    let flat: Vec<f64> = vectors.iter().flat_map(|v| v.values.iter().copied()).collect();
    Array2::from_shape_vec((vectors.len(), d), flat).expect("influence vectors share a length")
}

/// `φᵢ` for every training row after reweighting train and valid by their
/// selection probabilities (`None` = all ones).
pub fn feature_influence(
    theta: &BaseParams,
    train: &Dataset,
    valid: &Dataset,
    p_train: Option<&Array2<f64>>,
    p_valid: Option<&Array2<f64>>,
    cfg: &LissaConfig,
) -> Result<FeatureInfluence> {
    let rw_train = reweighted(train, p_train)?;
    let train_rw = rw_train.as_ref().unwrap_or(train);
    let mu = validation_grad(theta, valid, p_valid)?;
    let estimate = inverse_hvp(
        &NetHessian {
            theta,
            data: train_rw,
        },
        &mu,
        cfg,
    )?;
    let vectors: Vec<InfluenceVector> = (0..train_rw.n())
        .into_par_iter()
        .map(|i| InfluenceVector {
            index: i,
            values: negated(mixed_vjp(
                theta,
                Instance::new(train_rw.row(i), train_rw.label(i)),
                &estimate.h,
            )),
        })
        .collect();
    if vectors
        .iter()
        .any(|v| !crate::linalg::all_finite(&v.values))
    {
        return Err(Error::NonFinite("influence vectors".into()));
    }
    Ok(FeatureInfluence { vectors, estimate })
}

/// [`feature_influence`], retried with ten times the damping (0.01 when
/// undamped) after each divergence, up to `cfg.damping_retries` times. The
/// damping finally used is in `estimate.damping`.
pub fn feature_influence_retrying(
    theta: &BaseParams,
    train: &Dataset,
    valid: &Dataset,
    p_train: Option<&Array2<f64>>,
    p_valid: Option<&Array2<f64>>,
    cfg: &LissaConfig,
) -> Result<FeatureInfluence> {
    let mut attempt = cfg.clone();
    let mut left = cfg.damping_retries;
    loop {
        match feature_influence(theta, train, valid, p_train, p_valid, &attempt) {
            Err(Error::LissaDiverged { steps, norm }) if left > 0 => {
                let next = if attempt.damping > 0.0 { attempt.damping * 10.0 } else { 0.01 };
                log::warn!(
                    "inverse HVP diverged after {steps} steps (|h| = {norm:.3e}); retrying with damping {next}"
                );
                attempt.damping = next;
                left -= 1;
            }
            other => return other,
        }
    }
}

/// Write an influence dump: a `#` line naming the inverse-HVP settings, a
/// header of feature names, then one row of `d` values per training row.
pub fn write_influence_csv(
    path: &Path,
    vectors: &[InfluenceVector],
    feature_names: &[String],
    cfg: &LissaConfig,
    scale: f64,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "# lissa depth={} damping={} scale={} batch_size={} repeats={} tolerance={} window={} seed={}",
        cfg.depth,
        cfg.damping,
        scale,
        cfg.batch_size,
        cfg.repeats,
        cfg.tolerance,
        cfg.window,
        cfg.seed
    )
    .map_err(io)?;
    writeln!(w, "{}", feature_names.join(",")).map_err(io)?;
    for v in vectors {
        let row: Vec<String> = v.values.iter().map(|x| format!("{x:e}")).collect();
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_influence_csv(path: &Path) -> Result<Vec<InfluenceVector>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.starts_with('#') || line_no <= 1 {
            continue;
        }
        let values = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Schema(format!("influence line {line_no}: bad value `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(InfluenceVector {
            index: out.len(),
            values,
        });
    }
    Ok(out)
}
