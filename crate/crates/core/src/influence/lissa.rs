//! Stochastic inverse Hessian-vector products.
//!
//! Truncated Neumann series `H⁻¹μ ≈ Σᵤ (I − H)ᵘ μ`, evaluated by the recursion
//! `hᵤ = μ + hᵤ₋₁ − c(H̃ᵤ + λI)hᵤ₋₁` with a freshly sampled mini-batch Hessian
//! `H̃ᵤ` at every step. The loss scale `c` keeps the spectrum of the iterated
//! operator inside `(0, 1]`; the estimate of `(H + λI)⁻¹μ` is `c·h`.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basenet::{second_order, BaseParams, Instance};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{axpy, norm, scale, sub};
use crate::rng::{stage_rng, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LissaConfig {
    /// Maximum recursion depth per repeat.
    pub depth: usize,
    pub damping: f64,
    /// Loss scale `c`; estimated by power iteration when unset.
    pub scale: Option<f64>,
    pub batch_size: usize,
    pub repeats: usize,
    /// Stop when `‖hᵤ − hᵤ₋w‖ ≤ tolerance·‖hᵤ‖` over a window of `w` steps.
    pub tolerance: f64,
    pub window: usize,
    pub power_iterations: usize,
    /// Extra attempts with ten times the damping after a divergence, used by
    /// [`feature_influence_retrying`](super::feature_influence_retrying).
    pub damping_retries: usize,
    pub seed: u64,
}

impl Default for LissaConfig {
    fn default() -> Self {
        Self {
            depth: 5000,
            damping: 0.01,
            scale: None,
            batch_size: 256,
            repeats: 4,
            tolerance: 1e-4,
            window: 50,
            power_iterations: 20,
            damping_retries: 3,
            seed: 0,
        }
    }
}

impl LissaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.repeats == 0 || self.batch_size == 0 || self.window == 0 {
            return Err(Error::InvalidArgument(
                "lissa depth, repeats, batch_size and window must be >= 1".into(),
            ));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::InvalidArgument("lissa damping must be >= 0".into()));
        }
        if let Some(c) = self.scale {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidArgument("lissa scale must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// A symmetric operator that can be applied on sub-samples of `n` instances.
pub trait HessianOperator: Sync {
    fn n_samples(&self) -> usize;
    fn dim(&self) -> usize;
    /// Mean Hessian over the instances in `batch`, applied to `v`.
    fn apply(&self, batch: &[usize], v: &[f64]) -> Vec<f64>;
}

/// Loss Hessian of a base network over a (reweighted) training set.
pub struct NetHessian<'a> {
    pub theta: &'a BaseParams,
    pub data: &'a Dataset,
}

impl HessianOperator for NetHessian<'_> {
    fn n_samples(&self) -> usize {
        self.data.n()
    }

    fn dim(&self) -> usize {
        self.theta.flat_dim()
    }

    fn apply(&self, batch: &[usize], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        if batch.is_empty() {
            return out;
        }
        let w = 1.0 / batch.len() as f64;
        for &i in batch {
            let z = Instance::new(self.data.row(i), self.data.label(i));
            second_order(self.theta, z, v, Some((&mut out, w)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LissaEstimate {
    /// Estimate of `(H + λI)⁻¹μ`.
    pub h: Vec<f64>,
    pub scale: f64,
    pub damping: f64,
    /// Steps taken by each repeat.
    pub steps: Vec<usize>,
}

fn sample_batch<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        (0..n).collect()
    } else {
        sample(rng, n, k).into_vec()
    }
}

/// Power-iteration estimate of the largest-magnitude eigenvalue of the damped
/// operator `H̃ + λI` on one sampled batch.
pub fn top_eigenvalue<O: HessianOperator + ?Sized>(op: &O, cfg: &LissaConfig) -> f64 {
    let mut rng = stage_rng(cfg.seed, Stage::Lissa, u64::MAX);
    let batch = sample_batch(&mut rng, op.n_samples(), cfg.batch_size);
    let mut v: Vec<f64> = (0..op.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let nv = norm(&v);
    scale(1.0 / nv, &mut v);
    let mut est = 0.0;
    for _ in 0..cfg.power_iterations.max(1) {
        let mut w = op.apply(&batch, &v);
        axpy(cfg.damping, &v, &mut w);
        est = norm(&w);
        if est == 0.0 || !est.is_finite() {
            break;
        }
        v = w;
        scale(1.0 / est, &mut v);
    }
    est
}

/// The loss scale used when none is configured: `1 / (10·L̂)`.
pub fn auto_scale<O: HessianOperator + ?Sized>(op: &O, cfg: &LissaConfig) -> f64 {
    match cfg.scale {
        Some(c) => c,
        None => {
            let top = top_eigenvalue(op, cfg);
            if top > 0.0 && top.is_finite() {
                1.0 / (10.0 * top)
            } else {
                1.0
            }
        }
    }
}

/// Averaged stochastic estimate of `(H + λI)⁻¹μ`.
pub fn inverse_hvp<O: HessianOperator + ?Sized>(
    op: &O,
    mu: &[f64],
    cfg: &LissaConfig,
) -> Result<LissaEstimate> {
    cfg.validate()?;
    if mu.len() != op.dim() {
        return Err(Error::Shape(format!(
            "right-hand side has {} entries, operator has dimension {}",
            mu.len(),
            op.dim()
        )));
    }
    if !crate::linalg::all_finite(mu) {
        return Err(Error::NonFinite("inverse-HVP right-hand side".into()));
    }
    let mu_norm = norm(mu);
    if mu_norm == 0.0 {
        return Ok(LissaEstimate {
            h: vec![0.0; mu.len()],
            scale: cfg.scale.unwrap_or(1.0),
            damping: cfg.damping,
            steps: vec![0; cfg.repeats],
        });
    }
    let c = auto_scale(op, cfg);
    // ‖Σ_{k≤u}(I − cA)ᵏμ‖ ≤ ‖μ‖·min(u + 1, 1/(cλ)) for a convergent recursion.
    let damped_cap = if cfg.damping > 0.0 {
        1.0 / (c * cfg.damping)
    } else {
        f64::INFINITY
    };

    let mut total = vec![0.0; mu.len()];
    let mut steps = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let mut rng = stage_rng(cfg.seed, Stage::Lissa, r as u64);
        let mut h = mu.to_vec();
        let mut snapshot = h.clone();
        let mut over = 0usize;
        let mut taken = cfg.depth;
        for u in 1..=cfg.depth {
            let batch = sample_batch(&mut rng, op.n_samples(), cfg.batch_size);
            let hv = op.apply(&batch, &h);
            for ((hi, m), a) in h.iter_mut().zip(mu).zip(&hv) {
                *hi = m + *hi - c * (a + cfg.damping * *hi);
            }
            let hn = norm(&h);
            if !hn.is_finite() {
                return Err(Error::LissaDiverged { steps: u, norm: hn });
            }
            let bound = 10.0 * mu_norm * ((u + 1) as f64).min(damped_cap);
            over = if hn >= bound { over + 1 } else { 0 };
            if over >= 10 {
                return Err(Error::LissaDiverged { steps: u, norm: hn });
            }
            if u % cfg.window == 0 {
                if norm(&sub(&h, &snapshot)) <= cfg.tolerance * hn {
                    taken = u;
                    break;
                }
                snapshot.copy_from_slice(&h);
            }
        }
        steps.push(taken);
        axpy(c / cfg.repeats as f64, &h, &mut total);
    }
    Ok(LissaEstimate {
        h: total,
        scale: c,
        damping: cfg.damping,
        steps,
    })
}
