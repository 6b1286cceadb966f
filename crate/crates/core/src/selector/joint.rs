//! Joint training of selector and base network on training cross-entropy,
//! without any influence signal.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{temperature, SelectorConfig, SelectorEpoch, SelectorParams};
use crate::basenet::{loss_grad, BaseParams, Instance, TrainConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Stage};

#[derive(Debug, Clone, PartialEq)]
pub struct JointOutcome {
    pub selector: SelectorParams,
    pub base: BaseParams,
    /// Mean training cross-entropy through `p ⊙ x` after each epoch.
    pub trace: Vec<SelectorEpoch>,
}

/// Minimise `mean l(θ; p(x,ω) ⊙ x, y)` over `θ` (SGD with L2, `base` settings)
/// and `ω` (selector optimiser) for `sel.t_max` annealed epochs.
pub fn train_joint(train: &Dataset, base: &TrainConfig, sel: &SelectorConfig) -> Result<JointOutcome> {
    base.validate()?;
    sel.validate()?;
    if train.n() == 0 {
        return Err(Error::InvalidArgument("joint training needs rows".into()));
    }
    let mut theta = BaseParams::init(train.d(), &base.hidden(), base.seed)?;
    let mut w = SelectorParams::init(sel.dims(train.d()), derive_seed(sel.seed, Stage::Selector, 0))?;
    let mut opt = sel.optimizer.build(w.len(), sel.learning_rate);
    let mut rng = rng_from_seed(derive_seed(sel.seed, Stage::Ablation, 1));
    let mut order: Vec<usize> = (0..train.n()).collect();
    let mut trace = Vec::with_capacity(sel.t_max);
    for t in 0..sel.t_max {
        let tau = temperature(t, sel.schedule());
        order.shuffle(&mut rng);
        for rows in order.chunks(base.batch_size) {
            let (g_theta, g_omega) = joint_grad(&theta, &w, train, rows, tau);
            let mut g_theta = g_theta;
            if base.l2 > 0.0 {
                crate::linalg::axpy(base.l2, &theta.to_flat(), &mut g_theta);
            }
            theta.axpy_flat(-base.learning_rate, &g_theta);
            opt.step(&mut w.values, &g_omega);
        }
        let p = w.select_prob_matrix(&train.x, tau);
        let loss = masked_loss(&theta, train, &p);
        if !loss.is_finite() || !w.all_finite() {
            return Err(Error::Diverged {
                epoch: t,
                detail: format!("joint training loss {loss}"),
            });
        }
        trace.push(SelectorEpoch { epoch: t, tau, loss });
    }
    Ok(JointOutcome {
        selector: w,
        base: theta,
        trace,
    })
}

fn joint_grad(
    theta: &BaseParams,
    w: &SelectorParams,
    ds: &Dataset,
    rows: &[usize],
    tau: f64,
) -> (Vec<f64>, Vec<f64>) {
    let scale = 1.0 / rows.len() as f64;
    let partials: Vec<(Vec<f64>, Vec<f64>)> = rows
        .par_chunks(16)
        .map(|chunk| {
            let mut gt = vec![0.0; theta.flat_dim()];
            let mut gw = vec![0.0; w.len()];
            for &i in chunk {
                let x = ds.row(i);
                let fw = w.forward(x);
                let p = super::probs_from_scores(fw.scores.as_slice().unwrap(), x, tau);
                let xp: Vec<f64> = p.iter().zip(x).map(|(a, b)| a * b).collect();
                let (_, g_t, g_x) = loss_grad(theta, Instance::new(&xp, ds.label(i)));
                crate::linalg::axpy(scale, &g_t, &mut gt);
                let d_prob: Vec<f64> = g_x.iter().zip(x).map(|(g, xk)| g * xk).collect();
                let d_scores = super::network::prob_to_score_grad(
                    fw.scores.as_slice().unwrap(),
                    x,
                    tau,
                    &d_prob,
                    scale,
                );
                w.backward_scores(x, &fw, &d_scores, &mut gw);
            }
            (gt, gw)
        })
        .collect();
    let mut gt = vec![0.0; theta.flat_dim()];
    let mut gw = vec![0.0; w.len()];
    for (a, b) in partials {
        gt.iter_mut().zip(&a).for_each(|(s, v)| *s += v);
        gw.iter_mut().zip(&b).for_each(|(s, v)| *s += v);
    }
    (gt, gw)
}

fn masked_loss(theta: &BaseParams, ds: &Dataset, p: &Array2<f64>) -> f64 {
    let total: f64 = (0..ds.n())
        .into_par_iter()
        .map(|i| {
            let xp: Vec<f64> = ds.row(i).iter().zip(p.row(i)).map(|(a, b)| a * b).collect();
            crate::basenet::loss(theta, Instance::new(&xp, ds.label(i)))
        })
        .sum();
    total / ds.n() as f64
}
