use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub(crate) fn build(self, len: usize, lr: f64) -> Box<dyn Step + Send> {
        match self {
            Optimizer::Sgd => Box::new(Sgd { lr }),
            Optimizer::Adam => Box::new(Adam::new(len, lr)),
        }
    }
}

pub(crate) trait Step {
    fn step(&mut self, params: &mut [f64], grad: &[f64]);
}

struct Sgd {
    lr: f64,
}

impl Step for Sgd {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        crate::linalg::axpy(-self.lr, grad, params);
    }
}

/// Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

impl Step for Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.update(params, grad);
    }
}
