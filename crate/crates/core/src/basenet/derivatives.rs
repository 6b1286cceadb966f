use super::BaseParams;
use crate::linalg::{sigmoid, softplus};

/// Probability clamp used by [`loss`].
pub const LOSS_EPS: f64 = 1e-12;

/// One labelled row.
#[derive(Debug, Clone, Copy)]
pub struct Instance<'a> {
    pub x: &'a [f64],
    pub y: u8,
}

impl<'a> Instance<'a> {
    pub fn new(x: &'a [f64], y: u8) -> Self {
        debug_assert!(y <= 1);
        Self { x, y }
    }
}

/// Layer inputs and pre-activations recorded during a forward pass.
struct Tape {
    /// `inputs[l]` is the input of layer `l`; `inputs[0]` is `x`.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Tape {
    fn record(theta: &BaseParams, x: &[f64]) -> Self {
        let last = theta.layers.len() - 1;
        let mut inputs = Vec::with_capacity(theta.layers.len());
        let mut pre = Vec::with_capacity(theta.layers.len());
        inputs.push(x.to_vec());
        for (l, layer) in theta.layers.iter().enumerate() {
            let a = layer.affine(&inputs[l]);
            if l < last {
                inputs.push(a.iter().map(|v| v.max(0.0)).collect());
            }
            pre.push(a);
        }
        Self { inputs, pre }
    }

    fn logit(&self) -> f64 {
        self.pre.last().expect("at least one layer")[0]
    }
}

#[inline]
fn relu_gate(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `Wᵀ·delta` for a row-major `outputs × inputs` matrix.
fn transpose_mul(w: &[f64], inputs: usize, delta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; inputs];
    for (row, d) in w.chunks_exact(inputs).zip(delta) {
        if *d == 0.0 {
            continue;
        }
        for (o, wi) in out.iter_mut().zip(row) {
            *o += wi * d;
        }
    }
    out
}

fn bce_from_logit(z: f64, y: u8) -> f64 {
    // ln ŷ = -softplus(-z), ln(1-ŷ) = -softplus(z); clamping ŷ to
    // [ε, 1-ε] caps each term at -ln ε.
    let cap = -LOSS_EPS.ln();
    if y == 1 {
        softplus(-z).min(cap)
    } else {
        softplus(z).min(cap)
    }
}

/// Binary cross-entropy without any regularisation.
pub fn loss(theta: &BaseParams, z: Instance) -> f64 {
    bce_from_logit(theta.logit(z.x), z.y)
}

/// Back-propagate `dz = ∂l/∂logit`; accumulate `scale·∇_θ` into `grad` when
/// given and return `∇ₓ`.
fn backward(theta: &BaseParams, tape: &Tape, dz: f64, grad: Option<(&mut [f64], f64)>) -> Vec<f64> {
    let offsets = theta.offsets();
    let mut grad = grad;
    let mut delta = vec![dz];
    for l in (0..theta.layers.len()).rev() {
        let layer = &theta.layers[l];
        let input = &tape.inputs[l];
        if let Some((g, scale)) = grad.as_mut() {
            let base = offsets[l];
            let nw = layer.weights.len();
            for (o, d) in delta.iter().enumerate() {
                let sd = *scale * d;
                if sd != 0.0 {
                    let row = &mut g[base + o * layer.inputs..base + (o + 1) * layer.inputs];
                    for (gi, xi) in row.iter_mut().zip(input) {
                        *gi += sd * xi;
                    }
                }
                g[base + nw + o] += sd;
            }
        }
        let back = transpose_mul(&layer.weights, layer.inputs, &delta);
        if l == 0 {
            return back;
        }
        delta = back
            .iter()
            .zip(&tape.pre[l - 1])
            .map(|(b, a)| b * relu_gate(*a))
            .collect();
    }
    unreachable!("loop returns at the first layer")
}

/// Loss, `∇_θ l` and `∇ₓ l` in one pass.
pub fn loss_grad(theta: &BaseParams, z: Instance) -> (f64, Vec<f64>, Vec<f64>) {
    let tape = Tape::record(theta, z.x);
    let logit = tape.logit();
    let mut g = vec![0.0; theta.flat_dim()];
    let gx = backward(theta, &tape, sigmoid(logit) - z.y as f64, Some((&mut g, 1.0)));
    (bce_from_logit(logit, z.y), g, gx)
}

/// Accumulate `scale·∇_θ l(z)` into `grad` and return the loss.
pub(crate) fn accumulate_grad(theta: &BaseParams, z: Instance, scale: f64, grad: &mut [f64]) -> f64 {
    let tape = Tape::record(theta, z.x);
    let logit = tape.logit();
    backward(theta, &tape, sigmoid(logit) - z.y as f64, Some((grad, scale)));
    bce_from_logit(logit, z.y)
}

pub fn grad_theta(theta: &BaseParams, z: Instance) -> Vec<f64> {
    let mut g = vec![0.0; theta.flat_dim()];
    accumulate_grad(theta, z, 1.0, &mut g);
    g
}

pub fn grad_x(theta: &BaseParams, z: Instance) -> Vec<f64> {
    let tape = Tape::record(theta, z.x);
    backward(theta, &tape, sigmoid(tape.logit()) - z.y as f64, None)
}

/// Forward-over-reverse pass along the parameter direction `v`.
///
/// Returns `∇ₓ(vᵀ∇_θ l)` and, when `hv` is given, accumulates `scale·∇²_θ l·v`
/// into it. Both are the directional derivative `d/dε` of the reverse-mode
/// gradients at `θ + εv`.
pub fn second_order(
    theta: &BaseParams,
    z: Instance,
    v: &[f64],
    hv: Option<(&mut [f64], f64)>,
) -> Vec<f64> {
    debug_assert_eq!(v.len(), theta.flat_dim());
    let offsets = theta.offsets();
    let tape = Tape::record(theta, z.x);
    let n_layers = theta.layers.len();

    // Forward tangents: r_inputs[l] = R{input of layer l}, r_pre[l] = R{pre-activation}.
    let mut r_inputs: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    r_inputs.push(vec![0.0; z.x.len()]);
    let mut r_pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    for (l, layer) in theta.layers.iter().enumerate() {
        let vw = &v[offsets[l]..offsets[l] + layer.weights.len()];
        let vb = &v[offsets[l] + layer.weights.len()..offsets[l] + layer.len()];
        let input = &tape.inputs[l];
        let r_in = &r_inputs[l];
        let ra: Vec<f64> = (0..layer.outputs)
            .map(|o| {
                let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let dw = &vw[o * layer.inputs..(o + 1) * layer.inputs];
                let mut s = vb[o];
                for i in 0..layer.inputs {
                    s += w[i] * r_in[i] + dw[i] * input[i];
                }
                s
            })
            .collect();
        if l + 1 < n_layers {
            r_inputs.push(
                ra.iter()
                    .zip(&tape.pre[l])
                    .map(|(r, a)| r * relu_gate(*a))
                    .collect(),
            );
        }
        r_pre.push(ra);
    }

    let yhat = sigmoid(tape.logit());
    let mut delta = vec![yhat - z.y as f64];
    let mut r_delta = vec![yhat * (1.0 - yhat) * r_pre[n_layers - 1][0]];
    let mut hv = hv;
    for l in (0..n_layers).rev() {
        let layer = &theta.layers[l];
        let input = &tape.inputs[l];
        let r_in = &r_inputs[l];
        if let Some((h, scale)) = hv.as_mut() {
            let base = offsets[l];
            let nw = layer.weights.len();
            for o in 0..layer.outputs {
                let (d, rd) = (delta[o], r_delta[o]);
                let row = &mut h[base + o * layer.inputs..base + (o + 1) * layer.inputs];
                for i in 0..layer.inputs {
                    row[i] += *scale * (rd * input[i] + d * r_in[i]);
                }
                h[base + nw + o] += *scale * rd;
            }
        }
        let vw = &v[offsets[l]..offsets[l] + layer.weights.len()];
        let back = transpose_mul(&layer.weights, layer.inputs, &delta);
        let mut r_back = transpose_mul(vw, layer.inputs, &delta);
        for (rb, t) in r_back
            .iter_mut()
            .zip(transpose_mul(&layer.weights, layer.inputs, &r_delta))
        {
            *rb += t;
        }
        if l == 0 {
            return r_back;
        }
        let gate: Vec<f64> = tape.pre[l - 1].iter().map(|a| relu_gate(*a)).collect();
        delta = back.iter().zip(&gate).map(|(b, g)| b * g).collect();
        r_delta = r_back.iter().zip(&gate).map(|(b, g)| b * g).collect();
    }
    unreachable!("loop returns at the first layer")
}

/// Mean per-instance loss Hessian over `batch`, applied to `v`.
pub fn hvp(theta: &BaseParams, batch: &[Instance], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; theta.flat_dim()];
    if batch.is_empty() {
        return out;
    }
    let scale = 1.0 / batch.len() as f64;
    for z in batch {
        second_order(theta, *z, v, Some((&mut out, scale)));
    }
    out
}

/// `∇ₓ(vᵀ∇_θ l(z, θ))`.
pub fn mixed_vjp(theta: &BaseParams, z: Instance, v: &[f64]) -> Vec<f64> {
    second_order(theta, z, v, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, sub};
    use rand::Rng;

    fn logistic(w: &[f64], b: f64) -> BaseParams {
        let mut m = BaseParams::init(w.len(), &[], 0).unwrap();
        m.layers[0].weights.copy_from_slice(w);
        m.layers[0].bias[0] = b;
        m
    }

    #[test]
    fn loss_closed_forms() {
        let m = logistic(&[0.0, 0.0], 0.0);
        let z = Instance::new(&[0.3, 0.4], 1);
        assert!((loss(&m, z) - 2f64.ln()).abs() < 1e-15);
        let confident = logistic(&[0.0, 0.0], 60.0);
        assert!(loss(&confident, z) < 1e-20);
        let wrong = logistic(&[0.0, 0.0], -60.0);
        assert!((loss(&wrong, z) - (-LOSS_EPS.ln())).abs() < 1e-9);
    }

    #[test]
    fn dead_rectifiers_zero_the_input_gradient() {
        let mut m = BaseParams::init(3, &[2], 1).unwrap();
        // every hidden unit has a large negative bias → all dead
        m.layers[0].bias = vec![-100.0, -100.0];
        let g = grad_x(&m, Instance::new(&[0.5, 0.5, 0.5], 1));
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logistic_hessian_matches_closed_form() {
        let mut rng = crate::rng::rng_from_seed(3);
        let d = 4;
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = logistic(&w, 0.2);
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect();
        let batch: Vec<Instance> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Instance::new(x, (i % 2) as u8))
            .collect();
        let v: Vec<f64> = (0..=d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = hvp(&m, &batch, &v);
        let mut expect = vec![0.0; d + 1];
        for z in &batch {
            let xt: Vec<f64> = z.x.iter().copied().chain([1.0]).collect();
            let p = m.predict(z.x);
            let c = p * (1.0 - p) * dot(&xt, &v) / batch.len() as f64;
            for (e, xi) in expect.iter_mut().zip(&xt) {
                *e += c * xi;
            }
        }
        assert!(sub(&got, &expect).iter().all(|e| e.abs() <= 1e-12));
    }

    #[test]
    fn logistic_mixed_contraction_matches_closed_form() {
        let w = [0.4, -0.7, 0.25];
        let m = logistic(&w, -0.1);
        let x = [0.2, 0.9, 0.5];
        let v = [0.3, 0.1, -0.6, 0.8];
        for y in [0u8, 1] {
            let p = m.predict(&x);
            let vx = v[0] * x[0] + v[1] * x[1] + v[2] * x[2] + v[3];
            let expect: Vec<f64> = (0..3)
                .map(|k| (p - y as f64) * v[k] + p * (1.0 - p) * vx * w[k])
                .collect();
            let got = mixed_vjp(&m, Instance::new(&x, y), &v);
            assert!(sub(&got, &expect).iter().all(|e| e.abs() <= 1e-12));
        }
    }

    #[test]
    fn zero_direction_gives_zero() {
        let m = BaseParams::init(3, &[4, 3], 2).unwrap();
        let z = Instance::new(&[0.1, 0.2, 0.3], 0);
        let v = vec![0.0; m.flat_dim()];
        assert!(hvp(&m, &[z], &v).iter().all(|&h| h == 0.0));
        assert!(mixed_vjp(&m, z, &v).iter().all(|&h| h == 0.0));
    }
}
