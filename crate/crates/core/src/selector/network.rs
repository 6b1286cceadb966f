//! Selector parameters, forward pass and reverse pass.
//!
//! Per row: `Z = diag(x)·Emb`, per-head attention over `Z·Wq/k/vₐ`,
//! `E = [head₁ … head_h]·Wᴼ`, then a one-hidden-layer rectifier gate
//! `f = W₂·relu(W₁·vec(E) + b₁) + b₂` and `p = σ(f/τ) ⊙ 1(x > 0)`.

use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attention::{head_backward, head_block, head_forward, HeadCache};
use crate::basenet::{load_json, save_json, ModelFile};
use crate::error::{Error, Result};
use crate::linalg::sigmoid;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectorDims {
    /// Number of input features `d`.
    pub features: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub gate_hidden: usize,
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub embedding: Range<usize>,
    pub wq: Vec<Range<usize>>,
    pub wk: Vec<Range<usize>>,
    pub wv: Vec<Range<usize>>,
    pub wo: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub len: usize,
}

impl SelectorDims {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.features == 0 || self.embed_dim == 0 || self.heads == 0 || self.gate_hidden == 0 {
            return Err(Error::InvalidArgument("selector dimensions must be >= 1".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "embedding width {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> Layout {
        let (d, k, g) = (self.features, self.embed_dim, self.gate_hidden);
        let w = self.head_dim();
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let embedding = take(d * k);
        let (mut wq, mut wk, mut wv) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..self.heads {
            wq.push(take(k * w));
            wk.push(take(k * w));
            wv.push(take(k * w));
        }
        let wo = take(self.heads * w * k);
        let w1 = take(g * d * k);
        let b1 = take(g);
        let w2 = take(d * g);
        let b2 = take(d);
        Layout {
            embedding,
            wq,
            wk,
            wv,
            wo,
            w1,
            b1,
            w2,
            b2,
            len: at,
        }
    }
}

/// Selector weights `ω` in one flat vector; see [`SelectorDims`] for shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorParams {
    pub dims: SelectorDims,
    pub values: Vec<f64>,
}

/// Intermediate values of one forward pass.
pub(crate) struct Forward {
    z: Array2<f64>,
    heads: Vec<HeadCache>,
    concat: Array2<f64>,
    e: Array2<f64>,
    h1: Array1<f64>,
    pub scores: Array1<f64>,
}

impl SelectorParams {
    /// Uniform `±√(3/fan_in)` projections, unit-variance embeddings, zero biases.
    pub fn init(dims: SelectorDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let lay = dims.layout();
        let mut rng = rng_from_seed(seed);
        let mut values = vec![0.0; lay.len];
        let mut fill = |r: &Range<usize>, fan_in: usize, values: &mut [f64]| {
            let bound = (3.0 / fan_in as f64).sqrt();
            for v in &mut values[r.clone()] {
                *v = rng.random_range(-bound..bound);
            }
        };
        let k = dims.embed_dim;
        fill(&lay.embedding, 1, &mut values);
        for a in 0..dims.heads {
            fill(&lay.wq[a], k, &mut values);
            fill(&lay.wk[a], k, &mut values);
            fill(&lay.wv[a], k, &mut values);
        }
        fill(&lay.wo, k, &mut values);
        fill(&lay.w1, dims.features * k, &mut values);
        fill(&lay.w2, dims.gate_hidden, &mut values);
        Ok(Self { dims, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn mat(&self, r: &Range<usize>, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.values[r.clone()]).expect("layout shape")
    }

    fn vec(&self, r: &Range<usize>) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[r.clone()])
    }

    pub fn embedding(&self) -> ArrayView2<'_, f64> {
        let lay = self.dims.layout();
        self.mat(&lay.embedding, self.dims.features, self.dims.embed_dim)
    }

    fn check_input(&self, x: &[f64]) {
        assert_eq!(
            x.len(),
            self.dims.features,
            "selector expects {} features",
            self.dims.features
        );
    }

    /// Value-scaled embedding rows `xᵢ·eᵢ`.
    pub fn embed(&self, x: &[f64]) -> Array2<f64> {
        self.check_input(x);
        let mut z = self.embedding().to_owned();
        for (mut row, &xi) in z.rows_mut().into_iter().zip(x) {
            row *= xi;
        }
        z
    }

    /// Attended feature matrix `E` (d × K).
    pub fn multihead(&self, x: &[f64]) -> Array2<f64> {
        self.forward(x).e
    }

    /// Gate scores `f(x, ω)`.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).scores.to_vec()
    }

    /// `σ(f/τ) ⊙ 1(x > 0)`.
    pub fn select_prob(&self, x: &[f64], tau: f64) -> Vec<f64> {
        probs_from_scores(self.forward(x).scores.as_slice().unwrap(), x, tau)
    }

    /// Selection probabilities for every row of `x`.
    pub fn select_prob_matrix(&self, x: &Array2<f64>, tau: f64) -> Array2<f64> {
        let rows: Vec<Vec<f64>> = (0..x.nrows())
            .into_par_iter()
            .map(|i| self.select_prob(&x.row(i).to_vec(), tau))
            .collect();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Array2::from_shape_vec(x.raw_dim(), flat).expect("one probability per entry")
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Forward {
        let dims = self.dims;
        let lay = dims.layout();
        let (k, w) = (dims.embed_dim, dims.head_dim());
        let z = self.embed(x);
        let mut concat = Array2::zeros((dims.features, dims.heads * w));
        let mut heads = Vec::with_capacity(dims.heads);
        for a in 0..dims.heads {
            let (out, cache) = head_forward(
                &z,
                &self.mat(&lay.wq[a], k, w),
                &self.mat(&lay.wk[a], k, w),
                &self.mat(&lay.wv[a], k, w),
            );
            concat.slice_mut(ndarray::s![.., a * w..(a + 1) * w]).assign(&out);
            heads.push(cache);
        }
        let e = concat.dot(&self.mat(&lay.wo, dims.heads * w, k));
        let u = ArrayView1::from(e.as_slice().expect("standard layout"));
        let w1 = self.mat(&lay.w1, dims.gate_hidden, dims.features * k);
        let h1 = w1.dot(&u) + self.vec(&lay.b1);
        let r = h1.mapv(|v| v.max(0.0));
        let w2 = self.mat(&lay.w2, dims.features, dims.gate_hidden);
        let scores = w2.dot(&r) + self.vec(&lay.b2);
        Forward {
            z,
            heads,
            concat,
            e,
            h1,
            scores,
        }
    }

    /// Accumulate `∂(Σₖ gₖ·fₖ)/∂ω` into `grad`, `g` being the upstream
    /// gradient of the gate scores.
    pub(crate) fn backward_scores(&self, x: &[f64], fw: &Forward, d_scores: &[f64], grad: &mut [f64]) {
        let dims = self.dims;
        let lay = dims.layout();
        let (d, k, w, g) = (dims.features, dims.embed_dim, dims.head_dim(), dims.gate_hidden);
        let df = ArrayView1::from(d_scores);
        let r = fw.h1.mapv(|v| v.max(0.0));
        add_outer(&mut grad[lay.w2.clone()], &df, &r.view());
        add_into(&mut grad[lay.b2.clone()], &df);
        let w2 = self.mat(&lay.w2, d, g);
        let mut dh1 = w2.t().dot(&df);
        dh1.zip_mut_with(&fw.h1, |v, &h| {
            if h <= 0.0 {
                *v = 0.0
            }
        });
        let u = ArrayView1::from(fw.e.as_slice().expect("standard layout"));
        add_outer(&mut grad[lay.w1.clone()], &dh1.view(), &u);
        add_into(&mut grad[lay.b1.clone()], &dh1.view());
        let w1 = self.mat(&lay.w1, g, d * k);
        let de = w1
            .t()
            .dot(&dh1)
            .into_shape_with_order((d, k))
            .expect("flattened E");
        let wo = self.mat(&lay.wo, dims.heads * w, k);
        add_into2(&mut grad[lay.wo.clone()], &fw.concat.t().dot(&de));
        let dconcat = de.dot(&wo.t());
        let mut dz = Array2::<f64>::zeros((d, k));
        for a in 0..dims.heads {
            let hg = head_backward(
                &fw.z,
                &self.mat(&lay.wq[a], k, w),
                &self.mat(&lay.wk[a], k, w),
                &self.mat(&lay.wv[a], k, w),
                &fw.heads[a],
                &head_block(&dconcat, a, w),
            );
            add_into2(&mut grad[lay.wq[a].clone()], &hg.wq);
            add_into2(&mut grad[lay.wk[a].clone()], &hg.wk);
            add_into2(&mut grad[lay.wv[a].clone()], &hg.wv);
            dz += &hg.z;
        }
        let emb = &mut grad[lay.embedding.clone()];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (gv, dv) in emb[i * k..(i + 1) * k].iter_mut().zip(dz.row(i)) {
                    *gv += xi * dv;
                }
            }
        }
    }

    /// Accumulate `scale·∂(Σₖ gₖ·pₖ)/∂ω` for upstream `g = ∂l/∂p`.
    pub fn accumulate_prob_grad(&self, x: &[f64], tau: f64, d_prob: &[f64], scale: f64, grad: &mut [f64]) {
        let fw = self.forward(x);
        let d_scores = prob_to_score_grad(fw.scores.as_slice().unwrap(), x, tau, d_prob, scale);
        self.backward_scores(x, &fw, &d_scores, grad);
    }

    pub fn all_finite(&self) -> bool {
        crate::linalg::all_finite(&self.values)
    }

    /// Named row-major tensors in layout order.
    pub fn tensors(&self) -> Vec<Tensor> {
        let dims = self.dims;
        let lay = dims.layout();
        let (d, k, w, g) = (dims.features, dims.embed_dim, dims.head_dim(), dims.gate_hidden);
        let t = |name: String, r: &Range<usize>, shape: Vec<usize>| Tensor {
            name,
            shape,
            data: self.values[r.clone()].to_vec(),
        };
        let mut out = vec![t("embedding".into(), &lay.embedding, vec![d, k])];
        for a in 0..dims.heads {
            out.push(t(format!("head{a}.query"), &lay.wq[a], vec![k, w]));
            out.push(t(format!("head{a}.key"), &lay.wk[a], vec![k, w]));
            out.push(t(format!("head{a}.value"), &lay.wv[a], vec![k, w]));
        }
        out.push(t("output".into(), &lay.wo, vec![dims.heads * w, k]));
        out.push(t("gate.w1".into(), &lay.w1, vec![g, d * k]));
        out.push(t("gate.b1".into(), &lay.b1, vec![g]));
        out.push(t("gate.w2".into(), &lay.w2, vec![d, g]));
        out.push(t("gate.b2".into(), &lay.b2, vec![d]));
        out
    }

    pub fn from_tensors(dims: SelectorDims, tensors: &[Tensor]) -> Result<Self> {
        dims.validate()?;
        let expected = Self {
            dims,
            values: vec![0.0; dims.layout().len],
        }
        .tensors();
        if expected.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "selector file has {} tensors, expected {}",
                tensors.len(),
                expected.len()
            )));
        }
        let mut values = Vec::with_capacity(dims.layout().len);
        for (want, got) in expected.iter().zip(tensors) {
            if want.name != got.name
                || want.shape != got.shape
                || got.data.len() != got.shape.iter().product::<usize>()
            {
                return Err(Error::Shape(format!(
                    "selector tensor `{}` {:?} does not match expected `{}` {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
            values.extend_from_slice(&got.data);
        }
        Ok(Self { dims, values })
    }

    pub fn save(&self, path: &Path, seed: u64, config: serde_json::Value) -> Result<()> {
        save_json(
            &ModelFile {
                format: "diwift-selector/1".into(),
                seed,
                config,
                params: SelectorDocument {
                    dims: self.dims,
                    tensors: self.tensors(),
                },
            },
            path,
        )
    }

    pub fn load(path: &Path) -> Result<(Self, ModelFile<SelectorDocument>)> {
        let file: ModelFile<SelectorDocument> = load_json(path)?;
        let params = Self::from_tensors(file.params.dims, &file.params.tensors)?;
        Ok((params, file))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorDocument {
    pub dims: SelectorDims,
    pub tensors: Vec<Tensor>,
}

/// `σ(fₖ/τ)` where `xₖ > 0`, exactly 0 elsewhere.
pub fn probs_from_scores(scores: &[f64], x: &[f64], tau: f64) -> Vec<f64> {
    assert!(tau > 0.0, "temperature must be positive");
    scores
        .iter()
        .zip(x)
        .map(|(&f, &xk)| if xk > 0.0 { sigmoid(f / tau) } else { 0.0 })
        .collect()
}

pub(crate) fn prob_to_score_grad(scores: &[f64], x: &[f64], tau: f64, d_prob: &[f64], scale: f64) -> Vec<f64> {
    scores
        .iter()
        .zip(x)
        .zip(d_prob)
        .map(|((&f, &xk), &g)| {
            if xk > 0.0 {
                let s = sigmoid(f / tau);
                scale * g * s * (1.0 - s) / tau
            } else {
                0.0
            }
        })
        .collect()
}

fn add_outer(dst: &mut [f64], a: &ArrayView1<f64>, b: &ArrayView1<f64>) {
    let m = b.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            for (d, &bj) in dst[i * m..(i + 1) * m].iter_mut().zip(b) {
                *d += ai * bj;
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &ArrayView1<f64>) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn add_into2(dst: &mut [f64], src: &Array2<f64>) {
    dst.iter_mut().zip(src.iter()).for_each(|(d, s)| *d += s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::attention::attention;
    use ndarray::Axis;

    fn tiny(d: usize, heads: usize) -> SelectorParams {
        SelectorParams::init(
            SelectorDims {
                features: d,
                embed_dim: 4,
                heads,
                gate_hidden: 5,
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn embedding_rows_scale_with_feature_values() {
        let w = tiny(3, 2);
        assert!(w.embed(&[0.0; 3]).iter().all(|&v| v == 0.0));
        let z = w.embed(&[1.0, 0.25, 0.5]);
        assert_eq!(z.row(0), w.embedding().row(0));
        let z2 = w.embed(&[1.0, 0.5, 0.5]);
        for (a, b) in z.row(1).iter().zip(z2.row(1)) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn one_identity_head_reduces_to_plain_attention() {
        let dims = SelectorDims {
            features: 3,
            embed_dim: 4,
            heads: 1,
            gate_hidden: 2,
        };
        let mut w = SelectorParams::init(dims, 3).unwrap();
        let lay = dims.layout();
        let eye = Array2::<f64>::eye(4);
        for r in [&lay.wq[0], &lay.wk[0], &lay.wv[0], &lay.wo] {
            w.values[r.clone()].copy_from_slice(eye.as_slice().unwrap());
        }
        let x = [0.3, 0.9, 0.1];
        let z = w.embed(&x);
        let direct = attention(&z.view(), &z.view(), &z.view());
        let e = w.multihead(&x);
        assert!(e.iter().zip(direct.iter()).all(|(a, b)| (a - b).abs() <= 1e-14));
    }

    #[test]
    fn multihead_shape_and_determinism() {
        for heads in [1, 2, 4] {
            let w = tiny(5, heads);
            let x = [0.2, 0.0, 1.0, 0.4, 0.7];
            let e = w.multihead(&x);
            assert_eq!(e.dim(), (5, 4));
            assert_eq!(e, w.multihead(&x));
        }
    }

    #[test]
    fn permuting_features_and_embedding_rows_permutes_attended_rows() {
        let w = tiny(4, 2);
        let x = [0.2, 0.9, 0.5, 0.7];
        let perm = [3usize, 1, 0, 2];
        let mut wp = w.clone();
        let lay = w.dims.layout();
        let k = w.dims.embed_dim;
        for (new, &old) in perm.iter().enumerate() {
            let src = w.values[lay.embedding.start + old * k..lay.embedding.start + (old + 1) * k].to_vec();
            wp.values[lay.embedding.start + new * k..lay.embedding.start + (new + 1) * k]
                .copy_from_slice(&src);
        }
        let xp: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let e = w.multihead(&x);
        let ep = wp.multihead(&xp);
        let expect = e.select(Axis(0), &perm);
        assert!(ep.iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() <= 1e-13));
    }

    #[test]
    fn probabilities_respect_the_zero_mask_and_bounds() {
        let w = tiny(4, 2);
        let x = [0.0, 0.3, 0.0, 1.0];
        for tau in [1.0, 0.1, 1e-3] {
            let p = w.select_prob(&x, tau);
            assert_eq!(p[0], 0.0);
            assert_eq!(p[2], 0.0);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(probs_from_scores(&[0.0], &[0.5], 1.0), vec![0.5]);
    }

    #[test]
    fn rescaling_scores_and_temperature_together_is_a_no_op() {
        let scores = [0.3, -1.7, 2.5, 0.0];
        let x = [0.1, 0.2, 0.3, 0.4];
        let base = probs_from_scores(&scores, &x, 0.37);
        for kappa in [0.25, 2.0, 8.0] {
            let scaled: Vec<f64> = scores.iter().map(|s| s * kappa).collect();
            assert_eq!(probs_from_scores(&scaled, &x, 0.37 * kappa), base);
        }
    }

    #[test]
    fn smaller_temperature_pushes_positive_scores_toward_one() {
        let mut last = 0.0;
        for tau in [1.0, 0.5, 0.1, 0.01] {
            let p = probs_from_scores(&[0.4], &[1.0], tau)[0];
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn reverse_pass_matches_central_differences() {
        for heads in [1, 2] {
            let w = tiny(4, heads);
            let x = [0.6, 0.0, 0.35, 0.9];
            let g = [0.7, -1.3, 0.4, -0.2];
            let tau = 0.8;
            let objective = |w: &SelectorParams| -> f64 {
                w.select_prob(&x, tau).iter().zip(&g).map(|(p, g)| p * g).sum()
            };
            let mut grad = vec![0.0; w.len()];
            w.accumulate_prob_grad(&x, tau, &g, 1.0, &mut grad);
            let h = 1e-6;
            for j in 0..w.len() {
                let mut plus = w.clone();
                plus.values[j] += h;
                let mut minus = w.clone();
                minus.values[j] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let err = (fd - grad[j]).abs() / fd.abs().max(grad[j].abs()).max(1e-6);
                assert!(err <= 1e-4, "param {j}: analytic {} vs fd {fd}", grad[j]);
            }
        }
    }

    #[test]
    fn tensors_round_trip_through_a_file() {
        let w = tiny(3, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sel.json");
        w.save(&path, 7, serde_json::json!({"k": 1})).unwrap();
        let (back, file) = SelectorParams::load(&path).unwrap();
        assert_eq!(back, w);
        assert_eq!(file.seed, 7);
        let x = [0.2, 0.5, 0.9];
        assert_eq!(back.select_prob(&x, 0.3), w.select_prob(&x, 0.3));
    }
}
