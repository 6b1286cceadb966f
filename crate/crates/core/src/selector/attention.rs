//! Scaled dot-product self-attention over per-feature embeddings, with the
//! hand-written reverse pass used to train the selector.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// `softmax(Q·Kᵀ/√w)·V`, `w` being the key width.
pub fn attention(q: &ArrayView2<f64>, k: &ArrayView2<f64>, v: &ArrayView2<f64>) -> Array2<f64> {
    attention_weights(q, k).dot(v)
}

pub fn attention_weights(q: &ArrayView2<f64>, k: &ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(q.ncols(), k.ncols(), "query and key widths differ");
    let scale = 1.0 / (k.ncols() as f64).sqrt();
    softmax_rows(&(q.dot(&k.t()) * scale))
}

/// Forward state of one head, kept for the reverse pass.
pub(crate) struct HeadCache {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub weights: Array2<f64>,
}

pub(crate) fn head_forward(
    z: &Array2<f64>,
    wq: &ArrayView2<f64>,
    wk: &ArrayView2<f64>,
    wv: &ArrayView2<f64>,
) -> (Array2<f64>, HeadCache) {
    let q = z.dot(wq);
    let k = z.dot(wk);
    let v = z.dot(wv);
    let weights = attention_weights(&q.view(), &k.view());
    let out = weights.dot(&v);
    (out, HeadCache { q, k, v, weights })
}

/// Gradients of one head w.r.t. its projections and its input `z`, given the
/// upstream gradient `d_out` of the head output.
pub(crate) struct HeadGrads {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub z: Array2<f64>,
}

pub(crate) fn head_backward(
    z: &Array2<f64>,
    wq: &ArrayView2<f64>,
    wk: &ArrayView2<f64>,
    wv: &ArrayView2<f64>,
    cache: &HeadCache,
    d_out: &ArrayView2<f64>,
) -> HeadGrads {
    let scale = 1.0 / (cache.k.ncols() as f64).sqrt();
    let d_weights = d_out.dot(&cache.v.t());
    let d_v = cache.weights.t().dot(d_out);
    // softmax reverse: dS = A ⊙ (dA − rowsum(dA ⊙ A))
    let row_dot: Array1<f64> = (&d_weights * &cache.weights).sum_axis(Axis(1));
    let d_scores = &cache.weights * &(&d_weights - &row_dot.insert_axis(Axis(1)));
    let d_q = d_scores.dot(&cache.k) * scale;
    let d_k = d_scores.t().dot(&cache.q) * scale;
    let zt = z.t();
    HeadGrads {
        wq: zt.dot(&d_q),
        wk: zt.dot(&d_k),
        wv: zt.dot(&d_v),
        z: d_q.dot(&wq.t()) + d_k.dot(&wk.t()) + d_v.dot(&wv.t()),
    }
}

/// Columns `[a·w, (a+1)·w)` of `m`.
pub(crate) fn head_block(m: &Array2<f64>, a: usize, w: usize) -> ArrayView2<'_, f64> {
    m.slice(s![.., a * w..(a + 1) * w])
}
