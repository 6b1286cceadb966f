//! Synthetic generators with per-row ground-truth relevance.
//!
//! Features are 11 independent standard normals `x1..x11`; the label is
//! Bernoulli with `P(y = 1 | x) = 1 / (1 + logit(x))`.
//!
//! * `Syn1`: `logit = exp(x1·x2)`
//! * `Syn2`: `logit = -10·sin(2·x7) + 2·|x8| + x9 + exp(-x10)`
//! * `Syn3`: `Syn1` when `x11 < 0`, `Syn2` otherwise (`x11` is the switch).
//!
//! `Syn2`'s logit can be negative, which would push the probability outside
//! `[0, 1]`; negative logits are clamped to 0 (probability 1), keeping the
//! probability monotone in the logit.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, FieldSchema};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const SYN_DIM: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynKind {
    Syn1,
    Syn2,
    Syn3,
}

impl std::str::FromStr for SynKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "syn1" => Ok(SynKind::Syn1),
            "syn2" => Ok(SynKind::Syn2),
            "syn3" => Ok(SynKind::Syn3),
            other => Err(Error::InvalidArgument(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for SynKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SynKind::Syn1 => "syn1",
            SynKind::Syn2 => "syn2",
            SynKind::Syn3 => "syn3",
        })
    }
}

fn syn1_logit(x: &[f64]) -> f64 {
    (x[0] * x[1]).exp()
}

fn syn2_logit(x: &[f64]) -> f64 {
    -10.0 * (2.0 * x[6]).sin() + 2.0 * x[7].abs() + x[8] + (-x[9]).exp()
}

/// Whether a Syn3 row is routed to the Syn1 formula.
fn routes_to_syn1(x: &[f64]) -> bool {
    x[10] < 0.0
}

/// The logit of a raw (unscaled) 11-dimensional row.
pub fn logit(kind: SynKind, x: &[f64]) -> f64 {
    match kind {
        SynKind::Syn1 => syn1_logit(x),
        SynKind::Syn2 => syn2_logit(x),
        SynKind::Syn3 if routes_to_syn1(x) => syn1_logit(x),
        SynKind::Syn3 => syn2_logit(x),
    }
}

pub fn positive_probability(kind: SynKind, x: &[f64]) -> f64 {
    1.0 / (1.0 + logit(kind, x).max(0.0))
}

/// 0-based indices of the features entering the row's logit.
pub fn relevant_features(kind: SynKind, x: &[f64]) -> &'static [usize] {
    match kind {
        SynKind::Syn1 => &[0, 1],
        SynKind::Syn2 => &[6, 7, 8, 9],
        SynKind::Syn3 if routes_to_syn1(x) => &[0, 1, 10],
        SynKind::Syn3 => &[6, 7, 8, 9, 10],
    }
}

pub fn gen_syn(kind: SynKind, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("synthetic dataset needs n >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut raw = Array2::zeros((n, SYN_DIM));
    let mut relevance = Array2::from_elem((n, SYN_DIM), false);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = [0.0; SYN_DIM];
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let p = positive_probability(kind, &row);
        y.push(u8::from(rng.random::<f64>() < p));
        for &k in relevant_features(kind, &row) {
            relevance[(i, k)] = true;
        }
        raw.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
    }
    let schema = (1..=SYN_DIM)
        .map(|k| FieldSchema::numerical(format!("x{k}")))
        .collect();
    Dataset::from_raw(raw, y, schema, Some(relevance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_even_odds() {
        let zero = [0.0; SYN_DIM];
        assert_eq!(logit(SynKind::Syn1, &zero), 1.0);
        assert_eq!(positive_probability(SynKind::Syn1, &zero), 0.5);
        assert_eq!(logit(SynKind::Syn2, &zero), 1.0);
        assert_eq!(positive_probability(SynKind::Syn2, &zero), 0.5);
    }

    #[test]
    fn syn3_switch_routes_by_sign() {
        let mut x = [0.3; SYN_DIM];
        x[10] = -0.5;
        assert_eq!(logit(SynKind::Syn3, &x), logit(SynKind::Syn1, &x));
        assert_eq!(relevant_features(SynKind::Syn3, &x), &[0, 1, 10]);
        x[10] = 0.5;
        assert_eq!(logit(SynKind::Syn3, &x), logit(SynKind::Syn2, &x));
        assert_eq!(relevant_features(SynKind::Syn3, &x), &[6, 7, 8, 9, 10]);
    }

    #[test]
    fn probability_stays_in_unit_interval() {
        let mut x = [0.0; SYN_DIM];
        x[6] = std::f64::consts::FRAC_PI_4; // sin(2 x7) = 1 → logit < 0
        let p = positive_probability(SynKind::Syn2, &x);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn generation_is_reproducible_and_scaled() {
        let a = gen_syn(SynKind::Syn3, 500, 9).unwrap();
        let b = gen_syn(SynKind::Syn3, 500, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.x.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, gen_syn(SynKind::Syn3, 500, 10).unwrap());
        assert!(gen_syn(SynKind::Syn1, 0, 1).is_err());
    }

    #[test]
    fn relevance_marks_exactly_the_logit_features() {
        for kind in [SynKind::Syn1, SynKind::Syn2, SynKind::Syn3] {
            let ds = gen_syn(kind, 300, 4).unwrap();
            let rel = ds.relevance.as_ref().unwrap();
            for i in 0..ds.n() {
                let raw = ds.raw.row(i).to_vec();
                let expected = relevant_features(kind, &raw);
                let marked: Vec<usize> = (0..SYN_DIM).filter(|&k| rel[(i, k)]).collect();
                assert_eq!(marked, expected);
                // perturbing any unmarked feature leaves the logit unchanged
                for k in (0..SYN_DIM).filter(|k| !expected.contains(k)) {
                    let mut moved = raw.clone();
                    moved[k] += 0.37;
                    if kind == SynKind::Syn3 && k == 10 {
                        continue;
                    }
                    assert_eq!(logit(kind, &moved), logit(kind, &raw));
                }
            }
        }
    }

    #[test]
    fn syn3_routing_fraction_is_near_half() {
        let n = 20_000;
        let ds = gen_syn(SynKind::Syn3, n, 3).unwrap();
        let routed = (0..n).filter(|&i| ds.raw[(i, 10)] < 0.0).count() as f64 / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((routed - 0.5).abs() <= 3.0 * sigma, "fraction {routed}");
    }
}
