//! End-to-end runs: pretrain, selector training, hard masking, retraining
//! and masked inference.

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basenet::{self, load_json, save_json, BaseParams, EpochRecord, TrainConfig};
use crate::dataset::{apply_reweight, Dataset};
use crate::error::{Error, Result};
use crate::influence::{feature_influence_retrying, oracle_masks, LissaConfig};
use crate::rng::{derive_seed, Stage};
use crate::selector::{
    selection_loss, train_joint, train_selector, SelectorConfig, SelectorEpoch, SelectorParams,
};

/// Where the training masks come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Influence-trained selector.
    Diwift,
    /// Keep every nonzero feature (the no-selection baseline).
    Identity,
    /// `1(φ·x < 0)` on training rows from the pretrained model's influence;
    /// validation and inference rows keep every feature.
    Oracle,
    /// Selector trained jointly with a base network on cross-entropy.
    AttentionOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub pretrain: TrainConfig,
    pub retrain: TrainConfig,
    pub selector: SelectorConfig,
    pub lissa: LissaConfig,
    pub threshold: f64,
    /// Use the parameters after this pretraining epoch instead of the
    /// best-validation ones.
    pub pretrained_checkpoint: Option<usize>,
    /// Retrain on `p ⊙ x` instead of `S ⊙ x` (and predict the same way).
    pub soft_retrain: bool,
    pub mode: SelectionMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pretrain: TrainConfig::default(),
            retrain: TrainConfig::default(),
            selector: SelectorConfig::default(),
            lissa: LissaConfig::default(),
            threshold: 0.5,
            pretrained_checkpoint: None,
            soft_retrain: false,
            mode: SelectionMode::Diwift,
        }
    }
}

impl PipelineConfig {
    /// Overwrite every stage seed with one derived from `root`.
    pub fn with_root_seed(mut self, root: u64) -> Self {
        self.pretrain.seed = derive_seed(root, Stage::Pretrain, 0);
        self.selector.seed = derive_seed(root, Stage::Selector, 0);
        self.lissa.seed = derive_seed(root, Stage::Lissa, 0);
        self.retrain.seed = derive_seed(root, Stage::Retrain, 0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        self.pretrain.validate()?;
        self.retrain.validate()?;
        self.selector.validate()?;
        self.lissa.validate()
    }
}

/// `Sₖ = 1(pₖ ≥ threshold)`.
pub fn hard_mask(p: &[f64], threshold: f64) -> Vec<f64> {
    p.iter()
        .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
        .collect()
}

pub fn hard_masks(p: &Array2<f64>, threshold: f64) -> Array2<f64> {
    p.mapv(|v| if v >= threshold { 1.0 } else { 0.0 })
}

/// `1(x > 0)`: every nonzero feature kept.
pub fn identity_masks(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Entries selected although the feature is zero.
pub fn zero_feature_violations(masks: &Array2<f64>, x: &Array2<f64>) -> usize {
    masks
        .iter()
        .zip(x.iter())
        .filter(|(&s, &v)| v == 0.0 && s != 0.0)
        .count()
}

/// Retrained classifier plus the selector that masks its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DiwiftModel {
    pub theta: BaseParams,
    pub selector: Option<SelectorParams>,
    pub tau: f64,
    pub threshold: f64,
    pub soft: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InferenceSettings {
    tau: f64,
    threshold: f64,
    soft: bool,
    has_selector: bool,
}

impl DiwiftModel {
    /// Per-feature multipliers applied to `x` before the classifier.
    pub fn mask(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.theta.input_dim() {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.theta.input_dim(),
                x.len()
            )));
        }
        let m = match &self.selector {
            Some(w) => {
                let p = w.select_prob(x, self.tau);
                if self.soft {
                    p
                } else {
                    hard_mask(&p, self.threshold)
                }
            }
            None => x.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect(),
        };
        debug_assert!(
            m.iter().zip(x).all(|(&s, &v)| v != 0.0 || s == 0.0),
            "zero-valued feature selected"
        );
        Ok(m)
    }

    pub fn masks(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let rows: Vec<Vec<f64>> = (0..x.nrows())
            .into_par_iter()
            .map(|i| self.mask(&x.row(i).to_vec()))
            .collect::<Result<_>>()?;
        Ok(Array2::from_shape_vec(x.raw_dim(), rows.into_iter().flatten().collect())
            .expect("one mask entry per feature"))
    }

    /// `σ(g(θ; S ⊙ x))`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let m = self.mask(x)?;
        let xs: Vec<f64> = m.iter().zip(x).map(|(a, b)| a * b).collect();
        self.theta.forward(&xs)
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        (0..ds.n())
            .into_par_iter()
            .map(|i| self.predict(ds.row(i)))
            .collect()
    }

    pub fn save(&self, dir: &Path, config: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.theta
            .save(&dir.join("final_model.json"), 0, config.clone())?;
        if let Some(w) = &self.selector {
            w.save(&dir.join("selector.json"), 0, config)?;
        }
        save_json(
            &InferenceSettings {
                tau: self.tau,
                threshold: self.threshold,
                soft: self.soft,
                has_selector: self.selector.is_some(),
            },
            &dir.join("inference.json"),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let settings: InferenceSettings = load_json(&dir.join("inference.json"))?;
        let theta = BaseParams::load(&dir.join("final_model.json"))?.params;
        let selector = if settings.has_selector {
            Some(SelectorParams::load(&dir.join("selector.json"))?.0)
        } else {
            None
        };
        Ok(Self {
            theta,
            selector,
            tau: settings.tau,
            threshold: settings.threshold,
            soft: settings.soft,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMaskStat {
    pub field: String,
    /// Fraction of rows in which some column of the field is selected.
    pub selected_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub mode: SelectionMode,
    pub pretrain_best_epoch: Option<usize>,
    pub pretrain_valid_loss: Option<f64>,
    pub selection_loss: Option<f64>,
    /// Damping the inverse HVP ended up with (after divergence retries).
    pub influence_damping: Option<f64>,
    pub retrain_best_epoch: usize,
    pub retrain_valid_loss: Option<f64>,
    /// Mean fraction of nonzero training features that are selected.
    pub train_selected_fraction: f64,
    pub field_stats: Vec<FieldMaskStat>,
    /// SHA-256 of the masked training matrix and labels.
    pub masked_train_sha256: String,
    /// Selected entries whose feature value is zero (train and valid).
    pub zero_feature_violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub pretrained: Option<BaseParams>,
    pub pretrain_history: Vec<EpochRecord>,
    pub selector_trace: Vec<SelectorEpoch>,
    pub model: DiwiftModel,
    pub retrain_history: Vec<EpochRecord>,
    pub train_masks: Array2<f64>,
    pub valid_masks: Array2<f64>,
    /// Influence used for the last selector epoch or for the oracle masks.
    pub influence: Option<Array2<f64>>,
    pub metrics: PipelineMetrics,
}

/// Hex SHA-256 of a dataset's feature bits and labels.
pub fn dataset_hash(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((ds.n() as u64).to_le_bytes());
    h.update((ds.d() as u64).to_le_bytes());
    for v in ds.x.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update(&ds.y);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn field_stats(ds: &Dataset, masks: &Array2<f64>) -> Vec<FieldMaskStat> {
    let n = ds.n().max(1) as f64;
    ds.schema
        .iter()
        .enumerate()
        .map(|(f, field)| {
            let cols: Vec<usize> = (0..ds.d()).filter(|&k| ds.featmap[k].field == f).collect();
            let rows = (0..ds.n())
                .filter(|&i| cols.iter().any(|&k| masks[(i, k)] > 0.0))
                .count();
            FieldMaskStat {
                field: field.name.clone(),
                selected_fraction: rows as f64 / n,
            }
        })
        .collect()
}

fn selected_fraction(masks: &Array2<f64>, x: &Array2<f64>) -> f64 {
    let nonzero = x.iter().filter(|&&v| v != 0.0).count();
    if nonzero == 0 {
        return 0.0;
    }
    let kept = masks
        .iter()
        .zip(x.iter())
        .filter(|(&s, &v)| v != 0.0 && s > 0.0)
        .count();
    kept as f64 / nonzero as f64
}

fn pretrain(
    train: &Dataset,
    valid: &Dataset,
    cfg: &PipelineConfig,
) -> Result<(BaseParams, Vec<EpochRecord>, usize)> {
    let mut pcfg = cfg.pretrain.clone();
    if cfg.pretrained_checkpoint.is_some() {
        pcfg.keep_checkpoints = true;
    }
    let out = basenet::train(train, Some(valid), &pcfg)?;
    let (theta, epoch) = match cfg.pretrained_checkpoint {
        Some(e) => (out.checkpoint(e)?.clone(), e),
        None => (out.params.clone(), out.best_epoch),
    };
    Ok((theta, out.history, epoch))
}

/// Run the whole pipeline, pretraining from scratch when needed.
pub fn run_diwift(train: &Dataset, valid: &Dataset, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    run_diwift_with(train, valid, cfg, None)
}

/// Run the pipeline; `pretrained` skips the pretraining stage.
pub fn run_diwift_with(
    train: &Dataset,
    valid: &Dataset,
    cfg: &PipelineConfig,
    pretrained: Option<&BaseParams>,
) -> Result<PipelineOutput> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    if train.d() != valid.d() {
        return Err(Error::Shape("train and valid have different widths".into()).in_stage("config"));
    }
    let needs_pretrain = matches!(cfg.mode, SelectionMode::Diwift | SelectionMode::Oracle);
    let mut pretrain_history = Vec::new();
    let mut pretrain_epoch = None;
    let theta_pre = match (needs_pretrain, pretrained) {
        (false, _) => None,
        (true, Some(t)) => Some(t.clone()),
        (true, None) => {
            let (t, h, e) = pretrain(train, valid, cfg).map_err(|e| e.in_stage("pretrain"))?;
            pretrain_history = h;
            pretrain_epoch = Some(e);
            Some(t)
        }
    };
    let tau = cfg.selector.tau_min;

    let mut selector_trace = Vec::new();
    let mut influence = None;
    let mut sel_loss = None;
    let mut damping = None;
    let (selector, train_masks, valid_masks) = match cfg.mode {
        SelectionMode::Identity => (None, identity_masks(&train.x), identity_masks(&valid.x)),
        SelectionMode::Oracle => {
            let theta = theta_pre.as_ref().expect("pretrained");
            let fi = feature_influence_retrying(theta, train, valid, None, None, &cfg.lissa)
                .map_err(|e| e.in_stage("influence"))?;
            damping = Some(fi.estimate.damping);
            let phi = fi.matrix();
            let masks = oracle_masks(&phi, &train.x);
            influence = Some(phi);
            (None, masks, identity_masks(&valid.x))
        }
        SelectionMode::Diwift | SelectionMode::AttentionOnly => {
            let w = if cfg.mode == SelectionMode::Diwift {
                let theta = theta_pre.as_ref().expect("pretrained");
                let out = train_selector(theta, train, valid, &cfg.selector, &cfg.lissa)
                    .map_err(|e| e.in_stage("selector"))?;
                sel_loss = out.trace.last().map(|e| e.loss);
                selector_trace = out.trace;
                damping = out.influence_damping;
                influence = Some(out.influence);
                out.params
            } else {
                let out = train_joint(train, &cfg.pretrain, &cfg.selector)
                    .map_err(|e| e.in_stage("selector"))?;
                selector_trace = out.trace;
                out.selector
            };
            let pt = w.select_prob_matrix(&train.x, tau);
            let pv = w.select_prob_matrix(&valid.x, tau);
            if let Some(phi) = &influence {
                sel_loss = Some(selection_loss(phi, &pt, &train.x));
            }
            let (mt, mv) = if cfg.soft_retrain {
                (pt, pv)
            } else {
                (hard_masks(&pt, cfg.threshold), hard_masks(&pv, cfg.threshold))
            };
            (Some(w), mt, mv)
        }
    };

    let violations =
        zero_feature_violations(&train_masks, &train.x) + zero_feature_violations(&valid_masks, &valid.x);
    let masked_train = apply_reweight(train, &train_masks).map_err(|e| e.in_stage("mask"))?;
    let masked_valid = apply_reweight(valid, &valid_masks).map_err(|e| e.in_stage("mask"))?;
    let retrained = basenet::train(&masked_train, Some(&masked_valid), &cfg.retrain)
        .map_err(|e| e.in_stage("retrain"))?;
    let retrain_valid_loss = retrained
        .history
        .iter()
        .find(|r| r.epoch == retrained.best_epoch)
        .and_then(|r| r.valid_loss);
    let metrics = PipelineMetrics {
        mode: cfg.mode,
        pretrain_best_epoch: pretrain_epoch,
        pretrain_valid_loss: pretrain_epoch.and_then(|e| {
            pretrain_history
                .iter()
                .find(|r| r.epoch == e)
                .and_then(|r| r.valid_loss)
        }),
        selection_loss: sel_loss,
        influence_damping: damping,
        retrain_best_epoch: retrained.best_epoch,
        retrain_valid_loss,
        train_selected_fraction: selected_fraction(&train_masks, &train.x),
        field_stats: field_stats(train, &train_masks),
        masked_train_sha256: dataset_hash(&masked_train),
        zero_feature_violations: violations,
    };
    log::info!(
        "pipeline {:?}: kept {:.3} of nonzero training features, masked data {}",
        cfg.mode,
        metrics.train_selected_fraction,
        &metrics.masked_train_sha256[..12]
    );
    Ok(PipelineOutput {
        pretrained: theta_pre,
        pretrain_history,
        selector_trace,
        model: DiwiftModel {
            theta: retrained.params,
            selector,
            tau,
            threshold: cfg.threshold,
            soft: cfg.soft_retrain,
        },
        retrain_history: retrained.history,
        train_masks,
        valid_masks,
        influence,
        metrics,
    })
}

/// Write a 0/1 (or soft) mask matrix with a header of feature names.
pub fn write_masks_csv(path: &Path, masks: &Array2<f64>, names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{other:?}")),
    })?;
    w.write_record(names)?;
    for row in masks.rows() {
        w.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl PipelineOutput {
    /// Persist models, masks, metrics, histories and the config echo into `dir`.
    pub fn persist(&self, dir: &Path, names: &[String], config: &serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_json(config, &dir.join("config.json"))?;
        if let Some(t) = &self.pretrained {
            t.save(&dir.join("pretrained.json"), 0, config.clone())?;
        }
        self.model.save(dir, config.clone())?;
        write_masks_csv(&dir.join("masks.csv"), &self.train_masks, names)?;
        save_json(&self.metrics, &dir.join("metrics.json"))?;
        save_json(
            &serde_json::json!({
                "pretrain": self.pretrain_history,
                "selector": self.selector_trace,
                "retrain": self.retrain_history,
            }),
            &dir.join("history.json"),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_syn, split, SplitSpec, SynKind};

    #[test]
    fn hard_mask_threshold_rule() {
        assert_eq!(hard_mask(&[0.9, 0.1], 0.5), vec![1.0, 0.0]);
        assert_eq!(hard_mask(&[0.0, 0.0], 0.5), vec![0.0, 0.0]);
        assert_eq!(hard_mask(&[0.5], 0.5), vec![1.0]);
    }

    fn small_cfg() -> PipelineConfig {
        let base = TrainConfig {
            hidden_size: 8,
            epochs: 4,
            batch_size: 32,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        PipelineConfig {
            pretrain: base.clone(),
            retrain: base,
            selector: SelectorConfig {
                embed_dim: 4,
                gate_hidden: 8,
                t_max: 3,
                batch_size: 64,
                ..SelectorConfig::default()
            },
            lissa: LissaConfig {
                depth: 200,
                repeats: 1,
                batch_size: 64,
                ..LissaConfig::default()
            },
            ..PipelineConfig::default()
        }
        .with_root_seed(11)
    }

    fn data() -> (Dataset, Dataset, Dataset) {
        let ds = gen_syn(SynKind::Syn3, 300, 3).unwrap();
        split(&ds, &SplitSpec::default()).unwrap()
    }

    #[test]
    fn identity_mode_equals_plain_training() {
        let (tr, va, te) = data();
        let cfg = PipelineConfig {
            mode: SelectionMode::Identity,
            ..small_cfg()
        };
        let out = run_diwift(&tr, &va, &cfg).unwrap();
        let plain = basenet::train(&tr, Some(&va), &cfg.retrain).unwrap();
        assert_eq!(out.model.theta, plain.params);
        for i in 0..te.n() {
            assert_eq!(out.model.predict(te.row(i)).unwrap(), plain.params.predict(te.row(i)));
        }
    }

    #[test]
    fn diwift_run_is_deterministic_and_respects_zero_features() {
        let (tr, va, _) = data();
        let cfg = small_cfg();
        let a = run_diwift(&tr, &va, &cfg).unwrap();
        let b = run_diwift(&tr, &va, &cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.model, b.model);
        assert_eq!(a.metrics.zero_feature_violations, 0);
        assert_eq!(a.selector_trace.len(), cfg.selector.t_max);
        let m = a.model.masks(&tr.x).unwrap();
        assert_eq!(m, a.train_masks);
    }

    #[test]
    fn oracle_and_ablation_modes_complete() {
        let (tr, va, _) = data();
        for mode in [SelectionMode::Oracle, SelectionMode::AttentionOnly] {
            let cfg = PipelineConfig {
                mode,
                ..small_cfg()
            };
            let out = run_diwift(&tr, &va, &cfg).unwrap();
            assert_eq!(out.metrics.zero_feature_violations, 0);
            if mode == SelectionMode::Oracle {
                let phi = out.influence.as_ref().unwrap();
                assert_eq!(out.train_masks, oracle_masks(phi, &tr.x));
            }
        }
    }

    #[test]
    fn extreme_masks_reduce_predictions() {
        let (tr, va, _) = data();
        let out = run_diwift(
            &tr,
            &va,
            &PipelineConfig {
                mode: SelectionMode::Identity,
                ..small_cfg()
            },
        )
        .unwrap();
        let x = tr.row(0);
        assert_eq!(out.model.predict(x).unwrap(), out.model.theta.predict(x));
        let zeros = vec![0.0; tr.d()];
        assert_eq!(out.model.predict(&zeros).unwrap(), out.model.theta.predict(&zeros));
        assert!(matches!(out.model.predict(&[0.5]), Err(Error::Shape(_))));
    }

    #[test]
    fn stage_errors_are_tagged() {
        let (tr, va, _) = data();
        let mut cfg = small_cfg();
        cfg.pretrained_checkpoint = Some(99);
        let err = run_diwift(&tr, &va, &cfg).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "pretrain", .. }), "{err}");
    }

    #[test]
    fn run_directory_round_trips_the_model() {
        let (tr, va, _) = data();
        let out = run_diwift(&tr, &va, &small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.persist(dir.path(), &tr.feature_names(), &serde_json::json!({}))
            .unwrap();
        for f in ["config.json", "pretrained.json", "final_model.json", "selector.json", "masks.csv", "metrics.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back = DiwiftModel::load(dir.path()).unwrap();
        assert_eq!(back, out.model);
    }
}
