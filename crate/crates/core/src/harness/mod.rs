//! Metrics and seeded experiment drivers.

mod mask_report;
mod metrics;
mod shift;

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use mask_report::{mask_report, MaskReport, MaskRow};
pub use metrics::{auc, mean, std_dev};
pub use shift::{biased_sample, shift_experiment, synthetic_shift_experiment, ShiftReport};

use crate::basenet::{self, save_json, BaseParams};
use crate::dataset::{gen_syn, split, Dataset, SplitSpec, SynKind};
use crate::error::{Error, Result};
use crate::influence::feature_influence_retrying;
use crate::pipeline::{run_diwift_with, PipelineConfig, PipelineMetrics, PipelineOutput, SelectionMode};
use crate::rng::{derive_seed, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NoSelection,
    Diwift,
    OracleMask,
    AttentionOnly,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::NoSelection,
        Method::Diwift,
        Method::OracleMask,
        Method::AttentionOnly,
    ];

    pub fn mode(self) -> SelectionMode {
        match self {
            Method::NoSelection => SelectionMode::Identity,
            Method::Diwift => SelectionMode::Diwift,
            Method::OracleMask => SelectionMode::Oracle,
            Method::AttentionOnly => SelectionMode::AttentionOnly,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::NoSelection => "no_selection",
            Method::Diwift => "diwift",
            Method::OracleMask => "oracle_mask",
            Method::AttentionOnly => "attention_only",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// Where each repeat's (train, valid, test) comes from.
#[derive(Debug, Clone)]
pub enum DataSpec {
    /// A fresh synthetic sample per repeat, split 3:1:1.
    Synthetic { kind: SynKind, n: usize },
    /// One table re-split per repeat.
    Table { data: Dataset, ratios: [f64; 3] },
    /// Fixed parts, identical for every repeat.
    Presplit {
        train: Dataset,
        valid: Dataset,
        test: Dataset,
    },
    /// Fixed training source; the unbiased source halved per repeat.
    Shift { train: Dataset, unbiased: Dataset },
    /// Fresh synthetic shift sample per repeat (see [`synthetic_shift_experiment`]).
    SyntheticShift {
        kind: SynKind,
        n_train: usize,
        n_unbiased: usize,
        biased: bool,
    },
}

impl DataSpec {
    /// The parts for the repeat with seed `run_seed`.
    pub fn materialize(&self, run_seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
        match self {
            DataSpec::Synthetic { kind, n } => {
                let ds = gen_syn(*kind, *n, derive_seed(run_seed, Stage::Data, 0))?;
                split(
                    &ds,
                    &SplitSpec {
                        seed: derive_seed(run_seed, Stage::Split, 0),
                        ..SplitSpec::default()
                    },
                )
            }
            DataSpec::Table { data, ratios } => split(
                data,
                &SplitSpec {
                    ratios: *ratios,
                    seed: derive_seed(run_seed, Stage::Split, 0),
                },
            ),
            DataSpec::Presplit { train, valid, test } => {
                Ok((train.clone(), valid.clone(), test.clone()))
            }
            DataSpec::Shift { train, unbiased } => {
                shift::shifted_parts(train, unbiased, derive_seed(run_seed, Stage::Split, 0))
            }
            DataSpec::SyntheticShift {
                kind,
                n_train,
                n_unbiased,
                biased,
            } => shift::synthetic_shift_parts(*kind, *n_train, *n_unbiased, *biased, run_seed),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DataSpec::Synthetic { kind, n } => format!("{kind} n={n}"),
            DataSpec::Table { data, ratios } => format!("table n={} ratios {ratios:?}", data.n()),
            DataSpec::Presplit { train, valid, test } => {
                format!("presplit {}/{}/{}", train.n(), valid.n(), test.n())
            }
            DataSpec::Shift { train, unbiased } => {
                format!("shift train n={} unbiased n={}", train.n(), unbiased.n())
            }
            DataSpec::SyntheticShift {
                kind,
                n_train,
                n_unbiased,
                biased,
            } => format!(
                "{kind} {} train n={n_train}, unbiased n={n_unbiased}",
                if *biased { "biased" } else { "unbiased" }
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    pub methods: Vec<Method>,
    pub repeats: usize,
    pub root_seed: u64,
    /// Run repeats concurrently.
    pub parallel: bool,
    /// Recompute oracle influence independently and check every oracle mask.
    pub audit_oracle: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            methods: vec![Method::NoSelection, Method::Diwift],
            repeats: 10,
            root_seed: 0,
            parallel: true,
            audit_oracle: true,
        }
    }
}

impl ExperimentConfig {
    /// Root seed of repeat `r`; every method of the repeat shares it.
    pub fn run_seed(&self, r: usize) -> u64 {
        derive_seed(self.root_seed, Stage::Data, r as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidArgument("repeats must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods selected".into()));
        }
        self.pipeline.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    /// Pretraining epoch used as the influence source, when one was fixed.
    pub checkpoint: Option<usize>,
    pub repeat: usize,
    pub seed: u64,
    pub auc: Option<f64>,
    pub error: Option<String>,
    pub runtime_secs: f64,
    pub metrics: Option<PipelineMetrics>,
    /// Test rows whose mask selects a zero-valued feature.
    pub test_zero_feature_violations: Option<usize>,
    /// Oracle masks disagreeing with `1(φ·x < 0)` recomputed from scratch.
    pub oracle_mismatches: Option<usize>,
}

impl RunRecord {
    /// Every zero-feature violation seen in train, valid and test masks.
    pub fn zero_feature_violations(&self) -> usize {
        self.metrics.as_ref().map_or(0, |m| m.zero_feature_violations)
            + self.test_zero_feature_violations.unwrap_or(0)
    }

    pub fn label(&self) -> String {
        match self.checkpoint {
            Some(e) => format!("{}@{e}", self.method),
            None => self.method.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub label: String,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub runs: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub data: String,
    pub summaries: Vec<MethodSummary>,
    pub records: Vec<RunRecord>,
    pub config: serde_json::Value,
    pub runtime_secs: f64,
    /// Max − min of per-checkpoint mean AUCs (sensitivity runs only).
    pub spread: Option<f64>,
}

impl ExperimentReport {
    fn assemble(
        name: &str,
        data: String,
        mut records: Vec<RunRecord>,
        cfg: &ExperimentConfig,
        started: Instant,
    ) -> Self {
        records.sort_by(|a, b| {
            (a.checkpoint, a.method, a.repeat).cmp(&(b.checkpoint, b.method, b.repeat))
        });
        let mut labels: Vec<String> = Vec::new();
        for r in &records {
            if !labels.contains(&r.label()) {
                labels.push(r.label());
            }
        }
        let summaries = labels
            .into_iter()
            .map(|label| {
                let runs: Vec<&RunRecord> = records.iter().filter(|r| r.label() == label).collect();
                let aucs: Vec<f64> = runs.iter().filter_map(|r| r.auc).collect();
                MethodSummary {
                    label,
                    mean_auc: mean(&aucs),
                    std_auc: std_dev(&aucs),
                    runs: runs.len(),
                    failed: runs.len() - aucs.len(),
                }
            })
            .collect();
        Self {
            name: name.to_string(),
            data,
            summaries,
            records,
            config: serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null),
            runtime_secs: started.elapsed().as_secs_f64(),
            spread: None,
        }
    }

    pub fn summary(&self, label: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.label == label)
    }

    pub fn mean_auc(&self, method: Method) -> Option<f64> {
        self.summary(method.name()).map(|s| s.mean_auc)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} on {} ({:.1} s)", self.name, self.data, self.runtime_secs);
        let _ = writeln!(s, "{:<24} {:>10} {:>10} {:>6} {:>7}", "method", "mean AUC", "std", "runs", "failed");
        for m in &self.summaries {
            let _ = writeln!(
                s,
                "{:<24} {:>10.4} {:>10.4} {:>6} {:>7}",
                m.label, m.mean_auc, m.std_auc, m.runs, m.failed
            );
        }
        if let Some(sp) = self.spread {
            let _ = writeln!(s, "spread (max - min mean AUC): {sp:.4}");
        }
        for r in self.records.iter().filter(|r| r.error.is_some()) {
            let _ = writeln!(
                s,
                "FAILED {} repeat {}: {}",
                r.label(),
                r.repeat,
                r.error.as_deref().unwrap_or_default()
            );
        }
        s
    }

    /// `report.txt`, `report.json` and one JSON record per line in `records.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))?;
        save_json(self, &dir.join("report.json"))?;
        let mut lines = String::new();
        for r in &self.records {
            lines.push_str(&serde_json::to_string(r)?);
            lines.push('\n');
        }
        let path = dir.join("records.jsonl");
        std::fs::write(&path, lines).map_err(|e| Error::io(&path, e))
    }
}

/// Test AUC plus audits of one finished pipeline run.
fn evaluate(
    out: &PipelineOutput,
    train: &Dataset,
    valid: &Dataset,
    test: &Dataset,
    cfg: &PipelineConfig,
    audit_oracle: bool,
) -> Result<(f64, usize, Option<usize>)> {
    let scores = out.model.predict_dataset(test)?;
    let auc = auc(&scores, &test.y)?;
    let test_masks = out.model.masks(&test.x)?;
    let violations = crate::pipeline::zero_feature_violations(&test_masks, &test.x);
    let oracle = match (cfg.mode, audit_oracle, &out.pretrained) {
        (SelectionMode::Oracle, true, Some(theta)) => {
            let phi = feature_influence_retrying(theta, train, valid, None, None, &cfg.lissa)?.matrix();
            let mismatches = out
                .train_masks
                .indexed_iter()
                .filter(|&((i, k), &s)| {
                    let want = phi[(i, k)] * train.x[(i, k)] < 0.0;
                    (s == 1.0) != want || (s != 0.0 && s != 1.0)
                })
                .count();
            Some(mismatches)
        }
        _ => None,
    };
    Ok((auc, violations, oracle))
}

struct Job {
    method: Method,
    repeat: usize,
    checkpoint: Option<usize>,
}

fn run_job(
    job: &Job,
    parts: &(Dataset, Dataset, Dataset),
    cfg: &ExperimentConfig,
    pretrained: Option<&BaseParams>,
) -> RunRecord {
    let started = Instant::now();
    let seed = cfg.run_seed(job.repeat);
    let pcfg = PipelineConfig {
        mode: job.method.mode(),
        ..cfg.pipeline.clone()
    }
    .with_root_seed(seed);
    let (train, valid, test) = parts;
    let result = run_diwift_with(train, valid, &pcfg, pretrained).and_then(|out| {
        evaluate(&out, train, valid, test, &pcfg, cfg.audit_oracle).map(|e| (out.metrics, e))
    });
    let elapsed = started.elapsed().as_secs_f64();
    let mut record = RunRecord {
        method: job.method,
        checkpoint: job.checkpoint,
        repeat: job.repeat,
        seed,
        auc: None,
        error: None,
        runtime_secs: elapsed,
        metrics: None,
        test_zero_feature_violations: None,
        oracle_mismatches: None,
    };
    match result {
        Ok((metrics, (auc, violations, oracle))) => {
            log::info!("{} repeat {}: AUC {auc:.4} ({elapsed:.1} s)", record.label(), job.repeat);
            record.auc = Some(auc);
            record.metrics = Some(metrics);
            record.test_zero_feature_violations = Some(violations);
            record.oracle_mismatches = oracle;
        }
        Err(e) => {
            log::warn!("{} repeat {} failed: {e}", record.label(), job.repeat);
            record.error = Some(e.to_string());
        }
    }
    record
}

fn map_repeats<T: Send>(cfg: &ExperimentConfig, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if cfg.parallel {
        (0..cfg.repeats).into_par_iter().map(f).collect()
    } else {
        (0..cfg.repeats).map(f).collect()
    }
}

/// `R` seeded end-to-end runs of every method on the same per-repeat data.
pub fn compare(spec: &DataSpec, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    let per_repeat = map_repeats(cfg, |r| -> Result<Vec<RunRecord>> {
        let parts = spec.materialize(cfg.run_seed(r))?;
        Ok(cfg
            .methods
            .iter()
            .map(|&method| {
                run_job(
                    &Job {
                        method,
                        repeat: r,
                        checkpoint: None,
                    },
                    &parts,
                    cfg,
                    None,
                )
            })
            .collect())
    });
    let mut records = Vec::new();
    for part in per_repeat {
        records.extend(part?);
    }
    Ok(ExperimentReport::assemble("compare", spec.describe(), records, cfg, started))
}

/// DIWIFT with the influence source taken from each pretraining checkpoint in
/// turn; `spread` is the max − min of per-checkpoint mean AUCs.
pub fn sensitivity_experiment(
    spec: &DataSpec,
    checkpoints: &[usize],
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    if checkpoints.is_empty() {
        return Err(Error::InvalidArgument("no checkpoints requested".into()));
    }
    if let Some(&e) = checkpoints
        .iter()
        .find(|&&e| e == 0 || e > cfg.pipeline.pretrain.epochs)
    {
        return Err(Error::MissingCheckpoint(e));
    }
    let started = Instant::now();
    let per_repeat = map_repeats(cfg, |r| -> Result<Vec<RunRecord>> {
        let seed = cfg.run_seed(r);
        let parts = spec.materialize(seed)?;
        let pcfg = cfg.pipeline.clone().with_root_seed(seed);
        let pre = basenet::train(
            &parts.0,
            Some(&parts.1),
            &basenet::TrainConfig {
                keep_checkpoints: true,
                ..pcfg.pretrain.clone()
            },
        )
        .map_err(|e| e.in_stage("pretrain"))?;
        checkpoints
            .iter()
            .map(|&e| {
                let theta = pre.checkpoint(e)?;
                Ok(run_job(
                    &Job {
                        method: Method::Diwift,
                        repeat: r,
                        checkpoint: Some(e),
                    },
                    &parts,
                    cfg,
                    Some(theta),
                ))
            })
            .collect()
    });
    let mut records = Vec::new();
    for part in per_repeat {
        records.extend(part?);
    }
    let mut report =
        ExperimentReport::assemble("sensitivity", spec.describe(), records, cfg, started);
    let means: Vec<f64> = report
        .summaries
        .iter()
        .map(|s| s.mean_auc)
        .filter(|v| v.is_finite())
        .collect();
    report.spread = if means.is_empty() {
        None
    } else {
        let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = means.iter().copied().fold(f64::INFINITY, f64::min);
        Some(max - min)
    };
    Ok(report)
}
