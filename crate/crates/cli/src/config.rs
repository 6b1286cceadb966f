//! The TOML run configuration. Every section and key has a default, so an
//! empty file is a valid (synthetic Syn3) configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use diwift::basenet::TrainConfig;
use diwift::dataset::{
    load_csv, numerical_schema, read_relevance, Dataset, FieldSchema, SynKind, LABEL_COLUMN,
};
use diwift::harness::{DataSpec, ExperimentConfig, Method};
use diwift::influence::LissaConfig;
use diwift::pipeline::{PipelineConfig, SelectionMode};
use diwift::rng::{derive_seed, Stage};
use diwift::selector::SelectorConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub source: Source,
    /// Synthetic generator and sample size.
    pub kind: SynKind,
    pub n: usize,
    /// One CSV file to split, or explicit `train`/`valid`/`test` files.
    pub path: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Relevance sidecar for `path` (feature indices per row, `;`-separated).
    pub relevance: Option<PathBuf>,
    pub label_column: String,
    /// Column schema; empty means every non-label column is numerical.
    pub fields: Vec<FieldSchema>,
    /// Split ratios train:valid:test.
    pub ratios: [f64; 3],
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            source: Source::Synthetic,
            kind: SynKind::Syn3,
            n: 10_000,
            path: None,
            train: None,
            valid: None,
            test: None,
            relevance: None,
            label_column: LABEL_COLUMN.to_string(),
            fields: Vec::new(),
            ratios: [3.0, 1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub threshold: f64,
    pub pretrained_checkpoint: Option<usize>,
    pub soft_retrain: bool,
    pub mode: SelectionMode,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            threshold: p.threshold,
            pretrained_checkpoint: p.pretrained_checkpoint,
            soft_retrain: p.soft_retrain,
            mode: p.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSection {
    /// Biased training rows and unbiased rows (halved into valid/test) for
    /// the synthetic protocol.
    pub n_train: usize,
    pub n_unbiased: usize,
    /// CSV sources for a real shift experiment (schema from `[dataset]`).
    pub biased_path: Option<PathBuf>,
    pub unbiased_path: Option<PathBuf>,
}

impl Default for ShiftSection {
    fn default() -> Self {
        Self {
            n_train: 6000,
            n_unbiased: 4000,
            biased_path: None,
            unbiased_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub methods: Vec<Method>,
    pub repeats: usize,
    pub parallel: bool,
    pub audit_oracle: bool,
    /// Pretraining epochs used as influence sources by `sensitivity`.
    pub checkpoints: Vec<usize>,
    pub shift: ShiftSection,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            methods: e.methods,
            repeats: e.repeats,
            parallel: e.parallel,
            audit_oracle: e.audit_oracle,
            checkpoints: vec![12, 14, 16, 18, 20],
            shift: ShiftSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stage seed is derived from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub pretrain: TrainConfig,
    pub retrain: TrainConfig,
    pub selector: SelectorConfig,
    pub lissa: LissaConfig,
    pub pipeline: PipelineSection,
    pub experiment: ExperimentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetSection::default(),
            pretrain: TrainConfig::default(),
            retrain: TrainConfig::default(),
            selector: SelectorConfig::default(),
            lissa: LissaConfig::default(),
            pipeline: PipelineSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        // relative data paths are resolved against the config file
        let base = path.parent().unwrap_or(Path::new("."));
        let d = &mut cfg.dataset;
        for p in [
            &mut d.path,
            &mut d.train,
            &mut d.valid,
            &mut d.test,
            &mut d.relevance,
            &mut cfg.experiment.shift.biased_path,
            &mut cfg.experiment.shift.unbiased_path,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Stage configs seeded like repeat 0 of an experiment with the same
    /// root seed, so a single run reproduces that repeat.
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            pretrain: self.pretrain.clone(),
            retrain: self.retrain.clone(),
            selector: self.selector.clone(),
            lissa: self.lissa.clone(),
            threshold: self.pipeline.threshold,
            pretrained_checkpoint: self.pipeline.pretrained_checkpoint,
            soft_retrain: self.pipeline.soft_retrain,
            mode: self.pipeline.mode,
        }
        .with_root_seed(derive_seed(self.seed, Stage::Data, 0))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            pipeline: self.pipeline(),
            methods: self.experiment.methods.clone(),
            repeats: self.experiment.repeats,
            root_seed: self.seed,
            parallel: self.experiment.parallel,
            audit_oracle: self.experiment.audit_oracle,
        }
    }

    /// Check everything that can be checked without running: ranges, and
    /// that referenced files exist.
    pub fn validate(&self) -> Result<(), CliError> {
        self.pipeline()
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        if self.experiment.repeats == 0 {
            return Err(config_err("experiment.repeats must be >= 1"));
        }
        let d = &self.dataset;
        match d.source {
            Source::Synthetic => {
                if d.n < 5 {
                    return Err(config_err("dataset.n must be >= 5"));
                }
            }
            Source::Csv => {
                let presplit = [&d.train, &d.valid, &d.test];
                let n_given = presplit.iter().filter(|p| p.is_some()).count();
                match (&d.path, n_given) {
                    (Some(_), 0) | (None, 3) => {}
                    _ => {
                        return Err(config_err(
                            "dataset needs either `path` or all of `train`, `valid`, `test`",
                        ))
                    }
                }
            }
        }
        let files = [
            &d.path,
            &d.train,
            &d.valid,
            &d.test,
            &d.relevance,
            &self.experiment.shift.biased_path,
            &self.experiment.shift.unbiased_path,
        ];
        for p in files.into_iter().flatten() {
            if !p.exists() {
                return Err(config_err(format!("file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    fn load_table(&self, path: &Path, relevance: Option<&Path>) -> Result<Dataset, CliError> {
        let d = &self.dataset;
        let mut ds = if d.fields.is_empty() {
            let fields = numerical_schema(path, &d.label_column)?;
            load_csv(path, &fields, &d.label_column)?
        } else {
            load_csv(path, &d.fields, &d.label_column)?
        };
        if let Some(r) = relevance {
            ds.relevance = Some(read_relevance(r, ds.d())?);
        }
        Ok(ds)
    }

    /// The experiment data source described by `[dataset]`.
    pub fn data_spec(&self) -> Result<DataSpec, CliError> {
        let d = &self.dataset;
        Ok(match d.source {
            Source::Synthetic => DataSpec::Synthetic { kind: d.kind, n: d.n },
            Source::Csv => match &d.path {
                Some(p) => DataSpec::Table {
                    data: self.load_table(p, d.relevance.as_deref())?,
                    ratios: d.ratios,
                },
                None => {
                    let get = |p: &Option<PathBuf>| self.load_table(p.as_ref().expect("validated"), None);
                    let train = get(&d.train)?;
                    let mut valid = get(&d.valid)?;
                    let mut test = get(&d.test)?;
                    let mut train = train;
                    train.refit_bounds();
                    valid.reencode_with(&train.schema)?;
                    test.reencode_with(&train.schema)?;
                    DataSpec::Presplit { train, valid, test }
                }
            },
        })
    }

    /// (train, valid, test) for single-run commands, drawn as repeat 0 of
    /// an experiment with the same root seed.
    pub fn load_parts(&self) -> Result<(Dataset, Dataset, Dataset), CliError> {
        let spec = self.data_spec()?;
        Ok(spec.materialize(self.experiment().run_seed(0))?)
    }

    pub fn load_shift_sources(&self) -> Result<Option<(Dataset, Dataset)>, CliError> {
        let s = &self.experiment.shift;
        match (&s.biased_path, &s.unbiased_path) {
            (Some(b), Some(u)) => Ok(Some((self.load_table(b, None)?, self.load_table(u, None)?))),
            (None, None) => Ok(None),
            _ => Err(config_err("shift needs both biased_path and unbiased_path")),
        }
    }

    /// Fully resolved config (defaults materialised) as TOML.
    pub fn echo(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults_and_echo_round_trips() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let back: RunConfig = toml::from_str(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn sections_override_defaults_and_unknown_keys_fail() {
        let cfg: RunConfig = toml::from_str(
            "seed = 3\n[selector]\nt_max = 5\n[dataset]\nkind = \"syn1\"\nn = 50\n[experiment]\nmethods = [\"diwift\", \"oracle_mask\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.selector.t_max, 5);
        assert_eq!(cfg.dataset.kind, SynKind::Syn1);
        assert_eq!(cfg.experiment.methods, vec![Method::Diwift, Method::OracleMask]);
        assert!(toml::from_str::<RunConfig>("[dataset]\nbogus = 1\n").is_err());
    }

    #[test]
    fn seeds_are_derived_from_the_root() {
        let a = RunConfig { seed: 1, ..RunConfig::default() }.pipeline();
        let b = RunConfig { seed: 2, ..RunConfig::default() }.pipeline();
        assert_ne!(a.pretrain.seed, b.pretrain.seed);
        assert_ne!(a.selector.seed, a.lissa.seed);
    }
}
