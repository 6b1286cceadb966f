use std::path::{Path, PathBuf};

use diwift::basenet::{self, BaseParams};
use diwift::dataset::{gen_syn, write_csv, write_relevance, SynKind};
use diwift::harness::{
    auc, compare as run_compare, mask_report, sensitivity_experiment, shift_experiment,
    synthetic_shift_experiment, ExperimentReport,
};
use diwift::influence::{write_influence_csv, InfluenceVector};
use diwift::pipeline::{run_diwift, zero_feature_violations, DiwiftModel, SelectionMode};
use diwift::selector::train_selector;
use diwift::Error;

use crate::config::RunConfig;
use crate::{CliError, Common};

type Result<T> = std::result::Result<T, CliError>;

/// Config file (or defaults) with flag overrides applied, validated, and
/// echoed into the output directory.
fn resolve(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    create_dir(&out)?;
    write_text(&out.join("config.toml"), &cfg.echo())?;
    Ok((cfg, out))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    write_text(path, &text)
}

pub fn gen(kind: SynKind, n: usize, seed: u64, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(CliError::Config("--n must be >= 1".into()));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let ds = gen_syn(kind, n, seed)?;
    write_csv(&ds, out)?;
    let sidecar = sidecar_path(out, "relevance");
    write_relevance(ds.relevance.as_ref().expect("synthetic relevance"), &sidecar)?;
    write_text(
        &sidecar_path(out, "config.toml"),
        &format!("kind = \"{kind}\"\nn = {n}\nseed = {seed}\n"),
    )?;
    log::info!("wrote {} rows to {} and {}", n, out.display(), sidecar.display());
    Ok(())
}

fn sidecar_path(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

pub fn pretrain(common: &Common) -> Result<()> {
    let (cfg, out) = resolve(common)?;
    let pcfg = cfg.pipeline();
    let (train, valid, _) = cfg.load_parts()?;
    let result = basenet::train(&train, Some(&valid), &pcfg.pretrain)?;
    let echo = serde_json::to_value(&pcfg.pretrain).map_err(Error::from)?;
    let theta = match cfg.pipeline.pretrained_checkpoint {
        Some(e) if pcfg.pretrain.keep_checkpoints => result.checkpoint(e)?,
        Some(_) => {
            return Err(CliError::Config(
                "pipeline.pretrained_checkpoint needs pretrain.keep_checkpoints = true".into(),
            ))
        }
        None => &result.params,
    };
    theta.save(&out.join("pretrained.json"), pcfg.pretrain.seed, echo.clone())?;
    if !result.checkpoints.is_empty() {
        let dir = out.join("checkpoints");
        create_dir(&dir)?;
        for (i, c) in result.checkpoints.iter().enumerate() {
            c.save(&dir.join(format!("epoch_{:03}.json", i + 1)), pcfg.pretrain.seed, echo.clone())?;
        }
    }
    write_json(&out.join("history.json"), &result.history)?;
    for r in &result.history {
        println!(
            "epoch {:>3}  train loss {:.5}  valid loss {}",
            r.epoch,
            r.train_loss,
            r.valid_loss.map_or("-".into(), |v| format!("{v:.5}"))
        );
    }
    println!("selected epoch {}; model in {}", result.best_epoch, out.display());
    Ok(())
}

pub fn select(common: &Common, pretrained: &Path) -> Result<()> {
    if !pretrained.exists() {
        return Err(Error::io(
            pretrained,
            std::io::Error::new(std::io::ErrorKind::NotFound, "pretrained model not found"),
        )
        .into());
    }
    let (cfg, out) = resolve(common)?;
    let theta: BaseParams = BaseParams::load(pretrained)?.params;
    let pcfg = cfg.pipeline();
    let (train, valid, _) = cfg.load_parts()?;
    let result = train_selector(&theta, &train, &valid, &pcfg.selector, &pcfg.lissa)?;
    let echo = serde_json::to_value(&pcfg.selector).map_err(Error::from)?;
    result
        .params
        .save(&out.join("selector.json"), pcfg.selector.seed, echo)?;
    let vectors: Vec<InfluenceVector> = result
        .influence
        .rows()
        .into_iter()
        .enumerate()
        .map(|(index, r)| InfluenceVector {
            index,
            values: r.to_vec(),
        })
        .collect();
    write_influence_csv(
        &out.join("influence.csv"),
        &vectors,
        &train.feature_names(),
        &pcfg.lissa,
        result.influence_scale.unwrap_or(f64::NAN),
    )?;
    write_json(&out.join("selector_trace.json"), &result.trace)?;
    for e in &result.trace {
        println!("epoch {:>3}  tau {:.4}  selection loss {:.6e}", e.epoch, e.tau, e.loss);
    }
    Ok(())
}

pub fn run(common: &Common, identity_mask: bool) -> Result<()> {
    let (cfg, out) = resolve(common)?;
    let mut pcfg = cfg.pipeline();
    if identity_mask {
        pcfg.mode = SelectionMode::Identity;
    }
    let (train, valid, test) = cfg.load_parts()?;
    let output = run_diwift(&train, &valid, &pcfg)?;
    let echo = serde_json::to_value(&pcfg).map_err(Error::from)?;
    output.persist(&out, &train.feature_names(), &echo)?;
    let scores = output.model.predict_dataset(&test)?;
    let test_auc = auc(&scores, &test.y)?;
    let violations = zero_feature_violations(&output.model.masks(&test.x)?, &test.x);
    write_json(
        &out.join("evaluation.json"),
        &serde_json::json!({
            "test_auc": test_auc,
            "test_rows": test.n(),
            "test_zero_feature_violations": violations,
        }),
    )?;
    println!(
        "{:?}: test AUC {test_auc:.4}, kept {:.3} of nonzero training features; run directory {}",
        pcfg.mode,
        output.metrics.train_selected_fraction,
        out.display()
    );
    Ok(())
}

fn emit(report: &ExperimentReport, dir: &Path) -> Result<()> {
    report.write(dir)?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn compare(common: &Common) -> Result<()> {
    let (cfg, out) = resolve(common)?;
    let report = run_compare(&cfg.data_spec()?, &cfg.experiment())?;
    emit(&report, &out)
}

pub fn shift(common: &Common) -> Result<()> {
    let (cfg, out) = resolve(common)?;
    let exp = cfg.experiment();
    match cfg.load_shift_sources()? {
        Some((biased, unbiased)) => emit(&shift_experiment(&biased, &unbiased, &exp)?, &out),
        None => {
            let s = &cfg.experiment.shift;
            let rep = synthetic_shift_experiment(cfg.dataset.kind, s.n_train, s.n_unbiased, &exp)?;
            rep.shifted.write(&out.join("shifted"))?;
            rep.unshifted.write(&out.join("unshifted"))?;
            write_json(&out.join("drops.json"), &rep.drops)?;
            let text = rep.to_text();
            write_text(&out.join("report.txt"), &text)?;
            print!("{text}");
            Ok(())
        }
    }
}

pub fn sensitivity(common: &Common) -> Result<()> {
    let (cfg, out) = resolve(common)?;
    let report = sensitivity_experiment(&cfg.data_spec()?, &cfg.experiment.checkpoints, &cfg.experiment())?;
    emit(&report, &out)
}

pub fn report_mask(common: &Common, run: &Path, rows: &[usize]) -> Result<()> {
    let mut common_out = common.out.clone();
    if common_out.is_none() {
        common_out = Some(run.join("mask_report"));
    }
    let (cfg, out) = resolve(&Common {
        config: common.config.clone(),
        out: common_out,
        seed: common.seed,
    })?;
    let model = DiwiftModel::load(run)?;
    let (_, _, test) = cfg.load_parts()?;
    let rows: Vec<usize> = if rows.is_empty() {
        (0..test.n().min(20)).collect()
    } else {
        rows.to_vec()
    };
    let report = mask_report(&model, &test, &rows)?;
    write_text(&out.join("mask_report.csv"), &report.to_csv())?;
    write_json(&out.join("mask_report.json"), &report)?;
    print!("{}", report.to_text());
    Ok(())
}
