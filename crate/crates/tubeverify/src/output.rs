//! CSV and JSON writers.
//!
//! Every file opens with the build identifier and the run's config echo: JSON
//! outputs carry them as `build` and `config` fields, CSV files as leading
//! `# build: ...` and `# config: ...` comment lines. The CSV body after the
//! comments depends only on the config, so identical runs produce identical
//! bodies. Column orders are fixed:
//!
//! | file | columns |
//! |------|---------|
//! | reports | [`REPORT_COLUMNS`] |
//! | samples | `index,x1..xn` |
//! | trajectory | `t,x1..xn,u1..um` |
//! | rollouts | `index,x1..xn,cost,verdict` |
//! | dataset | `x1..xn,label,split` |
//! | volume | `level,fraction,ci_halfwidth,m` |
//! | certified-volume attempts | `level,fraction,ci_halfwidth,n_processed,n_outliers,certified` |
//! | training history | `epoch,train_loss,validation_loss,metric,has_unsafe,selected` |

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use tubeverify_core::retrain::{Checkpoint, CostDataset, Split};
use tubeverify_core::rollout::{RolloutResult, Trajectory, Verdict};
use tubeverify_core::sampler::VolumeEstimate;
use tubeverify_core::verifier::{LevelAttempt, VerificationReport};
use tubeverify_core::Result as CoreResult;

use crate::config::RunConfig;
use crate::error::CliError;

/// Crate version plus `git describe` of the tree it was built from.
pub fn build_id() -> String {
    format!("tubeverify {} ({})", env!("CARGO_PKG_VERSION"), env!("TUBEVERIFY_GIT_DESCRIBE"))
}

/// JSON document with the build identifier and config echo in front.
pub fn json_document<T: Serialize>(run: &RunConfig, body: &T) -> serde_json::Value {
    let mut doc = serde_json::json!({ "build": build_id(), "config": run.echo() });
    let body = serde_json::to_value(body).expect("output serializes");
    if let (Some(d), serde_json::Value::Object(b)) = (doc.as_object_mut(), body) {
        d.extend(b);
    }
    doc
}

pub fn write_json(path: &Path, doc: &serde_json::Value) -> Result<(), CliError> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(doc).expect("JSON value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(())
}

/// Opens `path` and writes the comment preamble.
pub fn csv_writer(path: &Path, run: &RunConfig) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    create_parent(path)?;
    let file = File::create(path).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# build: {}", build_id())?;
    writeln!(out, "# config: {}", serde_json::to_string(&run.echo()).expect("config serializes"))?;
    Ok(csv::Writer::from_writer(out))
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn mode_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

pub const REPORT_COLUMNS: [&str; 26] = [
    "status",
    "format_version",
    "system",
    "mode",
    "level",
    "direction",
    "n_samples",
    "n_outliers",
    "n_errors",
    "beta",
    "epsilon",
    "one_minus_epsilon",
    "conformal_lower_bound",
    "posterior_alpha",
    "posterior_beta",
    "posterior_mean",
    "volume_fraction",
    "volume_ci_halfwidth",
    "volume_m",
    "acceptance_rate",
    "seed",
    "sample_seed",
    "dt",
    "error_policy",
    "value_fingerprint",
    "policy_fingerprint",
];

fn report_row(r: &VerificationReport) -> Vec<String> {
    vec![
        "ok".into(),
        r.format_version.to_string(),
        r.system.clone(),
        mode_name(&r.mode),
        num(r.level),
        mode_name(&r.direction),
        r.n_samples.to_string(),
        r.n_outliers.to_string(),
        r.n_errors.to_string(),
        num(r.beta),
        num(r.epsilon),
        num(1.0 - r.epsilon),
        num(r.conformal_lower_bound),
        num(r.posterior.alpha),
        num(r.posterior.beta_shape),
        num(r.posterior.mean()),
        num(r.volume.fraction),
        num(r.volume.ci_halfwidth),
        r.volume.m.to_string(),
        num(r.acceptance_rate),
        r.seed.to_string(),
        r.sample_seed.to_string(),
        num(r.dt),
        mode_name(&r.error_policy),
        format!("{:016x}", r.value_fingerprint),
        format!("{:016x}", r.policy_fingerprint),
    ]
}

/// One row per level. Failed levels keep the level and put the error kind in
/// `status`, leaving other fields empty.
pub fn write_reports(path: &Path, run: &RunConfig, rows: &[(f64, CoreResult<VerificationReport>)]) -> Result<(), CliError> {
    let mut w = csv_writer(path, run)?;
    w.write_record(REPORT_COLUMNS)?;
    for (level, r) in rows {
        match r {
            Ok(r) => w.write_record(report_row(r))?,
            Err(e) => {
                let mut row = vec![String::new(); REPORT_COLUMNS.len()];
                row[0] = CliError::from(e.clone()).kind().to_string();
                row[4] = num(*level);
                w.write_record(row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_samples(path: &Path, run: &RunConfig, states: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = csv_writer(path, run)?;
    let n = states.first().map_or(0, Vec::len);
    w.write_record(std::iter::once("index".to_string()).chain(numbered("x", n)))?;
    for (i, x) in states.iter().enumerate() {
        w.write_record(std::iter::once(i.to_string()).chain(x.iter().copied().map(num)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(path: &Path, run: &RunConfig, traj: &Trajectory) -> Result<(), CliError> {
    let mut w = csv_writer(path, run)?;
    let n = traj.states.first().map_or(0, Vec::len);
    let m = traj.controls.first().map_or(0, Vec::len);
    w.write_record(std::iter::once("t".to_string()).chain(numbered("x", n)).chain(numbered("u", m)))?;
    for ((t, x), u) in traj.times.iter().zip(&traj.states).zip(&traj.controls) {
        w.write_record(std::iter::once(num(*t)).chain(x.iter().copied().map(num)).chain(u.iter().copied().map(num)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rollouts(
    path: &Path,
    run: &RunConfig,
    states: &[Vec<f64>],
    results: &[CoreResult<RolloutResult>],
) -> Result<(), CliError> {
    let mut w = csv_writer(path, run)?;
    let n = states.first().map_or(0, Vec::len);
    w.write_record(
        std::iter::once("index".to_string()).chain(numbered("x", n)).chain(["cost".into(), "verdict".into()]),
    )?;
    for (i, (x, r)) in states.iter().zip(results).enumerate() {
        let (cost, verdict) = match r {
            Ok(r) => (num(r.cost), mode_name(&r.verdict)),
            Err(e) => (String::new(), CliError::from(e.clone()).kind().to_string()),
        };
        w.write_record(std::iter::once(i.to_string()).chain(x.iter().copied().map(num)).chain([cost, verdict]))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, run: &RunConfig, data: &CostDataset) -> Result<(), CliError> {
    let mut w = csv_writer(path, run)?;
    let n = data.inputs.first().map_or(0, Vec::len);
    w.write_record(numbered("x", n).chain(["label".into(), "split".into()]))?;
    for ((x, y), s) in data.inputs.iter().zip(&data.labels).zip(&data.splits) {
        let split = match s {
            Split::Train => "train",
            Split::Validation => "validation",
        };
        w.write_record(x.iter().copied().map(num).chain([num(*y), split.into()]))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_volumes(path: &Path, run: &RunConfig, rows: &[(f64, VolumeEstimate)]) -> Result<(), CliError> {
    let mut w = csv_writer(path, run)?;
    w.write_record(["level", "fraction", "ci_halfwidth", "m"])?;
    for (level, v) in rows {
        w.write_record([num(*level), num(v.fraction), num(v.ci_halfwidth), v.m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_attempts(path: &Path, run: &RunConfig, rows: &[LevelAttempt]) -> Result<(), CliError> {
    let mut w = csv_writer(path, run)?;
    w.write_record(["level", "fraction", "ci_halfwidth", "n_processed", "n_outliers", "certified"])?;
    for a in rows {
        w.write_record([
            num(a.level),
            num(a.volume.fraction),
            num(a.volume.ci_halfwidth),
            a.n_processed.to_string(),
            a.n_outliers.to_string(),
            a.certified.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_history(path: &Path, run: &RunConfig, history: &[Checkpoint], selected: usize) -> Result<(), CliError> {
    let mut w = csv_writer(path, run)?;
    w.write_record(["epoch", "train_loss", "validation_loss", "metric", "has_unsafe", "selected"])?;
    for (i, c) in history.iter().enumerate() {
        w.write_record([
            c.epoch.to_string(),
            num(c.train_loss),
            num(c.validation_loss),
            num(c.metric.value),
            c.metric.has_unsafe.to_string(),
            (i == selected).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The CSV body of `path`: everything after the leading `#` comment lines.
pub fn csv_body(text: &str) -> &str {
    let mut rest = text;
    while rest.starts_with('#') {
        rest = rest.find('\n').map_or("", |i| &rest[i + 1..]);
    }
    rest
}

pub fn verdict_name(v: Verdict) -> String {
    mode_name(&v)
}
