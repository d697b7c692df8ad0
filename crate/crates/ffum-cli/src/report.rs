//! Output files: JSON report, metrics and curve tables, checkpoints.
//! Every file is written atomically (temp file in the target directory,
//! then rename), so an interrupted run never leaves truncated output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ffum_core::{
    save_checkpoint, CheckOutcome, Error, EvalMode, MetricReport, Phase, Result, RoundLog,
    ScenarioLevel,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::runner::RunOutcome;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Hash of the compact JSON encoding of the config. Recomputing it over the
/// `config` field of a report must reproduce `config_sha256`.
pub fn config_sha256(cfg: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg).map_err(json_err)?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{b:02x}").expect("writing to a string cannot fail");
    }
    Ok(hex)
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub rounds: usize,
    pub final_test_acc: Option<f64>,
    pub update_spread: f64,
    pub wall_ms: u64,
    pub log: Vec<RoundLog>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    pub comm_rounds_used: usize,
    pub wall_ms: u64,
    pub metrics: MetricReport,
    pub checks: BTreeMap<String, CheckOutcome>,
}

/// The self-contained run record written to report.json.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportDoc {
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub mode: EvalMode,
    pub n_clients: usize,
    pub removed_pct: f64,
    pub wall_ms_total: u64,
    pub pretrain: PretrainSummary,
    pub pretrained_metrics: MetricReport,
    pub methods: Vec<MethodSummary>,
}

pub fn report_doc(outcome: &RunOutcome) -> Result<ReportDoc> {
    Ok(ReportDoc {
        config_sha256: config_sha256(&outcome.config)?,
        config: outcome.config.clone(),
        mode: outcome.mode,
        n_clients: outcome.n_clients,
        removed_pct: outcome.removed_pct,
        wall_ms_total: outcome.wall_ms_total,
        pretrain: PretrainSummary {
            rounds: outcome.pretrain_log.len(),
            final_test_acc: outcome.pretrain_log.last().and_then(|r| r.global_test_acc),
            update_spread: outcome.update_spread,
            wall_ms: outcome.pretrain_wall_ms,
            log: outcome.pretrain_log.clone(),
        },
        pretrained_metrics: outcome.pretrained_metrics.clone(),
        methods: outcome
            .methods
            .iter()
            .map(|m| MethodSummary {
                name: m.name.clone(),
                comm_rounds_used: m.comm_rounds_used,
                wall_ms: m.wall_ms,
                metrics: m.metrics.clone(),
                checks: m.checks.clone(),
            })
            .collect(),
    })
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    method: &'a str,
    n_clients: usize,
    level: ScenarioLevel,
    removed_pct: f64,
    pretrain_test_acc: f64,
    test_acc: f64,
    retain_acc: Option<f64>,
    forget_acc: Option<f64>,
    backdoor_asr: Option<f64>,
    mia_score: Option<f64>,
    comm_rounds: usize,
}

fn metrics_csv(outcome: &RunOutcome) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in &outcome.methods {
        w.serialize(MetricsRow {
            method: &m.name,
            n_clients: outcome.n_clients,
            level: outcome.config.scenario.level,
            removed_pct: outcome.removed_pct,
            pretrain_test_acc: outcome.pretrained_metrics.test_acc,
            test_acc: m.metrics.test_acc,
            retain_acc: m.metrics.retain_acc,
            forget_acc: m.metrics.forget_acc,
            backdoor_asr: m.metrics.backdoor_asr,
            mia_score: m.metrics.mia_score,
            comm_rounds: m.comm_rounds_used,
        })
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e)))
}

#[derive(Serialize)]
struct CurveCsvRow<'a> {
    method: &'a str,
    round: usize,
    phase: Phase,
    retain_acc: Option<f64>,
    forget_metric: Option<f64>,
    test_acc: Option<f64>,
}

fn curves_csv(outcome: &RunOutcome) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in &outcome.methods {
        for row in &m.curve {
            w.serialize(CurveCsvRow {
                method: &m.name,
                round: row.round,
                phase: row.phase,
                retain_acc: row.retain_acc,
                forget_metric: row.forget_metric,
                test_acc: row.test_acc,
            })
            .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Write the full set of run outputs into `dir`: report.json, metrics.csv,
/// curves.csv, and one checkpoint per model.
pub fn write_run_outputs(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let doc = report_doc(outcome)?;
    let mut json = serde_json::to_vec_pretty(&doc).map_err(json_err)?;
    json.push(b'\n');
    write_atomic(&dir.join("report.json"), &json)?;
    write_atomic(&dir.join("metrics.csv"), &metrics_csv(outcome)?)?;
    write_atomic(&dir.join("curves.csv"), &curves_csv(outcome)?)?;
    save_checkpoint(&outcome.pretrained_params, &dir.join("pretrained.ckpt"))?;
    for m in &outcome.methods {
        save_checkpoint(&m.final_params, &dir.join(format!("{}.ckpt", m.name)))?;
    }
    Ok(())
}

/// One aggregate table row per (sweep point, method).
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub method: String,
    pub n_clients: usize,
    pub removed_pct: f64,
    pub pretrain_test_acc: f64,
    pub unlearn_test_acc: f64,
    pub mia_score: Option<f64>,
}

pub fn sweep_rows(outcome: &RunOutcome) -> Vec<SweepRow> {
    outcome
        .methods
        .iter()
        .map(|m| SweepRow {
            method: m.name.clone(),
            n_clients: outcome.n_clients,
            removed_pct: outcome.removed_pct,
            pretrain_test_acc: outcome.pretrained_metrics.test_acc,
            unlearn_test_acc: m.metrics.test_acc,
            mia_score: m.metrics.mia_score,
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    write_atomic(path, &bytes)?;
    Ok(path.to_path_buf())
}
