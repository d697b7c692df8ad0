//! Experiment execution: data preparation, pretraining, method dispatch,
//! evaluation, and the sweep driver.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ffum_core::{
    accuracy, backdoor_asr, baseline_halimi, baseline_not, build_scenario, ffum_run, fl_pretrain,
    init_params, load_idx, merge_datasets, mia_score, ordering_checks, retrain_oracle, seed,
    synth_blobs, CheckOutcome, CheckStatus, ClientShard, CorruptionKind, CorruptionSpec, Error,
    EvalMode, FederationState, LabeledDataset, MetricReport, ModelSpec, ParamVector, Phase, Result,
    RoundLog, RoundMetric,
};

use crate::config::{DatasetSpec, ExperimentConfig, MethodSpec};
use crate::report;

/// One plot point: a communication round of some method. Retraining rounds
/// carry only the test accuracy.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CurveRow {
    pub round: usize,
    pub phase: Phase,
    pub retain_acc: Option<f64>,
    pub forget_metric: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Debug)]
pub struct MethodOutcome {
    pub name: String,
    pub final_params: ParamVector,
    pub curve: Vec<CurveRow>,
    pub comm_rounds_used: usize,
    pub metrics: MetricReport,
    pub checks: BTreeMap<String, CheckOutcome>,
    pub wall_ms: u64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub mode: EvalMode,
    pub n_clients: usize,
    /// Share of all training examples marked for removal, in percent.
    pub removed_pct: f64,
    pub pretrain_log: Vec<RoundLog>,
    pub pretrain_wall_ms: u64,
    pub update_spread: f64,
    pub pretrained_params: ParamVector,
    pub pretrained_metrics: MetricReport,
    pub methods: Vec<MethodOutcome>,
    pub wall_ms_total: u64,
}

impl RunOutcome {
    pub fn any_check_failed(&self) -> bool {
        self.methods
            .iter()
            .flat_map(|m| m.checks.values())
            .any(|c| c.status == CheckStatus::Fail)
    }
}

fn ms(since: Instant) -> u64 {
    since.elapsed().as_millis() as u64
}

fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<LabeledDataset> {
    match spec {
        DatasetSpec::Synthetic { num_classes, per_class, dim, spread } => {
            synth_blobs(*num_classes, *per_class, *dim, *spread, seed)
        }
        DatasetSpec::Idx { images, labels, limit, downsample_to } => {
            load_idx(images, labels, *limit, *downsample_to)
        }
    }
}

fn union(
    clients: &[ClientShard],
    part: impl Fn(&ClientShard) -> Result<LabeledDataset>,
    keep: impl Fn(&ClientShard) -> bool,
) -> Result<Option<LabeledDataset>> {
    let parts: Vec<LabeledDataset> =
        clients.iter().filter(|s| keep(s)).map(part).collect::<Result<_>>()?;
    if parts.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&LabeledDataset> = parts.iter().collect();
    merge_datasets(&refs).map(Some)
}

struct Evaluator<'a> {
    spec: &'a ModelSpec,
    test: &'a LabeledDataset,
    retain: Option<&'a LabeledDataset>,
    forget: Option<&'a LabeledDataset>,
    corruption: &'a CorruptionSpec,
    mia_enabled: bool,
    mia_seed: u64,
}

impl Evaluator<'_> {
    fn report(&self, params: &ParamVector) -> Result<MetricReport> {
        let asr = if self.corruption.kind == CorruptionKind::Backdoor {
            Some(backdoor_asr(self.spec, params, self.test, self.corruption)?)
        } else {
            None
        };
        let mia = match self.forget {
            Some(forget) if self.mia_enabled => {
                Some(mia_score(self.spec, params, forget, self.test, self.mia_seed)?)
            }
            _ => None,
        };
        Ok(MetricReport {
            test_acc: accuracy(self.spec, params, self.test)?,
            retain_acc: self
                .retain
                .map(|ds| accuracy(self.spec, params, ds))
                .transpose()?,
            forget_acc: self
                .forget
                .map(|ds| accuracy(self.spec, params, ds))
                .transpose()?,
            backdoor_asr: asr,
            mia_score: mia,
        })
    }
}

fn unlearn_curve(rows: &[RoundMetric]) -> Vec<CurveRow> {
    rows.iter()
        .map(|r| CurveRow {
            round: r.round,
            phase: r.phase,
            retain_acc: Some(r.retain_acc),
            forget_metric: Some(r.forget_metric),
            test_acc: r.test_acc,
        })
        .collect()
}

fn oracle_curve(log: &[RoundLog]) -> Vec<CurveRow> {
    log.iter()
        .map(|r| CurveRow {
            round: r.round,
            phase: r.phase,
            retain_acc: None,
            forget_metric: None,
            test_acc: r.global_test_acc,
        })
        .collect()
}

/// Ball radius used when the config leaves it to the engine: a third of the
/// client update spread observed in the final pretraining round.
fn default_ascent_radius(update_spread: f64) -> f64 {
    if update_spread > 0.0 {
        update_spread / 3.0
    } else {
        1.0
    }
}

/// Execute the full pipeline described by the config: build the scenario,
/// pretrain, run every method, and evaluate each result against the
/// pretrained model and the retraining reference when one is configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let total_start = Instant::now();

    let base = load_dataset(&cfg.dataset, seed::derive(cfg.seed, "base-data", 0, 0))?;
    if base.dim() != cfg.model.input_dim {
        return Err(Error::Config(format!(
            "model input_dim {} does not match the loaded data dim {}",
            cfg.model.input_dim,
            base.dim()
        )));
    }
    if base.num_classes() != cfg.model.num_classes {
        return Err(Error::Config(format!(
            "model num_classes {} does not match the loaded data's {}",
            cfg.model.num_classes,
            base.num_classes()
        )));
    }

    let (shards, test) = build_scenario(&base, &cfg.scenario, &cfg.corruption, cfg.seed)?;
    let init = init_params(&cfg.model, seed::derive(cfg.seed, "init", 0, 0))?;
    let mut state = FederationState::new(cfg.model.clone(), shards, init)?;

    let pre_cfg = cfg.pretrain.to_core(cfg.seed);
    let pre_start = Instant::now();
    let pre = fl_pretrain(&mut state, &pre_cfg, Some(&test))?;
    let pretrain_wall_ms = ms(pre_start);

    let total: usize = state.clients.iter().map(|s| s.len()).sum();
    let removed: usize = state.clients.iter().map(|s| s.n_f()).sum();
    let removed_pct = 100.0 * removed as f64 / total as f64;

    let forget_union = union(&state.clients, |s| s.forget_data(), |s| s.n_f() > 0)?;
    let retain_union = union(&state.clients, |s| s.retain_data(), |s| s.n_r() > 0)?;
    let evaluator = Evaluator {
        spec: &cfg.model,
        test: &test,
        retain: retain_union.as_ref(),
        forget: forget_union.as_ref(),
        corruption: &cfg.corruption,
        mia_enabled: cfg.mia_enabled(),
        mia_seed: seed::derive(cfg.seed, "mia", 0, 0),
    };
    let pretrained_metrics = evaluator.report(&state.global)?;

    let mut methods = Vec::with_capacity(cfg.methods.len());
    for m in &cfg.methods {
        let method_start = Instant::now();
        let (final_params, curve, comm_rounds_used) = match m {
            MethodSpec::Ffum(s) => {
                let r = ffum_run(&state, &s.to_core(pre_cfg.batch_size, cfg.seed), Some(&test))?;
                (r.final_params, unlearn_curve(&r.per_round), r.comm_rounds_used)
            }
            MethodSpec::Halimi(s) => {
                let radius = s
                    .radius
                    .unwrap_or_else(|| default_ascent_radius(pre.last_round_update_spread));
                let core = s.to_core(radius, pre_cfg.batch_size, cfg.seed);
                let r = baseline_halimi(&state, &core, Some(&test))?;
                (r.final_params, unlearn_curve(&r.per_round), r.comm_rounds_used)
            }
            MethodSpec::Not(s) => {
                let r = baseline_not(&state, &s.to_core(pre_cfg.batch_size, cfg.seed), Some(&test))?;
                (r.final_params, unlearn_curve(&r.per_round), r.comm_rounds_used)
            }
            MethodSpec::RetrainOracle => {
                let (params, log) = retrain_oracle(
                    &state.clients,
                    &cfg.model,
                    &pre_cfg,
                    seed::derive(cfg.seed, "init", 0, 0),
                    Some(&test),
                )?;
                (params, oracle_curve(&log), pre_cfg.rounds)
            }
        };
        let metrics = evaluator.report(&final_params)?;
        methods.push(MethodOutcome {
            name: m.name(),
            final_params,
            curve,
            comm_rounds_used,
            metrics,
            checks: BTreeMap::new(),
            wall_ms: ms(method_start),
        });
    }

    // The reference model itself is not checked against anything; every
    // other method is compared to the pretrained model and, when present,
    // to the reference.
    let mode = cfg.eval_mode();
    let tol = cfg.eval.tolerances();
    let oracle_metrics = cfg
        .methods
        .iter()
        .position(|m| matches!(m, MethodSpec::RetrainOracle))
        .map(|i| methods[i].metrics.clone());
    for (m, out) in cfg.methods.iter().zip(&mut methods) {
        if matches!(m, MethodSpec::RetrainOracle) {
            continue;
        }
        out.checks =
            ordering_checks(&pretrained_metrics, &out.metrics, oracle_metrics.as_ref(), mode, &tol);
    }

    Ok(RunOutcome {
        config: cfg.clone(),
        mode,
        n_clients: state.clients.len(),
        removed_pct,
        pretrain_log: pre.log,
        pretrain_wall_ms,
        update_spread: pre.last_round_update_spread,
        pretrained_params: state.global,
        pretrained_metrics,
        methods,
        wall_ms_total: ms(total_start),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Method,
    ForgetFraction,
    NumClients,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "method" => Ok(SweepAxis::Method),
            "forget_fraction" => Ok(SweepAxis::ForgetFraction),
            "num_clients" => Ok(SweepAxis::NumClients),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?} (expected method, forget_fraction, or num_clients)"
            ))),
        }
    }
}

/// Per-point config: the base config with one axis value substituted, its
/// own derived seed, and its own output directory.
fn point_config(
    base: &ExperimentConfig,
    axis: SweepAxis,
    value: &str,
    index: usize,
    out_dir: PathBuf,
) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Method => {
            let selected: Vec<MethodSpec> =
                cfg.methods.iter().filter(|m| m.name() == value).cloned().collect();
            if selected.is_empty() {
                let known: Vec<String> = cfg.methods.iter().map(|m| m.name()).collect();
                return Err(Error::Config(format!(
                    "no configured method named {value:?} (configured: {})",
                    known.join(", ")
                )));
            }
            cfg.methods = selected;
        }
        SweepAxis::ForgetFraction => {
            cfg.scenario.forget_fraction = value.parse().map_err(|_| {
                Error::Config(format!("forget_fraction value {value:?} is not a number"))
            })?;
        }
        SweepAxis::NumClients => {
            cfg.scenario.num_clients = value.parse().map_err(|_| {
                Error::Config(format!("num_clients value {value:?} is not a positive integer"))
            })?;
        }
    }
    cfg.seed = seed::derive(base.seed, "sweep-point", index as u64, 0);
    cfg.output_dir = out_dir;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug)]
pub struct SweepPoint {
    pub index: usize,
    pub value: String,
    pub dir: PathBuf,
    /// The error if the point failed; its outputs are kept either way.
    pub result: std::result::Result<(), Error>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub csv_path: PathBuf,
    pub rows: usize,
}

impl SweepOutcome {
    pub fn first_error(&self) -> Option<&Error> {
        self.points.iter().find_map(|p| p.result.as_ref().err())
    }
}

/// Run one experiment per axis value. Every point gets its own seed and
/// subdirectory with the full per-run outputs; the aggregate table keeps
/// one row per (point, method). Points that fail are reported but do not
/// stop the remaining points.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    out_root: &Path,
) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one axis value".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    let mut rows: Vec<report::SweepRow> = Vec::new();
    for (index, value) in values.iter().enumerate() {
        let dir = out_root.join(format!("point-{index}"));
        let result = point_config(base, axis, value, index, dir.clone()).and_then(|cfg| {
            let outcome = run_experiment(&cfg)?;
            report::write_run_outputs(&dir, &outcome)?;
            rows.extend(report::sweep_rows(&outcome));
            Ok(())
        });
        points.push(SweepPoint { index, value: value.clone(), dir, result });
    }
    let csv_path = out_root.join("sweep.csv");
    report::write_sweep_csv(&csv_path, &rows)?;
    Ok(SweepOutcome { points, csv_path, rows: rows.len() })
}
