//! Utility and privacy evaluation: accuracy, trigger success rate,
//! loss-threshold membership inference, and the ordering checks that
//! compare an unlearned model against the pretrained model and the
//! retraining reference.

use crate::data::{self, CorruptionKind, CorruptionSpec, LabeledDataset};
use crate::divergence::{supervised_loss_grad, DivergenceKind};
use crate::error::{Error, Result};
use crate::model::{inference_logits, ModelSpec, ParamVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const EVAL_CHUNK: usize = 512;

/// Predicted class per example; ties resolve to the lowest class index.
pub fn predict(spec: &ModelSpec, params: &ParamVector, ds: &LabeledDataset) -> Result<Vec<usize>> {
    if ds.num_classes() != spec.num_classes {
        return Err(Error::Usage(format!(
            "dataset has {} classes but the model predicts {}",
            ds.num_classes(),
            spec.num_classes
        )));
    }
    let n = ds.len();
    let mut preds = Vec::with_capacity(n);
    let mut at = 0;
    while at < n {
        let hi = (at + EVAL_CHUNK).min(n);
        let indices: Vec<usize> = (at..hi).collect();
        let batch = ds.images().select_rows(&indices)?;
        let logits = inference_logits(spec, params, &batch)?;
        for i in 0..(hi - at) {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            preds.push(best);
        }
        at = hi;
    }
    Ok(preds)
}

/// Fraction of examples whose predicted class equals the stored label.
pub fn accuracy(spec: &ModelSpec, params: &ParamVector, ds: &LabeledDataset) -> Result<f64> {
    let preds = predict(spec, params, ds)?;
    let hits = preds.iter().zip(ds.labels()).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / ds.len() as f64)
}

/// Per-example supervised loss under the given divergence.
pub fn per_example_losses(
    spec: &ModelSpec,
    params: &ParamVector,
    ds: &LabeledDataset,
    kind: DivergenceKind,
) -> Result<Vec<f64>> {
    let n = ds.len();
    let mut losses = Vec::with_capacity(n);
    let mut at = 0;
    while at < n {
        let hi = (at + EVAL_CHUNK).min(n);
        let indices: Vec<usize> = (at..hi).collect();
        let batch = ds.images().select_rows(&indices)?;
        let logits = inference_logits(spec, params, &batch)?;
        for i in 0..(hi - at) {
            let (loss, _) = supervised_loss_grad(logits.row(i), ds.labels()[at + i], kind)?;
            losses.push(loss);
        }
        at = hi;
    }
    Ok(losses)
}

pub fn mean_loss(
    spec: &ModelSpec,
    params: &ParamVector,
    ds: &LabeledDataset,
    kind: DivergenceKind,
) -> Result<f64> {
    let losses = per_example_losses(spec, params, ds, kind)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Attack success rate of the trigger: stamp the trigger onto every clean
/// test image whose label is not already the target class and measure how
/// often the model predicts the target.
pub fn backdoor_asr(
    spec: &ModelSpec,
    params: &ParamVector,
    clean_test: &LabeledDataset,
    corruption: &CorruptionSpec,
) -> Result<f64> {
    if corruption.kind != CorruptionKind::Backdoor {
        return Err(Error::Usage(
            "attack success rate is only defined for the backdoor corruption".into(),
        ));
    }
    corruption.validate(clean_test.num_classes())?;
    let target = corruption.backdoor_target_class;
    let non_target: Vec<usize> = (0..clean_test.len())
        .filter(|&i| clean_test.labels()[i] != target)
        .collect();
    if non_target.is_empty() {
        return Err(Error::Usage(
            "every test example already carries the target label".into(),
        ));
    }
    let triggered = data::triggered_variant(&clean_test.subset(&non_target)?, corruption)?;
    let preds = predict(spec, params, &triggered)?;
    let hits = preds.iter().filter(|&&p| p == target).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Best balanced accuracy of a scalar threshold that separates member
/// losses from non-member losses. Sweeps the midpoints between consecutive
/// distinct loss values plus the two outside positions, and reflects
/// scores below one half, so the result lies in `[0.5, 1]`.
pub fn threshold_sweep_balanced_accuracy(member: &[f64], non_member: &[f64]) -> Result<f64> {
    if member.is_empty() || non_member.is_empty() {
        return Err(Error::Usage("threshold sweep needs losses on both sides".into()));
    }
    if member.iter().chain(non_member).any(|v| !v.is_finite()) {
        return Err(Error::non_finite("threshold sweep input"));
    }
    let mut values: Vec<f64> = member.iter().chain(non_member).copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    values.dedup();
    let mut thresholds = Vec::with_capacity(values.len() + 1);
    thresholds.push(values[0] - 1.0);
    for w in values.windows(2) {
        thresholds.push(0.5 * (w[0] + w[1]));
    }
    thresholds.push(values[values.len() - 1] + 1.0);

    let mut best: f64 = 0.5;
    for t in thresholds {
        let tpr = member.iter().filter(|&&v| v < t).count() as f64 / member.len() as f64;
        let tnr = non_member.iter().filter(|&&v| v >= t).count() as f64 / non_member.len() as f64;
        let acc = 0.5 * (tpr + tnr);
        best = best.max(acc.max(1.0 - acc));
    }
    Ok(best)
}

/// Loss-threshold membership inference against the forget set, using the
/// held-out test set as the non-member population. Sides are balanced by
/// deterministically subsampling the larger one.
pub fn mia_score(
    spec: &ModelSpec,
    params: &ParamVector,
    forget: &LabeledDataset,
    test: &LabeledDataset,
    seed: u64,
) -> Result<f64> {
    let mut member = per_example_losses(spec, params, forget, DivergenceKind::Kl)?;
    let mut non_member = per_example_losses(spec, params, test, DivergenceKind::Kl)?;
    let m = member.len().min(non_member.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if member.len() > m {
        member.shuffle(&mut rng);
        member.truncate(m);
    }
    if non_member.len() > m {
        non_member.shuffle(&mut rng);
        non_member.truncate(m);
    }
    threshold_sweep_balanced_accuracy(&member, &non_member)
}

/// Summary metrics of one model under one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub test_acc: f64,
    pub retain_acc: Option<f64>,
    pub forget_acc: Option<f64>,
    pub backdoor_asr: Option<f64>,
    pub mia_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Corrupted data was unlearned; success is measured by utility
    /// recovery relative to the pretrained and retrained models.
    Robustness,
    /// Clean data was unlearned; success is measured by the membership
    /// attack falling back to chance without losing utility.
    Privacy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    #[serde(rename = "n/a")]
    NotApplicable,
}

/// One ordering check: what was measured, the bound it was held to, and
/// how far past the bound it landed (zero when satisfied).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub status: CheckStatus,
    pub measured: f64,
    pub bound: f64,
    pub margin: f64,
}

fn check(measured: f64, bound: f64) -> CheckOutcome {
    // Convention: the check passes when measured <= bound; margin is the
    // amount by which the bound was exceeded.
    let violation = measured - bound;
    CheckOutcome {
        status: if violation <= 0.0 { CheckStatus::Pass } else { CheckStatus::Fail },
        measured,
        bound,
        margin: violation.max(0.0),
    }
}

fn not_applicable() -> CheckOutcome {
    CheckOutcome { status: CheckStatus::NotApplicable, measured: f64::NAN, bound: f64::NAN, margin: 0.0 }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Allowed accuracy gap to the retraining reference.
    #[serde(default = "default_tau_eq")]
    pub tau_eq: f64,
    /// Allowed distance of the membership score from chance.
    #[serde(default = "default_tau_mia")]
    pub tau_mia: f64,
}

fn default_tau_eq() -> f64 {
    0.05
}
fn default_tau_mia() -> f64 {
    0.05
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { tau_eq: default_tau_eq(), tau_mia: default_tau_mia() }
    }
}

/// Compare the unlearned model against the pretrained model and, when
/// available, the retraining reference. Keys are stable check names; each
/// outcome records pass/fail and the measured margin.
pub fn ordering_checks(
    pretrained: &MetricReport,
    unlearned: &MetricReport,
    oracle: Option<&MetricReport>,
    mode: EvalMode,
    tol: &Tolerances,
) -> BTreeMap<String, CheckOutcome> {
    let mut out = BTreeMap::new();

    // Unlearning corrupted data must not cost clean-test accuracy.
    if mode == EvalMode::Robustness {
        out.insert(
            "test_acc_recovers".to_string(),
            check(pretrained.test_acc - unlearned.test_acc, 0.0),
        );
    }

    // Both modes: the unlearned model should match the retrained reference.
    out.insert(
        "test_acc_matches_oracle".to_string(),
        match oracle {
            Some(orc) => check((unlearned.test_acc - orc.test_acc).abs(), tol.tau_eq),
            None => not_applicable(),
        },
    );

    if mode == EvalMode::Privacy {
        out.insert(
            "mia_near_chance".to_string(),
            match unlearned.mia_score {
                Some(mia) => check((mia - 0.5).abs(), tol.tau_mia),
                None => not_applicable(),
            },
        );
    }

    out
}
