//! f-divergences between probability vectors, their convex generators, and
//! loss/gradient pairs for the two ways a divergence is used in training:
//! as a distillation loss against a frozen teacher (differentiable in the
//! first argument) and as a supervised loss against a one-hot label
//! (differentiable in the second argument).

use crate::error::{Error, Result};
use crate::graph::softmax;
use serde::{Deserialize, Serialize};

/// Smallest probability admitted by the clamp that guards ratio evaluation.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivergenceKind {
    #[serde(rename = "kl")]
    Kl,
    #[serde(rename = "chi2")]
    ChiSquared,
    #[serde(rename = "js")]
    Js,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 3] =
        [DivergenceKind::Kl, DivergenceKind::ChiSquared, DivergenceKind::Js];

    pub fn name(self) -> &'static str {
        match self {
            DivergenceKind::Kl => "kl",
            DivergenceKind::ChiSquared => "chi2",
            DivergenceKind::Js => "js",
        }
    }
}

impl std::fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(DivergenceKind::Kl),
            "chi2" => Ok(DivergenceKind::ChiSquared),
            "js" => Ok(DivergenceKind::Js),
            other => Err(Error::Config(format!(
                "unknown divergence kind {other:?} (expected kl, chi2, or js)"
            ))),
        }
    }
}

/// Which divergence drives each loss term of the unlearning objective.
/// The default pairs a bounded generator with the ascent (forget) term so
/// ascent steps are implicitly trust-regioned, and keeps the retain and
/// supervised terms on the classical generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergencePlan {
    pub retain: DivergenceKind,
    pub forget: DivergenceKind,
    pub supervised: DivergenceKind,
}

impl Default for DivergencePlan {
    fn default() -> Self {
        DivergencePlan {
            retain: DivergenceKind::Kl,
            forget: DivergenceKind::Js,
            supervised: DivergenceKind::Kl,
        }
    }
}

impl DivergencePlan {
    /// Short tag used in method names and output tables, e.g. "kl-js".
    pub fn tag(&self) -> String {
        format!("{}-{}", self.retain, self.forget)
    }
}

/// Generator f evaluated at ratio `t >= 0`. Each generator is convex with
/// f(1) = 0; the value at t = 0 is the right-sided limit.
pub fn generator(kind: DivergenceKind, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("generator ratio must be >= 0, got {t}")));
    }
    Ok(match kind {
        DivergenceKind::Kl => {
            if t == 0.0 {
                0.0
            } else {
                t * t.ln()
            }
        }
        DivergenceKind::ChiSquared => (1.0 - t) * (1.0 - t),
        DivergenceKind::Js => {
            if t == 0.0 {
                std::f64::consts::LN_2
            } else {
                t * (2.0 * t / (1.0 + t)).ln() + (2.0 / (1.0 + t)).ln()
            }
        }
    })
}

/// Derivative of the generator, defined for `t > 0`.
pub fn generator_deriv(kind: DivergenceKind, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("generator derivative needs t > 0, got {t}")));
    }
    Ok(match kind {
        DivergenceKind::Kl => t.ln() + 1.0,
        DivergenceKind::ChiSquared => 2.0 * (t - 1.0),
        DivergenceKind::Js => (2.0 * t / (1.0 + t)).ln(),
    })
}

/// A probability vector: non-negative entries summing to one within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("probability vector cannot be empty".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!(
                "probability entries must be finite and non-negative: {values:?}"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "probabilities must sum to 1 within 1e-9, got {sum}"
            )));
        }
        Ok(ProbVector(values))
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        ProbVector(softmax(logits))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Clamp entries to `[PROB_FLOOR, 1]` and renormalize to sum one.
pub fn clamp_probs(values: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = values.iter().map(|v| v.clamp(PROB_FLOOR, 1.0)).collect();
    let sum: f64 = clamped.iter().sum();
    clamped.into_iter().map(|v| v / sum).collect()
}

/// D_f(P || Q) = sum_i q_i f(p_i / q_i), with both arguments clamped and
/// renormalized first so the ratio is always well defined.
pub fn divergence(p: &ProbVector, q: &ProbVector, kind: DivergenceKind) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Usage(format!(
            "divergence arguments must have equal length ({} vs {})",
            p.len(),
            q.len()
        )));
    }
    let (cp, cq) = (clamp_probs(p.values()), clamp_probs(q.values()));
    let mut acc = 0.0;
    for (pi, qi) in cp.iter().zip(&cq) {
        acc += qi * generator(kind, pi / qi)?;
    }
    Ok(acc)
}

/// Distillation loss `D_f(softmax(logits) || teacher)` and its gradient with
/// respect to the logits. The teacher is a constant.
pub fn distill_loss_grad(
    student_logits: &[f64],
    teacher: &ProbVector,
    kind: DivergenceKind,
) -> Result<(f64, Vec<f64>)> {
    if student_logits.len() != teacher.len() {
        return Err(Error::Usage(format!(
            "logits length {} does not match teacher length {}",
            student_logits.len(),
            teacher.len()
        )));
    }
    let p = softmax(student_logits);
    let (cp, cq) = (clamp_probs(&p), clamp_probs(teacher.values()));
    let k = p.len();
    let mut loss = 0.0;
    // dD/dp_i = f'(p_i / q_i); the clamp is a numerical guard, treated as
    // the identity when differentiating.
    let mut dp = vec![0.0; k];
    for i in 0..k {
        let t = cp[i] / cq[i];
        loss += cq[i] * generator(kind, t)?;
        dp[i] = generator_deriv(kind, t)?;
    }
    let grad = softmax_vjp(&p, &dp);
    Ok((loss, grad))
}

/// Supervised loss `D_f(onehot(label) || softmax(logits))` and its gradient
/// with respect to the logits. The one-hot side stays exact (zeros use the
/// generator's limit at 0); only the prediction side is clamped.
pub fn supervised_loss_grad(
    logits: &[f64],
    label: usize,
    kind: DivergenceKind,
) -> Result<(f64, Vec<f64>)> {
    let k = logits.len();
    if label >= k {
        return Err(Error::Usage(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    let q = softmax(logits);
    let cq = clamp_probs(&q);
    let f0 = generator(kind, 0.0)?;
    let mut loss = 0.0;
    // d/dq_i [ q_i f(p_i/q_i) ] = f(t) - t f'(t); at p_i = 0 the term is
    // q_i f(0) so the derivative is f(0).
    let mut dq = vec![0.0; k];
    for i in 0..k {
        if i == label {
            let t = 1.0 / cq[i];
            loss += cq[i] * generator(kind, t)?;
            dq[i] = generator(kind, t)? - t * generator_deriv(kind, t)?;
        } else {
            loss += cq[i] * f0;
            dq[i] = f0;
        }
    }
    let grad = softmax_vjp(&q, &dq);
    Ok((loss, grad))
}

/// Vector-Jacobian product of softmax at output `p` with cotangent `d`:
/// out_j = p_j (d_j - sum_i d_i p_i).
fn softmax_vjp(p: &[f64], d: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(d).map(|(a, b)| a * b).sum();
    p.iter().zip(d).map(|(pi, di)| pi * (di - dot)).collect()
}
