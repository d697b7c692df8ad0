//! The min-max unlearning protocol and its baselines. Paired rounds first
//! push the model away from the forget data (ascent on a divergence to a
//! teacher) and then pull it back onto the retain data (descent on a
//! distillation plus supervision objective); optional post rounds keep
//! refining on retain data only. Baselines: retraining from scratch on the
//! retained data, projected gradient ascent inside a parameter ball, and
//! first-layer weight negation.

use crate::data::{merge_datasets, ClientShard, LabeledDataset, Provenance};
use crate::divergence::{
    distill_loss_grad, supervised_loss_grad, DivergenceKind, DivergencePlan, ProbVector,
};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, mean_loss};
use crate::federation::{
    aggregate, batch_loss_grads, fl_pretrain, local_sgd, tag_error, BatchObjective, Direction,
    FederationState, Phase, PretrainConfig, RoundConfig, RoundLog, SupervisedObjective,
};
use crate::model::{
    inference_logits, init_params, param_axpy, param_distance, ModelSpec, ParamVector,
};
use crate::seed;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which frozen model the divergence terms compare against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherPolicy {
    /// Always the pretrained model the run started from.
    InitialModel,
    /// The global model at the start of the previous paired round (the
    /// pretrained model in round zero); during post rounds, the model
    /// entering the current round.
    PreviousRound,
}

impl Default for TeacherPolicy {
    fn default() -> Self {
        TeacherPolicy::InitialModel
    }
}

/// Hyperparameters of the min-max unlearning run.
#[derive(Debug, Clone)]
pub struct FfumConfig {
    /// Paired max+min rounds. Zero is allowed: with zero post rounds the
    /// run is a no-op that returns the input model unchanged.
    pub rounds_r: usize,
    /// Retain-only rounds appended after the paired rounds.
    pub post_rounds: usize,
    pub eta_max: f64,
    pub eta_min: f64,
    pub epochs_max: usize,
    pub epochs_min: usize,
    pub epochs_post: usize,
    /// Weight of the distillation term in the retain objective.
    pub alpha: f64,
    /// Weight of the supervised term in the retain objective.
    pub gamma: f64,
    pub batch_size: usize,
    pub plan: DivergencePlan,
    pub teacher_policy: TeacherPolicy,
    pub seed: u64,
}

impl Default for FfumConfig {
    fn default() -> Self {
        FfumConfig {
            rounds_r: 2,
            post_rounds: 3,
            eta_max: 0.05,
            eta_min: 0.1,
            epochs_max: 1,
            epochs_min: 1,
            epochs_post: 1,
            alpha: 0.5,
            gamma: 1.0,
            batch_size: 512,
            plan: DivergencePlan::default(),
            teacher_policy: TeacherPolicy::InitialModel,
            seed: 0,
        }
    }
}

impl FfumConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("eta_max", self.eta_max),
            ("eta_min", self.eta_min),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative and finite, got {value}"
                )));
            }
        }
        for (name, value) in [
            ("epochs_max", self.epochs_max),
            ("epochs_min", self.epochs_min),
            ("epochs_post", self.epochs_post),
            ("batch_size", self.batch_size),
        ] {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Global-model quality after one communication round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundMetric {
    pub round: usize,
    pub phase: Phase,
    pub retain_acc: f64,
    /// Accuracy on the forget set when its labels are corrupted (lower is
    /// better); mean loss on the forget set for clean deletions (higher
    /// means more thoroughly forgotten).
    pub forget_metric: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct UnlearnResult {
    pub final_params: ParamVector,
    /// One row per communication round, in execution order.
    pub per_round: Vec<RoundMetric>,
    pub comm_rounds_used: usize,
}

/// Clients holding at least one forgotten example; they drive the max phase.
pub fn forgetting_clients(clients: &[ClientShard]) -> Vec<&ClientShard> {
    clients.iter().filter(|s| s.n_f() > 0).collect()
}

/// Clients holding at least one retained example; only they participate in
/// min and post rounds, so a fully forgotten client stops influencing the
/// model the moment ascent ends.
pub fn retaining_clients(clients: &[ClientShard]) -> Vec<&ClientShard> {
    clients.iter().filter(|s| s.n_r() > 0).collect()
}

/// How the per-round forget metric is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForgetMetricMode {
    /// Forget data carries corrupted labels: report accuracy against them.
    Accuracy,
    /// Clean deletion: report the mean supervised loss.
    MeanLoss,
}

pub fn forget_metric_mode(forget: &LabeledDataset) -> ForgetMetricMode {
    if forget.provenance().iter().any(|&p| p != Provenance::Clean) {
        ForgetMetricMode::Accuracy
    } else {
        ForgetMetricMode::MeanLoss
    }
}

struct EvalCtx<'a> {
    spec: &'a ModelSpec,
    retain: &'a LabeledDataset,
    forget: &'a LabeledDataset,
    mode: ForgetMetricMode,
    test: Option<&'a LabeledDataset>,
}

impl EvalCtx<'_> {
    fn metric(&self, round: usize, phase: Phase, params: &ParamVector) -> Result<RoundMetric> {
        let retain_acc = accuracy(self.spec, params, self.retain)?;
        let forget_metric = match self.mode {
            ForgetMetricMode::Accuracy => accuracy(self.spec, params, self.forget)?,
            ForgetMetricMode::MeanLoss => {
                mean_loss(self.spec, params, self.forget, DivergenceKind::Kl)?
            }
        };
        let test_acc = match self.test {
            Some(t) => Some(accuracy(self.spec, params, t)?),
            None => None,
        };
        Ok(RoundMetric { round, phase, retain_acc, forget_metric, test_acc })
    }
}

fn unions(
    forgetting: &[&ClientShard],
    retaining: &[&ClientShard],
) -> Result<(LabeledDataset, LabeledDataset)> {
    let forget_parts: Vec<LabeledDataset> =
        forgetting.iter().map(|s| s.forget_data()).collect::<Result<_>>()?;
    let retain_parts: Vec<LabeledDataset> =
        retaining.iter().map(|s| s.retain_data()).collect::<Result<_>>()?;
    let forget = merge_datasets(&forget_parts.iter().collect::<Vec<_>>())?;
    let retain = merge_datasets(&retain_parts.iter().collect::<Vec<_>>())?;
    Ok((forget, retain))
}

/// Divergence between the student's prediction and a frozen teacher,
/// maximized over forget data during ascent.
struct ForgetObjective<'a> {
    teacher: &'a ParamVector,
    kind: DivergenceKind,
}

fn teacher_rows(
    spec: &ModelSpec,
    teacher: &ParamVector,
    images: &Tensor,
) -> Result<Vec<ProbVector>> {
    let logits = inference_logits(spec, teacher, images)?;
    let (b, _) = logits.row_shape();
    Ok((0..b).map(|i| ProbVector::from_logits(logits.row(i))).collect())
}

impl BatchObjective for ForgetObjective<'_> {
    fn eval(
        &self,
        spec: &ModelSpec,
        params: &ParamVector,
        images: &Tensor,
        _labels: &[usize],
    ) -> Result<(f64, ParamVector)> {
        let teacher = teacher_rows(spec, self.teacher, images)?;
        batch_loss_grads(spec, params, images, |row, i| {
            distill_loss_grad(row, &teacher[i], self.kind)
        })
    }
}

/// Weighted sum of a distillation pull toward the teacher and a supervised
/// fit to the labels, minimized over retain data.
struct RetainObjective<'a> {
    teacher: &'a ParamVector,
    plan: DivergencePlan,
    alpha: f64,
    gamma: f64,
}

impl BatchObjective for RetainObjective<'_> {
    fn eval(
        &self,
        spec: &ModelSpec,
        params: &ParamVector,
        images: &Tensor,
        labels: &[usize],
    ) -> Result<(f64, ParamVector)> {
        let teacher = teacher_rows(spec, self.teacher, images)?;
        batch_loss_grads(spec, params, images, |row, i| {
            let (ld, gd) = distill_loss_grad(row, &teacher[i], self.plan.retain)?;
            let (ls, gs) = supervised_loss_grad(row, labels[i], self.plan.supervised)?;
            let loss = self.alpha * ld + self.gamma * ls;
            let grad =
                gd.iter().zip(&gs).map(|(d, s)| self.alpha * d + self.gamma * s).collect();
            Ok((loss, grad))
        })
    }
}

/// Batch-mean ascent objective of the max phase: loss and parameter
/// gradients of the forget-term divergence to the teacher.
pub fn local_max_loss(
    spec: &ModelSpec,
    params: &ParamVector,
    teacher: &ParamVector,
    forget_batch: &LabeledDataset,
    plan: &DivergencePlan,
) -> Result<(f64, ParamVector)> {
    let obj = ForgetObjective { teacher, kind: plan.forget };
    obj.eval(spec, params, forget_batch.images(), forget_batch.labels())
}

/// Batch-mean descent objective of the min phase:
/// `alpha * distill(retain term) + gamma * supervised`.
pub fn local_min_loss(
    spec: &ModelSpec,
    params: &ParamVector,
    teacher: &ParamVector,
    retain_batch: &LabeledDataset,
    plan: &DivergencePlan,
    alpha: f64,
    gamma: f64,
) -> Result<(f64, ParamVector)> {
    let obj = RetainObjective { teacher, plan: plan.clone(), alpha, gamma };
    obj.eval(spec, params, retain_batch.images(), retain_batch.labels())
}

fn run_phase(
    spec: &ModelSpec,
    start: &ParamVector,
    clients: &[&ClientShard],
    objective: &dyn BatchObjective,
    direction: Direction,
    epochs: usize,
    batch_size: usize,
    eta: f64,
    master_seed: u64,
    purpose: &str,
    round: usize,
    phase: Phase,
) -> Result<ParamVector> {
    let updates: Vec<ParamVector> = clients
        .par_iter()
        .map(|shard| {
            let subset = match direction {
                Direction::Ascent => shard.forget_indices(),
                Direction::Descent => shard.retain_indices(),
            };
            let rc = RoundConfig {
                local_epochs: epochs,
                batch_size,
                learning_rate: eta,
                shuffle_seed: seed::derive(
                    master_seed,
                    purpose,
                    shard.client_id as u64,
                    round as u64,
                ),
            };
            local_sgd(spec, start, &shard.data, &subset, objective, &rc, direction)?.ok_or_else(
                || Error::Protocol(format!("client {} has no data for {purpose}", shard.client_id)),
            )
        })
        .collect::<Result<_>>()
        .map_err(|e| tag_error(e, phase, round))?;
    let weighted: Vec<(&ParamVector, f64)> = updates
        .iter()
        .zip(clients)
        .map(|(u, s)| {
            let w = match direction {
                Direction::Ascent => s.n_f(),
                Direction::Descent => s.n_r(),
            };
            (u, w as f64)
        })
        .collect();
    aggregate(&weighted).map_err(|e| tag_error(e, phase, round))
}

/// Run the min-max unlearning protocol from the current global model.
/// The state is read only; the caller decides what to do with the result.
pub fn ffum_run(
    state: &FederationState,
    cfg: &FfumConfig,
    test: Option<&LabeledDataset>,
) -> Result<UnlearnResult> {
    cfg.validate()?;
    state.spec.validate()?;
    let forgetting = forgetting_clients(&state.clients);
    let retaining = retaining_clients(&state.clients);
    if forgetting.is_empty() {
        return Err(Error::Config(
            "unlearning needs at least one client with forget data".into(),
        ));
    }
    if retaining.is_empty() {
        return Err(Error::Config(
            "unlearning needs at least one client with retain data".into(),
        ));
    }
    let (forget_union, retain_union) = unions(&forgetting, &retaining)?;
    let ctx = EvalCtx {
        spec: &state.spec,
        retain: &retain_union,
        forget: &forget_union,
        mode: forget_metric_mode(&forget_union),
        test,
    };

    let initial = &state.global;
    let mut theta = state.global.clone();
    // Teacher source for the previous_round policy; the pretrained model
    // stands in before any round has completed.
    let mut previous_entering = state.global.clone();
    let mut per_round = Vec::with_capacity(2 * cfg.rounds_r + cfg.post_rounds);

    for t in 0..cfg.rounds_r {
        let entering = theta.clone();
        let teacher = match cfg.teacher_policy {
            TeacherPolicy::InitialModel => initial.clone(),
            TeacherPolicy::PreviousRound => previous_entering.clone(),
        };

        let max_obj = ForgetObjective { teacher: &teacher, kind: cfg.plan.forget };
        theta = run_phase(
            &state.spec,
            &theta,
            &forgetting,
            &max_obj,
            Direction::Ascent,
            cfg.epochs_max,
            cfg.batch_size,
            cfg.eta_max,
            cfg.seed,
            "max",
            t,
            Phase::Max,
        )?;
        per_round.push(ctx.metric(per_round.len(), Phase::Max, &theta)?);

        let min_obj = RetainObjective {
            teacher: &teacher,
            plan: cfg.plan.clone(),
            alpha: cfg.alpha,
            gamma: cfg.gamma,
        };
        theta = run_phase(
            &state.spec,
            &theta,
            &retaining,
            &min_obj,
            Direction::Descent,
            cfg.epochs_min,
            cfg.batch_size,
            cfg.eta_min,
            cfg.seed,
            "min",
            t,
            Phase::Min,
        )?;
        per_round.push(ctx.metric(per_round.len(), Phase::Min, &theta)?);

        previous_entering = entering;
    }

    for p in 0..cfg.post_rounds {
        let teacher = match cfg.teacher_policy {
            TeacherPolicy::InitialModel => initial.clone(),
            TeacherPolicy::PreviousRound => theta.clone(),
        };
        let min_obj = RetainObjective {
            teacher: &teacher,
            plan: cfg.plan.clone(),
            alpha: cfg.alpha,
            gamma: cfg.gamma,
        };
        theta = run_phase(
            &state.spec,
            &theta,
            &retaining,
            &min_obj,
            Direction::Descent,
            cfg.epochs_post,
            cfg.batch_size,
            cfg.eta_min,
            cfg.seed,
            "post",
            p,
            Phase::Post,
        )?;
        per_round.push(ctx.metric(per_round.len(), Phase::Post, &theta)?);
    }

    Ok(UnlearnResult {
        final_params: theta,
        per_round,
        comm_rounds_used: 2 * cfg.rounds_r + cfg.post_rounds,
    })
}

/// Train a fresh model on the shards with all forgotten examples removed.
/// This is the gold standard the approximate methods are compared against.
/// Client ids are preserved, so with empty forget masks the run reproduces
/// pretraining bit for bit.
pub fn retrain_oracle(
    shards: &[ClientShard],
    spec: &ModelSpec,
    cfg: &PretrainConfig,
    init_seed: u64,
    test: Option<&LabeledDataset>,
) -> Result<(ParamVector, Vec<RoundLog>)> {
    let kept: Vec<ClientShard> = shards
        .iter()
        .map(|s| s.without_forgotten())
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if kept.is_empty() {
        return Err(Error::Config(
            "retraining needs at least one client with retained data".into(),
        ));
    }
    let mut state = FederationState::new(spec.clone(), kept, init_params(spec, init_seed)?)?;
    let outcome = fl_pretrain(&mut state, cfg, test)?;
    Ok((state.global, outcome.log))
}

/// Projected-ascent baseline configuration.
#[derive(Debug, Clone)]
pub struct HalimiConfig {
    pub eta_ascent: f64,
    pub ascent_epochs: usize,
    /// Radius of the parameter ball around the pretrained model that the
    /// ascent is confined to. Zero collapses every ascent step back to the
    /// start, making the run pure fine-tuning.
    pub radius: f64,
    pub finetune_rounds: usize,
    pub finetune_epochs: usize,
    pub eta_finetune: f64,
    pub batch_size: usize,
    pub supervised: DivergenceKind,
    pub seed: u64,
}

impl HalimiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius >= 0.0) {
            return Err(Error::Config(format!(
                "projection radius must be non-negative and finite, got {}",
                self.radius
            )));
        }
        for (name, value) in
            [("eta_ascent", self.eta_ascent), ("eta_finetune", self.eta_finetune)]
        {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if self.ascent_epochs == 0 {
            return Err(Error::Config("ascent_epochs must be at least 1".into()));
        }
        if self.finetune_epochs == 0 {
            return Err(Error::Config("finetune_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Pull `params` back onto the ball of the given radius around `center`
/// if it lies outside; inside the ball it is returned unchanged.
pub fn project_to_ball(
    params: ParamVector,
    center: &ParamVector,
    radius: f64,
) -> Result<ParamVector> {
    let d = param_distance(&params, center)?;
    if d <= radius {
        return Ok(params);
    }
    let delta = param_axpy(-1.0, center, &params)?;
    param_axpy(radius / d, &delta, center)
}

fn projected_ascent(
    spec: &ModelSpec,
    shard: &ClientShard,
    center: &ParamVector,
    cfg: &HalimiConfig,
) -> Result<ParamVector> {
    let objective = SupervisedObjective { kind: cfg.supervised };
    let subset = shard.forget_indices();
    let shuffle_seed = seed::derive(cfg.seed, "pga", shard.client_id as u64, 0);
    let mut params = center.clone();
    for epoch in 0..cfg.ascent_epochs {
        let mut order = subset.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed::derive(shuffle_seed, "epoch", epoch as u64, 0));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let images = shard.data.images().select_rows(chunk)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| shard.data.labels()[i]).collect();
            let (_, grad) = objective.eval(spec, &params, &images, &labels)?;
            params = param_axpy(cfg.eta_ascent, &grad, &params)?;
            params = project_to_ball(params, center, cfg.radius)?;
            let d = param_distance(&params, center)?;
            if d > cfg.radius + 1e-9 {
                return Err(Error::Protocol(format!(
                    "projection left client {} at distance {d} from the center, \
                     beyond radius {}",
                    shard.client_id, cfg.radius
                )));
            }
        }
    }
    Ok(params)
}

fn supervised_finetune(
    spec: &ModelSpec,
    retaining: &[&ClientShard],
    mut theta: ParamVector,
    rounds: usize,
    epochs: usize,
    eta: f64,
    batch_size: usize,
    kind: DivergenceKind,
    master_seed: u64,
    ctx: &EvalCtx,
    per_round: &mut Vec<RoundMetric>,
) -> Result<ParamVector> {
    let objective = SupervisedObjective { kind };
    for r in 0..rounds {
        theta = run_phase(
            spec,
            &theta,
            retaining,
            &objective,
            Direction::Descent,
            epochs,
            batch_size,
            eta,
            master_seed,
            "finetune",
            r,
            Phase::Post,
        )?;
        per_round.push(ctx.metric(per_round.len(), Phase::Post, &theta)?);
    }
    Ok(theta)
}

/// Projected-ascent baseline: forgetting clients climb their local
/// supervised loss while confined to a ball around the pretrained model,
/// their results are averaged, and retain-only fine-tuning repairs the
/// damage. One communication round for the ascent exchange plus one per
/// fine-tuning round.
pub fn baseline_halimi(
    state: &FederationState,
    cfg: &HalimiConfig,
    test: Option<&LabeledDataset>,
) -> Result<UnlearnResult> {
    cfg.validate()?;
    let forgetting = forgetting_clients(&state.clients);
    let retaining = retaining_clients(&state.clients);
    if forgetting.is_empty() {
        return Err(Error::Config(
            "the ascent baseline needs at least one client with forget data".into(),
        ));
    }
    if retaining.is_empty() {
        return Err(Error::Config(
            "the ascent baseline needs at least one client with retain data".into(),
        ));
    }
    let (forget_union, retain_union) = unions(&forgetting, &retaining)?;
    let ctx = EvalCtx {
        spec: &state.spec,
        retain: &retain_union,
        forget: &forget_union,
        mode: forget_metric_mode(&forget_union),
        test,
    };

    let updates: Vec<ParamVector> = forgetting
        .par_iter()
        .map(|shard| projected_ascent(&state.spec, shard, &state.global, cfg))
        .collect::<Result<_>>()
        .map_err(|e| tag_error(e, Phase::Max, 0))?;
    let weighted: Vec<(&ParamVector, f64)> =
        updates.iter().zip(&forgetting).map(|(u, s)| (u, s.n_f() as f64)).collect();
    let mut theta = aggregate(&weighted).map_err(|e| tag_error(e, Phase::Max, 0))?;
    let mut per_round = Vec::with_capacity(1 + cfg.finetune_rounds);
    per_round.push(ctx.metric(0, Phase::Max, &theta)?);

    theta = supervised_finetune(
        &state.spec,
        &retaining,
        theta,
        cfg.finetune_rounds,
        cfg.finetune_epochs,
        cfg.eta_finetune,
        cfg.batch_size,
        cfg.supervised,
        cfg.seed,
        &ctx,
        &mut per_round,
    )?;

    Ok(UnlearnResult {
        final_params: theta,
        per_round,
        comm_rounds_used: 1 + cfg.finetune_rounds,
    })
}

/// Weight-negation baseline configuration.
#[derive(Debug, Clone)]
pub struct NotConfig {
    pub finetune_rounds: usize,
    pub finetune_epochs: usize,
    pub eta_finetune: f64,
    pub batch_size: usize,
    pub supervised: DivergenceKind,
    pub seed: u64,
}

impl NotConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_finetune.is_finite() && self.eta_finetune > 0.0) {
            return Err(Error::Config(format!(
                "eta_finetune must be positive and finite, got {}",
                self.eta_finetune
            )));
        }
        if self.finetune_epochs == 0 {
            return Err(Error::Config("finetune_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Weight-negation baseline: flip the sign of the first linear layer's
/// weights on the server (no communication), then repair with retain-only
/// fine-tuning rounds.
pub fn baseline_not(
    state: &FederationState,
    cfg: &NotConfig,
    test: Option<&LabeledDataset>,
) -> Result<UnlearnResult> {
    cfg.validate()?;
    state.spec.validate()?;
    let forgetting = forgetting_clients(&state.clients);
    let retaining = retaining_clients(&state.clients);
    if forgetting.is_empty() {
        return Err(Error::Config(
            "the negation baseline needs at least one client with forget data".into(),
        ));
    }
    if retaining.is_empty() {
        return Err(Error::Config(
            "the negation baseline needs at least one client with retain data".into(),
        ));
    }
    let (forget_union, retain_union) = unions(&forgetting, &retaining)?;
    let ctx = EvalCtx {
        spec: &state.spec,
        retain: &retain_union,
        forget: &forget_union,
        mode: forget_metric_mode(&forget_union),
        test,
    };

    let mut theta = state.global.clone();
    let (first_weights, _) = &state.spec.segment_plan()[0];
    theta.negate_segment(first_weights)?;

    let mut per_round = Vec::with_capacity(cfg.finetune_rounds);
    theta = supervised_finetune(
        &state.spec,
        &retaining,
        theta,
        cfg.finetune_rounds,
        cfg.finetune_epochs,
        cfg.eta_finetune,
        cfg.batch_size,
        cfg.supervised,
        cfg.seed,
        &ctx,
        &mut per_round,
    )?;

    Ok(UnlearnResult {
        final_params: theta,
        per_round,
        comm_rounds_used: cfg.finetune_rounds,
    })
}
