//! Synchronous federated averaging: local SGD on client shards, weighted
//! aggregation of the resulting parameter vectors, and the multi-round
//! pretraining loop. Client updates are independent and deterministically
//! seeded, so sequential and parallel schedules produce identical bits.

use crate::data::{ClientShard, LabeledDataset};
use crate::divergence::{supervised_loss_grad, DivergenceKind};
use crate::error::{Error, Result};
use crate::evaluation::accuracy;
use crate::model::{forward_logits, param_axpy, param_distance, ModelSpec, ParamVector};
use crate::seed;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Which stage of the pipeline produced a log entry or metric row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Max,
    Min,
    Post,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Max => "max",
            Phase::Min => "min",
            Phase::Post => "post",
        })
    }
}

/// Attach phase and round context to mid-run numeric failures.
pub(crate) fn tag_error(e: Error, phase: Phase, round: usize) -> Error {
    match e {
        Error::NonFinite { context } => {
            Error::NonFinite { context: format!("{phase} phase, round {round}: {context}") }
        }
        other => other,
    }
}

/// A differentiable training objective evaluated on one mini-batch.
/// Returns the batch-mean loss and its gradient with respect to the
/// parameters, aligned with the parameter vector.
pub trait BatchObjective: Sync {
    fn eval(
        &self,
        spec: &ModelSpec,
        params: &ParamVector,
        images: &Tensor,
        labels: &[usize],
    ) -> Result<(f64, ParamVector)>;
}

/// Forward a batch, apply a per-row loss at the logits, and backpropagate
/// the batch-mean loss gradient onto the parameters.
pub fn batch_loss_grads(
    spec: &ModelSpec,
    params: &ParamVector,
    images: &Tensor,
    mut per_row: impl FnMut(&[f64], usize) -> Result<(f64, Vec<f64>)>,
) -> Result<(f64, ParamVector)> {
    let mut graph = crate::graph::Graph::new();
    let pass = forward_logits(spec, params, images, &mut graph)?;
    let logits = graph.value(pass.logits).clone();
    let (b, k) = logits.row_shape();
    let mut seed_data = vec![0.0; b * k];
    let mut total = 0.0;
    for i in 0..b {
        let (loss, grad) = per_row(logits.row(i), i)?;
        total += loss;
        for j in 0..k {
            seed_data[i * k + j] = grad[j] / b as f64;
        }
    }
    let seed = Tensor::new(vec![b, k], seed_data)?;
    let mut grads = graph.backward_from(pass.logits, seed)?;
    let param_grads = pass.param_gradients(&graph, &mut grads)?;
    Ok((total / b as f64, param_grads))
}

/// Plain classification objective.
pub struct SupervisedObjective {
    pub kind: DivergenceKind,
}

impl BatchObjective for SupervisedObjective {
    fn eval(
        &self,
        spec: &ModelSpec,
        params: &ParamVector,
        images: &Tensor,
        labels: &[usize],
    ) -> Result<(f64, ParamVector)> {
        batch_loss_grads(spec, params, images, |row, i| {
            supervised_loss_grad(row, labels[i], self.kind)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

/// Hyperparameters of one client's local update.
#[derive(Debug, Clone)]
pub struct RoundConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seed of the batch-order stream; derive it from the master seed, the
    /// client id, and the round index so schedules cannot influence it.
    pub shuffle_seed: u64,
}

impl RoundConfig {
    fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        // Zero is allowed: a zero-rate phase is a deliberate identity step.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be non-negative and finite, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Mini-batch SGD over `subset` of `data`, starting from `start`.
/// An empty subset is a skip signal (`Ok(None)`), not an error: the caller
/// decides how a silent client is weighted.
pub fn local_sgd(
    spec: &ModelSpec,
    start: &ParamVector,
    data: &LabeledDataset,
    subset: &[usize],
    objective: &dyn BatchObjective,
    cfg: &RoundConfig,
    direction: Direction,
) -> Result<Option<ParamVector>> {
    cfg.validate()?;
    if subset.is_empty() {
        return Ok(None);
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Usage(format!(
            "subset index {bad} out of range for {} examples",
            data.len()
        )));
    }
    let step = match direction {
        Direction::Descent => -cfg.learning_rate,
        Direction::Ascent => cfg.learning_rate,
    };
    let mut params = start.clone();
    for epoch in 0..cfg.local_epochs {
        let mut order = subset.to_vec();
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed::derive(cfg.shuffle_seed, "epoch", epoch as u64, 0));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let images = data.images().select_rows(chunk)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            let (_, grad) = objective.eval(spec, &params, &images, &labels)?;
            params = param_axpy(step, &grad, &params)?;
        }
    }
    Ok(Some(params))
}

/// Weighted average of client updates. Weights must be non-negative with a
/// positive sum; they are normalized internally, so any uniform rescaling
/// leaves the result unchanged. Computed as the first update plus weighted
/// deviations from it, which makes averaging identical inputs exact.
pub fn aggregate(updates: &[(&ParamVector, f64)]) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::Protocol("no contributing clients in aggregation".into()));
    }
    for (_, w) in updates {
        if !w.is_finite() || *w < 0.0 {
            return Err(Error::Usage(format!("aggregation weight must be >= 0, got {w}")));
        }
    }
    let total: f64 = updates.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(Error::Protocol(
            "no contributing clients: aggregation weights sum to zero".into(),
        ));
    }
    let normalized: Vec<(&ParamVector, f64)> =
        updates.iter().map(|&(p, w)| (p, w / total)).collect();
    updates[0].0.blend_towards(&normalized)
}

/// Global training state shared by the server and the simulation driver.
#[derive(Debug, Clone)]
pub struct FederationState {
    pub spec: ModelSpec,
    pub clients: Vec<ClientShard>,
    pub global: ParamVector,
    pub round: usize,
}

impl FederationState {
    pub fn new(spec: ModelSpec, clients: Vec<ClientShard>, global: ParamVector) -> Result<Self> {
        spec.validate()?;
        if clients.is_empty() {
            return Err(Error::Config("federation needs at least one client".into()));
        }
        if !global.conforms_to(&spec) {
            return Err(Error::Config(
                "global parameters do not match the model description".into(),
            ));
        }
        Ok(FederationState { spec, clients, global, round: 0 })
    }
}

/// Pretraining hyperparameters.
#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub supervised: DivergenceKind,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("pretraining needs at least one round".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "pretraining learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        RoundConfig {
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            shuffle_seed: 0,
        }
        .validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub phase: Phase,
    pub global_test_acc: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub log: Vec<RoundLog>,
    /// Mean pairwise distance between client updates in the final round;
    /// zero when fewer than two clients contributed. Used to size the
    /// projection ball of the ascent baseline.
    pub last_round_update_spread: f64,
}

/// Run federated averaging for `cfg.rounds` rounds: broadcast the global
/// model, let every non-empty client descend on its full shard, and
/// average the results weighted by shard size.
pub fn fl_pretrain(
    state: &mut FederationState,
    cfg: &PretrainConfig,
    test: Option<&LabeledDataset>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let objective = SupervisedObjective { kind: cfg.supervised };
    let mut log = Vec::with_capacity(cfg.rounds);
    let mut last_spread = 0.0;
    for r in 0..cfg.rounds {
        let started = Instant::now();
        let round = state.round;
        let spec = &state.spec;
        let global = &state.global;
        let updates: Vec<Option<ParamVector>> = state
            .clients
            .par_iter()
            .map(|shard| {
                if shard.is_empty() {
                    return Ok(None);
                }
                let rc = RoundConfig {
                    local_epochs: cfg.local_epochs,
                    batch_size: cfg.batch_size,
                    learning_rate: cfg.learning_rate,
                    shuffle_seed: seed::derive(
                        cfg.seed,
                        "pretrain",
                        shard.client_id as u64,
                        round as u64,
                    ),
                };
                let all: Vec<usize> = (0..shard.len()).collect();
                local_sgd(spec, global, &shard.data, &all, &objective, &rc, Direction::Descent)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| tag_error(e, Phase::Pretrain, round))?;

        let weighted: Vec<(&ParamVector, f64)> = updates
            .iter()
            .zip(&state.clients)
            .filter_map(|(u, s)| u.as_ref().map(|p| (p, s.len() as f64)))
            .collect();
        if r + 1 == cfg.rounds {
            let contributed: Vec<&ParamVector> = weighted.iter().map(|(p, _)| *p).collect();
            last_spread = mean_pairwise_distance(&contributed)?;
        }
        state.global = aggregate(&weighted).map_err(|e| tag_error(e, Phase::Pretrain, round))?;
        state.round += 1;

        let global_test_acc = match test {
            Some(t) => Some(accuracy(&state.spec, &state.global, t)?),
            None => None,
        };
        log.push(RoundLog {
            round,
            phase: Phase::Pretrain,
            global_test_acc,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    Ok(PretrainOutcome { log, last_round_update_spread: last_spread })
}

fn mean_pairwise_distance(params: &[&ParamVector]) -> Result<f64> {
    if params.len() < 2 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    let mut pairs = 0usize;
    for i in 0..params.len() {
        for j in i + 1..params.len() {
            acc += param_distance(params[i], params[j])?;
            pairs += 1;
        }
    }
    Ok(acc / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::model::init_params;

    fn tiny_setup() -> (ModelSpec, ParamVector, LabeledDataset) {
        let spec = ModelSpec {
            input_dim: 6,
            hidden_dims: vec![5],
            num_classes: 3,
            use_layer_norm: true,
        };
        let params = init_params(&spec, 1).unwrap();
        let data = synth_blobs(3, 8, 6, 0.8, 2).unwrap();
        (spec, params, data)
    }

    #[test]
    fn local_sgd_empty_subset_is_a_skip() {
        let (spec, params, data) = tiny_setup();
        let obj = SupervisedObjective { kind: DivergenceKind::Kl };
        let cfg = RoundConfig {
            local_epochs: 1,
            batch_size: 4,
            learning_rate: 0.1,
            shuffle_seed: 0,
        };
        let out = local_sgd(&spec, &params, &data, &[], &obj, &cfg, Direction::Descent).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn local_sgd_is_deterministic_and_seed_sensitive() {
        let (spec, params, data) = tiny_setup();
        let obj = SupervisedObjective { kind: DivergenceKind::Kl };
        let subset: Vec<usize> = (0..data.len()).collect();
        let cfg = RoundConfig {
            local_epochs: 2,
            batch_size: 4,
            learning_rate: 0.1,
            shuffle_seed: 3,
        };
        let a = local_sgd(&spec, &params, &data, &subset, &obj, &cfg, Direction::Descent)
            .unwrap()
            .unwrap();
        let b = local_sgd(&spec, &params, &data, &subset, &obj, &cfg, Direction::Descent)
            .unwrap()
            .unwrap();
        assert_eq!(a, b);
        let other = RoundConfig { shuffle_seed: 4, ..cfg };
        let c = local_sgd(&spec, &params, &data, &subset, &obj, &other, Direction::Descent)
            .unwrap()
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ascent_with_equal_rate_mirrors_descent_on_one_batch() {
        let (spec, params, data) = tiny_setup();
        let obj = SupervisedObjective { kind: DivergenceKind::Kl };
        let subset: Vec<usize> = (0..4).collect();
        let cfg = RoundConfig {
            local_epochs: 1,
            batch_size: 4, // single batch: one step each way
            learning_rate: 0.1,
            shuffle_seed: 9,
        };
        let down = local_sgd(&spec, &params, &data, &subset, &obj, &cfg, Direction::Descent)
            .unwrap()
            .unwrap();
        let up = local_sgd(&spec, &params, &data, &subset, &obj, &cfg, Direction::Ascent)
            .unwrap()
            .unwrap();
        // start - down == up - start, segment by segment
        let lhs = param_axpy(-1.0, &down, &params).unwrap();
        let rhs = param_axpy(-1.0, &params, &up).unwrap();
        for (a, b) in lhs.segments().iter().zip(rhs.segments()) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    /// Quadratic bowl centered on a fixed target: grad = params - target.
    struct QuadraticObjective {
        target: ParamVector,
    }

    impl BatchObjective for QuadraticObjective {
        fn eval(
            &self,
            _spec: &ModelSpec,
            params: &ParamVector,
            _images: &Tensor,
            _labels: &[usize],
        ) -> Result<(f64, ParamVector)> {
            let diff = param_axpy(-1.0, &self.target, params)?;
            let loss = 0.5 * param_distance(params, &self.target)?.powi(2);
            Ok((loss, diff))
        }
    }

    #[test]
    fn ascent_then_descent_on_a_quadratic_returns_toward_start() {
        let (spec, start, data) = tiny_setup();
        let target = init_params(&spec, 7).unwrap();
        let obj = QuadraticObjective { target };
        let subset = vec![0];
        let cfg = RoundConfig {
            local_epochs: 1,
            batch_size: 1,
            learning_rate: 0.3,
            shuffle_seed: 0,
        };
        let up = local_sgd(&spec, &start, &data, &subset, &obj, &cfg, Direction::Ascent)
            .unwrap()
            .unwrap();
        let back = local_sgd(&spec, &up, &data, &subset, &obj, &cfg, Direction::Descent)
            .unwrap()
            .unwrap();
        let overshoot = param_distance(&up, &start).unwrap();
        let recovered = param_distance(&back, &start).unwrap();
        assert!(overshoot > 0.0);
        assert!(recovered < overshoot);
    }

    #[test]
    fn zero_learning_rate_is_an_identity_step() {
        let (spec, params, data) = tiny_setup();
        let obj = SupervisedObjective { kind: DivergenceKind::Kl };
        let subset: Vec<usize> = (0..data.len()).collect();
        let cfg = RoundConfig {
            local_epochs: 2,
            batch_size: 4,
            learning_rate: 0.0,
            shuffle_seed: 5,
        };
        let out = local_sgd(&spec, &params, &data, &subset, &obj, &cfg, Direction::Ascent)
            .unwrap()
            .unwrap();
        assert_eq!(out, params);
    }

    #[test]
    fn aggregate_identity_cases_are_exact() {
        let (_, params, _) = tiny_setup();
        let single = aggregate(&[(&params, 17.0)]).unwrap();
        assert_eq!(single, params);
        let triple = aggregate(&[(&params, 1.0), (&params, 1.0), (&params, 1.0)]).unwrap();
        assert_eq!(triple, params);
        let uneven = aggregate(&[(&params, 0.3), (&params, 5.0), (&params, 0.001)]).unwrap();
        assert_eq!(uneven, params);
    }

    #[test]
    fn aggregate_is_scale_invariant_in_weights() {
        let (spec, a, _) = tiny_setup();
        let b = init_params(&spec, 2).unwrap();
        let x = aggregate(&[(&a, 1.0), (&b, 3.0)]).unwrap();
        let y = aggregate(&[(&a, 10.0), (&b, 30.0)]).unwrap();
        for (sa, sb) in x.segments().iter().zip(y.segments()) {
            for (va, vb) in sa.values.iter().zip(&sb.values) {
                assert!((va - vb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aggregate_rejects_zero_total_weight() {
        let (_, params, _) = tiny_setup();
        match aggregate(&[(&params, 0.0), (&params, 0.0)]) {
            Err(Error::Protocol(_)) => {}
            other => panic!("expected protocol error, got {other:?}"),
        }
        assert!(aggregate(&[]).is_err());
        assert!(aggregate(&[(&params, -1.0)]).is_err());
    }

    #[test]
    fn identical_shards_and_seeds_average_to_either_update() {
        let (spec, params, data) = tiny_setup();
        let obj = SupervisedObjective { kind: DivergenceKind::Kl };
        let subset: Vec<usize> = (0..data.len()).collect();
        let cfg = RoundConfig {
            local_epochs: 1,
            batch_size: 4,
            learning_rate: 0.1,
            shuffle_seed: 21,
        };
        let u1 = local_sgd(&spec, &params, &data, &subset, &obj, &cfg, Direction::Descent)
            .unwrap()
            .unwrap();
        let u2 = local_sgd(&spec, &params, &data, &subset, &obj, &cfg, Direction::Descent)
            .unwrap()
            .unwrap();
        let avg = aggregate(&[(&u1, 5.0), (&u2, 5.0)]).unwrap();
        assert_eq!(avg, u1);
    }
}
