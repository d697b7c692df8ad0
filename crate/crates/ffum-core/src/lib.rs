//! Deterministic simulation engine for federated learning and federated
//! unlearning: a small reverse-mode autodiff tape, f-divergence losses,
//! MLP classifiers, corruption scenarios, the min-max unlearning protocol
//! with baselines, and privacy/utility evaluation.

pub mod data;
pub mod divergence;
pub mod error;
pub mod evaluation;
pub mod federation;
pub mod graph;
pub mod model;
pub mod seed;
pub mod tensor;
pub mod unlearning;

pub use data::{
    apply_backdoor, apply_confusion, build_scenario, load_idx, merge_datasets, partition_iid,
    select_forget, synth_blobs, triggered_variant, ClientShard, Corner, CorruptionKind,
    CorruptionSpec, LabeledDataset, Provenance, ScenarioLevel, ScenarioSpec,
};
pub use evaluation::{
    accuracy, backdoor_asr, mean_loss, mia_score, ordering_checks, per_example_losses, predict,
    threshold_sweep_balanced_accuracy, CheckOutcome, CheckStatus, EvalMode, MetricReport,
    Tolerances,
};
pub use federation::{
    aggregate, batch_loss_grads, fl_pretrain, local_sgd, BatchObjective, Direction,
    FederationState, Phase, PretrainConfig, PretrainOutcome, RoundConfig, RoundLog,
    SupervisedObjective,
};
pub use divergence::{
    clamp_probs, distill_loss_grad, divergence, generator, generator_deriv, supervised_loss_grad,
    DivergenceKind, DivergencePlan, ProbVector, PROB_FLOOR,
};
pub use error::{Error, Result};
pub use graph::{softmax, Gradients, Graph, NodeId};
pub use model::{
    forward_logits, inference_logits, init_params, load_checkpoint, param_axpy, param_distance,
    read_checkpoint, save_checkpoint, write_checkpoint, ForwardPass, ModelSpec, ParamVector,
    Segment,
};
pub use tensor::Tensor;
pub use unlearning::{
    baseline_halimi, baseline_not, ffum_run, forget_metric_mode, forgetting_clients,
    local_max_loss, local_min_loss, project_to_ball, retaining_clients, retrain_oracle,
    FfumConfig, ForgetMetricMode, HalimiConfig, NotConfig, RoundMetric, TeacherPolicy,
    UnlearnResult,
};
