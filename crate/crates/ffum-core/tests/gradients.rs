//! Finite-difference checks: every analytic gradient in the engine, from
//! single graph ops through the loss heads to the full training objectives,
//! is compared against central differences.

mod common;

use common::{check_graph_gradients, check_param_gradients, FD_STEP};
use ffum_core::divergence::{distill_loss_grad, supervised_loss_grad, DivergenceKind, ProbVector};
use ffum_core::unlearning::{local_max_loss, local_min_loss};
use ffum_core::{
    init_params, synth_blobs, DivergencePlan, LabeledDataset, ModelSpec, ParamVector, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Values bounded away from zero so the relu kink cannot sit inside the
/// finite-difference stencil.
fn random_tensor_off_zero(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let magnitude = rng.random_range(0.3..1.5);
            if rng.random_range(0.0..1.0) < 0.5 {
                -magnitude
            } else {
                magnitude
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_tensor(vec![3, 4], -1.0, 1.0, &mut rng);
    let b = random_tensor(vec![4, 2], -1.0, 1.0, &mut rng);
    check_graph_gradients(
        &[a, b],
        |g, ids| {
            let m = g.matmul(ids[0], ids[1]).unwrap();
            g.mean(m).unwrap()
        },
        "mean of matmul",
    );
}

#[test]
fn broadcast_add_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(vec![3, 4], -1.0, 1.0, &mut rng);
    let bias = random_tensor(vec![4], -0.5, 0.5, &mut rng);
    check_graph_gradients(
        &[x, bias],
        |g, ids| {
            let s = g.add(ids[0], ids[1]).unwrap();
            g.mean(s).unwrap()
        },
        "mean of broadcast add",
    );
}

#[test]
fn relu_gradients_match_finite_differences_away_from_the_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor_off_zero(vec![3, 5], &mut rng);
    check_graph_gradients(
        &[x],
        |g, ids| {
            let r = g.relu(ids[0]).unwrap();
            g.mean(r).unwrap()
        },
        "mean of relu",
    );
}

#[test]
fn layer_norm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(vec![3, 5], -1.0, 1.0, &mut rng);
    let gain = random_tensor(vec![5], 0.5, 1.5, &mut rng);
    let bias = random_tensor(vec![5], -0.5, 0.5, &mut rng);
    check_graph_gradients(
        &[x, gain, bias],
        |g, ids| {
            let n = g.layer_norm(ids[0], ids[1], ids[2]).unwrap();
            g.mean(n).unwrap()
        },
        "mean of layer norm",
    );
}

#[test]
fn softmax_log_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(vec![2, 4], -2.0, 2.0, &mut rng);
    check_graph_gradients(
        &[x],
        |g, ids| {
            let p = g.softmax_rows(ids[0]).unwrap();
            let l = g.log(p).unwrap();
            g.mean(l).unwrap()
        },
        "mean log softmax",
    );
}

#[test]
fn scalar_scaling_and_sum_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(vec![2, 3], -1.0, 1.0, &mut rng);
    check_graph_gradients(
        &[x],
        |g, ids| {
            let s = g.mul_scalar(ids[0], 1.7).unwrap();
            g.sum(s).unwrap()
        },
        "sum of scaled tensor",
    );
}

#[test]
fn select_rows_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(vec![4, 3], -1.0, 1.0, &mut rng);
    check_graph_gradients(
        &[x],
        |g, ids| {
            let s = g.select_rows(ids[0], vec![2, 0, 2]).unwrap();
            g.mean(s).unwrap()
        },
        "mean of selected rows with a duplicate",
    );
}

#[test]
fn distill_logit_gradients_match_finite_differences() {
    for kind in DivergenceKind::ALL {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let k = 4;
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let teacher_logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let teacher = ProbVector::from_logits(&teacher_logits);
            let (_, grad) = distill_loss_grad(&logits, &teacher, kind).unwrap();
            for i in 0..k {
                let mut up = logits.clone();
                up[i] += FD_STEP;
                let mut down = logits.clone();
                down[i] -= FD_STEP;
                let fd = (distill_loss_grad(&up, &teacher, kind).unwrap().0
                    - distill_loss_grad(&down, &teacher, kind).unwrap().0)
                    / (2.0 * FD_STEP);
                common::assert_rel_close(
                    grad[i],
                    fd,
                    common::FD_REL_TOL,
                    &format!("distill {kind} seed {seed} coord {i}"),
                );
            }
        }
    }
}

#[test]
fn supervised_logit_gradients_match_finite_differences() {
    for kind in DivergenceKind::ALL {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let k = 5;
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let label = rng.random_range(0..k);
            let (_, grad) = supervised_loss_grad(&logits, label, kind).unwrap();
            for i in 0..k {
                let mut up = logits.clone();
                up[i] += FD_STEP;
                let mut down = logits.clone();
                down[i] -= FD_STEP;
                let fd = (supervised_loss_grad(&up, label, kind).unwrap().0
                    - supervised_loss_grad(&down, label, kind).unwrap().0)
                    / (2.0 * FD_STEP);
                common::assert_rel_close(
                    grad[i],
                    fd,
                    common::FD_REL_TOL,
                    &format!("supervised {kind} seed {seed} coord {i}"),
                );
            }
        }
    }
}

fn tiny_model(use_layer_norm: bool) -> (ModelSpec, ParamVector, ParamVector, LabeledDataset) {
    let spec = ModelSpec {
        input_dim: 5,
        hidden_dims: vec![4],
        num_classes: 3,
        use_layer_norm,
    };
    let student = init_params(&spec, 21).unwrap();
    let teacher = init_params(&spec, 22).unwrap();
    let batch = synth_blobs(3, 2, 5, 0.8, 23).unwrap();
    (spec, student, teacher, batch)
}

#[test]
fn ascent_objective_parameter_gradients_match_finite_differences() {
    for kind in DivergenceKind::ALL {
        let (spec, student, teacher, batch) = tiny_model(true);
        let plan = DivergencePlan { forget: kind, ..Default::default() };
        let (_, analytic) = local_max_loss(&spec, &student, &teacher, &batch, &plan).unwrap();
        check_param_gradients(
            &student,
            &analytic,
            |p| local_max_loss(&spec, p, &teacher, &batch, &plan).unwrap().0,
            &format!("ascent objective, forget term {kind}"),
        );
    }
}

#[test]
fn descent_objective_parameter_gradients_match_finite_differences() {
    for (retain, supervised) in [
        (DivergenceKind::Kl, DivergenceKind::Kl),
        (DivergenceKind::ChiSquared, DivergenceKind::Js),
    ] {
        let (spec, student, teacher, batch) = tiny_model(true);
        let plan = DivergencePlan { retain, supervised, ..Default::default() };
        let (_, analytic) =
            local_min_loss(&spec, &student, &teacher, &batch, &plan, 0.5, 1.0).unwrap();
        check_param_gradients(
            &student,
            &analytic,
            |p| local_min_loss(&spec, p, &teacher, &batch, &plan, 0.5, 1.0).unwrap().0,
            &format!("descent objective, retain {retain} supervised {supervised}"),
        );
    }
}

#[test]
fn descent_objective_gradients_hold_without_layer_norm() {
    let (spec, student, teacher, batch) = tiny_model(false);
    let plan = DivergencePlan::default();
    let (_, analytic) =
        local_min_loss(&spec, &student, &teacher, &batch, &plan, 0.5, 1.0).unwrap();
    check_param_gradients(
        &student,
        &analytic,
        |p| local_min_loss(&spec, p, &teacher, &batch, &plan, 0.5, 1.0).unwrap().0,
        "descent objective without layer norm",
    );
}
