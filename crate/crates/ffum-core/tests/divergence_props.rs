//! Property tests for the divergence layer: structural guarantees that must
//! hold for arbitrary probability vectors, not just hand-picked ones.

use ffum_core::divergence::{
    clamp_probs, divergence, generator, supervised_loss_grad, DivergenceKind, ProbVector,
};
use ffum_core::softmax;
use proptest::prelude::*;

const TWO_LN_2: f64 = 1.3862943611198906;

fn prob_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..6).prop_flat_map(|k| {
        let one = prop::collection::vec(1e-6..1.0f64, k).prop_map(|raw| {
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect::<Vec<f64>>()
        });
        (one.clone(), one)
    })
}

proptest! {
    #[test]
    fn divergence_is_non_negative_and_zero_on_the_diagonal((p, q) in prob_pair()) {
        let pv = ProbVector::new(p).unwrap();
        let qv = ProbVector::new(q).unwrap();
        for kind in DivergenceKind::ALL {
            let d = divergence(&pv, &qv, kind).unwrap();
            prop_assert!(d >= -1e-12, "{kind}: D = {d}");
            let same = divergence(&pv, &pv, kind).unwrap();
            prop_assert!(same.abs() <= 1e-12, "{kind}: D(P,P) = {same}");
        }
    }

    #[test]
    fn js_is_symmetric_and_bounded((p, q) in prob_pair()) {
        let pv = ProbVector::new(p).unwrap();
        let qv = ProbVector::new(q).unwrap();
        let a = divergence(&pv, &qv, DivergenceKind::Js).unwrap();
        let b = divergence(&qv, &pv, DivergenceKind::Js).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "asymmetry {a} vs {b}");
        prop_assert!(a <= TWO_LN_2 + 1e-9, "JS above its bound: {a}");
    }

    #[test]
    fn generators_are_midpoint_convex(
        a in 1e-3..4.0f64,
        b in 1e-3..4.0f64,
    ) {
        for kind in DivergenceKind::ALL {
            let mid = generator(kind, (a + b) / 2.0).unwrap();
            let avg = (generator(kind, a).unwrap() + generator(kind, b).unwrap()) / 2.0;
            prop_assert!(mid <= avg + 1e-12, "{kind}: f(mid)={mid} > avg={avg}");
        }
    }

    #[test]
    fn clamping_renormalizes_and_keeps_mass_positive(
        raw in prop::collection::vec(0.0..1.0f64, 2..6),
    ) {
        let clamped = clamp_probs(&raw);
        let sum: f64 = clamped.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
        for &v in &clamped {
            prop_assert!(v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn supervised_kl_equals_cross_entropy(
        logits in prop::collection::vec(-4.0..4.0f64, 3..6),
        label_pick in 0.0..1.0f64,
    ) {
        let label = (label_pick * logits.len() as f64) as usize % logits.len();
        let (loss, grad) = supervised_loss_grad(&logits, label, DivergenceKind::Kl).unwrap();
        let probs = softmax(&logits);
        let ce = -probs[label].ln();
        prop_assert!((loss - ce).abs() < 1e-12, "loss {loss} vs cross-entropy {ce}");
        for (i, g) in grad.iter().enumerate() {
            let expected = probs[i] - if i == label { 1.0 } else { 0.0 };
            prop_assert!((g - expected).abs() < 1e-12, "coord {i}: {g} vs {expected}");
        }
    }
}
