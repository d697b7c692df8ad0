// Shared helpers for the integration tests. Each test target compiles this
// module separately and uses its own subset.
#![allow(dead_code)]

use ffum_core::{Graph, NodeId, ParamVector, Segment, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

/// Relative closeness with a floor on the denominator so components near
/// zero are judged on the absolute scale of the finite-difference noise
/// instead of blowing up the ratio.
pub fn assert_rel_close(analytic: f64, reference: f64, tol: f64, what: &str) {
    let denom = analytic.abs().max(reference.abs()).max(1e-4);
    let err = (analytic - reference).abs() / denom;
    assert!(
        err < tol,
        "{what}: analytic {analytic:.12e} vs reference {reference:.12e} (rel err {err:.3e})"
    );
}

pub fn tensor_with(t: &Tensor, idx: usize, delta: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[idx] += delta;
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

/// Check every input coordinate of a scalar-valued graph against central
/// finite differences.
pub fn check_graph_gradients(
    leaves: &[Tensor],
    build: impl Fn(&mut Graph, &[NodeId]) -> NodeId,
    what: &str,
) {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| g.leaf(t.clone())).collect();
    let root = build(&mut g, &ids);
    let grads = g.backward(root).unwrap();
    let analytic: Vec<Tensor> = ids.iter().map(|&id| grads.get(id).clone()).collect();

    for (li, leaf) in leaves.iter().enumerate() {
        for i in 0..leaf.numel() {
            let eval = |delta: f64| -> f64 {
                let mut g = Graph::new();
                let ids: Vec<NodeId> = leaves
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let t = if j == li { tensor_with(t, i, delta) } else { t.clone() };
                        g.leaf(t)
                    })
                    .collect();
                let root = build(&mut g, &ids);
                g.value(root).data()[0]
            };
            let fd = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let an = analytic[li].data()[i];
            assert_rel_close(an, fd, FD_REL_TOL, &format!("{what}, leaf {li} coord {i}"));
        }
    }
}

/// Copy of `params` with one flat coordinate shifted by `delta`.
pub fn perturb_param(params: &ParamVector, flat: usize, delta: f64) -> ParamVector {
    let mut segs: Vec<Segment> = params.segments().to_vec();
    let mut rem = flat;
    for s in segs.iter_mut() {
        if rem < s.values.len() {
            s.values[rem] += delta;
            return ParamVector::from_segments(segs).unwrap();
        }
        rem -= s.values.len();
    }
    panic!("flat index {flat} out of range for {} parameters", params.dim());
}

pub fn flat_param_values(params: &ParamVector) -> Vec<f64> {
    params.segments().iter().flat_map(|s| s.values.iter().copied()).collect()
}

/// Check every parameter coordinate of a scalar loss against central
/// finite differences.
pub fn check_param_gradients(
    params: &ParamVector,
    analytic: &ParamVector,
    loss: impl Fn(&ParamVector) -> f64,
    what: &str,
) {
    let flat = flat_param_values(analytic);
    for i in 0..params.dim() {
        let up = loss(&perturb_param(params, i, FD_STEP));
        let down = loss(&perturb_param(params, i, -FD_STEP));
        let fd = (up - down) / (2.0 * FD_STEP);
        assert_rel_close(flat[i], fd, FD_REL_TOL, &format!("{what}, param coord {i}"));
    }
}
