//! Finite-difference verification of the reverse pass.
//!
//! The graph is evaluated in f64 so the comparison is limited by truncation
//! error of the central difference, not by working precision. Parameters are
//! perturbed directly in the executor's buffers; going through the f32
//! network storage would quantize the step and ruin the comparison.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::exec::{Binding, Executor};
use super::{Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::nets::Network;

#[derive(Debug, Clone)]
pub struct WorstProbe {
    pub net: String,
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: usize,
    /// Coordinates rejected by the smoothness screen, not counted as probes.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst: Option<WorstProbe>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.probes > 0 && self.max_rel_err < tol
    }
}

/// Below this magnitude the ratio degenerates into an absolute test:
/// a mismatch of 1e-6 on a near-zero gradient reads as 1e-4. That absolute
/// scale sits two orders above the f64 difference-quotient noise of the
/// deepest graphs here, so noise alone can never fail a probe.
const REL_FLOOR: f64 = 1e-2;

/// Two half-step estimates of the same derivative agree to O(eps^2) when the
/// function is smooth at the probe point. Disagreement beyond these bounds
/// means the probe sits in roundoff or on some other non-smoothness, and
/// the coordinate says nothing about the correctness of the backward pass.
const SMOOTH_REL: f64 = 1e-3;
const SMOOTH_ABS: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Sign pattern of every leaky-relu input in the graph. A perturbation that
/// flips any of these crossed a kink, where the one-sided analytic
/// derivative and a straddling difference quotient legitimately disagree.
/// A conv bias shifts hundreds of pre-activations at once, so for wide
/// layers some unit sits near its kink at almost any step size; comparing
/// quotients cannot catch the symmetric case, but sign tracking is exact.
fn kink_signs(exec: &Executor<f64>, lrelu_inputs: &[NodeId], out: &mut Vec<bool>) {
    out.clear();
    for &id in lrelu_inputs {
        out.extend(exec.value(id).iter().map(|&v| v >= 0.0));
    }
}

/// Compares analytic parameter gradients of `loss` against central
/// differences with step `eps`. `probes_per_param` limits how many indices of each parameter
/// are perturbed (0 means all); the subset is drawn deterministically from
/// `seed`. Only parameters of trainable bindings are checked.
///
/// Each candidate coordinate is measured twice, at `eps` and `eps / 2`.
/// Coordinates where the two estimates disagree are locally non-smooth
/// (a perturbed leaky-relu input crossing zero) and are skipped; when a
/// probe budget is set, replacements are drawn from a wider candidate pool.
pub fn grad_check(
    graph: Graph,
    loss: NodeId,
    nets: &[&Network],
    bindings: &[Binding],
    inputs: &[(&str, &[f32])],
    eps: f64,
    probes_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Param(format!("finite-difference step {eps} outside (0, 1e-2]")));
    }
    let mut exec: Executor<f64> = Executor::new(graph, nets, bindings)?;
    exec.load_params(nets)?;

    let inputs_f64: Vec<(&str, Vec<f64>)> = inputs
        .iter()
        .map(|(n, d)| (*n, d.iter().map(|&v| v as f64).collect()))
        .collect();
    let feed: Vec<(&str, &[f64])> =
        inputs_f64.iter().map(|(n, d)| (*n, d.as_slice())).collect();

    exec.forward(&feed)?;
    let base = exec.value(loss)[0];
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss {base} during gradient check")));
    }
    exec.backward(loss)?;

    let lrelu_inputs: Vec<NodeId> = exec
        .graph()
        .nodes()
        .iter()
        .filter_map(|node| match node.op {
            Op::LeakyRelu { x, .. } => Some(x),
            _ => None,
        })
        .collect();
    let mut base_signs = Vec::new();
    kink_signs(&exec, &lrelu_inputs, &mut base_signs);
    let mut probe_signs = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport { probes: 0, skipped: 0, max_rel_err: 0.0, worst: None };

    for binding in bindings.iter().filter(|b| b.trainable) {
        let net = nets
            .iter()
            .find(|n| n.name() == binding.net)
            .ok_or_else(|| Error::Param(format!("network `{}` not supplied", binding.net)))?;
        for pidx in 0..net.len() {
            let pname = net.param_name(pidx);
            let node_ids = exec.param_nodes(net.name(), pname);
            if node_ids.is_empty() {
                continue;
            }
            let mut values: Vec<f64> =
                net.param(pidx).data().iter().map(|&v| v as f64).collect();
            let n = values.len();
            // Candidates beyond the budget are spares for skipped coordinates.
            let (candidates, want): (Vec<usize>, usize) =
                if probes_per_param == 0 || probes_per_param >= n {
                    ((0..n).collect(), n)
                } else {
                    let pool = (probes_per_param * 4 + 8).min(n);
                    (sample(&mut rng, n, pool).into_vec(), probes_per_param)
                };

            // A parameter used by several nodes accumulates gradient in each;
            // the finite difference sees their sum.
            let mut accepted = 0;
            for &i in &candidates {
                if accepted >= want {
                    break;
                }
                let analytic: f64 = node_ids
                    .iter()
                    .map(|&id| exec.grad(id).expect("trainable param has grads")[i])
                    .sum();

                let x0 = values[i];
                let mut crossed = false;
                let mut eval_at = |exec: &mut Executor<f64>,
                                   crossed: &mut bool,
                                   v: f64|
                 -> Result<f64> {
                    values[i] = v;
                    for &id in &node_ids {
                        exec.set_value(id, &values);
                    }
                    exec.forward(&feed)?;
                    kink_signs(exec, &lrelu_inputs, &mut probe_signs);
                    *crossed |= probe_signs != base_signs;
                    Ok(exec.value(loss)[0])
                };
                let full = (eval_at(&mut exec, &mut crossed, x0 + eps)?
                    - eval_at(&mut exec, &mut crossed, x0 - eps)?)
                    / (2.0 * eps);
                let half = (eval_at(&mut exec, &mut crossed, x0 + eps / 2.0)?
                    - eval_at(&mut exec, &mut crossed, x0 - eps / 2.0)?)
                    / eps;
                values[i] = x0;
                for &id in &node_ids {
                    exec.set_value(id, &values);
                }

                let thresh = (SMOOTH_REL * full.abs().max(half.abs())).max(SMOOTH_ABS);
                if crossed || (full - half).abs() > thresh {
                    report.skipped += 1;
                    continue;
                }
                accepted += 1;

                let err = rel_err(analytic, half);
                report.probes += 1;
                if err > report.max_rel_err {
                    report.max_rel_err = err;
                    report.worst = Some(WorstProbe {
                        net: net.name().to_string(),
                        param: pname.to_string(),
                        index: i,
                        analytic,
                        numeric: half,
                    });
                }
            }
        }
    }
    Ok(report)
}
