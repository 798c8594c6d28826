//! Central finite-difference verification of reverse-mode gradients.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Largest discrepancy found by [`grad_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub input: usize,
    pub element: usize,
}

/// Deterministic projection weights used to reduce a non-scalar output.
fn projection(len: usize) -> Vec<f64> {
    (0..len).map(|i| 1.0 + 0.5 * (1.3 * i as f64 + 0.7).sin()).collect()
}

fn evaluate<F>(build: &F, inputs: &[Tensor], trainable: bool) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| if trainable { g.param(t.clone()) } else { g.input(t.clone()) })
        .collect();
    let out = build(&mut g, &vars)?;
    let loss = if g.value(out).is_scalar() {
        out
    } else {
        let w = projection(g.value(out).numel());
        g.weighted_sum(out, w)?
    };
    Ok((g, vars, loss))
}

/// Compares reverse-mode gradients of `build` against central differences
/// for every element of every input.
///
/// Returns the maximum of `|AD - FD| / max(|FD|, 1e-8)`. Non-scalar outputs
/// are reduced with fixed projection weights so the full Jacobian is probed.
pub fn grad_check<F>(build: F, inputs: &[Tensor]) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (mut g, vars, loss) = evaluate(&build, inputs, true)?;
    g.backward(loss)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        input: 0,
        element: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[i].numel()];
        let ad = g.grad(*var).unwrap_or(&zeros).to_vec();
        for (e, &ad_e) in ad.iter().enumerate() {
            let orig = inputs[i].data()[e];
            probe[i].data_mut()[e] = orig + FD_STEP;
            let (gp, _, lp) = evaluate(&build, &probe, false)?;
            probe[i].data_mut()[e] = orig - FD_STEP;
            let (gm, _, lm) = evaluate(&build, &probe, false)?;
            probe[i].data_mut()[e] = orig;
            let fd = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * FD_STEP);
            let rel = (ad_e - fd).abs() / fd.abs().max(1e-8);
            if rel > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: rel,
                    input: i,
                    element: e,
                };
            }
        }
    }
    Ok(report)
}
