//! Central finite-difference verification of tape gradients.
//!
//! The numeric side only ever evaluates forward values, so it shares no code
//! with [`Graph::backward`](crate::graph::Graph::backward) beyond the forward
//! primitives themselves.

use alloc::vec::Vec;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Relative error with a small absolute floor so near-zero gradients do not
/// blow up the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub worst_relative: f64,
    pub checked: usize,
}

/// Compares analytic gradients of `f` with central differences at step `h`.
///
/// `f` receives a fresh graph and one trainable leaf per entry of `inputs`
/// and must return a scalar. At most `max_per_input` coordinates of each input
/// are probed (evenly strided) to bound the cost on large tensors.
pub fn check<F>(inputs: &[Tensor], h: f64, max_per_input: usize, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let n = inputs[i].len();
        let step = n.div_ceil(max_per_input.max(1)).max(1);
        for j in (0..n).step_by(step) {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(*v).map(|g| g[j]).unwrap_or(0.0);
            worst = worst.max(relative_error(analytic, numeric));
            checked += 1;
        }
    }
    Ok(GradCheck {
        worst_relative: worst,
        checked,
    })
}
