//! Central-difference verification of tape gradients.

use crate::error::Result;

use super::params::ParamStore;
use super::tape::{backward, NodeId, Tape};

/// Outcome of a gradient check over a set of probed coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_error: f64,
    /// Flat parameter index with the largest relative error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative disagreement `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar built by `loss` with
/// central differences of step `eps` at each index in `probes`.
///
/// `floor` keeps near-zero gradients from inflating the ratio.
pub fn grad_check<F>(store: &ParamStore, probes: &[usize], eps: f64, floor: f64, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let root = loss(store, &mut tape)?;
    let grad = backward(&tape, root, store)?;
    drop(tape);

    let mut eval = |p: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let r = loss(p, &mut t)?;
        Ok(t.scalar(r))
    };
    let mut work = store.clone();
    let mut report = GradCheckReport {
        probes: probes.len(),
        max_rel_error: 0.0,
        worst_index: probes.first().copied().unwrap_or(0),
        analytic: 0.0,
        numeric: 0.0,
    };
    for &i in probes {
        let x = store.values()[i];
        work.values_mut()[i] = x + eps;
        let up = eval(&work)?;
        work.values_mut()[i] = x - eps;
        let down = eval(&work)?;
        work.values_mut()[i] = x;
        let numeric = (up - down) / (2.0 * eps);
        let err = relative_error(grad[i], numeric, floor);
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = grad[i];
            report.numeric = numeric;
        }
    }
    Ok(report)
}
