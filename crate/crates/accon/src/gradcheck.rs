//! Central-difference verification of reverse-mode gradients.

use crate::graph::{Graph, GraphError, NodeId};
use crate::tensor::Tensor;

/// Default perturbation for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error floor so near-zero gradient pairs do not blow up.
const REL_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter index, flat coordinate) of the worst disagreement.
    pub worst_param: usize,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= tol
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    if !a.is_finite() || !n.is_finite() {
        return f64::INFINITY;
    }
    (a - n).abs() / (a.abs() + n.abs() + REL_FLOOR)
}

/// Compare analytic gradients of a scalar-valued build against central
/// differences `(f(p+h) - f(p-h)) / 2h`, one coordinate at a time.
///
/// `build` must construct the same function each call; it is re-invoked on a
/// fresh graph for every probe. Inputs must keep the function differentiable
/// at `params` (kinks of `abs`, `sqrt` at 0, and the normalization floor are
/// the caller's responsibility to avoid).
pub fn gradcheck<F>(params: &[Tensor], step: f64, build: F) -> Result<GradCheckReport, GraphError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, GraphError>,
{
    let eval = |ps: &[Tensor]| -> Result<f64, GraphError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| g.leaf(p.clone())).collect();
        let out = build(&mut g, &ids)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let out = build(&mut g, &ids)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| g.grad(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: 0,
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coords_checked: 0,
    };
    let mut probe = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.len() {
            let orig = probe[pi].values()[ci];
            probe[pi].values_mut()[ci] = orig + step;
            let fp = eval(&probe)?;
            probe[pi].values_mut()[ci] = orig - step;
            let fm = eval(&probe)?;
            probe[pi].values_mut()[ci] = orig;

            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[pi][ci];
            let e = rel_err(a, numeric);
            report.coords_checked += 1;
            if e > report.max_rel_err || report.coords_checked == 1 {
                report.max_rel_err = e;
                report.worst_param = pi;
                report.worst_coord = ci;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
