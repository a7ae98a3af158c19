//! Central finite-difference verification of model gradients.

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::model::ModelParams;

/// Magnitude below which gradient differences are compared absolutely:
/// the relative error is `|a − n| / max(|a|, |n|, GRADIENT_FLOOR)`.
///
/// Central differences carry a round-off error of roughly `ε·|L| / h`; for
/// losses up to 16 (ratings on a 1–5 scale) and `h = 1e-5` that is ~4e-10,
/// so gradients much smaller than 1e-5 cannot be resolved to 1e-4 relative.
pub const GRADIENT_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub max_rel_error: f64,
    /// `name[index]` of the entry with the largest relative error.
    pub worst: String,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR)
}

/// Compares the analytic gradient of the training loss (no dropout) with
/// central differences of step `h` for every parameter entry.
pub fn check_gradients(params: &ModelParams, embeddings: &Tensor, rating: f64, h: f64) -> Result<GradientReport> {
    let (mut graph, loss) = params.loss_graph(embeddings, rating, None)?;
    graph.backward(loss)?;
    let analytic = graph.param_gradients();
    let loss_at = |p: &ModelParams| -> Result<f64> {
        let (g, l) = p.loss_graph(embeddings, rating, None)?;
        Ok(g.value(l).data()[0])
    };
    let mut report = GradientReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut probe = params.clone();
    for (name, tensor) in params.tensors() {
        for i in 0..tensor.numel() {
            let original = tensor.data()[i];
            probe.tensors_mut().get_mut(name).expect("same names").data_mut()[i] = original + h;
            let plus = loss_at(&probe)?;
            probe.tensors_mut().get_mut(name).expect("same names").data_mut()[i] = original - h;
            let minus = loss_at(&probe)?;
            probe.tensors_mut().get_mut(name).expect("same names").data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = relative_error(analytic[name].data()[i], numeric);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = format!("{name}[{i}] (analytic {:e}, numeric {numeric:e})", analytic[name].data()[i]);
            }
        }
    }
    Ok(report)
}
