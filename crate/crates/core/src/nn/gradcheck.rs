//! Central finite-difference gradient checking.
//!
//! The oracle only ever evaluates the forward pass: each parameter value is
//! nudged by ±step and the loss recomputed, entirely independent of the
//! reverse-mode path it validates.

use super::{backward, ParameterSet, Tensor};
use crate::error::NnError;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub values_checked: usize,
}

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences over every learnable value in `params`.
///
/// The error is `|fd - ad| / (max(|fd|, |ad|) + 1e-3)`: relative for
/// healthy magnitudes, absolute near zero where finite differences are
/// noise-limited.
pub fn gradcheck<F>(params: &ParameterSet, mut loss_fn: F, step: f64) -> Result<GradcheckReport, NnError>
where
    F: FnMut() -> Result<Tensor, NnError>,
{
    params.zero_grad();
    let loss = loss_fn()?;
    backward(&loss)?;

    let names: Vec<String> = params.names().cloned().collect();
    let mut grads: Vec<(String, Tensor, Vec<f64>)> = Vec::new();
    for name in &names {
        let t = params.get(name)?.clone();
        if !t.requires_grad() {
            continue;
        }
        let g = t.grad().unwrap_or_else(|| vec![0.0; t.value().len()]);
        grads.push((name.clone(), t, g));
    }
    params.zero_grad();

    let mut report = GradcheckReport { max_rel_err: 0.0, worst_param: String::new(), values_checked: 0 };
    for (name, tensor, autodiff) in &grads {
        let base = tensor.value();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += step;
            tensor.set_data(plus);
            let lp = loss_fn()?.item();

            let mut minus = base.clone();
            minus[i] -= step;
            tensor.set_data(minus);
            let lm = loss_fn()?.item();

            tensor.set_data(base.clone());

            let fd = (lp - lm) / (2.0 * step);
            let ad = autodiff[i];
            let err = (fd - ad).abs() / (fd.abs().max(ad.abs()) + 1e-3);
            report.values_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = format!("{name}[{i}]");
            }
        }
    }
    // forward passes during probing may have grown tapes; leave no grads behind
    params.zero_grad();
    Ok(report)
}
