//! Central-difference gradient checker. The closure evaluates the loss and
//! its reverse-mode gradients at the current parameters; the checker
//! perturbs each coordinate by ±eps and compares.

use super::optim::ParamStore;
use super::tensor::Tensor;
use super::NumericsError;
use std::collections::BTreeMap;

pub type LossAndGrads = (f64, BTreeMap<String, Tensor>);

/// Returns the worst relative error over all parameter coordinates.
pub fn grad_check<F>(
    f: F,
    params: &mut ParamStore,
    eps: f64,
) -> Result<f64, NumericsError>
where
    F: Fn(&ParamStore) -> Result<LossAndGrads, NumericsError>,
{
    assert!((1e-7..=1e-3).contains(&eps), "eps out of range: {eps}");
    let (loss0, analytic) = f(params)?;
    if !loss0.is_finite() {
        return Err(NumericsError::NonFinite { op: "grad_check" });
    }
    let mut worst = 0.0f64;
    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let n = params.get(name)?.numel();
        for i in 0..n {
            params.nudge(name, i, eps)?;
            let (lp, _) = f(params)?;
            params.nudge(name, i, -2.0 * eps)?;
            let (lm, _) = f(params)?;
            params.nudge(name, i, eps)?;
            if !lp.is_finite() || !lm.is_finite() {
                return Err(NumericsError::NonFinite { op: "grad_check" });
            }
            let numeric = (lp - lm) / (2.0 * eps);
            let ga = analytic
                .get(name)
                .map(|g| g.data()[i])
                .unwrap_or(0.0);
            let denom = ga.abs().max(numeric.abs()).max(1.0);
            let err = (ga - numeric).abs() / denom;
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
