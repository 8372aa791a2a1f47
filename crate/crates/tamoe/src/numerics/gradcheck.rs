//! Finite-difference certification of analytic gradients.
//!
//! The caller runs one backward pass so that `store` holds analytic
//! gradients, then hands the same loss function here. Every entry of every
//! non-frozen parameter is perturbed by ±epsilon and the central difference
//! is compared against the stored gradient.

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (parameter name, maximum relative error over its entries).
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Total number of scalar entries checked.
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn worst_param(&self) -> Option<&(String, f64)> {
        self.per_param
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare analytic gradients in `store.grad` against central finite
/// differences of `loss_fn`. Frozen parameters are excluded. The loss
/// function is evaluated twice at the unperturbed point first; if the two
/// values differ, the check aborts with a determinism error.
pub fn finite_difference_grad(
    loss_fn: &mut dyn FnMut(&ParamStore) -> Result<f64>,
    store: &mut ParamStore,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if epsilon <= 0.0 {
        return Err(Error::Domain(format!(
            "finite-difference epsilon must be positive, got {epsilon}"
        )));
    }
    let first = loss_fn(store)?;
    let second = loss_fn(store)?;
    if first != second {
        return Err(Error::NonDeterministicLoss { first, second });
    }

    let ids: Vec<_> = store.ids().collect();
    let mut per_param = Vec::new();
    let mut max_rel_err: f64 = 0.0;
    let mut entries_checked = 0;

    for id in ids {
        if store.get(id).frozen {
            continue;
        }
        let name = store.name(id).to_string();
        let n = store.value(id).len();
        let mut worst = 0.0f64;
        for idx in 0..n {
            let orig = store.value(id).data()[idx];
            store.get_mut(id).value.data_mut()[idx] = orig + epsilon;
            let plus = loss_fn(store)?;
            store.get_mut(id).value.data_mut()[idx] = orig - epsilon;
            let minus = loss_fn(store)?;
            store.get_mut(id).value.data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = store.grad(id).data()[idx];
            worst = worst.max(relative_error(analytic, numeric));
            entries_checked += 1;
        }
        max_rel_err = max_rel_err.max(worst);
        per_param.push((name, worst));
    }

    Ok(GradCheckReport {
        per_param,
        max_rel_err,
        tolerance,
        pass: max_rel_err < tolerance,
        entries_checked,
    })
}
