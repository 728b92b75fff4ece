use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{bail, Result};

/// Denominator floor so that pairs of vanishing gradients do not report noise
/// as error: stencil roundoff is about `1e-15·|f|/ε`, i.e. ~1e-11 at ε = 1e-4,
/// so below ~1e-6 the comparison is effectively absolute at 1e-10.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name, element index, analytic and numeric derivative at the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// fourth-order central differences (`±ε`, `±2ε`); the second-order stencil
/// cannot pick one `ε` that is both past the curvature of layer-normed
/// near-zero rows and clear of roundoff on tiny gradients. `per_param` limits how many evenly spaced
/// elements of each parameter are probed (all when `None`).
pub fn grad_check<F>(store: &ParamStore, f: F, epsilon: f64, per_param: Option<usize>) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        bail!(Config, "finite-difference step {epsilon} outside [1e-7, 1e-3]");
    }
    let grads = {
        let mut g = Graph::new(store);
        let root = f(&mut g)?;
        g.backward(root)?
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s);
        let root = f(&mut g)?;
        Ok(g.value(root).item())
    };

    let mut work = store.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, worst: None };
    for id in store.ids() {
        let n = store.get(id).len();
        let picks: Vec<usize> = match per_param {
            Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
            _ => (0..n).collect(),
        };
        for idx in picks {
            let orig = store.get(id).data()[idx];
            let mut at = |d: f64| -> Result<f64> {
                work.get_mut(id).data_mut()[idx] = orig + d;
                eval(&work)
            };
            let (u1, d1, u2, d2) = (at(epsilon)?, at(-epsilon)?, at(2.0 * epsilon)?, at(-2.0 * epsilon)?);
            work.get_mut(id).data_mut()[idx] = orig;
            let numeric = (8.0 * (u1 - d1) - (u2 - d2)) / (12.0 * epsilon);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[idx]);
            if !analytic.is_finite() || !numeric.is_finite() {
                bail!(NonFinite, "gradient of {}[{idx}]", store.name(id));
            }
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), idx, analytic, numeric));
            }
        }
    }
    Ok(report)
}
