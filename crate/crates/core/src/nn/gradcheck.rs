use super::param::ParamStore;
use crate::error::{Error, Result};

/// Worst relative error seen for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

/// Denominator floor so that entries whose true gradient is ~0 are judged on
/// absolute error.
const REL_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central differences `(f(x+h) - f(x-h)) / 2h`.
///
/// `loss` evaluates the scalar loss; when its flag is true it must also
/// accumulate analytic gradients into the store. Frozen parameters are skipped.
pub fn grad_check<F>(store: &mut ParamStore<f64>, mut loss: F, h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore<f64>, bool) -> Result<f64>,
{
    store.zero_grad();
    let base = loss(store, true)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("loss at the reference point".into()));
    }
    let analytic: Vec<_> = store.iter().map(|(_, p)| p.grad.clone()).collect();
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();

    let mut report = GradCheckReport::default();
    for id in ids {
        let n = store.get(id).value.len();
        let mut worst = 0.0f64;
        for k in 0..n {
            let orig = *store.get(id).value.iter().nth(k).unwrap();
            *store.get_mut(id).value.iter_mut().nth(k).unwrap() = orig + h;
            let plus = loss(store, false)?;
            *store.get_mut(id).value.iter_mut().nth(k).unwrap() = orig - h;
            let minus = loss(store, false)?;
            *store.get_mut(id).value.iter_mut().nth(k).unwrap() = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss while perturbing '{}'",
                    store.get(id).name
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = *analytic[id.index()].iter().nth(k).unwrap();
            if !a.is_finite() {
                return Err(Error::NonFinite(format!(
                    "analytic gradient of '{}'",
                    store.get(id).name
                )));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
        report.params.push(ParamError {
            name: store.get(id).name.clone(),
            entries: n,
            max_rel_error: worst,
        });
    }
    store.zero_grad();
    Ok(report)
}
