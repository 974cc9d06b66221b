//! Central finite-difference checking of analytic gradients.
//!
//! Checks run in `f64` so that the comparison measures the backward formulas
//! rather than single-precision rounding. A probe whose finite difference is
//! unstable between step `h` and `h/10` straddles a ReLU kink (the derivative
//! does not exist there); such probes are replaced, not counted.

use rand::Rng;

use super::store::{Gradients, ParamId, ParamStore};

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub probes: usize,
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
    pub failures: Vec<ProbeFailure>,
}

#[derive(Clone, Debug)]
pub struct ProbeFailure {
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self, required_probes: usize) -> bool {
        self.failures.is_empty() && self.probes >= required_probes
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Generic probe loop over scalar coordinates exposed through `get`/`set`.
#[allow(clippy::too_many_arguments)]
pub fn check_coordinates<S>(
    state: &mut S,
    coords: &[(String, usize)],
    mut analytic: impl FnMut(&S, usize) -> f64,
    mut get: impl FnMut(&S, usize) -> f64,
    mut set: impl FnMut(&mut S, usize, f64),
    mut loss: impl FnMut(&S) -> f64,
    step: f64,
    tol: f64,
    required: usize,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for (k, (label, _)) in coords.iter().enumerate() {
        if report.probes >= required {
            break;
        }
        let x0 = get(state, k);
        let mut fd = |h: f64, state: &mut S| {
            set(state, k, x0 + h);
            let fp = loss(state);
            set(state, k, x0 - h);
            let fm = loss(state);
            set(state, k, x0);
            (fp - fm) / (2.0 * h)
        };
        let coarse = fd(step, state);
        let fine = fd(step / 10.0, state);
        if rel_error(coarse, fine) > 1e-2 {
            report.kinks_skipped += 1;
            continue;
        }
        let a = analytic(state, k);
        let err = rel_error(a, coarse);
        report.probes += 1;
        report.max_rel_error = report.max_rel_error.max(err);
        if err > tol {
            report.failures.push(ProbeFailure {
                label: label.clone(),
                analytic: a,
                numeric: coarse,
                rel_error: err,
            });
        }
    }
    report
}

/// Picks `count` random (parameter, element) pairs among `ids`, weighting
/// each array equally so small bias vectors get probed too.
pub fn random_param_coords<R: Rng + ?Sized>(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    count: usize,
    rng: &mut R,
) -> Vec<(ParamId, usize)> {
    (0..count)
        .map(|_| {
            let id = ids[rng.gen_range(0..ids.len())];
            (id, rng.gen_range(0..store.get(id).len()))
        })
        .collect()
}

/// Checks parameter gradients: `analytic` holds the backward result for
/// `loss` at the current parameter values.
pub fn check_params(
    store: &mut ParamStore<f64>,
    analytic: &Gradients<f64>,
    probes: &[(ParamId, usize)],
    loss: impl FnMut(&ParamStore<f64>) -> f64,
    step: f64,
    tol: f64,
    required: usize,
) -> GradCheckReport {
    let labels: Vec<(String, usize)> = probes
        .iter()
        .map(|&(id, i)| (format!("{}[{i}]", store.name(id)), i))
        .collect();
    check_coordinates(
        store,
        &labels,
        |_, k| analytic.slot(probes[k].0)[probes[k].1],
        |s, k| s.get(probes[k].0)[probes[k].1],
        |s, k, v| s.get_mut(probes[k].0)[probes[k].1] = v,
        loss,
        step,
        tol,
        required,
    )
}

/// Checks the gradient of `loss` with respect to an input vector.
pub fn check_input(
    input: &mut Vec<f64>,
    analytic: &[f64],
    indices: &[usize],
    loss: impl FnMut(&Vec<f64>) -> f64,
    step: f64,
    tol: f64,
    required: usize,
) -> GradCheckReport {
    let labels: Vec<(String, usize)> = indices.iter().map(|&i| (format!("input[{i}]"), i)).collect();
    check_coordinates(
        input,
        &labels,
        |_, k| analytic[indices[k]],
        |s, k| s[indices[k]],
        |s, k, v| s[indices[k]] = v,
        loss,
        step,
        tol,
        required,
    )
}
