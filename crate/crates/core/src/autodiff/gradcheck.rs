//! Central finite-difference verification of tape gradients.

use rayon::prelude::*;

use super::{ParamStore, Tape, Var};
use crate::error::Result;

/// Initial step of the five-point central stencil.
pub const STEP: f64 = 1e-4;
/// Smallest step tried when probes keep landing across a leaky-ReLU kink.
pub const MIN_STEP: f64 = 1e-8;
/// Denominator floor for the relative error so vanishing gradients compare absolutely.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Compares the backward pass of `f` against five-point central differences
/// for every scalar in `store`. Entries are probed in parallel. `f` must build a `1 × 1` output on the given tape.
///
/// A stencil whose probes change the sign of any leaky-ReLU input differentiates
/// across a kink, so the step is divided by ten until every probe keeps the
/// unperturbed pattern (or `MIN_STEP` is reached).
pub fn grad_check<F>(store: &ParamStore, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var> + Sync,
{
    let (analytic, pattern) = {
        let mut tape = Tape::new(store);
        let out = f(&mut tape)?;
        let pattern = tape.kink_pattern();
        (tape.backward(out).into_params(), pattern)
    };
    let eval = |s: &ParamStore| -> Result<(f64, bool)> {
        let mut tape = Tape::new(s);
        let out = f(&mut tape)?;
        Ok((tape.scalar(out), tape.kink_pattern() == pattern))
    };

    let entries: Vec<(usize, usize)> = store
        .iter()
        .enumerate()
        .flat_map(|(t, (_, tensor))| (0..tensor.value.len()).map(move |i| (t, i)))
        .collect();
    let tensors: Vec<_> = store.iter().collect();
    let results = entries
        .par_iter()
        .map_init(
            || store.clone(),
            |probe, &(t, idx)| -> Result<(f64, f64, f64)> {
                let (id, tensor) = tensors[t];
                let orig = tensor.value.as_slice().expect("standard layout")[idx];
                let mut at = |x: f64| -> Result<(f64, bool)> {
                    probe.get_mut(id).value.as_slice_mut().expect("standard layout")[idx] = x;
                    eval(probe)
                };
                let mut h = STEP;
                let numeric = loop {
                    let mut f = [0.0; 4];
                    let mut smooth = true;
                    for (slot, k) in f.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
                        let (value, same) = at(orig + k * h)?;
                        *slot = value;
                        smooth &= same;
                    }
                    let [p2, p1, m1, m2] = f;
                    if smooth || h / 10.0 < MIN_STEP {
                        break (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
                    }
                    h /= 10.0;
                };
                probe.get_mut(id).value.as_slice_mut().expect("standard layout")[idx] = orig;
                let a = analytic[id.index()]
                    .as_ref()
                    .map_or(0.0, |g| g.as_slice().expect("standard layout")[idx]);
                Ok((relative_error(a, numeric), a, numeric))
            },
        )
        .collect::<Result<Vec<_>>>()?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: results.len(),
    };
    for (&(t, idx), &(err, a, numeric)) in entries.iter().zip(&results) {
        if err > report.max_rel_error || report.worst_param.is_empty() {
            report.max_rel_error = err;
            report.worst_param = tensors[t].1.name.clone();
            report.worst_index = idx;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
