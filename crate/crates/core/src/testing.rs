//! Test-support oracles, independent of the reverse-mode path they check.

use crate::diffnet::ParamStore;

/// Central finite-difference derivative of `f` with respect to one scalar
/// of one parameter.
pub fn finite_diff(
    store: &ParamStore,
    name: &str,
    index: usize,
    h: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let mut plus = store.clone();
    plus.get_mut(name).unwrap().values[index] += h;
    let mut minus = store.clone();
    minus.get_mut(name).unwrap().values[index] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Checks every parameter scalar against central finite differences.
/// Returns the worst (relative error, parameter name, index).
/// Relative error uses an absolute floor near zero.
pub fn gradient_check(
    store: &ParamStore,
    analytic: &ParamStore,
    h: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> (f64, String, usize) {
    let mut worst = (0.0, String::new(), 0);
    for (name, p) in store.iter() {
        for i in 0..p.len() {
            let fd = finite_diff(store, name, i, h, &mut f);
            let an = analytic.get(name).unwrap().grad[i];
            // Near-zero gradients sit at the finite-difference noise floor
            // (cancellation of O(1) loss values), so compare them absolutely.
            let denom = fd.abs().max(an.abs());
            let err = if denom < 1e-5 {
                (fd - an).abs()
            } else {
                (fd - an).abs() / denom
            };
            if err > worst.0 {
                worst = (err, name.to_string(), i);
            }
        }
    }
    worst
}
