//! Central finite differences for validating analytic derivatives.

use nalgebra::{DMatrix, DVector};

/// Central-difference gradient of a scalar function.
pub fn central_gradient<F: Fn(&DVector<f64>) -> f64>(
    f: F,
    x: &DVector<f64>,
    step: f64,
) -> DVector<f64> {
    let d = x.len();
    let mut g = DVector::zeros(d);
    let mut xp = x.clone();
    for i in 0..d {
        let h = step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of a vector function, symmetrized.
///
/// Applied to an analytic gradient this approximates the Hessian.
pub fn central_jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(
    g: F,
    x: &DVector<f64>,
    step: f64,
) -> DMatrix<f64> {
    let d = x.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut xp = x.clone();
    for j in 0..d {
        let h = step * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let gp = g(&xp);
        xp[j] = x[j] - h;
        let gm = g(&xp);
        xp[j] = x[j];
        let col = (gp - gm) / (2.0 * h);
        jac.set_column(j, &col);
    }
    let t = jac.transpose();
    (jac + t) * 0.5
}

/// Largest relative entry error between an analytic and a reference array.
pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs() / r.abs().max(1.0))
        .fold(0.0, f64::max)
}
