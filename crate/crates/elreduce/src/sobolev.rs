//! Dimension-dependent constants: critical exponents, sphere areas and the
//! sharp Sobolev constant.

use std::f64::consts::PI;
use statrs::function::gamma::gamma;

/// Critical exponent 2* = 2n/(n−2).
pub fn crit(n: usize) -> f64 {
    2.0 * n as f64 / (n as f64 - 2.0)
}

/// Exponent of the focusing nonlinearity, 2* − 1.
pub fn p_exp(n: usize) -> f64 {
    crit(n) - 1.0
}

/// Exponent of the negative power, 2* + 1.
pub fn q_exp(n: usize) -> f64 {
    crit(n) + 1.0
}

/// Area of the unit sphere S^m ⊂ R^{m+1}.
pub fn sphere_area(m: usize) -> f64 {
    let a = (m as f64 + 1.0) / 2.0;
    2.0 * PI.powf(a) / gamma(a)
}

/// Conformal Laplacian constant (n−2)/(4(n−1)).
pub fn c_n(n: usize) -> f64 {
    let n = n as f64;
    (n - 2.0) / (4.0 * (n - 1.0))
}

/// Sharp Sobolev constant K_n = sqrt(4/(n(n−2)ω_n^{2/n})).
pub fn k_n(n: usize) -> f64 {
    let nf = n as f64;
    (4.0 / (nf * (nf - 2.0) * sphere_area(n).powf(2.0 / nf))).sqrt()
}

/// K_n^{−n}, the Dirichlet energy of the standard bubble with f = 1.
pub fn k_n_inv_pow(n: usize) -> f64 {
    k_n(n).powi(-(n as i32))
}
