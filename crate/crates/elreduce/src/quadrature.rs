//! Adaptive Gauss–Kronrod quadrature for radial integrals over R^n with
//! algebraic decay, and the standalone constants built on it.

use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Regime, Result};
use crate::harmonic::angular::AngularRule;
use crate::sobolev::{crit, k_n_inv_pow, p_exp, sphere_area};
use crate::vector_green::kelvin_far_constant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    /// Initial panel boundaries in r; the tail beyond the last one is
    /// compactified by r = s/(1−s).
    pub r_split: Vec<f64>,
    /// Power of |⟨ζ, ŷ⟩| in the integrand: 0 or 2.
    pub angular_moment: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { rel_tol: 1e-9, r_split: (-12..=12).map(|k| 2f64.powi(k)).collect(), angular_moment: 0 }
    }
}

impl QuadratureSpec {
    pub fn with_tol(rel_tol: f64) -> Self {
        QuadratureSpec { rel_tol, ..Default::default() }
    }
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// 15-point Kronrod estimate and its difference to the embedded 7-point Gauss rule.
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Panel {
    a: f64,
    b: f64,
    val: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Globally adaptive integration over the union of the given panels.
pub fn integrate_panels(f: &dyn Fn(f64) -> f64, breaks: &[f64], rel_tol: f64, abs_tol: f64) -> Result<f64> {
    let span = breaks[breaks.len() - 1] - breaks[0];
    let mut heap = BinaryHeap::new();
    let (mut total, mut err) = (0.0, 0.0);
    for w in breaks.windows(2) {
        let (v, e) = gk15(f, w[0], w[1]);
        total += v;
        err += e;
        heap.push(Panel { a: w[0], b: w[1], val: v, err: e });
    }
    let max_panels = 20000;
    while err > abs_tol.max(rel_tol * total.abs()) {
        if heap.len() > max_panels {
            return Err(Error::Numerical(format!(
                "quadrature did not converge (estimate {total:e}, error {err:e}); integrand decay or singularity too strong"
            )));
        }
        let p = heap.pop().expect("nonempty");
        let m = 0.5 * (p.a + p.b);
        if p.b - p.a <= 1e-13 * span {
            return Err(Error::Numerical(format!(
                "quadrature error {:e} concentrated on a panel of width {:e} near {}; integrand not integrable there",
                p.err,
                p.b - p.a,
                p.a
            )));
        }
        let (v1, e1) = gk15(f, p.a, m);
        let (v2, e2) = gk15(f, m, p.b);
        total += v1 + v2 - p.val;
        err += e1 + e2 - p.err;
        heap.push(Panel { a: p.a, b: m, val: v1, err: e1 });
        heap.push(Panel { a: m, b: p.b, val: v2, err: e2 });
    }
    if !total.is_finite() {
        return Err(Error::Numerical("non-finite quadrature value".into()));
    }
    // resum to shed accumulated drift
    Ok(heap.iter().map(|p| p.val).sum())
}

/// ∫_a^b f.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    integrate_panels(f, &[a, b], rel_tol, 0.0)
}

/// ∫_0^∞ g(r) dr with panels at `splits` and a compactified tail.
pub fn integrate_half_line(g: &dyn Fn(f64) -> f64, splits: &[f64], rel_tol: f64) -> Result<f64> {
    integrate_half_line_abs(g, splits, rel_tol, 0.0)
}

/// As [`integrate_half_line`], also accepting an absolute tolerance for
/// integrals that may vanish.
pub fn integrate_half_line_abs(g: &dyn Fn(f64) -> f64, splits: &[f64], rel_tol: f64, abs_tol: f64) -> Result<f64> {
    // r = s/(1−s) on the whole half line; panels mapped to s
    let h = |s: f64| {
        if s <= 0.0 || s >= 1.0 {
            return 0.0;
        }
        let om = 1.0 - s;
        let r = s / om;
        let v = g(r) / (om * om);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let mut br = vec![0.0];
    br.extend(splits.iter().filter(|&&r| r > 0.0).map(|&r| r / (1.0 + r)));
    br.push(1.0);
    br.dedup();
    integrate_panels(&h, &br, rel_tol, abs_tol)
}

/// ∫_{R^n} fn(|y|)·|⟨ζ, ŷ⟩|^m dy = ω_{n−1}·⟨|ζ·ŷ|^m⟩·∫_0^∞ fn(r) r^{n−1} dr.
pub fn radial_integral(f: &dyn Fn(f64) -> f64, n: usize, spec: &QuadratureSpec) -> Result<f64> {
    let ang = match spec.angular_moment {
        0 => 1.0,
        2 => 1.0 / n as f64,
        m => return Err(Error::Config(format!("angular moment {m} unsupported"))),
    };
    let nm1 = n as i32 - 1;
    let g = |r: f64| f(r) * r.powi(nm1);
    Ok(sphere_area(n - 1) * ang * integrate_half_line(&g, &spec.r_split, spec.rel_tol)?)
}

/// (∫|∇U_f|², ∫ f·U_f^{2*}).
pub fn bubble_energy(n: usize, f_val: f64) -> Result<(f64, f64)> {
    if !(f_val > 0.0) {
        return Err(Error::Config("f must be positive".into()));
    }
    let nf = n as f64;
    let a = f_val / (nf * (nf - 2.0));
    let spec = QuadratureSpec::with_tol(1e-12);
    // U' = (2−n) a r (1+ar²)^{−n/2}
    let dir = radial_integral(&|r: f64| ((2.0 - nf) * a * r * (1.0 + a * r * r).powf(-nf / 2.0)).powi(2), n, &spec)?;
    let cs = crit(n);
    let mass = radial_integral(&|r: f64| f_val * (1.0 + a * r * r).powf((1.0 - nf / 2.0) * cs), n, &spec)?;
    Ok((dir, mass))
}

/// Radial profiles of V_0 and V_i = v1(r)ω_i with first derivatives.
fn v_profiles(n: usize, f: f64, r: f64) -> (f64, f64, f64, f64) {
    let nf = n as f64;
    let a = f / (nf * (nf - 2.0));
    let s = 1.0 + a * r * r;
    let v0 = (a * r * r - 1.0) * s.powf(-nf / 2.0);
    let v0p = 2.0 * a * r * s.powf(-nf / 2.0 - 1.0) * (s - nf / 2.0 * (a * r * r - 1.0));
    let v1 = f * r * s.powf(-nf / 2.0);
    let v1p = f * s.powf(-nf / 2.0 - 1.0) * (s - nf * a * r * r);
    (v0, v0p, v1, v1p)
}

/// Dirichlet Gram matrix of V_0..V_n. The entries among {V_0, V_1, V_2} are
/// computed by radial quadrature against a planar angular rule; the rest
/// follow from rotation invariance.
#[allow(non_snake_case)]
pub fn gram_V(n: usize, f_val: f64) -> Result<DMatrix<f64>> {
    let rule = AngularRule::plane(n, 6, 12);
    let nm1 = n as i32 - 1;
    let mut g3 = [[0.0f64; 3]; 3];
    // diagonals first: they set the absolute scale for the vanishing entries
    let pairs = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
    let mut scale = 0.0f64;
    for (i, j) in pairs {
        {
            let integrand = |r: f64| {
                let (_, v0p, v1, v1p) = v_profiles(n, f_val, r);
                // ∇(v1 ω_k) = v1' ω_k ω + (v1/r)(e_k − ω_k ω)
                let grad = |k: usize, a: f64, b: f64, c: f64| -> [f64; 3] {
                    let om = [a, b, c];
                    match k {
                        0 => [v0p * a, v0p * b, v0p * c],
                        _ => {
                            let wk = om[k - 1];
                            let mut g = [0.0; 3];
                            for m in 0..3 {
                                let ek = if m == k - 1 { 1.0 } else { 0.0 };
                                g[m] = v1p * wk * om[m] + v1 / r * (ek - wk * om[m]);
                            }
                            g
                        }
                    }
                };
                let ang = (0..rule.len())
                    .map(|q| {
                        let (a, b, c) = (rule.a[q], rule.b[q], rule.c[q]);
                        let gi = grad(i, a, b, c);
                        let gj = grad(j, a, b, c);
                        // third slot: component along the unit vector of ω's orthogonal part
                        rule.w[q] * (gi[0] * gj[0] + gi[1] * gj[1] + gi[2] * gj[2])
                    })
                    .sum::<f64>();
                ang * r.powi(nm1)
            };
            let area = sphere_area(n - 1);
            let v = area * integrate_half_line_abs(&integrand, &QuadratureSpec::default().r_split, 1e-12, 1e-14 * scale / area)?;
            if i == j {
                scale = scale.max(v.abs());
            }
            g3[i][j] = v;
            g3[j][i] = v;
        }
    }
    let mut g = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            let (ci, cj) = (i.min(2), j.min(2));
            g[(i, j)] = if i == j {
                g3[ci][ci]
            } else if i == 0 || j == 0 {
                g3[0][if i == 0 { cj.max(1) } else { ci.max(1) }]
            } else {
                g3[1][2]
            };
        }
    }
    Ok(g)
}

/// Inputs of the six-dimensional balance constant κ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaParams {
    pub f0: f64,
    pub u0: f64,
    /// (|𝓛T + σ|² + π²) at the concentration point.
    pub rho_at_center: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaParts {
    /// ∫_{R⁶}[u^{−4} − (u + c|y|^{−4})^{−4}]|y|^{−4}dy, c = (24/f)².
    pub rho_integral: f64,
    /// ∫_{R⁶}(u + c|y|^{−4})^{−4}(2 + 28cos²)|y|^{−14}dy.
    pub coupling_integral: f64,
    /// (24/f)²·ρ·rho_integral.
    pub rho_part: f64,
    /// 576·K(6)²·f^{−8}·α²·coupling_integral.
    pub coupling_part: f64,
    /// κ = rho_part − coupling_part.
    pub value: f64,
}

/// κ evaluated at t = 1. For other t the coupling part carries t^{−5}.
pub fn kappa_parts(p: &KappaParams) -> Result<KappaParts> {
    if !(p.u0 > 0.0) || !(p.f0 > 0.0) {
        return Err(Error::Config("kappa needs u0 > 0 and f0 > 0".into()));
    }
    let c = (24.0 / p.f0).powi(2);
    let u = p.u0;
    let spec = QuadratureSpec { rel_tol: 1e-12, r_split: kappa_splits(u, c), angular_moment: 0 };
    // u^{−4}[1 − (1+x)^{−4}] with x = c r^{−4}/u, written without cancellation
    let ia = radial_integral(
        &|r: f64| {
            let x = c * r.powi(-4) / u;
            -(-4.0 * x.ln_1p()).exp_m1() * u.powi(-4) * r.powi(-4)
        },
        6,
        &spec,
    )?;
    // (u + c r^{−4})^{−4} r^{−14} = r² (u r⁴ + c)^{−4}
    let ib_radial = radial_integral(&|r: f64| r * r * (u * r.powi(4) + c).powi(-4), 6, &spec)?;
    let ib = ib_radial * (2.0 + 28.0 / 6.0);
    let k6 = kelvin_far_constant(6);
    let rho_part = c * p.rho_at_center * ia;
    let coupling_part = 576.0 * k6 * k6 * p.f0.powi(-8) * p.alpha * p.alpha * ib;
    Ok(KappaParts { rho_integral: ia, coupling_integral: ib, rho_part, coupling_part, value: rho_part - coupling_part })
}

fn kappa_splits(u: f64, c: f64) -> Vec<f64> {
    // the transition sits at r ≈ (c/u)^{1/4}
    let r0 = (c / u).powf(0.25);
    (-10..=10).map(|k| r0 * 2f64.powi(k)).collect()
}

pub fn kappa(p: &KappaParams) -> Result<f64> {
    Ok(kappa_parts(p)?.value)
}

/// The α* > 0 with κ(α*) = 0; κ is affine in α².
pub fn critical_alpha(p: &KappaParams) -> Result<f64> {
    let parts = kappa_parts(&KappaParams { alpha: 1.0, ..*p })?;
    if !(parts.rho_part > 0.0) {
        return Err(Error::regime(Regime::KappaSign, format!("first κ integral {} is not positive", parts.rho_part)));
    }
    Ok((parts.rho_part / parts.coupling_part).sqrt())
}

/// Constant in the I_{3,i} leading term: I_{3,i} ≈ −C·∇_i u(ξ)·δ^{n/2} with
/// C = ((2*−1)f²/n)∫U_f^{2*−2}|y|²(1 + f|y|²/(n(n−2)))^{−n/2}dy ∝ f^{1−n/2}.
pub fn i3_slope_constant(n: usize, f_val: f64) -> Result<f64> {
    let nf = n as f64;
    let a = f_val / (nf * (nf - 2.0));
    let pe = p_exp(n);
    let spec = QuadratureSpec::with_tol(1e-12);
    let j = radial_integral(
        &|r: f64| {
            let s = 1.0 + a * r * r;
            s.powf((1.0 - nf / 2.0) * (pe - 1.0)) * r * r * s.powf(-nf / 2.0)
        },
        n,
        &spec,
    )?;
    Ok(pe * f_val * f_val / nf * j)
}

/// ∫|∇U_1|² in closed form: K_n^{−n}.
pub fn sharp_energy(n: usize) -> f64 {
    k_n_inv_pow(n)
}
