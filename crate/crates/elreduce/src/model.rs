//! Problem data: dimension, coefficient fields h, f, X, the concentration
//! scales and the strictly stable background.
//!
//! The background manifold is flat R^n. For n ≥ 7 the potential vanishes on a
//! core ball around the concentration point and equals `h0` outside, so the
//! background u is a radial profile rather than a constant; for n = 6 the
//! potential is the self-consistent constant 2·f0·u0 and u ≡ u0.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::sobolev::{p_exp, q_exp};
use crate::spline::{thomas, CubicSpline};

/// Keys accepted in a flat configuration map.
pub const MODEL_KEYS: &[&str] = &[
    "n",
    "tau",
    "mu",
    "f0",
    "s_bump",
    "h0",
    "rho0",
    "alpha",
    "zdir",
    "weyl_sq",
    "beta_exponent",
    "rcut_exponent",
    "core_radius",
    "domain_radius",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n: usize,
    pub tau: f64,
    pub mu: f64,
    pub beta: f64,
    pub r_cut: f64,
    pub f0: f64,
    pub s_bump: f64,
    pub h0: f64,
    pub rho0: f64,
    pub alpha: f64,
    /// Unit vector of length n.
    pub zdir: Vec<f64>,
    pub lcf_flag: bool,
    pub weyl_sq: f64,
    pub beta_exponent: f64,
    pub rcut_exponent: u32,
    /// Radius of the ball on which h vanishes (n ≥ 7).
    pub core_radius: f64,
    /// Radius of the ball carrying the background profile.
    pub domain_radius: f64,
}

/// μ as a function of τ.
pub fn mu_from_tau(n: usize, tau: f64, lcf: bool) -> f64 {
    if n == 6 {
        tau
    } else if lcf || n <= 10 {
        tau.powf(2.0 / (n as f64 - 6.0))
    } else {
        tau.sqrt()
    }
}

/// Inverse of [`mu_from_tau`].
pub fn tau_from_mu(n: usize, mu: f64, lcf: bool) -> f64 {
    if n == 6 {
        mu
    } else if lcf || n <= 10 {
        mu.powf((n as f64 - 6.0) / 2.0)
    } else {
        mu * mu
    }
}

fn num(map: &Map<String, Value>, key: &str) -> Result<Option<f64>> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => {
            let x = v
                .as_f64()
                .ok_or_else(|| Error::Config(format!("`{key}` must be a number")))?;
            if !x.is_finite() {
                return Err(Error::Config(format!("`{key}` must be finite")));
            }
            Ok(Some(x))
        }
    }
}

fn req(map: &Map<String, Value>, key: &str) -> Result<f64> {
    num(map, key)?.ok_or_else(|| Error::Config(format!("missing key `{key}`")))
}

/// Builds and validates a configuration from a flat key/value map.
///
/// `extra_keys` lists keys owned by other consumers (run settings) that are
/// allowed to appear; anything else is rejected.
pub fn make_model(raw: &Map<String, Value>, extra_keys: &[&str]) -> Result<ModelConfig> {
    for k in raw.keys() {
        if !MODEL_KEYS.contains(&k.as_str()) && !extra_keys.contains(&k.as_str()) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
    }
    let n_f = req(raw, "n")?;
    if n_f.fract() != 0.0 || !(6.0..=11.0).contains(&n_f) {
        return Err(Error::Config(format!("dimension n = {n_f} outside 6..=11")));
    }
    let n = n_f as usize;
    let weyl_sq = num(raw, "weyl_sq")?.unwrap_or(0.0);
    if weyl_sq < 0.0 {
        return Err(Error::Config("weyl_sq must be ≥ 0".into()));
    }
    let lcf = weyl_sq == 0.0;
    let tau = req(raw, "tau")?;
    if tau <= 0.0 {
        return Err(Error::Config("tau must be > 0".into()));
    }
    let mu = mu_from_tau(n, tau, lcf);
    if let Some(m) = num(raw, "mu")? {
        if ((m - mu) / mu).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "mu = {m} violates the sequence law (expected {mu} for n = {n})"
            )));
        }
    }
    let zdir = match raw.get("zdir") {
        None | Some(Value::Null) => {
            let mut e = vec![0.0; n];
            e[0] = 1.0;
            e
        }
        Some(Value::Array(a)) => {
            let mut v = Vec::with_capacity(n);
            for x in a {
                v.push(x.as_f64().ok_or_else(|| Error::Config("zdir entries must be numbers".into()))?);
            }
            if v.len() > n {
                return Err(Error::Config(format!("zdir has {} > n entries", v.len())));
            }
            v.resize(n, 0.0);
            v
        }
        Some(_) => return Err(Error::Config("zdir must be an array".into())),
    };
    let f0 = req(raw, "f0")?;
    let rho0 = req(raw, "rho0")?;
    let h0 = num(raw, "h0")?;
    let default_beta = if n == 6 { 0.75 } else { 0.5 };
    let cfg = ModelConfig {
        n,
        tau,
        mu,
        beta: 0.0,
        r_cut: 0.0,
        f0,
        s_bump: num(raw, "s_bump")?.unwrap_or(0.0),
        h0: h0.unwrap_or(f64::NAN),
        rho0,
        alpha: num(raw, "alpha")?.unwrap_or(0.0),
        zdir,
        lcf_flag: lcf,
        weyl_sq,
        beta_exponent: num(raw, "beta_exponent")?.unwrap_or(default_beta),
        rcut_exponent: {
            let e = num(raw, "rcut_exponent")?.unwrap_or(4.0);
            if e < 1.0 || e.fract() != 0.0 {
                return Err(Error::Config("rcut_exponent must be a positive integer".into()));
            }
            e as u32
        },
        core_radius: num(raw, "core_radius")?.unwrap_or(1.0),
        domain_radius: num(raw, "domain_radius")?.unwrap_or(8.0),
    };
    cfg.finish(h0.is_some())
}

/// Tested configurations: n = 7 (l.c.f. branch, t₀ ≈ 1 at p = 0) and n = 6
/// (κ > 0 at the default α).
pub fn defaults(n: usize) -> Result<ModelConfig> {
    let v = match n {
        7 => serde_json::json!({"n": 7, "tau": 0.1, "f0": 35.0, "h0": 1.0, "rho0": 2.2e-12, "alpha": 1e-3}),
        6 => serde_json::json!({"n": 6, "tau": 1e-2, "f0": 24.0, "rho0": 5e-10, "alpha": 0.2, "beta_exponent": 0.75}),
        _ => return Err(Error::Config(format!("no default configuration for n = {n}"))),
    };
    match v {
        Value::Object(m) => make_model(&m, &[]),
        _ => unreachable!(),
    }
}

impl ModelConfig {
    pub fn from_json_str(s: &str, extra_keys: &[&str]) -> Result<Self> {
        let v: Value = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        match v {
            Value::Object(m) => make_model(&m, extra_keys),
            _ => Err(Error::Config("config must be a JSON object".into())),
        }
    }

    /// Derives β, r_cut (and h0 for n = 6) from μ and validates.
    fn finish(mut self, h0_given: bool) -> Result<Self> {
        if self.f0 <= 0.0 {
            return Err(Error::Config("f0 must be > 0".into()));
        }
        if self.rho0 <= 0.0 {
            return Err(Error::Config("rho0 must be > 0".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config("alpha must be ≥ 0".into()));
        }
        let zn = self.zdir.iter().map(|z| z * z).sum::<f64>().sqrt();
        if zn == 0.0 || !zn.is_finite() {
            return Err(Error::Config("zdir must be a nonzero vector".into()));
        }
        self.zdir.iter_mut().for_each(|z| *z /= zn);
        if !(self.beta_exponent > 0.0 && self.beta_exponent < 1.0) {
            return Err(Error::Config("beta_exponent must lie in (0, 1)".into()));
        }
        self.beta = self.mu.powf(self.beta_exponent);
        self.r_cut = self.mu.powf(1.0 / (self.rcut_exponent as f64 + 1.0));
        if self.n == 6 {
            let u0 = (self.rho0 / self.f0).powf(1.0 / 6.0);
            let h_sc = 2.0 * self.f0 * u0;
            if h0_given && ((self.h0 - h_sc) / h_sc).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "n = 6 requires h0 = 2·f0·u0 = {h_sc} (self-consistent background)"
                )));
            }
            self.h0 = h_sc;
        } else if !h0_given {
            return Err(Error::Config("missing key `h0`".into()));
        }
        if self.h0 <= 0.0 {
            return Err(Error::Config("h0 must be > 0".into()));
        }
        if self.core_radius <= 0.0 || self.domain_radius < 4.0 * self.core_radius {
            return Err(Error::Config("need 0 < 4·core_radius ≤ domain_radius".into()));
        }
        if !(self.mu < self.beta && self.beta < self.r_cut) {
            return Err(Error::Config(format!(
                "ordering μ < β < r_cut violated: μ = {}, β = {}, r_cut = {}",
                self.mu, self.beta, self.r_cut
            )));
        }
        if self.n == 6 && self.beta * self.beta >= self.mu {
            return Err(Error::Config(format!("n = 6 requires β² < μ, got β = {}", self.beta)));
        }
        if 2.0 * self.r_cut >= self.core_radius && self.n >= 7 {
            return Err(Error::Config("cutoff support 2·r_cut must lie inside the core".into()));
        }
        Ok(self)
    }

    /// Same data at another concentration scale (τ follows the sequence law).
    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!("mu = {mu} must be positive")));
        }
        let mut c = self.clone();
        c.mu = mu;
        c.tau = tau_from_mu(c.n, mu, c.lcf_flag);
        c.finish(true)
    }

    pub fn to_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("ModelConfig serializes to an object"),
        }
    }

    /// Radial part of h (everything except the τ-bump).
    pub fn h_background(&self, r: f64) -> f64 {
        if self.n == 6 {
            self.h0
        } else {
            self.h0 * (1.0 - cutoff(r / self.core_radius))
        }
    }

    /// Signed τ-bump contribution to h at squared distance |x|² from the origin.
    pub fn h_bump_sq(&self, r2: f64) -> f64 {
        let b = self.tau * bump_sq(r2 / (self.beta * self.beta));
        if self.n == 6 {
            -b
        } else {
            b
        }
    }

    pub fn h_at(&self, x: &[f64]) -> f64 {
        let r2 = norm2(x);
        self.h_background(r2.sqrt()) + self.h_bump_sq(r2)
    }

    /// Largest value of h on the domain.
    pub fn h_max(&self) -> f64 {
        if self.n == 6 {
            self.h0
        } else {
            self.h0.max(self.tau)
        }
    }

    pub fn f_radial(&self, r: f64) -> f64 {
        self.f0 + self.s_bump * cutoff(r / self.r_cut)
    }

    pub fn f_radial_deriv(&self, r: f64) -> f64 {
        self.s_bump * cutoff_d(r / self.r_cut) / self.r_cut
    }

    /// Scalar amplitude of X at radius r; X = x_scalar·zdir.
    pub fn x_scalar(&self, r: f64) -> f64 {
        self.alpha * self.mu.powf((self.n as f64 - 1.0) / 2.0) * cutoff(2.0 * r / self.r_cut)
    }
}

/// Pointwise coefficient values.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub h: f64,
    pub f: f64,
    pub grad_f: Vec<f64>,
    pub x: Vec<f64>,
}

pub fn eval_coefficients(cfg: &ModelConfig, x: &[f64]) -> Coefficients {
    let r = norm2(x).sqrt();
    let df = cfg.f_radial_deriv(r);
    let grad_f = x.iter().map(|&xi| if r > 0.0 { df * xi / r } else { 0.0 }).collect();
    let xs = cfg.x_scalar(r);
    Coefficients {
        h: cfg.h_at(x),
        f: cfg.f_radial(r),
        grad_f,
        x: cfg.zdir.iter().map(|z| xs * z).collect(),
    }
}

/// ρ_ε(r) = max(ε, r).
pub fn truncate_rho(eps: f64, r: f64) -> f64 {
    if r < eps {
        eps
    } else {
        r
    }
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// H(y) = (1 − |y|²)⁴ on the unit ball, as a function of s = |y|².
pub fn bump_sq(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        let a = 1.0 - s;
        a * a * a * a
    }
}

/// d/ds of [`bump_sq`].
pub fn bump_sq_d(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        let a = 1.0 - s;
        -4.0 * a * a * a
    }
}

/// Plateau cutoff: 1 on [0,1], 0 on [2,∞), C³ septic in between.
pub fn cutoff(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let x = s - 1.0;
        // cancellation near s = 2 leaves values of order −1e−16
        (1.0 - x.powi(4) * (35.0 - 84.0 * x + 70.0 * x * x - 20.0 * x * x * x)).clamp(0.0, 1.0)
    }
}

pub fn cutoff_d(s: f64) -> f64 {
    if s <= 1.0 || s >= 2.0 {
        0.0
    } else {
        let x = s - 1.0;
        -140.0 * (x * (1.0 - x)).powi(3)
    }
}

pub fn cutoff_dd(s: f64) -> f64 {
    if s <= 1.0 || s >= 2.0 {
        0.0
    } else {
        let x = s - 1.0;
        -420.0 * (x * (1.0 - x)).powi(2) * (1.0 - 2.0 * x)
    }
}

// ---------------------------------------------------------------------------
// Constant background

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundState {
    pub u0: f64,
    pub stability_margin: f64,
    pub eps0: f64,
}

fn g_fun(n: usize, h0: f64, f0: f64, rho0: f64, u: f64) -> f64 {
    f0 * u.powf(p_exp(n)) + rho0 * u.powf(-q_exp(n)) - h0 * u
}

/// h0 − (2*−1)f0u^{2*−2} + (2*+1)ρ0u^{−2*−2}.
pub fn stability_margin(n: usize, h0: f64, f0: f64, rho0: f64, u: f64) -> f64 {
    let p = p_exp(n);
    let q = q_exp(n);
    h0 - p * f0 * u.powf(p - 1.0) + q * rho0 * u.powf(-q - 1.0)
}

/// Positive roots of g(u) = f0u^{2*−1} + ρ0u^{−2*−1} − h0u, in increasing order.
pub fn positive_roots(n: usize, h0: f64, f0: f64, rho0: f64) -> Vec<f64> {
    let p = p_exp(n);
    let q = q_exp(n);
    // g/u crosses zero only between the two single-term balance points
    let lo = (rho0 / h0.abs().max(1e-300)).powf(1.0 / (q + 1.0)) * 0.5;
    let hi = (h0.abs().max(1e-300) / f0).powf(1.0 / (p - 1.0)) * 2.0;
    let (lo, hi) = (lo.min(hi), lo.max(hi));
    let m = 4000;
    let g = |u: f64| g_fun(n, h0, f0, rho0, u) / u;
    let mut roots = Vec::new();
    let step = (hi / lo).ln() / m as f64;
    let mut a = lo;
    let mut ga = g(a);
    for i in 1..=m {
        let b = lo * (step * i as f64).exp();
        let gb = g(b);
        if ga == 0.0 {
            roots.push(a);
        } else if ga * gb < 0.0 {
            roots.push(bisect(&g, a, b));
        }
        a = b;
        ga = gb;
    }
    roots
}

fn bisect(g: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let ga = g(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let gm = g(m);
        if gm == 0.0 {
            return m;
        }
        if (gm > 0.0) == (ga > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Smallest positive root of the algebraic background equation with its
/// stability margin; `h_max` enters the truncation lower bound.
pub fn ground_state(n: usize, h0: f64, f0: f64, rho0: f64, h_max: f64) -> Result<GroundState> {
    if rho0 <= 0.0 {
        return Err(Error::Config("rho0 must be > 0".into()));
    }
    let roots = positive_roots(n, h0, f0, rho0);
    let u0 = *roots.first().ok_or_else(|| {
        Error::regime(
            crate::error::Regime::Existence,
            format!("f0·u^(2*−1) + rho0·u^(−2*−1) > h0·u for all u > 0 (h0={h0}, f0={f0}, rho0={rho0})"),
        )
    })?;
    let margin = stability_margin(n, h0, f0, rho0, u0);
    if margin <= 0.0 {
        return Err(Error::regime(
            crate::error::Regime::Existence,
            format!("minimal root u0 = {u0} has non-positive stability margin {margin}"),
        ));
    }
    let eps0 = (rho0 / (2.0 * h_max)).powf(1.0 / (q_exp(n) + 1.0));
    Ok(GroundState { u0, stability_margin: margin, eps0 })
}

pub fn solve_ground_state(cfg: &ModelConfig) -> Result<GroundState> {
    ground_state(cfg.n, cfg.h0, cfg.f0, cfg.rho0, cfg.h_max())
}

// ---------------------------------------------------------------------------
// Radial background profile

/// Radial solution of −Δu + h u = f u^{2*−1} + ρ0 u^{−2*−1} (full h and f,
/// bumps included) on the ball of radius `domain_radius` with u = u0 on the
/// boundary.
#[derive(Debug, Clone)]
pub struct BackgroundProfile {
    spline: CubicSpline,
    pub u0: f64,
    pub r_max: f64,
    /// Max |residual| of the discrete radial equation at convergence.
    pub newton_residual: f64,
}

impl BackgroundProfile {
    pub fn solve(cfg: &ModelConfig, gs: &GroundState) -> Result<Self> {
        let n = cfg.n as f64;
        let (p, q) = (p_exp(cfg.n), q_exp(cfg.n));
        let m = 16000usize;
        let l = cfg.domain_radius;
        let dr = l / m as f64;
        let r: Vec<f64> = (0..=m).map(|i| i as f64 * dr).collect();
        let hb: Vec<f64> = r.iter().map(|&x| cfg.h_background(x) + cfg.h_bump_sq(x * x)).collect();
        let fr: Vec<f64> = r.iter().map(|&x| cfg.f_radial(x)).collect();
        let mut u = vec![gs.u0; m + 1];
        let rho0 = cfg.rho0;
        let mut res_norm = f64::INFINITY;
        // size of the individual discrete terms; sets the round-off floor
        let res_scale = gs.u0 * (4.0 * n / (dr * dr) + cfg.h0);
        for _ in 0..100 {
            // unknowns u_0..u_{m-1}; u_m = u0 fixed
            let mut a = vec![0.0; m];
            let mut b = vec![0.0; m];
            let mut c = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for i in 0..m {
                let ui = u[i];
                let nl = fr[i] * ui.powf(p) + rho0 * ui.powf(-q);
                let dnl = p * fr[i] * ui.powf(p - 1.0) - q * rho0 * ui.powf(-q - 1.0);
                let (lap, dl, dc, du) = if i == 0 {
                    let k = 2.0 * n / (dr * dr);
                    (k * (u[1] - u[0]), 0.0, -k, k)
                } else {
                    let k1 = 1.0 / (dr * dr);
                    let k2 = (n - 1.0) / (r[i] * 2.0 * dr);
                    (
                        k1 * (u[i + 1] - 2.0 * ui + u[i - 1]) + k2 * (u[i + 1] - u[i - 1]),
                        k1 - k2,
                        -2.0 * k1,
                        k1 + k2,
                    )
                };
                // F = −Δu + h u − nl
                rhs[i] = -(-lap + hb[i] * ui - nl);
                a[i] = -dl;
                b[i] = -dc + hb[i] - dnl;
                c[i] = if i + 1 < m { -du } else { 0.0 };
            }
            res_norm = rhs.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            if res_norm < 1e-13 * res_scale {
                break;
            }
            let du = thomas(&a, &b, &c, &rhs);
            let mut step = 1.0;
            while (0..m).any(|i| u[i] + step * du[i] <= 0.0) {
                step *= 0.5;
            }
            for i in 0..m {
                u[i] += step * du[i];
            }
        }
        if !(res_norm < 1e-11 * res_scale) {
            return Err(Error::Numerical(format!("background profile Newton stalled (residual {res_norm:e})")));
        }
        let d1 = (3.0 * u[m] - 4.0 * u[m - 1] + u[m - 2]) / (2.0 * dr);
        let spline = CubicSpline::clamped(r, u, 0.0, d1);
        Ok(BackgroundProfile { spline, u0: gs.u0, r_max: l, newton_residual: res_norm })
    }

    /// u, u', u'' at radius r.
    pub fn eval3(&self, r: f64) -> (f64, f64, f64) {
        if r >= self.r_max {
            (self.u0, 0.0, 0.0)
        } else {
            self.spline.eval3(r)
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.eval3(r).0
    }

    /// Minimum of u over [0, r].
    pub fn min_on(&self, r: f64) -> f64 {
        let m = 2000;
        (0..=m).map(|i| self.value(r * i as f64 / m as f64)).fold(f64::INFINITY, f64::min)
    }
}
