//! Bubbles, linearized kernel elements and their residual identities on flat
//! space. All radial derivatives are closed-form; finite differences appear
//! only in the tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cutoff, cutoff_d, cutoff_dd, norm2, ModelConfig};
use crate::sobolev::p_exp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleParams {
    pub n: usize,
    pub t: f64,
    pub mu: f64,
    /// Concentration point ξ.
    pub center: Vec<f64>,
    /// f(ξ).
    pub f_center: f64,
    pub r_cut: f64,
}

/// Value with first and second radial derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radial {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl BubbleParams {
    pub fn new(n: usize, t: f64, mu: f64, center: Vec<f64>, f_center: f64, r_cut: f64) -> Result<Self> {
        let p = BubbleParams { n, t, mu, center, f_center, r_cut };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.center.len() != self.n {
            return Err(Error::Config("bubble center has wrong dimension".into()));
        }
        if !(self.delta() > 0.0) || !(self.f_center > 0.0) {
            return Err(Error::Config("bubble needs δ > 0 and f(ξ) > 0".into()));
        }
        if !(self.r_cut > self.delta().sqrt()) {
            return Err(Error::Config(format!("r_cut = {} must exceed sqrt(δ) = {}", self.r_cut, self.delta().sqrt())));
        }
        Ok(())
    }

    /// Bubble centered at β·p for the model data.
    pub fn for_model(cfg: &ModelConfig, t: f64, p: &[f64]) -> Result<Self> {
        if p.len() != cfg.n {
            return Err(Error::Config(format!("p must have {} components", cfg.n)));
        }
        let center: Vec<f64> = p.iter().map(|v| v * cfg.beta).collect();
        let f_center = cfg.f_radial(norm2(&center).sqrt());
        BubbleParams::new(cfg.n, t, cfg.mu, center, f_center, cfg.r_cut)
    }

    pub fn delta(&self) -> f64 {
        self.mu * self.t
    }

    /// f(ξ)/(n(n−2)).
    pub fn a(&self) -> f64 {
        self.f_center / (self.n as f64 * (self.n as f64 - 2.0))
    }

    pub fn dist(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    /// θ(x) = δ + |x − ξ|.
    pub fn theta(&self, x: &[f64]) -> f64 {
        self.delta() + self.dist(x)
    }

    /// Uncut profile δ^{(n−2)/2}(δ² + a d²)^{1−n/2} and its radial derivatives.
    pub fn core(&self, d: f64) -> Radial {
        let n = self.n as f64;
        let dl = self.delta();
        let a = self.a();
        let s = dl * dl + a * d * d;
        let c = dl.powf((n - 2.0) / 2.0);
        let v = c * s.powf(1.0 - n / 2.0);
        // d/dd s^k = 2 a d k s^{k−1}
        let k = 1.0 - n / 2.0;
        let d1 = c * 2.0 * a * d * k * s.powf(k - 1.0);
        let d2 = c * (2.0 * a * k * s.powf(k - 1.0) + 4.0 * a * a * d * d * k * (k - 1.0) * s.powf(k - 2.0));
        Radial { v, d1, d2 }
    }

    /// Cutoff factor χ(d/r_cut) with its radial derivatives.
    pub fn cut(&self, d: f64) -> Radial {
        let s = d / self.r_cut;
        Radial { v: cutoff(s), d1: cutoff_d(s) / self.r_cut, d2: cutoff_dd(s) / (self.r_cut * self.r_cut) }
    }

    /// W = χ·core as a radial function of d = |x − ξ|.
    pub fn bubble_radial(&self, d: f64) -> Radial {
        product(self.cut(d), self.core(d))
    }

    /// Radial profile of Z_0.
    pub fn z0_radial(&self, d: f64) -> Radial {
        let n = self.n as f64;
        let dl = self.delta();
        let a = self.a();
        let s = dl * dl + a * d * d;
        let c = dl.powf((n - 2.0) / 2.0);
        let k = -n / 2.0;
        // g = s^k, m = a d² − δ²
        let g = s.powf(k);
        let g1 = 2.0 * a * d * k * s.powf(k - 1.0);
        let g2 = 2.0 * a * k * s.powf(k - 1.0) + 4.0 * a * a * d * d * k * (k - 1.0) * s.powf(k - 2.0);
        let m = a * d * d - dl * dl;
        let core = Radial { v: c * g * m, d1: c * (g1 * m + g * 2.0 * a * d), d2: c * (g2 * m + 2.0 * g1 * 2.0 * a * d + g * 2.0 * a) };
        product(self.cut(d), core)
    }

    /// Radial profile z₁ with Z_i(x) = z₁(d)·(x−ξ)_i/d.
    pub fn z1_radial(&self, d: f64) -> Radial {
        let n = self.n as f64;
        let dl = self.delta();
        let a = self.a();
        let s = dl * dl + a * d * d;
        let c = dl.powf(n / 2.0) * self.f_center;
        let k = -n / 2.0;
        let g = s.powf(k);
        let g1 = 2.0 * a * d * k * s.powf(k - 1.0);
        let g2 = 2.0 * a * k * s.powf(k - 1.0) + 4.0 * a * a * d * d * k * (k - 1.0) * s.powf(k - 2.0);
        let core = Radial { v: c * g * d, d1: c * (g1 * d + g), d2: c * (g2 * d + 2.0 * g1) };
        product(self.cut(d), core)
    }
}

fn product(a: Radial, b: Radial) -> Radial {
    Radial { v: a.v * b.v, d1: a.d1 * b.v + a.v * b.d1, d2: a.d2 * b.v + 2.0 * a.d1 * b.d1 + a.v * b.d2 }
}

pub fn bubble(params: &BubbleParams, x: &[f64]) -> f64 {
    params.bubble_radial(params.dist(x)).v
}

/// ∇W at x.
pub fn bubble_grad(params: &BubbleParams, x: &[f64]) -> Vec<f64> {
    let d = params.dist(x);
    if d == 0.0 {
        return vec![0.0; params.n];
    }
    let w = params.bubble_radial(d);
    x.iter().zip(&params.center).map(|(a, b)| w.d1 * (a - b) / d).collect()
}

/// U(y) = (1 + f|y|²/(n(n−2)))^{1−n/2}.
#[allow(non_snake_case)]
pub fn standard_bubble_U(f_val: f64, n: usize, y: &[f64]) -> f64 {
    let nf = n as f64;
    (1.0 + f_val * norm2(y) / (nf * (nf - 2.0))).powf(1.0 - nf / 2.0)
}

/// Kernel functions V_0..V_n of the linearized critical equation.
#[allow(non_snake_case)]
pub fn kernel_V(i: usize, f_val: f64, n: usize, y: &[f64]) -> f64 {
    let nf = n as f64;
    let s = f_val * norm2(y) / (nf * (nf - 2.0));
    let g = (1.0 + s).powf(-nf / 2.0);
    if i == 0 {
        (s - 1.0) * g
    } else {
        f_val * y[i - 1] * g
    }
}

/// Cutoff-localized rescaled kernel element Z_i at x (i = 0..n).
#[allow(non_snake_case)]
pub fn kernel_Z(i: usize, params: &BubbleParams, x: &[f64]) -> f64 {
    let d = params.dist(x);
    if i == 0 {
        params.z0_radial(d).v
    } else if d == 0.0 {
        0.0
    } else {
        params.z1_radial(d).v * (x[i - 1] - params.center[i - 1]) / d
    }
}

/// Smallest C with |Z_i| ≤ C·W on a dense radial grid inside the support.
pub fn z_domination_constant(params: &BubbleParams) -> f64 {
    let m = 4000;
    let dmax = 2.0 * params.r_cut;
    let mut c = 0.0f64;
    for k in 0..m {
        let d = dmax * (k as f64 + 0.5) / m as f64;
        let w = params.bubble_radial(d).v;
        if w <= 0.0 {
            continue;
        }
        c = c.max(params.z0_radial(d).v.abs() / w);
        c = c.max(params.z1_radial(d).v.abs() / w);
    }
    c
}

/// ΔW − f(ξ)W^{2*−1} (geometer's sign, Δ = −Σ∂²), i.e. the bubble residual
/// with the potential h − c_n·S_g removed. Exact closed form; vanishes on
/// the plateau d ≤ r_cut.
pub fn bubble_residual_radial(params: &BubbleParams, d: f64) -> f64 {
    let n = params.n as f64;
    let ch = params.cut(d);
    if ch.d1 == 0.0 && ch.d2 == 0.0 {
        // plateau (the uncut profile solves the equation) or outside the support
        return 0.0;
    }
    let b = params.core(d);
    let p = p_exp(params.n);
    let bp = b.v.powf(p);
    params.f_center * bp * (ch.v - ch.v.powf(p)) - (ch.d2 * b.v + 2.0 * ch.d1 * b.d1 + (n - 1.0) / d * ch.d1 * b.v)
}

/// Bubble residual at a point; `model` is used only through the dimension check.
pub fn bubble_residual(params: &BubbleParams, model: &ModelConfig, x: &[f64]) -> f64 {
    debug_assert_eq!(model.n, params.n);
    bubble_residual_radial(params, params.dist(x))
}
