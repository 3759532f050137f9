//! Flat-space response of the momentum constraint: −div 𝓛T = s·ζ for a
//! scalar density s and a constant direction ζ.
//!
//! T is never formed from the Kelvin kernel directly. Writing
//! T = ψζ + c₂∇(ζ·∇χ) with −Δψ = s, −Δχ = ψ and c₂ = (n−2)/(2(n−1)) turns the
//! vector problem into two scalar Poisson problems, which are solved per
//! angular mode (l ≤ 1) by cumulative radial integrals. Only derivatives of
//! order ≥ 1 of ψ and ≥ 2 of χ enter 𝓛T, so the constants of integration that
//! carry the Lamé gauge freedom never have to be fixed.

use crate::error::{Error, Result};
use crate::harmonic::galerkin::PlaneSpace;
use crate::harmonic::{unit_gauss, RadialGrid, RadialQuad, GAUSS_PER_CELL};
use crate::sobolev::sphere_area;
use nalgebra::DMatrix;
use serde::Serialize;

/// Coefficient of the far-field conformal Killing derivative of the Kelvin
/// response to a bubble source.
pub fn kelvin_far_constant(n: usize) -> f64 {
    let nf = n as f64;
    nf.powf((nf + 2.0) / 2.0) * (nf - 2.0).powf(nf / 2.0) * sphere_area(n)
        / (2f64.powi(n as i32 + 1) * (nf - 1.0) * sphere_area(n - 1))
}

fn kelvin_c(n: usize) -> f64 {
    1.0 / (4.0 * (n as f64 - 1.0) * sphere_area(n - 1))
}

/// Row i of the fundamental solution of −div 𝓛 on R^n:
/// G_i(y)_j = C|y|^{2−n}[(3n−2)/(n−2)·δ_ij + (n−2)y_iy_j/|y|²], C = 1/(4(n−1)ω_{n−1}).
pub fn kelvin_green(n: usize, y: &[f64], i: usize) -> Result<Vec<f64>> {
    if y.len() != n || i >= n {
        return Err(Error::Config(format!("kelvin_green: need y ∈ R^{n} and axis < {n}")));
    }
    let r2: f64 = y.iter().map(|v| v * v).sum();
    if r2 == 0.0 || !r2.is_finite() {
        return Err(Error::Numerical("kelvin_green: y must be finite and nonzero".into()));
    }
    let nf = n as f64;
    let pre = kelvin_c(n) * r2.powf(1.0 - nf / 2.0);
    let diag = (3.0 * nf - 2.0) / (nf - 2.0);
    Ok((0..n).map(|j| pre * (if i == j { diag } else { 0.0 } + (nf - 2.0) * y[i] * y[j] / r2)).collect())
}

/// 𝓛(G·ζ)(y) as a row-major n×n matrix:
/// (n/(2(n−1)ω_{n−1}))|y|^{1−n}[δ(ζ·ŷ) − ζŷ − ŷζ − (n−2)(ζ·ŷ)ŷŷ].
pub fn kelvin_derivative(n: usize, y: &[f64], zeta: &[f64]) -> Result<Vec<f64>> {
    let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 || !r.is_finite() {
        return Err(Error::Numerical("kelvin_derivative: y must be finite and nonzero".into()));
    }
    let yh: Vec<f64> = y.iter().map(|v| v / r).collect();
    let pre = 2.0 * n as f64 * kelvin_c(n) * r.powi(1 - n as i32);
    Ok(bracket(n, zeta, &yh).into_iter().map(|v| pre * v).collect())
}

/// δ_ij ζ·x̌ − ζ_ix̌_j − ζ_jx̌_i − (n−2)(ζ·x̌)x̌_ix̌_j.
fn bracket(n: usize, zeta: &[f64], xh: &[f64]) -> Vec<f64> {
    let z: f64 = zeta.iter().zip(xh).map(|(a, b)| a * b).sum();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = if i == j { z } else { 0.0 } - zeta[i] * xh[j] - zeta[j] * xh[i] - (n as f64 - 2.0) * z * xh[i] * xh[j];
        }
    }
    m
}

/// Leading far field of 𝓛T for the source U^{2*}|X|ζ of a bubble with
/// coefficient f at its centre, at distance `dist` in direction x̌.
pub fn theta_asymptotic(n: usize, f_center: f64, x_norm: f64, zeta: &[f64], xh: &[f64], dist: f64) -> Vec<f64> {
    let c = kelvin_far_constant(n) * f_center.powf(-(n as f64) / 2.0) * x_norm * dist.powi(1 - n as i32);
    bracket(n, zeta, xh).into_iter().map(|v| c * v).collect()
}

/// Frobenius inner product of two row-major square matrices.
pub fn frob_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn trace(n: usize, a: &[f64]) -> f64 {
    (0..n).map(|i| a[i * n + i]).sum()
}

/// Cumulative integrals ∫_0^r ρ^k F(ρ)dρ at the Gauss points of a radial
/// grid. F is replaced in each cell by the cubic through its Gauss values and
/// the power ρ^k is integrated exactly, so small-r behaviour carried by the
/// power costs no accuracy.
struct Cumulative {
    t: Vec<f64>,
    /// Monomial coefficients of the Lagrange basis on the nodes t.
    basis: DMatrix<f64>,
    sub: (Vec<f64>, Vec<f64>),
}

impl Cumulative {
    fn new() -> Self {
        let m = GAUSS_PER_CELL;
        let (t, _) = unit_gauss(m);
        let v = DMatrix::from_fn(m, m, |i, j| t[i].powi(j as i32));
        let basis = v.try_inverse().expect("Gauss nodes are distinct");
        Cumulative { t, basis, sub: unit_gauss(12) }
    }

    /// h∫_0^{end} (a + hτ)^k L_j(τ)dτ for every j.
    fn weights(&self, a: f64, h: f64, k: i32, end: f64) -> Vec<f64> {
        let m = self.t.len();
        let mut w = vec![0.0; m];
        for (x, wx) in self.sub.0.iter().zip(&self.sub.1) {
            let tau = end * x;
            let pk = (a + h * tau).powi(k) * h * end * wx;
            for (j, wj) in w.iter_mut().enumerate() {
                let lj: f64 = (0..m).rev().fold(0.0, |acc, d| acc * tau + self.basis[(d, j)]);
                *wj += pk * lj;
            }
        }
        w
    }

    /// (∫_0^{r_g} ρ^k F for every Gauss point g, ∫_0^{r_max} ρ^k F).
    fn run(&self, quad: &RadialQuad, k: i32, f: &[f64]) -> (Vec<f64>, f64) {
        let m = GAUSS_PER_CELL;
        let mut out = vec![0.0; f.len()];
        let mut acc = 0.0;
        for start in (0..f.len()).step_by(m) {
            let h = quad.h[start];
            let a = quad.r[start] - h * self.t[0];
            let cell = &f[start..start + m];
            for (kk, &tk) in self.t.iter().enumerate() {
                out[start + kk] = acc + frob_dot(&self.weights(a, h, k, tk), cell);
            }
            acc += frob_dot(&self.weights(a, h, k, 1.0), cell);
        }
        (out, acc)
    }
}

/// Radial data of the l = 0 part at one radius: ψ₀', χ₀''' and m' where
/// m = χ₀'/r.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct RadialPart {
    pub dpsi: f64,
    pub d3chi: f64,
    pub dm: f64,
}

/// Radial data of the l = 1 part, for each of the two in-plane directions:
/// ψ = q·x with derivatives q, q'; χ = p·x with p', p'', p'''.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct DipolePart {
    pub q: [f64; 2],
    pub dq: [f64; 2],
    pub dp: [f64; 2],
    pub d2p: [f64; 2],
    pub d3p: [f64; 2],
}

/// 𝓛T at a point x = rω (frame coordinates, ω = (a, b, c, 0, …)).
pub fn lt_tensor(n: usize, r: f64, omega: &[f64], zeta: &[f64], rad: &RadialPart, dip: Option<&DipolePart>) -> Vec<f64> {
    let nf = n as f64;
    let c2 = (nf - 2.0) / (2.0 * (nf - 1.0));
    let z: f64 = omega.iter().zip(zeta).map(|(a, b)| a * b).sum();
    let mut grad = vec![0.0; n];
    let mut t3 = vec![0.0; n * n];
    let zp: Vec<f64> = (0..n).map(|i| zeta[i] - z * omega[i]).collect();
    for i in 0..n {
        grad[i] = rad.dpsi * omega[i];
    }
    // l = 0: ∂_ζ∂_i∂_jχ₀ = (χ₀''' − 3m')z ω_iω_j + m'(ζ_iω_j + ω_iζ_j + zδ_ij)
    for i in 0..n {
        for j in 0..n {
            t3[i * n + j] = (rad.d3chi - 3.0 * rad.dm) * z * omega[i] * omega[j]
                + rad.dm * (zeta[i] * omega[j] + omega[i] * zeta[j] + if i == j { z } else { 0.0 });
        }
    }
    if let Some(d) = dip {
        let vec = |c: &[f64; 2]| -> Vec<f64> {
            let mut v = vec![0.0; n];
            v[0] = c[0];
            v[1] = c[1];
            v
        };
        let dot = |u: &[f64], v: &[f64]| -> f64 { u.iter().zip(v).map(|(a, b)| a * b).sum() };
        let (q, dq) = (vec(&d.q), vec(&d.dq));
        let (p1, p2, p3) = (vec(&d.dp), vec(&d.d2p), vec(&d.d3p));
        let g1q = dot(omega, &dq);
        for i in 0..n {
            grad[i] += q[i] + g1q * r * omega[i];
        }
        let (g1, g2, g3) = (dot(omega, &p1), dot(omega, &p2), dot(omega, &p3));
        let (p1z, p2z) = (dot(zeta, &p1), dot(zeta, &p2));
        let dg1 = z * g2 + (p1z - g1 * z) / r;
        let de = r * g3 * z + p2z - g2 * z - (p1z - g1 * z) / r;
        let eor = g2 - g1 / r;
        for i in 0..n {
            for j in 0..n {
                t3[i * n + j] += z * (p2[i] * omega[j] + p2[j] * omega[i])
                    + (p1[i] * zp[j] + p1[j] * zp[i]) / r
                    + if i == j { dg1 } else { 0.0 }
                    + de * omega[i] * omega[j]
                    + eor * (zp[i] * omega[j] + omega[i] * zp[j]);
            }
        }
    }
    let dz: f64 = grad.iter().zip(zeta).map(|(a, b)| a * b).sum();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = zeta[j] * grad[i] + zeta[i] * grad[j] + 2.0 * c2 * t3[i * n + j]
                - if i == j { 2.0 / nf * (1.0 - c2) * dz } else { 0.0 };
        }
    }
    out
}

/// 𝓛T on the Gauss points of a radial grid, from the l ≤ 1 modes of the
/// density. The density is assumed to vanish beyond r_max.
#[derive(Debug, Clone)]
pub struct LtField {
    pub n: usize,
    pub zeta: Vec<f64>,
    pub r: Vec<f64>,
    pub radial: Vec<RadialPart>,
    pub dipole: Vec<DipolePart>,
}

impl LtField {
    /// `s0[g]` is the sphere average of the density at Gauss point g and
    /// `s1[g][k]` its coefficient on ω_k (so s ≈ s0 + s1·ω).
    pub fn from_modes(n: usize, quad: &RadialQuad, zeta: &[f64], s0: &[f64], s1: &[[f64; 2]]) -> Result<Self> {
        if s0.len() != quad.len() || s1.len() != quad.len() || zeta.len() != n {
            return Err(Error::Config("LtField: mode samples do not match the grid".into()));
        }
        if s0.iter().chain(s1.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("LtField: non-finite source".into()));
        }
        // Every radial quantity is written as r^{−k}∫_0^r ρ^{k'}F with F smooth
        // and nonvanishing at 0, which avoids the cancellations of the naive
        // ODE relations near the origin.
        let nf = n as f64;
        let ni = n as i32;
        let cum = Cumulative::new();
        let r = &quad.r;
        let len = r.len();
        let rp = |g: usize, k: i32| r[g].powi(k);

        let (p0, _) = cum.run(quad, ni - 1, s0);
        let mut radial = vec![RadialPart::default(); len];
        for g in 0..len {
            radial[g].dpsi = -p0[g] / rp(g, ni - 1);
        }
        let f: Vec<f64> = (0..len).map(|g| -radial[g].dpsi / r[g]).collect();
        let (c, _) = cum.run(quad, ni + 1, &f);
        for g in 0..len {
            let dm = c[g] / rp(g, ni + 1);
            radial[g].dm = dm;
            radial[g].d3chi = -radial[g].dpsi - (nf - 1.0) * dm;
        }

        let mut dipole = vec![DipolePart::default(); len];
        for k in 0..2 {
            let sk: Vec<f64> = s1.iter().map(|v| v[k]).collect();
            let (qc, _) = cum.run(quad, ni, &sk);
            let (sc, stot) = cum.run(quad, 0, &sk);
            for g in 0..len {
                dipole[g].q[k] = (qc[g] / rp(g, ni) + (stot - sc[g])) / nf;
                dipole[g].dq[k] = -qc[g] / rp(g, ni + 1);
            }
            let q: Vec<f64> = dipole.iter().map(|d| d.q[k]).collect();
            let (c1, _) = cum.run(quad, ni + 1, &q);
            let dpsi1: Vec<f64> = (0..len).map(|g| q[g] + r[g] * dipole[g].dq[k]).collect();
            let (c2, _) = cum.run(quad, ni + 1, &dpsi1);
            // ψ₁'' = −s₁ − (n−1)q'
            let d2: Vec<f64> = (0..len).map(|g| (-sk[g] - (nf - 1.0) * dipole[g].dq[k]) / r[g]).collect();
            let (c3, _) = cum.run(quad, ni + 3, &d2);
            for g in 0..len {
                dipole[g].dp[k] = -c1[g] / rp(g, ni + 1);
                dipole[g].d2p[k] = -c2[g] / rp(g, ni + 2);
                dipole[g].d3p[k] = -c3[g] / rp(g, ni + 3);
            }
        }
        Ok(LtField { n, zeta: zeta.to_vec(), r: r.clone(), radial, dipole })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// 𝓛T at Gauss point g in direction ω.
    pub fn tensor(&self, g: usize, omega: &[f64]) -> Vec<f64> {
        lt_tensor(self.n, self.r[g], omega, &self.zeta, &self.radial[g], Some(&self.dipole[g]))
    }

    /// Tensors at every point of a plane space, point order as in the space.
    pub fn tensors(&self, space: &PlaneSpace) -> Vec<Vec<f64>> {
        (0..space.npts())
            .map(|k| {
                let (_, a, b, c) = space.point(k);
                self.tensor(k / space.rule.len(), &frame_omega(self.n, a, b, c))
            })
            .collect()
    }
}

/// ω = (a, b, c, 0, …) in the frame of a plane rule.
pub fn frame_omega(n: usize, a: f64, b: f64, c: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    w[0] = a;
    w[1] = b;
    w[2] = c;
    w
}

/// 𝓛T for the source s·ζ, s sampled at every point of the plane space and ζ
/// in the plane of the frame. Angular content of s beyond l = 1 is dropped.
#[allow(non_snake_case)]
pub fn convolve_LgT(space: &PlaneSpace, density: &[f64], zeta: [f64; 2]) -> Result<LtField> {
    if density.len() != space.npts() {
        return Err(Error::Config("convolve_LgT: density does not match the space".into()));
    }
    let nq = space.rule.len();
    let nf = space.n as f64;
    let mut s0 = vec![0.0; space.quad.len()];
    let mut s1 = vec![[0.0; 2]; space.quad.len()];
    for g in 0..space.quad.len() {
        for q in 0..nq {
            let v = space.rule.w[q] * density[g * nq + q];
            s0[g] += v;
            s1[g][0] += nf * v * space.rule.a[q];
            s1[g][1] += nf * v * space.rule.b[q];
        }
    }
    LtField::from_modes(space.n, &space.quad, &frame_omega(space.n, zeta[0], zeta[1], 0.0), &s0, &s1)
}

/// 𝓛T of a radial density about the origin, evaluable at any point. Inside
/// the sampling grid the radial data are interpolated linearly between Gauss
/// points; outside they follow the exterior closed form.
#[derive(Debug, Clone)]
pub struct RadialLt {
    pub n: usize,
    r: Vec<f64>,
    data: Vec<RadialPart>,
    r_max: f64,
    mass: f64,
    chi_mass: f64,
}

impl RadialLt {
    /// `density` must vanish beyond `r_max`.
    pub fn new(n: usize, density: &dyn Fn(f64) -> f64, r_max: f64, cells: usize) -> Result<Self> {
        let grid = RadialGrid::uniform(n, r_max, cells);
        let quad = RadialQuad::new(&grid, GAUSS_PER_CELL);
        let s0: Vec<f64> = quad.r.iter().map(|&r| density(r)).collect();
        let s1 = vec![[0.0; 2]; quad.len()];
        let f = LtField::from_modes(n, &quad, &frame_omega(n, 1.0, 0.0, 0.0), &s0, &s1)?;
        let nf = n as f64;
        let cum = Cumulative::new();
        let (p0, mass) = cum.run(&quad, n as i32 - 1, &s0);
        let (t0, t0tot) = cum.run(&quad, 1, &s0);
        let psi: Vec<f64> =
            (0..quad.len()).map(|g| (p0[g] * quad.r[g].powf(2.0 - nf) + t0tot - t0[g]) / (nf - 2.0)).collect();
        let (_, chi_mass) = cum.run(&quad, n as i32 - 1, &psi);
        Ok(RadialLt { n, r: f.r, data: f.radial, r_max, mass, chi_mass })
    }

    /// ∫_{R^n} density.
    pub fn total_mass(&self) -> f64 {
        self.mass * sphere_area(self.n - 1)
    }

    pub fn radial_part(&self, r: f64) -> RadialPart {
        let nf = self.n as f64;
        if r >= self.r_max {
            let dpsi = -self.mass * r.powf(1.0 - nf);
            let psi = self.mass * r.powf(2.0 - nf) / (nf - 2.0);
            let pchi = self.chi_mass + self.mass * (r * r - self.r_max * self.r_max) / (2.0 * (nf - 2.0));
            let m = -pchi * r.powf(-nf);
            let dm = -(psi + nf * m) / r;
            return RadialPart { dpsi, d3chi: -dpsi - (nf - 1.0) * dm, dm };
        }
        let k = self.r.partition_point(|&x| x < r).clamp(1, self.r.len() - 1);
        let (r0, r1) = (self.r[k - 1], self.r[k]);
        let t = (r - r0) / (r1 - r0);
        let (a, b) = (&self.data[k - 1], &self.data[k]);
        RadialPart {
            dpsi: a.dpsi + t * (b.dpsi - a.dpsi),
            d3chi: a.d3chi + t * (b.d3chi - a.d3chi),
            dm: a.dm + t * (b.dm - a.dm),
        }
    }

    /// 𝓛T at the point x for the source density·ζ.
    pub fn tensor(&self, x: &[f64], zeta: &[f64]) -> Vec<f64> {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            return vec![0.0; self.n * self.n];
        }
        let omega: Vec<f64> = x.iter().map(|v| v / r).collect();
        lt_tensor(self.n, r, &omega, zeta, &self.radial_part(r), None)
    }
}

/// Least-squares slope of log|y| against log x.
pub fn decay_exponent(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Parameters of the pointwise comparison bound.
#[derive(Debug, Clone, Copy)]
pub struct LtBoundParams {
    pub n: usize,
    pub delta: f64,
    /// |X(ξ)|.
    pub x_center: f64,
    /// sup |∇X|.
    pub x_grad: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LtBoundReport {
    /// sup_x |𝓛T_k − 𝓛T|·min(1, θ^{n−1}/(|X(ξ)| + δ‖∇X‖)).
    pub constant: f64,
    /// θ at which the supremum is reached.
    pub theta_at_sup: f64,
    pub points: usize,
}

/// Weighted sup of the pointwise difference of two tensor samples. `theta[k]`
/// is δ + |x_k − ξ|.
pub fn verify_lt_bounds(lt_k: &[Vec<f64>], lt_base: &[Vec<f64>], theta: &[f64], p: &LtBoundParams) -> LtBoundReport {
    let scale = p.x_center + p.delta * p.x_grad;
    let mut best = (0.0, 0.0);
    for ((a, b), &th) in lt_k.iter().zip(lt_base).zip(theta) {
        let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let w = if scale > 0.0 { (th.powi(p.n as i32 - 1) / scale).min(1.0) } else { 1.0 };
        if d * w > best.0 {
            best = (d * w, th);
        }
    }
    LtBoundReport { constant: best.0, theta_at_sup: best.1, points: theta.len() }
}
