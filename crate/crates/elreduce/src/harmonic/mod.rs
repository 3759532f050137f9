//! Radial finite elements for Δ + V on a ball in R^n, with fields stored as
//! spherical-harmonic modes l = 0 and l = 1.
//!
//! Δ is the nonnegative Laplacian −div∇. Operators are assembled in weak
//! form with P1 elements in r; the quadratic form of a mode-l field φ(r)Y
//! is the true R^n integral ∫|∇(φY)|² + V(φY)².

pub mod angular;
pub mod banded;
pub mod galerkin;

use std::fmt::Write as _;

use crate::error::{Error, Regime, Result};
use crate::harmonic::angular::gauss_jacobi;
use crate::harmonic::banded::{BandedCholesky, SymBanded};
use crate::model::{BackgroundProfile, ModelConfig};
use crate::sobolev::{p_exp, q_exp, sphere_area};

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    pub n: usize,
    pub r_max: f64,
    /// Nodes from 0 to r_max inclusive.
    pub nodes: Vec<f64>,
}

impl RadialGrid {
    /// r = c·sinh(γs) on uniform s ∈ [0,1] with c = δ/4: uniform near 0 on
    /// the scale δ, geometric further out.
    pub fn graded(n: usize, delta: f64, r_max: f64, cells: usize) -> Result<Self> {
        if !(delta > 0.0 && r_max > delta) || cells < 16 {
            return Err(Error::Config(format!("bad grid: delta={delta}, r_max={r_max}, cells={cells}")));
        }
        let c = 0.25 * delta;
        let g = (r_max / c).asinh();
        let mut nodes: Vec<f64> = (0..=cells).map(|k| c * (g * k as f64 / cells as f64).sinh()).collect();
        nodes[cells] = r_max;
        let grid = RadialGrid { n, r_max, nodes };
        if grid.count_below(delta) < 8 {
            return Err(Error::Config(format!("grid resolves δ={delta} with fewer than 8 nodes")));
        }
        Ok(grid)
    }

    pub fn uniform(n: usize, r_max: f64, cells: usize) -> Self {
        RadialGrid { n, r_max, nodes: (0..=cells).map(|k| r_max * k as f64 / cells as f64).collect() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Nodes in (0, x).
    pub fn count_below(&self, x: f64) -> usize {
        self.nodes.iter().filter(|&&r| r > 0.0 && r < x).count()
    }

    /// Cell containing r and the local coordinate in [0,1].
    pub fn locate(&self, r: f64) -> (usize, f64) {
        let m = self.cells();
        let e = self.nodes.partition_point(|&v| v <= r).saturating_sub(1).min(m - 1);
        let (a, b) = (self.nodes[e], self.nodes[e + 1]);
        (e, ((r - a) / (b - a)).clamp(0.0, 1.0))
    }

    /// P1 interpolation of nodal values; zero beyond r_max.
    pub fn interpolate(&self, vals: &[f64], r: f64) -> f64 {
        if r > self.r_max {
            return 0.0;
        }
        let (e, t) = self.locate(r);
        (1.0 - t) * vals[e] + t * vals[e + 1]
    }
}

/// Gauss points per cell used by every assembly.
pub const GAUSS_PER_CELL: usize = 4;

/// Gauss–Legendre points on [0,1] with weights summing to 1.
pub(crate) fn unit_gauss(m: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_jacobi(m, 0.0, 0.0);
    (x.iter().map(|t| 0.5 * (1.0 + t)).collect(), w)
}

/// Radial quadrature points of a grid with the R^n volume weight ω_{n−1}r^{n−1}.
#[derive(Debug, Clone)]
pub struct RadialQuad {
    pub r: Vec<f64>,
    pub w: Vec<f64>,
    pub cell: Vec<usize>,
    /// Value of the left hat function of the cell at the point.
    pub left: Vec<f64>,
    /// Cell width.
    pub h: Vec<f64>,
}

impl RadialQuad {
    pub fn new(grid: &RadialGrid, m: usize) -> Self {
        let (x, w) = unit_gauss(m);
        let area = sphere_area(grid.n - 1);
        let nm1 = grid.n as i32 - 1;
        let mut q = RadialQuad { r: vec![], w: vec![], cell: vec![], left: vec![], h: vec![] };
        for e in 0..grid.cells() {
            let (a, b) = (grid.nodes[e], grid.nodes[e + 1]);
            for k in 0..m {
                let r = a + (b - a) * x[k];
                q.r.push(r);
                q.w.push(area * (b - a) * w[k] * r.powi(nm1));
                q.cell.push(e);
                q.left.push(1.0 - x[k]);
                q.h.push(b - a);
            }
        }
        q
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Nodal values interpolated to the quadrature points.
    pub fn interp(&self, vals: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|g| self.left[g] * vals[self.cell[g]] + (1.0 - self.left[g]) * vals[self.cell[g] + 1]).collect()
    }

    /// Derivative of the nodal interpolant at the quadrature points.
    pub fn interp_d(&self, vals: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|g| (vals[self.cell[g] + 1] - vals[self.cell[g]]) / self.h[g]).collect()
    }
}

/// ⟨Y²⟩ and the eigenvalue l(l+n−2) for a mode Y of degree l, Y = 1 or ω_k.
pub fn mode_constants(n: usize, l: usize) -> (f64, f64) {
    match l {
        0 => (1.0, 0.0),
        1 => (1.0 / n as f64, n as f64 - 1.0),
        _ => panic!("only l ≤ 1 modes are represented"),
    }
}

/// A field φ(r, ω) = l0(r) + Σ_k l1[k](r)·ω_k given by nodal values.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicField {
    pub n: usize,
    pub r: Vec<f64>,
    pub l0: Vec<f64>,
    pub l1: Vec<Vec<f64>>,
}

impl HarmonicField {
    pub fn zeros(grid: &RadialGrid) -> Self {
        let m = grid.len();
        HarmonicField { n: grid.n, r: grid.nodes.clone(), l0: vec![0.0; m], l1: vec![vec![0.0; m]; grid.n] }
    }

    pub fn radial(grid: &RadialGrid, l0: Vec<f64>) -> Self {
        assert_eq!(l0.len(), grid.len());
        HarmonicField { l0, ..Self::zeros(grid) }
    }

    pub fn eval(&self, r: f64, omega: &[f64]) -> f64 {
        let g = RadialGrid { n: self.n, r_max: *self.r.last().unwrap(), nodes: self.r.clone() };
        let mut v = g.interpolate(&self.l0, r);
        for (k, c) in self.l1.iter().enumerate() {
            if omega[k] != 0.0 {
                v += omega[k] * g.interpolate(c, r);
            }
        }
        v
    }

    /// Grid invariants: matching lengths and vanishing l=1 data at r = 0.
    pub fn check(&self) -> Result<()> {
        let m = self.r.len();
        if self.l0.len() != m || self.l1.len() != self.n || self.l1.iter().any(|c| c.len() != m) {
            return Err(Error::Numerical("harmonic field arrays do not match the grid".into()));
        }
        if self.l1.iter().any(|c| c[0] != 0.0) {
            return Err(Error::Numerical("l=1 component nonzero at the origin".into()));
        }
        Ok(())
    }

    /// CSV with columns r, mode, component, value; zero l=1 components skipped.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,mode,component,value\n");
        for (i, r) in self.r.iter().enumerate() {
            let _ = writeln!(s, "{r:.17e},0,0,{:.17e}", self.l0[i]);
        }
        for (k, c) in self.l1.iter().enumerate() {
            if c.iter().all(|v| *v == 0.0) {
                continue;
            }
            for (i, r) in self.r.iter().enumerate() {
                let _ = writeln!(s, "{r:.17e},1,{k},{:.17e}", c[i]);
            }
        }
        s
    }
}

/// Weak form of −φ'' − (n−1)φ'/r + l(l+n−2)φ/r² + Vφ for a single mode,
/// Dirichlet at r_max, and at r = 0 natural (l = 0) or Dirichlet (l = 1).
#[derive(Debug, Clone)]
pub struct ScalarOperator {
    pub grid: RadialGrid,
    pub l: usize,
    /// Constrained matrix (identity rows at Dirichlet nodes).
    pub matrix: SymBanded,
    /// Mass matrix with the same constraints (zero rows at Dirichlet nodes).
    pub mass: SymBanded,
    /// Smallest sampled value of the potential.
    pub potential_min: f64,
    /// Matrix entry coupling the last interior node to the boundary node.
    boundary_coupling: f64,
}

pub fn assemble_operator(grid: &RadialGrid, potential: &dyn Fn(f64) -> f64, l: usize) -> ScalarOperator {
    let n = grid.n;
    let (my, lam) = mode_constants(n, l);
    let q = RadialQuad::new(grid, GAUSS_PER_CELL);
    let m = grid.len();
    let mut a = SymBanded::zeros(m, 1);
    let mut mass = SymBanded::zeros(m, 1);
    let mut vmin = f64::INFINITY;
    for g in 0..q.len() {
        let (e, r, w, nl, h) = (q.cell[g], q.r[g], q.w[g] * my, q.left[g], q.h[g]);
        let nr = 1.0 - nl;
        let v = potential(r);
        vmin = vmin.min(v);
        let c = lam / (r * r) + v;
        let (d0, d1) = (-1.0 / h, 1.0 / h);
        a.add(e, e, w * (d0 * d0 + c * nl * nl));
        a.add(e + 1, e + 1, w * (d1 * d1 + c * nr * nr));
        a.add(e + 1, e, w * (d0 * d1 + c * nl * nr));
        mass.add(e, e, w * nl * nl);
        mass.add(e + 1, e + 1, w * nr * nr);
        mass.add(e + 1, e, w * nl * nr);
    }
    let boundary_coupling = a.get(m - 1, m - 2);
    a.pin(m - 1);
    zero_row(&mut mass, m - 1);
    if l == 1 {
        a.pin(0);
        zero_row(&mut mass, 0);
    }
    ScalarOperator { grid: grid.clone(), l, matrix: a, mass, potential_min: vmin, boundary_coupling }
}

fn zero_row(m: &mut SymBanded, i: usize) {
    let kd = m.bandwidth();
    for j in i.saturating_sub(kd)..(i + kd + 1).min(m.dim()) {
        m.set(i, j, 0.0);
    }
}

impl ScalarOperator {
    pub fn factor(&self) -> Result<BandedCholesky> {
        self.matrix.cholesky()
    }

    /// Weak application ⟨Aφ, N_j⟩ at free nodes, zero at constrained ones.
    pub fn apply_weak(&self, phi: &[f64]) -> Vec<f64> {
        let mut y = self.matrix.matvec(phi);
        for i in self.constrained() {
            y[i] = 0.0;
        }
        y
    }

    pub fn constrained(&self) -> Vec<usize> {
        let m = self.grid.len();
        if self.l == 1 {
            vec![0, m - 1]
        } else {
            vec![m - 1]
        }
    }

    /// Load vector ∫ s·N_j·Y for a strong-form right-hand side s(r).
    pub fn load(&self, s: &dyn Fn(f64) -> f64) -> Vec<f64> {
        let (my, _) = mode_constants(self.grid.n, self.l);
        let q = RadialQuad::new(&self.grid, GAUSS_PER_CELL);
        let mut b = vec![0.0; self.grid.len()];
        for g in 0..q.len() {
            let v = q.w[g] * my * s(q.r[g]);
            b[q.cell[g]] += v * q.left[g];
            b[q.cell[g] + 1] += v * (1.0 - q.left[g]);
        }
        for i in self.constrained() {
            b[i] = 0.0;
        }
        b
    }

    /// Lumped mass at each node (row sums of the unconstrained mass matrix).
    pub fn lumped_mass(&self) -> Vec<f64> {
        let (my, _) = mode_constants(self.grid.n, self.l);
        let q = RadialQuad::new(&self.grid, GAUSS_PER_CELL);
        let mut mvec = vec![0.0; self.grid.len()];
        for g in 0..q.len() {
            mvec[q.cell[g]] += q.w[g] * my * q.left[g];
            mvec[q.cell[g] + 1] += q.w[g] * my * (1.0 - q.left[g]);
        }
        mvec
    }
}

/// Solves the weak problem for a load vector with Dirichlet value `boundary`
/// at r_max. Fails with a coercivity diagnosis when the operator is not
/// positive definite.
pub fn solve_load(op: &ScalarOperator, load: &[f64], boundary: f64) -> Result<Vec<f64>> {
    let m = op.grid.len();
    let mut b = load.to_vec();
    for i in op.constrained() {
        b[i] = 0.0;
    }
    b[m - 1] = boundary;
    b[m - 2] -= op.boundary_coupling * boundary;
    let x = op.factor()?.solve(&b);
    let r = op.matrix.matvec(&x);
    let res = r.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if res > 1e-10 * bn.max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!("banded solve residual {res:e} exceeds 1e-10·{bn:e}")));
    }
    Ok(x)
}

/// (Δ+V)^{−1}s with zero boundary value, for a strong-form right-hand side.
pub fn solve_scalar(op: &ScalarOperator, rhs: &dyn Fn(f64) -> f64) -> Result<Vec<f64>> {
    solve_load(op, &op.load(rhs), 0.0)
}

/// Response to a unit-mass source on the sphere |x| = r_source (a point
/// source at the origin when r_source = 0).
pub fn green_function(op: &ScalarOperator, r_source: f64) -> Result<Vec<f64>> {
    if op.l != 0 {
        return Err(Error::Config("green_function is defined for the radial mode".into()));
    }
    let m = op.grid.len();
    let (e, t) = op.grid.locate(r_source);
    let mut load = vec![0.0; m];
    load[e] = 1.0 - t;
    load[e + 1] = t;
    let g = solve_load(op, &load, 0.0)?;
    Ok(g)
}

/// Smallest eigenvalue of the quadratic form relative to the L² norm, by
/// shifted inverse iteration.
pub fn coercivity_margin(op: &ScalarOperator) -> Result<f64> {
    // K − V_min·M dominates the pure stiffness, which is definite under the
    // Dirichlet condition; the shift keeps the iteration ratio small
    let shift = -op.potential_min;
    let shifted = op.matrix.axpy(shift, &op.mass);
    // the identity rows of constrained nodes would pollute the spectrum
    let chol = shifted.cholesky()?;
    let m = op.grid.len();
    let cons = op.constrained();
    let mut x: Vec<f64> = (0..m).map(|i| if cons.contains(&i) { 0.0 } else { 1.0 + 0.1 * (i as f64).sin() }).collect();
    let mut lam = f64::NAN;
    for _ in 0..5000 {
        let mx = op.mass.matvec(&x);
        let mut y = chol.solve(&mx);
        for &i in &cons {
            y[i] = 0.0;
        }
        let ky = op.matrix.matvec(&y);
        let my = op.mass.matvec(&y);
        let num: f64 = cons_free_dot(&y, &ky, &cons);
        let den: f64 = cons_free_dot(&y, &my, &cons);
        let new = num / den;
        let nrm = den.sqrt();
        x = y.iter().map(|v| v / nrm).collect();
        if (new - lam).abs() <= 1e-12 * new.abs().max(1e-300) {
            return Ok(new);
        }
        lam = new;
    }
    Err(Error::regime(Regime::Coercivity, "inverse iteration for the coercivity margin did not converge"))
}

fn cons_free_dot(a: &[f64], b: &[f64], cons: &[usize]) -> f64 {
    a.iter().zip(b).enumerate().filter(|(i, _)| !cons.contains(i)).map(|(_, (x, y))| x * y).sum()
}

/// Potential h − (2*−1)f·u^{2*−2} + (2*+1)ρ·u^{−2*−2} of the linearized
/// operator about the radial background, ρ = |𝓛T+σ|² + π².
pub fn linearized_potential(cfg: &ModelConfig, bg: &BackgroundProfile, rho: f64, r: f64) -> f64 {
    let (p, q) = (p_exp(cfg.n), q_exp(cfg.n));
    let u = bg.value(r);
    cfg.h_background(r) + cfg.h_bump_sq(r * r) - p * cfg.f_radial(r) * u.powf(p - 1.0) + q * rho * u.powf(-q - 1.0)
}

/// L_u v mode by mode, returned in strong form through the lumped mass:
/// at interior nodes (L_u v)_j = ⟨L_u v, N_j⟩/m_j, zero at Dirichlet nodes.
#[allow(non_snake_case)]
pub fn apply_Lu(
    cfg: &ModelConfig,
    bg: &BackgroundProfile,
    rho: &dyn Fn(f64) -> f64,
    v: &HarmonicField,
) -> Result<HarmonicField> {
    v.check()?;
    let grid = RadialGrid { n: v.n, r_max: *v.r.last().unwrap(), nodes: v.r.clone() };
    let pot = |r: f64| linearized_potential(cfg, bg, rho(r), r);
    let strong = |op: &ScalarOperator, c: &[f64]| {
        let w = op.apply_weak(c);
        let m = op.lumped_mass();
        w.iter().zip(&m).map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 }).collect::<Vec<f64>>()
    };
    let op0 = assemble_operator(&grid, &pot, 0);
    let op1 = assemble_operator(&grid, &pot, 1);
    let mut out = HarmonicField::zeros(&grid);
    out.l0 = strong(&op0, &v.l0);
    for (k, c) in v.l1.iter().enumerate() {
        if c.iter().any(|x| *x != 0.0) {
            out.l1[k] = strong(&op1, c);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{solve_ground_state, ModelConfig};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn graded_grid_resolves_delta() {
        let g = RadialGrid::graded(7, 1e-3, 2.0, 400).unwrap();
        assert!(g.count_below(1e-3) >= 8);
        assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*g.nodes.last().unwrap(), 2.0);
        assert!(RadialGrid::graded(7, 1e-3, 2.0, 20).is_err());
    }

    #[test]
    fn constants_are_harmonic_and_scale_with_potential() {
        let g = RadialGrid::uniform(6, 2.0, 50);
        let one = vec![1.0; g.len()];
        let op = assemble_operator(&g, &|_| 0.0, 0);
        let y = op.apply_weak(&one);
        for i in 0..g.len() - 2 {
            assert!(y[i].abs() < 1e-12 * op.matrix.get(i, i));
        }
        let op = assemble_operator(&g, &|_| 2.5, 0);
        let y = op.apply_weak(&one);
        let m = op.lumped_mass();
        for i in 0..g.len() - 2 {
            assert_relative_eq!(y[i] / m[i], 2.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn operators_are_symmetric() {
        let g = RadialGrid::graded(8, 0.01, 3.0, 200).unwrap();
        for l in [0, 1] {
            let op = assemble_operator(&g, &|r| 1.0 + r.sin(), l);
            let a = &op.matrix;
            // stored symmetric by construction; check the quadratic form directly
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
            let x: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xaz: f64 = a.matvec(&z).iter().zip(&x).map(|(p, q)| p * q).sum();
            let zax: f64 = a.matvec(&x).iter().zip(&z).map(|(p, q)| p * q).sum();
            assert!((xaz - zax).abs() < 1e-12 * a.max_abs() * g.len() as f64);
        }
    }

    #[test]
    fn margin_bounds() {
        let g = RadialGrid::uniform(7, 3.0, 200);
        let h0 = 0.7;
        let m = coercivity_margin(&assemble_operator(&g, &|_| h0, 0)).unwrap();
        assert!(m >= h0);
        let m = coercivity_margin(&assemble_operator(&g, &|_| -40.0 + 0.01, 0)).unwrap();
        assert!(m < 0.0);
        let op = assemble_operator(&g, &|_| -40.0 + 0.01, 0);
        assert!(matches!(op.factor(), Err(Error::Regime { regime: Regime::Coercivity, .. })));
    }

    #[test]
    fn round_trip_and_zero() {
        let g = RadialGrid::graded(6, 0.05, 4.0, 300).unwrap();
        for l in [0, 1] {
            let op = assemble_operator(&g, &|r| 1.0 / (1.0 + r), l);
            let mut x: Vec<f64> = g.nodes.iter().map(|r| (-(r * r)).exp() * (1.0 + r)).collect();
            for i in op.constrained() {
                x[i] = 0.0;
            }
            let y = solve_load(&op, &op.apply_weak(&x), 0.0).unwrap();
            for i in 0..g.len() {
                assert!((y[i] - x[i]).abs() < 1e-9);
            }
            let z = solve_load(&op, &vec![0.0; g.len()], 0.0).unwrap();
            assert!(z.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn second_order_convergence() {
        // −Δw = f·W^{2*−1} on a ball with w = 0 at r_max is solved by W − W(r_max)
        let n = 7;
        let delta: f64 = 0.01;
        let f = 35.0;
        let big_r = 1.0;
        let e = (n as f64 - 2.0) / 2.0;
        let w = move |r: f64| delta.powf(-e) * (1.0 + (r / delta).powi(2)).powf(-e);
        let err = |cells: usize| {
            let g = RadialGrid::graded(n, delta, big_r, cells).unwrap();
            let op = assemble_operator(&g, &|_| 0.0, 0);
            let x = solve_scalar(&op, &|r| f * w(r).powf(p_exp(n))).unwrap();
            g.nodes.iter().zip(&x).map(|(r, v)| (v - w(*r) + w(big_r)).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(200), err(400));
        let order = (e1 / e2).log2();
        assert!(order >= 1.95, "order {order} ({e1:e}, {e2:e})");
    }

    #[test]
    fn newtonian_green_function() {
        for n in [6usize, 7] {
            let big_r = 4.0;
            let g = RadialGrid::graded(n, 0.01, big_r, 800).unwrap();
            let op = assemble_operator(&g, &|_| 0.0, 0);
            let gf = green_function(&op, 0.0).unwrap();
            assert!(gf[..g.len() - 1].iter().all(|v| *v > 0.0));
            let c = 1.0 / ((n as f64 - 2.0) * sphere_area(n - 1));
            for (i, r) in g.nodes.iter().enumerate() {
                if *r > 0.05 && *r < 2.0 {
                    let ex = c * (r.powf(2.0 - n as f64) - big_r.powf(2.0 - n as f64));
                    assert_relative_eq!(gf[i], ex, max_relative = 1e-3);
                }
            }
        }
    }

    #[test]
    fn green_bound_ratio() {
        let n = 7;
        let delta: f64 = 0.01;
        let r_max = 64.0 * delta.sqrt();
        let g = RadialGrid::graded(n, delta, r_max, 600).unwrap();
        let op = assemble_operator(&g, &|_| 1.0, 0);
        let gf = green_function(&op, 0.0).unwrap();
        let ratios: Vec<f64> = g
            .nodes
            .iter()
            .zip(&gf)
            .filter(|(r, _)| **r >= 5.0 * delta && **r <= r_max / 4.0)
            .map(|(r, v)| v * r.powf(n as f64 - 2.0))
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(lo > 0.0 && hi / lo < 10.0, "c2/c1 = {}", hi / lo);
    }

    #[test]
    fn bubble_source_reproduces_bubble() {
        let n = 6;
        let delta: f64 = 1e-2;
        let f = 24.0;
        let r_max = 1.0;
        let a = f / 24.0;
        let w = |r: f64| delta.powf(-2.0) * (1.0 + a * (r / delta).powi(2)).powf(-2.0);
        let g = RadialGrid::graded(n, delta, r_max, 1200).unwrap();
        let op = assemble_operator(&g, &|_| 0.0, 0);
        let x = solve_scalar(&op, &|r| f * w(r).powf(p_exp(n))).unwrap();
        // the Dirichlet solution is W − W(r_max)-type correction of size δ^{(n−2)/2}r_max^{2−n}
        let corr = delta.powf(2.0) * 10.0;
        for (r, v) in g.nodes.iter().zip(&x) {
            if *r < 0.5 {
                assert!((v - w(*r)).abs() < corr + 1e-3 * w(*r), "r={r}: {v} vs {}", w(*r));
            }
        }
    }

    #[test]
    fn linearized_operator_at_ground_state() {
        let cfg = ModelConfig::from_json_str(r#"{"n": 7, "tau": 0.1, "f0": 35.0, "h0": 1.0, "rho0": 2.2e-12}"#, &[]).unwrap();
        let gs = solve_ground_state(&cfg).unwrap();
        let bg = BackgroundProfile::solve(&cfg, &gs).unwrap();
        // far from the core the background is constant: compare to the constant margin
        let wide = ModelConfig { core_radius: 1e-6, tau: 0.0, ..cfg.clone() };
        let g = RadialGrid::uniform(7, 120.0, 1200);
        let op = assemble_operator(&g, &|r| linearized_potential(&wide, &bg, wide.rho0, r.max(30.0)), 0);
        let m = coercivity_margin(&op).unwrap();
        assert!((m - gs.stability_margin).abs() < 0.05 * gs.stability_margin, "{m} vs {}", gs.stability_margin);

        // symmetry of L_u in the lumped product
        let grid = RadialGrid::graded(7, 0.01, 6.0, 300).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut rand_field = || {
            let mut f = HarmonicField::zeros(&grid);
            for i in 0..grid.len() - 1 {
                f.l0[i] = rng.gen_range(-1.0..1.0);
                if i > 0 {
                    f.l1[0][i] = rng.gen_range(-1.0..1.0);
                }
            }
            f
        };
        let (v, w) = (rand_field(), rand_field());
        let rho = |_: f64| cfg.rho0;
        let lv = apply_Lu(&cfg, &bg, &rho, &v).unwrap();
        let lw = apply_Lu(&cfg, &bg, &rho, &w).unwrap();
        let m0 = assemble_operator(&grid, &|_| 0.0, 0).lumped_mass();
        let m1 = assemble_operator(&grid, &|_| 0.0, 1).lumped_mass();
        let pair = |a: &HarmonicField, b: &HarmonicField| -> f64 {
            (0..grid.len()).map(|i| m0[i] * a.l0[i] * b.l0[i] + m1[i] * a.l1[0][i] * b.l1[0][i]).sum()
        };
        let (x, y) = (pair(&lv, &w), pair(&v, &lw));
        assert!((x - y).abs() < 1e-9 * x.abs().max(y.abs()), "{x} {y}");
        let zero = apply_Lu(&cfg, &bg, &rho, &HarmonicField::zeros(&grid)).unwrap();
        assert!(zero.l0.iter().all(|v| *v == 0.0));
    }
}
