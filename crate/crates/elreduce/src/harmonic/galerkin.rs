//! Coupled modes {1, ω₁, ω₂} for fields whose angular dependence, in a frame
//! adapted to the data, is through (ω₁, ω₂) only. Potentials may depend on
//! angle; their moments are taken with the planar angular rule, so modes
//! couple within each cell and the matrices stay banded (bandwidth 5).

use crate::harmonic::angular::AngularRule;
use crate::harmonic::banded::SymBanded;
use crate::harmonic::{mode_constants, HarmonicField, RadialGrid, RadialQuad, GAUSS_PER_CELL};

pub const MODES: usize = 3;

#[derive(Debug, Clone)]
pub struct PlaneSpace {
    pub n: usize,
    pub grid: RadialGrid,
    pub quad: RadialQuad,
    pub rule: AngularRule,
}

impl PlaneSpace {
    pub fn new(grid: RadialGrid, rule: AngularRule) -> Self {
        assert!(rule.planar, "coupled modes need the planar rule");
        let quad = RadialQuad::new(&grid, GAUSS_PER_CELL);
        PlaneSpace { n: grid.n, grid, quad, rule }
    }

    pub fn ndof(&self) -> usize {
        MODES * self.grid.len()
    }

    pub fn dof(node: usize, mode: usize) -> usize {
        node * MODES + mode
    }

    pub fn npts(&self) -> usize {
        self.quad.len() * self.rule.len()
    }

    /// (r, ω₁, ω₂, |ω_⊥|) at point k.
    pub fn point(&self, k: usize) -> (f64, f64, f64, f64) {
        let (g, q) = (k / self.rule.len(), k % self.rule.len());
        (self.quad.r[g], self.rule.a[q], self.rule.b[q], self.rule.c[q])
    }

    /// Volume weight of point k; Σ w·F ≈ ∫ F.
    pub fn weight(&self, k: usize) -> f64 {
        let (g, q) = (k / self.rule.len(), k % self.rule.len());
        self.quad.w[g] * self.rule.w[q]
    }

    pub fn integrate(&self, vals: &[f64]) -> f64 {
        vals.iter().enumerate().map(|(k, v)| self.weight(k) * v).sum()
    }

    fn y(&self, q: usize) -> [f64; MODES] {
        [1.0, self.rule.a[q], self.rule.b[q]]
    }

    /// Dofs held fixed: l = 1 modes at the origin, every mode at r_max.
    pub fn constrained(&self) -> Vec<usize> {
        let last = self.grid.len() - 1;
        vec![Self::dof(0, 1), Self::dof(0, 2), Self::dof(last, 0), Self::dof(last, 1), Self::dof(last, 2)]
    }

    /// Values of the Galerkin field at every point.
    pub fn values(&self, c: &[f64]) -> Vec<f64> {
        let nq = self.rule.len();
        let mut out = Vec::with_capacity(self.npts());
        for g in 0..self.quad.len() {
            let (e, l) = (self.quad.cell[g], self.quad.left[g]);
            let m: [f64; MODES] =
                std::array::from_fn(|a| l * c[Self::dof(e, a)] + (1.0 - l) * c[Self::dof(e + 1, a)]);
            for q in 0..nq {
                let y = self.y(q);
                out.push(m[0] * y[0] + m[1] * y[1] + m[2] * y[2]);
            }
        }
        out
    }

    /// Load vector ∫ F·N_j·Y_α with constrained entries zeroed.
    pub fn load(&self, vals: &[f64]) -> Vec<f64> {
        let nq = self.rule.len();
        let mut b = vec![0.0; self.ndof()];
        for g in 0..self.quad.len() {
            let mut mom = [0.0; MODES];
            for q in 0..nq {
                let y = self.y(q);
                let v = self.rule.w[q] * vals[g * nq + q];
                for a in 0..MODES {
                    mom[a] += v * y[a];
                }
            }
            let (e, l, w) = (self.quad.cell[g], self.quad.left[g], self.quad.w[g]);
            for a in 0..MODES {
                b[Self::dof(e, a)] += w * l * mom[a];
                b[Self::dof(e + 1, a)] += w * (1.0 - l) * mom[a];
            }
        }
        for i in self.constrained() {
            b[i] = 0.0;
        }
        b
    }

    /// Weak form of Δ + V with the Dirichlet dofs pinned. With `with_stiffness`
    /// false only the potential part is assembled (and nothing is pinned).
    pub fn assemble(&self, pot: &[f64], with_stiffness: bool) -> SymBanded {
        let n = self.n;
        let nq = self.rule.len();
        let mut a = SymBanded::zeros(self.ndof(), 2 * MODES - 1);
        let consts: [(f64, f64); MODES] = [mode_constants(n, 0), mode_constants(n, 1), mode_constants(n, 1)];
        for g in 0..self.quad.len() {
            let mut mom = [[0.0; MODES]; MODES];
            for q in 0..nq {
                let y = self.y(q);
                let v = self.rule.w[q] * pot[g * nq + q];
                for i in 0..MODES {
                    for j in 0..=i {
                        mom[i][j] += v * y[i] * y[j];
                    }
                }
            }
            let (e, r, w, l, h) = (self.quad.cell[g], self.quad.r[g], self.quad.w[g], self.quad.left[g], self.quad.h[g]);
            let nv = [l, 1.0 - l];
            let dv = [-1.0 / h, 1.0 / h];
            // local 6×6 block over (node s, mode i); lower triangle added once
            for s_ in 0..2 {
                for i in 0..MODES {
                    let di = Self::dof(e + s_, i);
                    for t in 0..2 {
                        for j in 0..MODES {
                            let dj = Self::dof(e + t, j);
                            if dj > di {
                                continue;
                            }
                            let m = if i >= j { mom[i][j] } else { mom[j][i] };
                            let mut v = w * m * nv[s_] * nv[t];
                            if with_stiffness && i == j {
                                let (my, lam) = consts[i];
                                v += w * my * (dv[s_] * dv[t] + lam / (r * r) * nv[s_] * nv[t]);
                            }
                            a.add(di, dj, v);
                        }
                    }
                }
            }
        }
        if with_stiffness {
            for i in self.constrained() {
                a.pin(i);
            }
        }
        a
    }

    /// Coefficient vector from the first two l = 1 components of a field.
    pub fn from_field(&self, f: &HarmonicField) -> Vec<f64> {
        let mut c = vec![0.0; self.ndof()];
        for i in 0..self.grid.len() {
            c[Self::dof(i, 0)] = f.l0[i];
            c[Self::dof(i, 1)] = f.l1[0][i];
            c[Self::dof(i, 2)] = f.l1[1][i];
        }
        c
    }

    pub fn to_field(&self, c: &[f64]) -> HarmonicField {
        let mut f = HarmonicField::zeros(&self.grid);
        for i in 0..self.grid.len() {
            f.l0[i] = c[Self::dof(i, 0)];
            f.l1[0][i] = c[Self::dof(i, 1)];
            f.l1[1][i] = c[Self::dof(i, 2)];
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::{assemble_operator, HarmonicField};

    fn space(n: usize) -> PlaneSpace {
        PlaneSpace::new(RadialGrid::uniform(n, 3.0, 60), AngularRule::plane(n, 6, 12))
    }

    #[test]
    fn assembly_is_symmetric_and_matches_single_mode() {
        let s = space(7);
        let pot: Vec<f64> = (0..s.npts()).map(|k| 1.0 + s.point(k).0).collect();
        let a = s.assemble(&pot, true);
        // radial potential: the mode blocks decouple and equal the scalar operators
        let op0 = assemble_operator(&s.grid, &|r| 1.0 + r, 0);
        let op1 = assemble_operator(&s.grid, &|r| 1.0 + r, 1);
        for i in 1..s.grid.len() - 1 {
            for j in i.saturating_sub(1)..=i {
                let d0 = a.get(PlaneSpace::dof(i, 0), PlaneSpace::dof(j, 0)) - op0.matrix.get(i, j);
                let d1 = a.get(PlaneSpace::dof(i, 1), PlaneSpace::dof(j, 1)) - op1.matrix.get(i, j);
                let d2 = a.get(PlaneSpace::dof(i, 2), PlaneSpace::dof(j, 2)) - op1.matrix.get(i, j);
                let scale = op0.matrix.get(i, i).abs();
                assert!(d0.abs() < 1e-12 * scale && d1.abs() < 1e-12 * scale && d2.abs() < 1e-12 * scale);
                assert!(a.get(PlaneSpace::dof(i, 0), PlaneSpace::dof(j, 1)).abs() < 1e-14 * scale);
            }
        }
    }

    #[test]
    fn angular_potential_couples_modes_consistently() {
        // ⟨(Δ+V)φ, ψ⟩ from the matrix equals the pointwise quadrature of Vφψ
        // plus the stiffness, for φ, ψ built from all three modes
        let s = space(6);
        let pot: Vec<f64> = (0..s.npts()).map(|k| { let (r, a, b, _) = s.point(k); 0.3 * a + b * b + r }).collect();
        let a = s.assemble(&pot, false);
        let phi: Vec<f64> = (0..s.ndof()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let psi: Vec<f64> = (0..s.ndof()).map(|i| ((i * 3 % 13) as f64 - 6.0) / 6.0).collect();
        let lhs: f64 = a.matvec(&phi).iter().zip(&psi).map(|(x, y)| x * y).sum();
        let fp = s.values(&phi);
        let fq = s.values(&psi);
        let rhs = s.integrate(&(0..s.npts()).map(|k| pot[k] * fp[k] * fq[k]).collect::<Vec<_>>());
        assert!((lhs - rhs).abs() < 1e-11 * rhs.abs().max(1.0), "{lhs} {rhs}");
    }

    #[test]
    fn field_round_trip() {
        let s = space(8);
        let c: Vec<f64> = (0..s.ndof()).map(|i| i as f64).collect();
        let f: HarmonicField = s.to_field(&c);
        assert_eq!(s.from_field(&f), c);
    }
}
