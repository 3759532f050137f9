//! Angular quadrature on S^{n−1} for integrands that depend on ω only through
//! one or two fixed coordinates. Weights are normalized to sphere averages.

use nalgebra::{DMatrix, SymmetricEigen};

/// Gauss–Jacobi nodes and weights on [−1, 1] for (1−x)^α(1+x)^β, weights
/// normalized to sum 1 (Golub–Welsch).
pub fn gauss_jacobi(m: usize, alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1 && alpha > -1.0 && beta > -1.0);
    let ab = alpha + beta;
    let mut j = DMatrix::<f64>::zeros(m, m);
    for k in 0..m {
        let kf = k as f64;
        let den = (2.0 * kf + ab) * (2.0 * kf + ab + 2.0);
        j[(k, k)] = if k == 0 { (beta - alpha) / (ab + 2.0) } else { (beta * beta - alpha * alpha) / den };
        if k + 1 < m {
            let k1 = kf + 1.0;
            let s = 2.0 * k1 + ab;
            let num = 4.0 * k1 * (k1 + alpha) * (k1 + beta) * (k1 + ab);
            let den = s * s * (s + 1.0) * (s - 1.0);
            let b = (num / den).sqrt();
            j[(k, k + 1)] = b;
            j[(k + 1, k)] = b;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let tot: f64 = pairs.iter().map(|p| p.1).sum();
    (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1 / tot).collect())
}

/// Nodes (a, b) = (ω·e₁, ω·e₂) with weights for sphere averages over S^{n−1}.
/// `c` is the length of the component orthogonal to the plane.
#[derive(Debug, Clone)]
pub struct AngularRule {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub w: Vec<f64>,
    /// Whether the rule resolves dependence on b (two-dimensional).
    pub planar: bool,
}

impl AngularRule {
    /// Rule for integrands depending on ω only through ω·e₁.
    pub fn line(n: usize, m: usize) -> Self {
        let al = (n as f64 - 3.0) / 2.0;
        let (x, w) = gauss_jacobi(m, al, al);
        let c = x.iter().map(|a| (1.0 - a * a).max(0.0).sqrt()).collect();
        AngularRule { b: vec![0.0; m], a: x, c, w, planar: false }
    }

    /// Rule for integrands depending on ω through (ω·e₁, ω·e₂); needs n ≥ 4.
    pub fn plane(n: usize, m_radial: usize, m_theta: usize) -> Self {
        assert!(n >= 4);
        let (x, wr) = gauss_jacobi(m_radial, (n as f64 - 4.0) / 2.0, 0.0);
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut c = Vec::new();
        let mut w = Vec::new();
        for (xi, wi) in x.iter().zip(&wr) {
            let s = 0.5 * (1.0 + xi);
            let rho = s.sqrt();
            for k in 0..m_theta {
                let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / m_theta as f64;
                a.push(rho * th.cos());
                b.push(rho * th.sin());
                c.push((1.0 - s).max(0.0).sqrt());
                w.push(wi / m_theta as f64);
            }
        }
        AngularRule { a, b, c, w, planar: true }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Sphere average of g(a, b).
    pub fn average(&self, g: impl Fn(f64, f64) -> f64) -> f64 {
        (0..self.len()).map(|k| self.w[k] * g(self.a[k], self.b[k])).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_moment(n: usize, pa: i32, pb: i32) -> f64 {
        // E[a^pa b^pb] for uniform ω on S^{n−1}, even powers
        use statrs::function::gamma::gamma;
        let nf = n as f64;
        let g = |x: f64| gamma(x);
        let (pa, pb) = (pa as f64, pb as f64);
        g((pa + 1.0) / 2.0) * g((pb + 1.0) / 2.0) * g(nf / 2.0)
            / (std::f64::consts::PI * g((nf + pa + pb) / 2.0))
    }

    #[test]
    fn line_rule_moments() {
        for n in 6..=11 {
            let r = AngularRule::line(n, 12);
            for pw in [0, 2, 4, 8] {
                let got = r.average(|a, _| a.powi(pw));
                let exact = sphere_moment(n, pw, 0);
                assert!((got - exact).abs() < 1e-13, "n={n} p={pw}: {got} {exact}");
            }
            assert!(r.average(|a, _| a.powi(3)).abs() < 1e-14);
        }
    }

    #[test]
    fn plane_rule_moments() {
        for n in [6usize, 7, 11] {
            let r = AngularRule::plane(n, 8, 16);
            for (pa, pb) in [(0, 0), (2, 0), (0, 2), (2, 2), (4, 2), (6, 0)] {
                let got = r.average(|a, b| a.powi(pa) * b.powi(pb));
                let exact = sphere_moment(n, pa, pb);
                assert!((got - exact).abs() < 1e-13, "n={n} ({pa},{pb}): {got} {exact}");
            }
            assert!(r.average(|a, b| a * b).abs() < 1e-15);
            // ⟨a²⟩ = 1/n
            assert!((r.average(|a, _| a * a) - 1.0 / n as f64).abs() < 1e-14);
        }
    }
}
