//! Restarted GMRES with a caller-supplied inner product.

use crate::error::{Error, Result};

pub struct GmresReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Solves op(x) = b starting from x. `dot` must be an inner product; the
/// stopping test is ‖b − op(x)‖ ≤ tol·‖b‖ in its norm.
pub fn gmres(
    op: &dyn Fn(&[f64]) -> Vec<f64>,
    dot: &dyn Fn(&[f64], &[f64]) -> f64,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<GmresReport> {
    let bnorm = dot(b, b).sqrt();
    if !bnorm.is_finite() {
        return Err(Error::Numerical("GMRES right-hand side is not finite".into()));
    }
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(GmresReport { iterations: 0, residual: 0.0 });
    }
    let mut total = 0;
    loop {
        let ax = op(x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let beta = dot(&r, &r).sqrt();
        if beta <= tol * bnorm {
            return Ok(GmresReport { iterations: total, residual: beta / bnorm });
        }
        if total >= max_iter {
            return Err(Error::Numerical(format!("GMRES stalled at relative residual {:.3e}", beta / bnorm)));
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        // Hessenberg columns reduced on the fly by Givens rotations
        let mut hcols: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<(f64, f64)> = Vec::new();
        let mut g = vec![beta];
        let mut k = 0;
        while k < restart && total < max_iter {
            let mut w = op(&basis[k]);
            let mut h = vec![0.0; k + 2];
            for (j, vj) in basis.iter().enumerate() {
                h[j] = dot(&w, vj);
                w.iter_mut().zip(vj).for_each(|(a, b)| *a -= h[j] * b);
            }
            h[k + 1] = dot(&w, &w).sqrt();
            for (j, &(c, s)) in cs.iter().enumerate() {
                let (a, b) = (h[j], h[j + 1]);
                h[j] = c * a + s * b;
                h[j + 1] = -s * a + c * b;
            }
            let den = h[k].hypot(h[k + 1]);
            let (c, s) = if den == 0.0 { (1.0, 0.0) } else { (h[k] / den, h[k + 1] / den) };
            let hk1 = h[k + 1];
            h[k] = den;
            h[k + 1] = 0.0;
            cs.push((c, s));
            g.push(-s * g[k]);
            g[k] *= c;
            hcols.push(h);
            total += 1;
            k += 1;
            if g[k].abs() <= tol * bnorm || hk1 == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hk1).collect());
        }
        // back substitution for the k coefficients
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hcols[j][i] * y[j];
            }
            y[i] = s / hcols[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            x.iter_mut().zip(&basis[j]).for_each(|(a, b)| *a += yj * b);
        }
    }
}
