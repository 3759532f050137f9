//! Leading-order expansions of the kernel coefficients, their quadrature and
//! pipeline counterparts, the limiting reduced map and its zero.
//!
//! Row convention: the "pipeline λ" of row i is (Gλ)_i, the coefficient
//! vector weighted by the kernel Gram matrix. Integrating the equation against
//! Z_i gives exactly Σ_m I_{m,i} = (Gλ)_i, and it is this quantity whose
//! leading term is I_{1,i} + I_{3,i} (n ≥ 7) or J_{1,i} + J_{5,i} (n = 6).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Regime, Result};
use crate::model::{bump_sq, bump_sq_d, ModelConfig};
use crate::quadrature::{i3_slope_constant, kappa as kappa_quadrature, KappaParams};
use crate::reduction::{Background, DlIntegrals, Problem, ReductionSettings, ReductionState};
use crate::sobolev::{k_n_inv_pow, sphere_area};

/// Point data entering the leading terms.
#[derive(Debug, Clone, Serialize)]
pub struct LeadingParams {
    pub n: usize,
    pub t: f64,
    pub p: Vec<f64>,
    pub mu: f64,
    pub tau: f64,
    pub beta: f64,
    pub lcf: bool,
    /// f, u and ∇u at the concentration point.
    pub f: f64,
    pub u: f64,
    pub grad_u: Vec<f64>,
    /// H(p) and ∇H(p) of the bump profile.
    pub h: f64,
    pub grad_h: Vec<f64>,
    pub weyl_sq: f64,
    pub grad_weyl_sq: Vec<f64>,
    /// Six-dimensional balance constant; required for n = 6 only.
    pub kappa: Option<f64>,
}

impl LeadingParams {
    /// Data of `cfg` at (t, p), with f and u sampled at `xi`.
    pub fn from_model(cfg: &ModelConfig, bg: &Background, t: f64, p: &[f64], xi: &[f64]) -> Result<Self> {
        let n = cfg.n;
        if p.len() != n || xi.len() != n {
            return Err(Error::Config(format!("p and xi must have {n} components")));
        }
        let s = p.iter().map(|v| v * v).sum::<f64>();
        let rx = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (u, du, _) = bg.profile.eval3(rx);
        let grad_u = if rx > 0.0 { xi.iter().map(|x| du * x / rx).collect() } else { vec![0.0; n] };
        let kappa = if n == 6 { Some(kappa_for(cfg, bg)?) } else { None };
        Ok(LeadingParams {
            n,
            t,
            p: p.to_vec(),
            mu: cfg.mu,
            tau: cfg.tau,
            beta: cfg.beta,
            lcf: cfg.lcf_flag,
            f: cfg.f_radial(rx),
            u,
            grad_u,
            h: bump_sq(s),
            grad_h: p.iter().map(|x| 2.0 * x * bump_sq_d(s)).collect(),
            weyl_sq: cfg.weyl_sq,
            grad_weyl_sq: vec![0.0; n],
            kappa,
        })
    }

    pub fn delta(&self) -> f64 {
        self.mu * self.t
    }

    fn check(&self) -> Result<()> {
        if self.n < 6 {
            return Err(Error::Config(format!("no expansion for n = {}", self.n)));
        }
        if self.lcf && self.weyl_sq != 0.0 {
            return Err(Error::Config("a locally conformally flat branch has vanishing Weyl tensor".into()));
        }
        Ok(())
    }
}

/// κ of the configuration, through the single quadrature code path.
pub fn kappa_for(cfg: &ModelConfig, bg: &Background) -> Result<f64> {
    kappa_quadrature(&kappa_params(cfg, bg))
}

pub fn kappa_params(cfg: &ModelConfig, bg: &Background) -> KappaParams {
    // 𝓛T of a radial source vanishes at its centre, leaving ρ0
    KappaParams { f0: cfg.f_radial(0.0), u0: bg.profile.value(0.0), rho_at_center: cfg.rho0, alpha: cfg.alpha }
}

fn component(v: &[f64], i: usize) -> f64 {
    if i == 0 {
        0.0
    } else {
        v[i - 1]
    }
}

/// Leading term of I_{1,i}: the bump and Weyl contributions.
pub fn i1_leading(lp: &LeadingParams, i: usize) -> Result<f64> {
    lp.check()?;
    let nf = lp.n as f64;
    let kn = k_n_inv_pow(lp.n);
    let (mu, t) = (lp.mu, lp.t);
    // h enters with a negative bump at n = 6
    let sign = if lp.n == 6 { -1.0 } else { 1.0 };
    if i == 0 {
        let bump = 8.0 * (nf - 1.0) / ((nf - 2.0) * (nf - 4.0)) * kn * lp.f.powf(-nf / 2.0) * lp.tau * mu * mu * lp.h * t * t;
        let weyl = if lp.n > 6 && lp.weyl_sq != 0.0 {
            nf * (nf - 2.0) / (3.0 * (nf - 4.0) * (nf - 6.0)) * lp.f.powf(-1.0 - nf / 2.0) * kn * lp.weyl_sq * mu.powi(4) * t.powi(4)
        } else {
            0.0
        };
        Ok(sign * bump - weyl)
    } else {
        let gh = component(&lp.grad_h, i);
        let bump = 2.0 * nf * (nf - 1.0) / (nf - 4.0) * kn * lp.f.powf(-nf / 2.0) * lp.tau / lp.beta * mu.powi(3) * gh * t.powi(3);
        let gw = component(&lp.grad_weyl_sq, i);
        let weyl = if lp.n > 6 && gw != 0.0 {
            lp.f.powf(-1.0 - nf / 2.0) * kn * nf * nf * (nf - 2.0).powi(2) / (24.0 * (nf - 4.0) * (nf - 6.0)) * gw * mu.powi(5) * t.powi(5)
        } else {
            0.0
        };
        Ok(sign * bump - weyl)
    }
}

/// Leading term of I_{3,i}, the bubble–background interaction.
pub fn i3_leading(lp: &LeadingParams, i: usize) -> Result<f64> {
    lp.check()?;
    let nf = lp.n as f64;
    let d = lp.delta();
    if i == 0 {
        Ok(-(nf - 2.0) * sphere_area(lp.n - 1) * (nf * (nf - 2.0)).powf((nf - 2.0) / 2.0) * lp.f.powf(1.0 - nf / 2.0) * lp.u * d.powf((nf - 2.0) / 2.0))
    } else {
        let g = component(&lp.grad_u, i);
        if g == 0.0 {
            return Ok(0.0);
        }
        Ok(-i3_slope_constant(lp.n, lp.f)? * g * d.powf(nf / 2.0))
    }
}

/// J_{5,0} = κδ³; the rows i ≥ 1 are O(δ^{7/2}) and have no leading term.
pub fn j5_leading(lp: &LeadingParams, i: usize) -> Result<f64> {
    if lp.n != 6 {
        return Err(Error::Config("J₅ exists in dimension six only".into()));
    }
    let k = lp.kappa.ok_or_else(|| Error::Config("κ missing".into()))?;
    Ok(if i == 0 { k * lp.delta().powi(3) } else { 0.0 })
}

/// Leading term of (Gλ)_i.
pub fn leading_lambda(lp: &LeadingParams, i: usize) -> Result<f64> {
    if lp.n == 6 {
        // h − 2fu is the bump alone, so J₁ carries no interaction term
        Ok(i1_leading(lp, i)? + j5_leading(lp, i)?)
    } else {
        Ok(i1_leading(lp, i)? + i3_leading(lp, i)?)
    }
}

/// Row scalings: (μ^{(n−2)/2}, μ^{n/2}/β) on the l.c.f. or n ≤ 10 branch,
/// (μ⁴, μ⁵/β) otherwise; μ³ and μ⁴/β at n = 6.
pub fn row_scales(n: usize, lcf: bool, mu: f64, beta: f64) -> (f64, f64) {
    let nf = n as f64;
    let s0 = if n == 6 {
        mu.powi(3)
    } else if lcf || n <= 10 {
        mu.powf((nf - 2.0) / 2.0)
    } else {
        mu.powi(4)
    };
    (s0, s0 * mu / beta)
}

/// The limiting reduced map F(t, p): leading terms of every row divided by
/// its row scale, evaluated with the data at the limit point ξ₀. At n = 6
/// κ is taken constant in t.
pub fn reduced_map_f(lp: &LeadingParams) -> Result<Vec<f64>> {
    let (s0, s1) = row_scales(lp.n, lp.lcf, lp.mu, lp.beta);
    (0..=lp.n)
        .map(|i| Ok(leading_lambda(lp, i)? / if i == 0 { s0 } else { s1 }))
        .collect()
}

/// Closed-form t₀ where one exists: n = 6 and the Weyl-free n ≥ 7 balance.
pub fn t0_closed_form(lp: &LeadingParams) -> Result<f64> {
    let nf = lp.n as f64;
    let kn = k_n_inv_pow(lp.n);
    if lp.n == 6 {
        let k = lp.kappa.ok_or_else(|| Error::Config("κ missing".into()))?;
        if !(k > 0.0) {
            return Err(Error::regime(Regime::KappaSign, format!("κ = {k:.6e} ≤ 0: no admissible t₀")));
        }
        return Ok(5.0 * kn * lp.f.powi(-3) * lp.h * (lp.tau / lp.mu) / k);
    }
    if lp.weyl_sq != 0.0 {
        return Err(Error::Config("no closed form with a Weyl term".into()));
    }
    // A τμ² t² = B u μ^{(n−2)/2} t^{(n−2)/2}
    let a = 8.0 * (nf - 1.0) / ((nf - 2.0) * (nf - 4.0)) * kn * lp.f.powf(-nf / 2.0) * lp.h * lp.tau * lp.mu * lp.mu;
    let b = (nf - 2.0) * sphere_area(lp.n - 1) * (nf * (nf - 2.0)).powf((nf - 2.0) / 2.0) * lp.f.powf(1.0 - nf / 2.0) * lp.u * lp.mu.powf((nf - 2.0) / 2.0);
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::regime(Regime::NoSignChange, "balance coefficients are not positive"));
    }
    Ok((a / b).powf(2.0 / (nf - 6.0)))
}

/// t₀: the positive zero of F₀(·, p) by bisection.
pub fn solve_t0(lp: &LeadingParams) -> Result<f64> {
    let f0 = |t: f64| -> Result<f64> { Ok(reduced_map_f(&LeadingParams { t, ..lp.clone() })?[0]) };
    // geometric scan for the sign change, then bisection
    let grid: Vec<f64> = (-60..=60).map(|k| 10f64.powf(k as f64 / 10.0)).collect();
    let mut prev = (grid[0], f0(grid[0])?);
    let mut bracket = None;
    for &t in &grid[1..] {
        let v = f0(t)?;
        if prev.1 == 0.0 {
            return Ok(prev.0);
        }
        if prev.1.signum() != v.signum() {
            bracket = Some((prev, (t, v)));
            break;
        }
        prev = (t, v);
    }
    let ((mut a, fa), (mut b, _)) = bracket.ok_or_else(|| {
        Error::regime(Regime::NoSignChange, "F₀(·, p) has no sign change on [1e−6, 1e6]")
    })?;
    let sa = fa.signum();
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let v = f0(m)?;
        if v == 0.0 {
            return Ok(m);
        }
        if v.signum() == sa {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Kernel projections and Gλ in the original axes, rows 0..=n.
#[derive(Debug, Clone, Serialize)]
pub struct ProjectedRows {
    /// I_{1..7,i}.
    pub integrals: Vec<[f64; 7]>,
    /// (Gλ)_i.
    pub g_lambda: Vec<f64>,
    /// max_i |Σ_m I_{m,i} − (Gλ)_i| / max_i |(Gλ)_i|.
    pub consistency: f64,
}

pub fn project_rows(pb: &Problem, st: &ReductionState, dl: &DlIntegrals) -> ProjectedRows {
    let g = st.gram;
    let l = st.lambdas_frame;
    let glf: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| g[i][j] * l[j]).sum());
    let n = pb.n();
    let (e1, e2) = (&pb.frame.e1, &pb.frame.e2);
    let mut integrals = vec![dl.rows[0]];
    let mut g_lambda = vec![glf[0]];
    for k in 0..n {
        integrals.push(std::array::from_fn(|m| e1[k] * dl.rows[1][m] + e2[k] * dl.rows[2][m]));
        g_lambda.push(e1[k] * glf[1] + e2[k] * glf[2]);
    }
    let scale = g_lambda.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dev = (0..3).fold(0.0f64, |m, i| m.max((dl.total(i) - glf[i]).abs()));
    ProjectedRows { integrals, g_lambda, consistency: if scale > 0.0 { dev / scale } else { dev } }
}

/// One reduction with everything the report needs.
#[derive(Debug, Clone, Serialize)]
pub struct PipelinePoint {
    pub mu: f64,
    pub t: f64,
    pub p: Vec<f64>,
    pub state: ReductionState,
    pub rows: ProjectedRows,
    pub leading: LeadingParams,
    /// Same data with f and u taken at the limit point ξ₀ = 0.
    pub limit: LeadingParams,
    /// max of u + W + φ over the grid.
    pub max_uk: f64,
}

pub fn run_point(bg: &Background, t: f64, p: &[f64], settings: &ReductionSettings) -> Result<PipelinePoint> {
    let (pb, st) = bg.reduce(t, p, settings)?;
    point_from(bg, &pb, st)
}

/// Pipeline point of a reduction already carried out on `pb`.
pub fn point_from(bg: &Background, pb: &Problem, st: ReductionState) -> Result<PipelinePoint> {
    let (t, p) = (pb.t, pb.p.as_slice());
    let dl = pb.dl_integrals(&st.phi, &st.coupling);
    let rows = project_rows(pb, &st, &dl);
    let leading = LeadingParams::from_model(&bg.cfg, bg, t, p, &pb.bubble.center)?;
    let limit = LeadingParams::from_model(&bg.cfg, bg, t, p, &vec![0.0; p.len()])?;
    let vals = pb.space.values(&st.phi);
    let max_uk = (0..vals.len()).fold(f64::NEG_INFINITY, |m, k| m.max(pb.u[k] + pb.w[k] + vals[k]));
    Ok(PipelinePoint { mu: bg.cfg.mu, t, p: p.to_vec(), state: st, rows, leading, limit, max_uk })
}

impl PipelinePoint {
    /// (Gλ) divided by the row scales.
    pub fn normalized_lambda(&self) -> Vec<f64> {
        let lp = &self.leading;
        let (s0, s1) = row_scales(lp.n, lp.lcf, lp.mu, lp.beta);
        self.rows.g_lambda.iter().enumerate().map(|(i, v)| v / if i == 0 { s0 } else { s1 }).collect()
    }

    /// Blow-up certificate: max u_k ≥ ½·δ^{−(n−2)/2}.
    pub fn blowup_certificate(&self) -> bool {
        self.max_uk >= 0.5 * self.state.max_blowup()
    }
}

/// One line of the report.
#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub name: String,
    pub n: usize,
    pub mu: f64,
    pub closed_form: Option<f64>,
    pub quadrature: Option<f64>,
    pub pipeline: Option<f64>,
    /// Why a source is absent.
    pub absent: Vec<String>,
    pub rel_err: f64,
    pub order: Option<f64>,
}

impl Record {
    fn compare(name: &str, n: usize, mu: f64, closed: f64, quad: Option<f64>, pipe: Option<f64>) -> Self {
        let measured = pipe.or(quad).unwrap_or(f64::NAN);
        let mut absent = Vec::new();
        if quad.is_none() {
            absent.push("quadrature: coefficient row, not a single integral".into());
        }
        if pipe.is_none() {
            absent.push("pipeline: single integral, not a coefficient row".into());
        }
        Record {
            name: name.into(),
            n,
            mu,
            closed_form: Some(closed),
            quadrature: quad,
            pipeline: pipe,
            absent,
            rel_err: ((measured - closed) / closed).abs(),
            order: None,
        }
    }

    /// A remainder with no closed form, reported as |value|/scale.
    fn remainder(name: &str, n: usize, mu: f64, value: f64, scale: f64, what: &str) -> Self {
        Record {
            name: name.into(),
            n,
            mu,
            closed_form: None,
            quadrature: Some(value),
            pipeline: None,
            absent: vec![format!("closed_form: {what}"), "pipeline: single integral".into()],
            rel_err: (value / scale).abs(),
            order: None,
        }
    }
}

/// Records of one pipeline point. Row i ≥ 1 is reported for the axis of
/// largest |∇H(p)| when p ≠ 0.
pub fn records_for(pt: &PipelinePoint) -> Result<Vec<Record>> {
    let lp = &pt.leading;
    let n = lp.n;
    let nf = n as f64;
    let mu = pt.mu;
    let d = lp.delta();
    let ints = &pt.rows.integrals;
    let mut out = Vec::new();
    let (s0, s1) = row_scales(n, lp.lcf, lp.mu, lp.beta);
    let axis = (1..=n)
        .max_by(|&a, &b| lp.grad_h[a - 1].abs().total_cmp(&lp.grad_h[b - 1].abs()))
        .filter(|&a| lp.grad_h[a - 1] != 0.0);
    let mut rows = vec![0];
    rows.extend(axis);
    for &i in &rows {
        let tag = if i == 0 { "0".to_string() } else { "i".to_string() };
        let scale = if i == 0 { s0 } else { s1 };
        if n == 6 {
            // J₁ = I₁ + I₃ and J₅ = I₇
            out.push(Record::compare(&format!("J1_{tag}"), n, mu, i1_leading(lp, i)?, Some(ints[i][0] + ints[i][2]), None));
            if i == 0 {
                out.push(Record::compare("J5_0", n, mu, j5_leading(lp, 0)?, Some(ints[0][6]), None));
            }
        } else {
            out.push(Record::compare(&format!("I1_{tag}"), n, mu, i1_leading(lp, i)?, Some(ints[i][0]), None));
            let i3 = i3_leading(lp, i)?;
            if i3 != 0.0 {
                out.push(Record::compare(&format!("I3_{tag}"), n, mu, i3, Some(ints[i][2]), None));
            }
        }
        let lam = Record::compare(
            &format!("lambda_{tag}"),
            n,
            mu,
            leading_lambda(lp, i)? / scale,
            None,
            Some(pt.rows.g_lambda[i] / scale),
        );
        out.push(lam);
        let small = if i == 0 { d.powf((nf - 2.0) / 2.0) } else { d.powf(nf / 2.0) };
        let what = if i == 0 { "o(δ^{(n−2)/2}) remainder" } else { "o(δ^{n/2}) remainder" };
        out.push(Record::remainder(&format!("I2_{tag}"), n, mu, ints[i][1], small, what));
        out.push(Record::remainder(&format!("I6_{tag}"), n, mu, ints[i][5], d.powf(nf / 2.0), "o(δ^{n/2}) remainder"));
    }
    Ok(out)
}

/// Least-squares slope of ln y against ln x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |s, p| (s.0 + p.0, s.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |s, p| (s.0 + (p.0 - mx) * (p.1 - my), s.1 + (p.0 - mx).powi(2)));
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

/// Fitted order and monotone-decrease verdict of one record name across scales.
#[derive(Debug, Clone, Serialize)]
pub struct OrderFit {
    pub name: String,
    pub mus: Vec<f64>,
    pub rel_errs: Vec<f64>,
    pub order: Option<f64>,
    /// rel_err strictly decreases as μ decreases.
    pub monotone: bool,
}

/// Fits every record name over the scales; needs at least three scales.
pub fn convergence_study(records: &[Record]) -> Result<Vec<OrderFit>> {
    let mut names: Vec<String> = Vec::new();
    for r in records {
        if !names.contains(&r.name) {
            names.push(r.name.clone());
        }
    }
    let mut fits = Vec::new();
    for name in names {
        let mut pts: Vec<(f64, f64)> = records.iter().filter(|r| r.name == name).map(|r| (r.mu, r.rel_err)).collect();
        pts.sort_by(|a, b| b.0.total_cmp(&a.0));
        if pts.len() < 3 {
            return Err(Error::Config(format!("convergence study of {name} needs ≥ 3 scales, got {}", pts.len())));
        }
        let mus: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let errs: Vec<f64> = pts.iter().map(|p| p.1).collect();
        // a remainder that vanishes identically for the data (I₆ when f is
        // constant near ξ) satisfies its o(·) claim exactly
        let monotone = errs.iter().all(|e| *e == 0.0) || errs.windows(2).all(|w| w[1] < w[0]);
        fits.push(OrderFit { name, order: loglog_slope(&mus, &errs), mus, rel_errs: errs, monotone });
    }
    Ok(fits)
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroResult {
    pub t: f64,
    pub p: Vec<f64>,
    /// ‖normalized λ(t*, p*)‖.
    pub residual: f64,
    pub seed_residual: f64,
    pub evaluations: usize,
    pub method: String,
    pub certificate: bool,
}

/// How the zero search treats p.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ZeroMode {
    /// p held at 0; sign-change search in t on row 0.
    TOnly,
    /// Damped Newton in (t, p), falling back to `TOnly` at p = 0.
    Full,
}

/// Zero of the pipeline λ near a seed. `eval` returns the normalized λ
/// (n+1 rows) and the blow-up certificate at (t, p).
pub fn find_zero(
    eval: &dyn Fn(f64, &[f64]) -> Result<(Vec<f64>, bool)>,
    seed_t: f64,
    seed_p: &[f64],
    d_bound: f64,
    mode: ZeroMode,
) -> Result<ZeroResult> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut evals = 0usize;
    let mut call = |t: f64, p: &[f64]| -> Result<(Vec<f64>, bool)> {
        evals += 1;
        eval(t, p)
    };
    let (seed_val, _) = call(seed_t, seed_p)?;
    let seed_res = norm(&seed_val);
    if mode == ZeroMode::Full {
        if let Some(z) = newton(&mut call, seed_t, seed_p, &seed_val, d_bound)? {
            let (v, cert) = call(z.0, &z.1)?;
            let res = norm(&v);
            if res < 1e-3 * seed_res {
                return Ok(ZeroResult { t: z.0, p: z.1, residual: res, seed_residual: seed_res, evaluations: evals, method: "newton".into(), certificate: cert });
            }
        }
    }
    // sign-box search in t at p = 0
    let p0 = vec![0.0; seed_p.len()];
    let (lo_b, hi_b) = (1.0 / d_bound, d_bound);
    let f = |v: &[f64]| v[0];
    let mut a = (seed_t, f(&call(seed_t, &p0)?.0));
    let mut b = None;
    let mut k = 1.0f64;
    while b.is_none() {
        k *= 1.25;
        if seed_t / k <= lo_b && seed_t * k >= hi_b {
            break;
        }
        for t in [seed_t * k, seed_t / k] {
            if t <= lo_b || t >= hi_b {
                continue;
            }
            let v = f(&call(t, &p0)?.0);
            if v.signum() != a.1.signum() {
                b = Some((t, v));
                break;
            }
        }
    }
    let mut b = b.ok_or_else(|| Error::regime(Regime::NoSignChange, format!("λ₀(·, 0) has no sign change in ]{lo_b}, {hi_b}[")))?;
    if b.0 < a.0 {
        std::mem::swap(&mut a, &mut b);
    }
    // Illinois regula falsi
    let mut side = 0i32;
    let mut t = 0.5 * (a.0 + b.0);
    for _ in 0..100 {
        t = (a.0 * b.1 - b.0 * a.1) / (b.1 - a.1);
        let v = f(&call(t, &p0)?.0);
        if v == 0.0 || (b.0 - a.0) < 1e-12 * t {
            break;
        }
        if v.signum() == a.1.signum() {
            a = (t, v);
            if side == -1 {
                b.1 *= 0.5;
            }
            side = -1;
        } else {
            b = (t, v);
            if side == 1 {
                a.1 *= 0.5;
            }
            side = 1;
        }
        if v.abs() < 1e-9 * seed_res.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let (v, cert) = call(t, &p0)?;
    let res = norm(&v);
    if !(t > lo_b && t < hi_b) {
        return Err(Error::regime(Regime::NoSignChange, format!("zero t* = {t} is not interior")));
    }
    Ok(ZeroResult { t, p: p0, residual: res, seed_residual: seed_res, evaluations: evals, method: "t-bisection".into(), certificate: cert })
}

/// Zero of the pipeline λ seeded at the closed-form t₀ of the limit data
/// at p = 0. Returns (t₀, zero).
pub fn locate_zero(bg: &Background, settings: &ReductionSettings, mode: ZeroMode) -> Result<(f64, ZeroResult)> {
    let p0 = vec![0.0; bg.cfg.n];
    let lim = LeadingParams::from_model(&bg.cfg, bg, 1.0, &p0, &p0)?;
    let t0 = solve_t0(&lim)?;
    let eval = |t: f64, p: &[f64]| -> Result<(Vec<f64>, bool)> {
        let pt = run_point(bg, t, p, settings)?;
        Ok((pt.normalized_lambda(), pt.blowup_certificate()))
    };
    let z = find_zero(&eval, t0, &p0, settings.d_bound, mode)?;
    Ok((t0, z))
}

type Eval<'a> = dyn FnMut(f64, &[f64]) -> Result<(Vec<f64>, bool)> + 'a;

fn newton(call: &mut Eval<'_>, t0: f64, p0: &[f64], v0: &[f64], d_bound: f64) -> Result<Option<(f64, Vec<f64>)>> {
    let n = p0.len();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut x: Vec<f64> = std::iter::once(t0).chain(p0.iter().copied()).collect();
    let mut fx = v0.to_vec();
    for _ in 0..12 {
        let mut jac = nalgebra::DMatrix::zeros(n + 1, n + 1);
        for j in 0..=n {
            let h = if j == 0 { 1e-4 * x[0] } else { 1e-4 };
            let mut xp = x.clone();
            xp[j] += h;
            let (fp, _) = call(xp[0], &xp[1..])?;
            for i in 0..=n {
                jac[(i, j)] = (fp[i] - fx[i]) / h;
            }
        }
        let svd = jac.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-10 * smax) {
            // rows killed by symmetry make the Jacobian singular
            return Ok(None);
        }
        let rhs = nalgebra::DVector::from_column_slice(&fx);
        let step = match jac.lu().solve(&rhs) {
            Some(s) => s,
            None => return Ok(None),
        };
        let mut damp = 1.0;
        let base = norm(&fx);
        loop {
            let xn: Vec<f64> = (0..=n).map(|i| x[i] - damp * step[i]).collect();
            let pn = norm(&xn[1..]);
            if xn[0] > 1.0 / d_bound && xn[0] < d_bound && pn < 1.0 {
                let (fnew, _) = call(xn[0], &xn[1..])?;
                if norm(&fnew) < base {
                    x = xn;
                    fx = fnew;
                    break;
                }
            }
            damp *= 0.5;
            if damp < 1e-3 {
                return Ok(None);
            }
        }
        if norm(&fx) < 1e-6 * norm(v0) {
            break;
        }
    }
    Ok(Some((x[0], x[1..].to_vec())))
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroPoint {
    pub mu: f64,
    /// Closed-form t₀ of the limit data, the seed.
    pub t0: f64,
    pub zero: ZeroResult,
}

impl ZeroPoint {
    /// t* against t₀; rel_err is |t* − t₀|/t₀.
    pub fn record(&self, n: usize) -> Record {
        Record {
            name: "zero_t".into(),
            n,
            mu: self.mu,
            closed_form: Some(self.t0),
            quadrature: None,
            pipeline: Some(self.zero.t),
            absent: vec!["quadrature: located by the pipeline only".into()],
            rel_err: ((self.zero.t - self.t0) / self.t0).abs(),
            order: None,
        }
    }
}

/// Report of a sweep over scales at fixed (t, p).
#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub n: usize,
    pub t: f64,
    pub p: Vec<f64>,
    pub records: Vec<Record>,
    pub fits: Vec<OrderFit>,
    pub warnings: Vec<String>,
    /// Reduced map F(t, p) at each scale.
    pub reduced_map: Vec<(f64, Vec<f64>)>,
    /// Zero search per scale, when requested.
    pub zeros: Vec<ZeroPoint>,
    #[serde(skip)]
    pub points: Vec<PipelinePoint>,
}

impl ExpansionReport {
    /// Names whose relative error fails to decrease monotonically.
    pub fn non_monotone(&self) -> Vec<String> {
        self.fits.iter().filter(|f| !f.monotone).map(|f| f.name.clone()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,n,mu,closed_form,quadrature,pipeline,rel_err,order\n");
        let g = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        for r in &self.records {
            let order = self.fits.iter().find(|f| f.name == r.name).and_then(|f| f.order);
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.name,
                r.n,
                fmt17(r.mu),
                g(r.closed_form),
                g(r.quadrature),
                g(r.pipeline),
                fmt17(r.rel_err),
                g(order)
            ));
        }
        s
    }
}

/// 17 significant digits, stable across runs.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Runs the pipeline at every μ in `mus` with at most `workers` concurrent
/// reductions and assembles the report. Output order follows `mus`. With
/// `zero` set, each scale also runs the zero search seeded at t₀.
pub fn sweep(
    cfg: &ModelConfig,
    mus: &[f64],
    t: f64,
    p: &[f64],
    settings: &ReductionSettings,
    workers: usize,
    zero: Option<ZeroMode>,
) -> Result<ExpansionReport> {
    if mus.is_empty() {
        return Err(Error::Config("empty μ list".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Numerical(e.to_string()))?;
    type Scale = (PipelinePoint, Option<ZeroPoint>);
    let results: Vec<Result<Scale>> = pool.install(|| {
        mus.par_iter()
            .map(|&mu| {
                let c = cfg.with_mu(mu)?;
                let bg = Background::new(&c)?;
                let pt = run_point(&bg, t, p, settings)?;
                let z = match zero {
                    Some(mode) => {
                        let (t0, zero) = locate_zero(&bg, settings, mode)?;
                        Some(ZeroPoint { mu, t0, zero })
                    }
                    None => None,
                };
                Ok((pt, z))
            })
            .collect()
    });
    let mut points = Vec::new();
    let mut zeros = Vec::new();
    for r in results {
        let (pt, z) = r?;
        points.push(pt);
        zeros.extend(z);
    }
    let mut records = Vec::new();
    let mut reduced_map = Vec::new();
    for (k, pt) in points.iter().enumerate() {
        records.extend(records_for(pt)?);
        if let Some(z) = zeros.get(k) {
            records.push(z.record(cfg.n));
        }
        reduced_map.push((pt.mu, reduced_map_f(&pt.limit)?));
    }
    let mut warnings = Vec::new();
    let fits = if mus.len() >= 3 {
        convergence_study(&records)?
    } else {
        warnings.push(format!("{} scale(s): no fitted orders", mus.len()));
        Vec::new()
    };
    for r in records.iter_mut() {
        r.order = fits.iter().find(|f| f.name == r.name).and_then(|f| f.order);
    }
    Ok(ExpansionReport { n: cfg.n, t, p: p.to_vec(), records, fits, warnings, reduced_map, zeros, points })
}
