//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Criteria 5, 6, 9 and 10 share the n = 7 scale sweep.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use elreduce::expansion::{
    kappa_params, locate_zero, run_point, solve_t0, sweep, t0_closed_form, ExpansionReport, LeadingParams, ZeroMode,
};
use elreduce::model::{defaults, ModelConfig};
use elreduce::profiles::{kernel_V, standard_bubble_U};
use elreduce::quadrature::{bubble_energy, critical_alpha, gram_V, kappa, KappaParams};
use elreduce::reduction::{Background, ReductionSettings};
use elreduce::sobolev::{k_n_inv_pow, p_exp};
use elreduce::vector_green::{decay_exponent, frame_omega, frob_dot, theta_asymptotic, RadialLt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

struct Tally {
    failed: Vec<usize>,
}

impl Tally {
    fn report(&mut self, id: usize, name: &str, budget: Duration, elapsed: Duration, outcome: Check) {
        let over = elapsed > budget;
        let (verdict, detail) = match outcome {
            Ok(d) if !over => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over the {:.0} s budget", budget.as_secs_f64())),
            Err(d) => ("FAIL", d),
        };
        if verdict == "FAIL" {
            self.failed.push(id);
        }
        println!("criterion {id:>2} {verdict} {name} ({:.1} s): {detail}", elapsed.as_secs_f64());
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

/// Fourth-order central Laplacian, step 1e−3.
fn fd_laplacian(g: &dyn Fn(&[f64]) -> f64, y: &[f64]) -> f64 {
    let h = 1e-3;
    let mut z = y.to_vec();
    let mut acc = 0.0;
    for i in 0..y.len() {
        let mut at = |s: f64| {
            z[i] = y[i] + s * h;
            g(&z)
        };
        acc += (-at(2.0) + 16.0 * at(1.0) - 30.0 * at(0.0) + 16.0 * at(-1.0) - at(-2.0)) / (12.0 * h * h);
        z[i] = y[i];
    }
    acc
}

fn kernel_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut count = 0;
    for n in [6usize, 7, 8, 11] {
        let p = p_exp(n);
        for f in [0.5, 1.0, 3.0] {
            for _ in 0..100 {
                let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.5..2.5)).collect();
                for i in 0..=n {
                    let v = |z: &[f64]| kernel_V(i, f, n, z);
                    let res = fd_laplacian(&v, &y) + p * f * standard_bubble_U(f, n, &y).powf(p - 1.0) * v(&y);
                    worst = worst.max(res.abs());
                    count += 1;
                }
            }
        }
    }
    ensure!(worst < 1e-6, "max residual {worst:.3e} over {count} evaluations");
    Ok(format!("max residual {worst:.3e} over {count} evaluations"))
}

fn sharp_constant() -> Check {
    let mut worst = 0.0f64;
    for n in 6..=11 {
        let (energy, _) = bubble_energy(n, 1.0).map_err(err)?;
        let rel = (energy / k_n_inv_pow(n) - 1.0).abs();
        ensure!(rel < 1e-6, "n = {n}: relative gap {rel:.3e}");
        worst = worst.max(rel);
    }
    Ok(format!("max relative gap {worst:.3e} for n = 6..11"))
}

// Independent high-precision Dirichlet energies of V_0 and V_n, frozen.
const GRAM_BASELINE: [(usize, f64, f64, f64); 12] = [
    (6, 0.5, 8164.3955967326612, 24493.186790197984),
    (6, 1.0, 2041.0988991831653, 12246.593395098992),
    (6, 3.0, 226.78876657590726, 4082.1977983663306),
    (7, 0.5, 81896.233571439991, 358296.02187504996),
    (7, 1.0, 14477.345528000651, 126676.7733700057),
    (7, 3.0, 928.72214863804453, 24378.956401748669),
    (8, 0.5, 911971.74142919768, 5471830.4485751861),
    (8, 1.0, 113996.46767864971, 1367957.6121437965),
    (8, 3.0, 4222.0913955055448, 151995.29023819961),
    (11, 0.5, 2016351214.0734092, 24952346274.158439),
    (11, 1.0, 89110976.045314726, 2205496657.1215395),
    (11, 3.0, 635163.53095694753, 47160892.173553354),
];

fn gram_suite() -> Check {
    let (mut off, mut diag) = (0.0f64, 0.0f64);
    for (n, f, g00, gnn) in GRAM_BASELINE {
        let g = gram_V(n, f).map_err(err)?;
        let dmax = (0..=n).map(|i| g[(i, i)]).fold(0.0, f64::max);
        for i in 0..=n {
            for j in 0..=n {
                if i != j {
                    off = off.max(g[(i, j)].abs() / dmax);
                }
            }
        }
        for (got, want) in [(g[(0, 0)], g00), (g[(n, n)], gnn), (g[(1, 1)], gnn)] {
            diag = diag.max((got / want - 1.0).abs());
        }
    }
    ensure!(off < 1e-8 && diag < 1e-6, "off-diagonal/diagonal {off:.3e}, baseline gap {diag:.3e}");
    Ok(format!("off-diagonal/diagonal {off:.3e}, baseline gap {diag:.3e}"))
}

fn kelvin_far_field() -> Check {
    let mut notes = Vec::new();
    for n in [6usize, 7] {
        let f = defaults(n).map_err(err)?.f0;
        let nf = n as f64;
        // unit-scale bubble source U^{2*}, so δ = 1
        let a = f / (nf * (nf - 2.0));
        let dens = |r: f64| (1.0 + a * r * r).powf(-nf);
        let lt = RadialLt::new(n, &dens, 200.0, 20000).map_err(err)?;
        let zeta = frame_omega(n, 0.6, 0.8, 0.0);
        let mut worst = 0.0f64;
        for d in [20.0, 30.0, 40.0, 50.0] {
            for (u, v, w) in [(1.0, 0.0, 0.0), (0.0, 0.6, 0.8), (0.48, -0.6, 0.64)] {
                let xh = frame_omega(n, u, v, w);
                let x: Vec<f64> = xh.iter().map(|c| c * d).collect();
                let got = lt.tensor(&x, &zeta);
                let asy = theta_asymptotic(n, f, 1.0, &zeta, &xh, d);
                let diff: Vec<f64> = got.iter().zip(&asy).map(|(p, q)| p - q).collect();
                worst = worst.max((frob_dot(&diff, &diff) / frob_dot(&asy, &asy)).sqrt());
            }
        }
        let ds: Vec<f64> = (0..12).map(|k| 20.0 * 2.5f64.powf(k as f64 / 11.0)).collect();
        let norms: Vec<f64> = ds
            .iter()
            .map(|&d| {
                let t = lt.tensor(&frame_omega(n, 0.0, d, 0.0), &zeta);
                frob_dot(&t, &t).sqrt()
            })
            .collect();
        let e = decay_exponent(&ds, &norms);
        ensure!(worst < 0.02, "n = {n}: relative gap {worst:.3e}");
        ensure!((e - (1.0 - nf)).abs() < 0.05, "n = {n}: decay exponent {e:.4}");
        notes.push(format!("n = {n}: gap {worst:.2e}, exponent {e:.4}"));
    }
    Ok(notes.join("; "))
}

fn sci(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", items.join(", "))
}

fn is_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn contraction(rep: &ExpansionReport) -> Check {
    let inner: Vec<f64> = rep.points.iter().map(|p| p.state.inner_contraction).collect();
    let outer: Vec<f64> = rep.points.iter().map(|p| p.state.outer_contraction).collect();
    let line = format!("inner {}, outer {}", sci(&inner), sci(&outer));
    ensure!(inner.iter().chain(&outer).all(|&q| q < 0.5), "factor at or above 0.5: {line}");
    ensure!(is_decreasing(&inner) && is_decreasing(&outer), "not decreasing under halving: {line}");
    Ok(line)
}

fn lambda_expansion(rep: &ExpansionReport) -> Check {
    let mut notes = Vec::new();
    for name in ["lambda_0", "lambda_i"] {
        let fit = rep.fits.iter().find(|f| f.name == name).ok_or(format!("no {name} row"))?;
        let order = fit.order.unwrap_or(f64::NAN);
        let line = format!("{name} errors {:.3?} order {order:.2}", fit.rel_errs);
        ensure!(fit.monotone && order > 0.0, "{line}");
        notes.push(line);
    }
    Ok(notes.join("; "))
}

fn kappa_and_t0() -> Check {
    let cfg = defaults(6).map_err(err)?;
    let bg = Background::new(&cfg).map_err(err)?;
    let kp = kappa_params(&cfg, &bg);
    let at = |alpha: f64| kappa(&KappaParams { alpha, ..kp }).map_err(err);
    let k0 = at(0.0)?;
    ensure!(k0 > 0.0, "kappa(0) = {k0:.4e}");
    let a_star = critical_alpha(&kp).map_err(err)?;
    let (lo, hi) = (at(a_star / 2.0)?, at(2.0 * a_star)?);
    ensure!(lo > 0.0 && hi < 0.0, "kappa(a*/2) = {lo:.3e}, kappa(2a*) = {hi:.3e}");
    let p0 = vec![0.0; 6];
    let lim = LeadingParams::from_model(&cfg, &bg, 1.0, &p0, &p0).map_err(err)?;
    let (tc, tb) = (t0_closed_form(&lim).map_err(err)?, solve_t0(&lim).map_err(err)?);
    let rel = (tc / tb - 1.0).abs();
    ensure!(rel < 1e-12, "t0 closed form {tc} against bisection {tb}");
    Ok(format!("kappa(0) = {k0:.4e}, alpha* = {a_star:.4}, t0 = {tc:.6} (gap {rel:.1e})"))
}

fn zero_finding(settings: &ReductionSettings) -> Check {
    // the n = 7 defaults with the coupling switched off
    let decoupled = r#"{"n": 7, "tau": 0.1, "f0": 35.0, "h0": 1.0, "rho0": 2.2e-12, "alpha": 0.0}"#;
    let base = ModelConfig::from_json_str(decoupled, &[]).map_err(err)?;
    let mut gaps = Vec::new();
    let mut ts = Vec::new();
    for mu in [1e-2, 5e-3, 2.5e-3] {
        let bg = Background::new(&base.with_mu(mu).map_err(err)?).map_err(err)?;
        let (t0, z) = locate_zero(&bg, settings, ZeroMode::TOnly).map_err(err)?;
        let p0 = vec![0.0; 7];
        let below = run_point(&bg, 0.5 * t0, &p0, settings).map_err(err)?.normalized_lambda()[0];
        let above = run_point(&bg, 2.0 * t0, &p0, settings).map_err(err)?.normalized_lambda()[0];
        ensure!(below * above < 0.0, "mu = {mu}: no sign change across t0 = {t0:.4} ({below:.3e}, {above:.3e})");
        ensure!(z.certificate, "mu = {mu}: blow-up certificate fails at t* = {}", z.t);
        gaps.push((z.t - t0).abs());
        ts.push(z.t);
    }
    ensure!(is_decreasing(&gaps), "|t* - t0| not decreasing: {gaps:.4?}");
    Ok(format!("t* {ts:.4?}, |t* - t0| {gaps:.4?}"))
}

fn monitors(six: &ExpansionReport, seven: &ExpansionReport) -> Check {
    let c: Vec<f64> = six.points.iter().map(|p| p.state.monitors.sup_ratio_over_delta).collect();
    let (cmin, cmax) = c.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    ensure!(cmax < 1.3 * cmin, "n = 6: C = {c:.3?} varies by more than 30%");
    let mut far = Vec::new();
    for rep in [six, seven] {
        for pt in &rep.points {
            let m = &pt.state.monitors;
            ensure!(m.far_radius == 4.0 && m.far_constant.is_finite(), "far-field monitor missing at mu = {}", pt.mu);
            ensure!(!m.truncation_active && m.min_uk >= m.truncation_level, "n = {}, mu = {}: min u_k = {:.3e}", rep.n, pt.mu, m.min_uk);
            far.push(m.far_constant);
        }
    }
    // the constant measured at the coarsest scale must cover the finer ones
    for rep in [six, seven] {
        let k: Vec<f64> = rep.points.iter().map(|p| p.state.monitors.far_constant).collect();
        ensure!(k.iter().all(|&v| v <= k[0] * (1.0 + 1e-9)), "n = {}: far-field constants {} grow", rep.n, sci(&k));
    }
    let c7: Vec<f64> = seven.points.iter().map(|p| p.state.monitors.sup_ratio_over_delta).collect();
    Ok(format!("n = 6 C {c:.3?}; n = 7 C {c7:.3?}; far-field constants {}", sci(&far)))
}

fn main() -> ExitCode {
    let mut tally = Tally { failed: Vec::new() };
    let secs = Duration::from_secs;
    let settings = ReductionSettings::default();

    let (r, e) = timed(kernel_identity);
    tally.report(1, "kernel identity", secs(1), e, r);
    let (r, e) = timed(sharp_constant);
    tally.report(2, "sharp constant", secs(5), e, r);
    let (r, e) = timed(gram_suite);
    tally.report(3, "Gram suite", secs(5), e, r);
    let (r, e) = timed(kelvin_far_field);
    tally.report(4, "Kelvin far field", secs(30), e, r);

    let mus = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
    let mut p7 = vec![0.0; 7];
    p7[0] = 0.5;
    let cfg7 = defaults(7).expect("n = 7 defaults");
    let (seven, e7) = timed(|| sweep(&cfg7, &mus, 1.0, &p7, &settings, 4, None));
    let seven = match seven {
        Ok(rep) => Some(rep),
        Err(e) => {
            for id in [5, 6, 9, 10] {
                tally.report(id, "n = 7 sweep", secs(600), e7, Err(e.to_string()));
            }
            None
        }
    };
    if let Some(rep) = &seven {
        tally.report(5, "contraction", secs(120) * mus.len() as u32, e7, contraction(rep));
        tally.report(6, "lambda expansion", secs(600), e7, lambda_expansion(rep));
    }

    let (r, e) = timed(kappa_and_t0);
    tally.report(7, "kappa and t0", secs(10), e, r);
    let (r, e) = timed(|| zero_finding(&settings));
    tally.report(8, "zero finding", secs(300), e, r);

    if let Some(rep) = &seven {
        let mut p6 = vec![0.0; 6];
        p6[0] = 0.5;
        let cfg6 = defaults(6).expect("n = 6 defaults");
        let (six, e6) = timed(|| sweep(&cfg6, &mus[..3], 1.0, &p6, &settings, 3, None));
        let r = six.map_err(err).and_then(|six| monitors(&six, rep));
        tally.report(9, "pointwise monitors", secs(600), e6, r);

        let (again, e) = timed(|| sweep(&cfg7, &mus, 1.0, &p7, &settings, 1, None));
        let r = again.map_err(err).and_then(|a| {
            ensure!(a.to_csv() == rep.to_csv(), "sweep CSV differs between 4 workers and 1");
            Ok(format!("{} bytes identical across worker counts", a.to_csv().len()))
        });
        tally.report(10, "determinism", secs(600), e, r);
    }

    if tally.failed.is_empty() {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {:?}", tally.failed);
        ExitCode::FAILURE
    }
}
