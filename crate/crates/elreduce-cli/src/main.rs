//! Batch driver: one subcommand per stage of the engine, tables as CSV,
//! everything else as JSON. Exit codes: 0 ok, 1 a sweep assertion failed,
//! 2 config error, 3 regime failure, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use elreduce::expansion::{
    fmt17, kappa_for, kappa_params, locate_zero, point_from, solve_t0, sweep, t0_closed_form, LeadingParams, ZeroMode,
};
use elreduce::model::{make_model, ModelConfig};
use elreduce::quadrature::{bubble_energy, critical_alpha, gram_V, i3_slope_constant};
use elreduce::reduction::{Background, ReductionSettings};
use elreduce::sobolev::{crit, k_n, k_n_inv_pow};
use elreduce::vector_green::{decay_exponent, frame_omega, frob_dot, kelvin_far_constant, theta_asymptotic, RadialLt};
use elreduce::Error;

/// Run-setting keys a config file may carry next to the model keys.
const SETTING_KEYS: &[&str] = &["cells", "angular_radial", "angular_theta", "background_cells", "d_bound", "max_inner", "max_outer"];

#[derive(Parser)]
#[command(name = "elreduce", version, about = "Finite-dimensional reduction engine for the Einstein-Lichnerowicz constraint system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration (flat key/value map).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct Point {
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    /// Comma-separated components of p; missing trailing components are 0.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    p: Vec<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sharp constants, Gram diagonals, Kelvin constant, κ and α*.
    Constants(Common),
    /// Constant background root and the radial background profile.
    GroundState(Common),
    /// Kelvin response of a bubble source against its far-field asymptotics.
    GreenCheck(Common),
    /// Full reduction at one (t, p).
    Reduce {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        point: Point,
        /// Also write the correction φ as a field table.
        #[arg(long)]
        dump_field: bool,
    },
    /// Reductions over several scales with fitted orders.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        point: Point,
        #[arg(long, value_delimiter = ',', required = true)]
        mu_list: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Run the zero search at every scale and add its rows.
        #[arg(long)]
        find_zero: bool,
    },
    /// Zero of the reduced coefficients seeded at the closed-form t₀.
    ZeroFind {
        #[command(flatten)]
        common: Common,
        /// Hold p at 0 and search in t only.
        #[arg(long)]
        t_only: bool,
    },
}

struct Loaded {
    cfg: ModelConfig,
    settings: ReductionSettings,
    raw: Map<String, Value>,
}

fn load(path: &Path) -> Result<Loaded, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let raw = match serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))? {
        Value::Object(m) => m,
        _ => return Err(Error::Config("config must be a JSON object".into())),
    };
    let cfg = make_model(&raw, SETTING_KEYS)?;
    let mut settings = ReductionSettings::default();
    let int = |k: &str| -> Result<Option<usize>, Error> {
        match raw.get(k) {
            None => Ok(None),
            Some(v) => v.as_u64().map(|x| Some(x as usize)).ok_or_else(|| Error::Config(format!("`{k}` must be a positive integer"))),
        }
    };
    if let Some(v) = int("cells")? {
        settings.cells = v;
    }
    if let Some(v) = int("angular_radial")? {
        settings.angular_radial = v;
    }
    if let Some(v) = int("angular_theta")? {
        settings.angular_theta = v;
    }
    if let Some(v) = int("background_cells")? {
        settings.background_cells = v;
    }
    if let Some(v) = int("max_inner")? {
        settings.max_inner = v;
    }
    if let Some(v) = int("max_outer")? {
        settings.max_outer = v;
    }
    if let Some(v) = raw.get("d_bound") {
        settings.d_bound = v.as_f64().filter(|d| *d > 1.0).ok_or_else(|| Error::Config("`d_bound` must be a number > 1".into()))?;
    }
    Ok(Loaded { cfg, settings, raw })
}

fn full_p(cfg: &ModelConfig, p: &[f64]) -> Result<Vec<f64>, Error> {
    if p.len() > cfg.n {
        return Err(Error::Config(format!("p has {} > n = {} components", p.len(), cfg.n)));
    }
    let mut v = p.to_vec();
    v.resize(cfg.n, 0.0);
    Ok(v)
}

/// Output bookkeeping shared by every subcommand.
struct Run {
    out: PathBuf,
    command: &'static str,
    outputs: Vec<String>,
    timings: Map<String, Value>,
    constants: Map<String, Value>,
}

impl Run {
    fn new(out: &Path, command: &'static str) -> anyhow::Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run { out: out.to_path_buf(), command, outputs: Vec::new(), timings: Map::new(), constants: Map::new() })
    }

    fn write(&mut self, name: &str, body: &str) -> anyhow::Result<()> {
        let path = self.out.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, v: &Value) -> anyhow::Result<()> {
        self.write(name, &(serde_json::to_string_pretty(v)? + "\n"))
    }

    fn timed<T>(&mut self, op: &str, f: impl FnOnce() -> Result<T, Error>) -> Result<T, Error> {
        let start = Instant::now();
        let r = f();
        self.timings.insert(op.into(), json!(start.elapsed().as_secs_f64()));
        r
    }

    fn finish(mut self, loaded: &Loaded) -> anyhow::Result<()> {
        let mut config = loaded.raw.clone();
        // derived scales written back next to the inputs
        for key in ["mu", "beta", "r_cut", "h0", "lcf_flag"] {
            config.insert(key.into(), loaded.cfg.to_map()[key].clone());
        }
        let name = format!("{}_manifest.json", self.command.replace('-', "_"));
        let mut outputs = self.outputs.clone();
        outputs.push(name.clone());
        let manifest = json!({
            "command": self.command,
            "engine_version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "settings": settings_json(&loaded.settings),
            "timings_s": self.timings,
            "constants": self.constants,
            "outputs": outputs,
        });
        let body = serde_json::to_string_pretty(&manifest)? + "\n";
        self.write(&name, &body)
    }
}

fn settings_json(s: &ReductionSettings) -> Value {
    json!({
        "cells": s.cells,
        "angular_radial": s.angular_radial,
        "angular_theta": s.angular_theta,
        "background_cells": s.background_cells,
        "d_bound": s.d_bound,
        "c_max": s.c_max,
        "inner_tol": s.inner_tol,
        "outer_tol": s.outer_tol,
        "max_inner": s.max_inner,
        "max_outer": s.max_outer,
        "gmres_tol": s.gmres_tol,
    })
}

fn opt17(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_default()
}

fn constants(common: &Common) -> anyhow::Result<()> {
    let loaded = load(&common.config)?;
    let cfg = &loaded.cfg;
    let n = cfg.n;
    let mut run = Run::new(&common.out, "constants")?;
    let mut csv = String::from("name,n,closed_form,quadrature,rel_diff,method,warning\n");
    let mut row = |name: &str, closed: Option<f64>, quad: Option<f64>, method: &str, warning: &str| {
        let rel = match (closed, quad) {
            (Some(c), Some(q)) => fmt17(((q - c) / c).abs()),
            _ => String::new(),
        };
        csv.push_str(&format!("{name},{n},{},{},{rel},{method},{warning}\n", opt17(closed), opt17(quad)));
    };
    let (energy, _) = run.timed("bubble_energy", || bubble_energy(n, 1.0))?;
    row("K_n", Some(k_n(n)), Some(energy.powf(-1.0 / n as f64)), "closed form / bubble Dirichlet energy", "");
    row("K_n^-n", Some(k_n_inv_pow(n)), Some(energy), "closed form / bubble Dirichlet energy", "");
    let f = cfg.f0;
    let gram = run.timed("gram", || gram_V(n, f))?;
    row("gram_V0", None, Some(gram[(0, 0)]), "radial quadrature at f0", "");
    row("gram_Vi", None, Some(gram[(1, 1)]), "radial quadrature at f0", "");
    row("kelvin_far_K", Some(kelvin_far_constant(n)), None, "closed form", "");
    if n >= 7 {
        let c = run.timed("i3_constant", || i3_slope_constant(n, f))?;
        row("i3_slope_C", None, Some(c), "radial quadrature at f0", "");
    } else {
        let bg = run.timed("background", || Background::new(cfg))?;
        let kappa = run.timed("kappa", || kappa_for(cfg, &bg))?;
        let a_star = critical_alpha(&kappa_params(cfg, &bg))?;
        let warn = if cfg.alpha > a_star { "alpha above alpha*: kappa negative" } else { "" };
        row("kappa", None, Some(kappa), "radial quadrature", warn);
        row("alpha_star", None, Some(a_star), "root of the affine map alpha^2 -> kappa", "");
        run.constants.insert("kappa".into(), json!(kappa));
        run.constants.insert("alpha_star".into(), json!(a_star));
        run.constants.insert("kappa_warning".into(), json!(!warn.is_empty()));
        if kappa > 0.0 {
            let p0 = vec![0.0; n];
            let lim = LeadingParams::from_model(cfg, &bg, 1.0, &p0, &p0)?;
            row("t0", Some(t0_closed_form(&lim)?), Some(solve_t0(&lim)?), "closed form / bisection of the reduced map", "");
        }
    }
    run.constants.insert("K_n".into(), json!(k_n(n)));
    run.constants.insert("critical_exponent".into(), json!(crit(n)));
    run.write("constants.csv", &csv)?;
    run.finish(&loaded)
}

fn ground_state(common: &Common) -> anyhow::Result<()> {
    let loaded = load(&common.config)?;
    let cfg = &loaded.cfg;
    let mut run = Run::new(&common.out, "ground-state")?;
    let bg = run.timed("background", || Background::new(cfg))?;
    let gs = bg.gs;
    let mut csv = String::from("r,u,du,d2u\n");
    let m = 200;
    for k in 0..=m {
        let r = cfg.domain_radius * k as f64 / m as f64;
        let (u, du, d2u) = bg.profile.eval3(r);
        csv.push_str(&format!("{},{},{},{}\n", fmt17(r), fmt17(u), fmt17(du), fmt17(d2u)));
    }
    run.write("background_profile.csv", &csv)?;
    let summary = json!({
        "u0": gs.u0,
        "stability_margin": gs.stability_margin,
        "eps0": gs.eps0,
        "h_max": cfg.h_max(),
        "profile_at_center": bg.profile.value(0.0),
        "profile_min": bg.profile.min_on(cfg.domain_radius),
    });
    run.write_json("ground_state.json", &summary)?;
    for (k, v) in summary.as_object().unwrap() {
        run.constants.insert(k.clone(), v.clone());
    }
    run.finish(&loaded)
}

fn green_check(common: &Common) -> anyhow::Result<bool> {
    let loaded = load(&common.config)?;
    let n = loaded.cfg.n;
    let f = loaded.cfg.f0;
    let mut run = Run::new(&common.out, "green-check")?;
    // unit-scale bubble source U^{2*}; the far field is scale free
    let nf = n as f64;
    let a = f / (nf * (nf - 2.0));
    let dens = |r: f64| (1.0 + a * r * r).powf(-nf);
    let lt = run.timed("kelvin_convolution", || RadialLt::new(n, &dens, 200.0, 20000))?;
    let zeta = frame_omega(n, 0.6, 0.8, 0.0);
    let mut csv = String::from("dist,direction,rel_err\n");
    let mut worst = 0.0f64;
    for d in [20.0, 35.0, 50.0] {
        for (k, (u, v, w)) in [(1.0, 0.0, 0.0), (0.0, 0.6, 0.8), (0.48, -0.6, 0.64)].into_iter().enumerate() {
            let xh = frame_omega(n, u, v, w);
            let x: Vec<f64> = xh.iter().map(|c| c * d).collect();
            let got = lt.tensor(&x, &zeta);
            let asy = theta_asymptotic(n, f, 1.0, &zeta, &xh, d);
            let diff: Vec<f64> = got.iter().zip(&asy).map(|(p, q)| p - q).collect();
            let rel = (frob_dot(&diff, &diff) / frob_dot(&asy, &asy)).sqrt();
            worst = worst.max(rel);
            csv.push_str(&format!("{},{k},{}\n", fmt17(d), fmt17(rel)));
        }
    }
    let ds: Vec<f64> = (0..12).map(|k| 10.0 * 10f64.powf(k as f64 / 11.0)).collect();
    let norms: Vec<f64> = ds
        .iter()
        .map(|&d| {
            let t = lt.tensor(&frame_omega(n, 0.0, d, 0.0), &zeta);
            frob_dot(&t, &t).sqrt()
        })
        .collect();
    let exponent = decay_exponent(&ds, &norms);
    let pass = worst < 0.02 && (exponent - (1.0 - nf)).abs() < 0.05;
    run.write("green_check.csv", &csv)?;
    run.constants.insert("max_rel_err".into(), json!(worst));
    run.constants.insert("decay_exponent".into(), json!(exponent));
    run.constants.insert("expected_exponent".into(), json!(1.0 - nf));
    run.constants.insert("pass".into(), json!(pass));
    run.finish(&loaded)?;
    Ok(pass)
}

fn reduce(common: &Common, point: &Point, dump_field: bool) -> anyhow::Result<()> {
    let loaded = load(&common.config)?;
    let cfg = &loaded.cfg;
    let p = full_p(cfg, &point.p)?;
    let mut run = Run::new(&common.out, "reduce")?;
    let bg = run.timed("background", || Background::new(cfg))?;
    let (pb, st) = run.timed("reduction", || bg.reduce(point.t, &p, &loaded.settings))?;
    if dump_field {
        run.write("phi_field.csv", &pb.field(&st.phi).to_csv())?;
    }
    let pt = point_from(&bg, &pb, st)?;
    let normalized = pt.normalized_lambda();
    let mut csv = String::from("index,lambda,g_lambda,normalized\n");
    for i in 0..=cfg.n {
        csv.push_str(&format!(
            "{i},{},{},{}\n",
            fmt17(pt.state.lambdas[i]),
            fmt17(pt.rows.g_lambda[i]),
            fmt17(normalized[i])
        ));
    }
    run.write("lambda.csv", &csv)?;
    run.write_json("reduction.json", &serde_json::to_value(&pt)?)?;
    let s = &pt.state;
    for (k, v) in [
        ("c0", json!(s.c0)),
        ("eps_k", json!(s.eps_k)),
        ("inner_contraction", json!(s.inner_contraction)),
        ("outer_contraction", json!(s.outer_contraction)),
        ("inversion_ratio", json!(s.inversion_ratio)),
        ("monitors", serde_json::to_value(&s.monitors)?),
        ("blowup_certificate", json!(pt.blowup_certificate())),
    ] {
        run.constants.insert(k.into(), v);
    }
    run.finish(&loaded)
}

fn sweep_cmd(common: &Common, point: &Point, mus: &[f64], workers: usize, find_zero: bool) -> anyhow::Result<bool> {
    let loaded = load(&common.config)?;
    let cfg = &loaded.cfg;
    let p = full_p(cfg, &point.p)?;
    let mut run = Run::new(&common.out, "sweep")?;
    let mode = find_zero.then_some(ZeroMode::Full);
    let report = run.timed("sweep", || sweep(cfg, mus, point.t, &p, &loaded.settings, workers, mode))?;
    run.write("sweep.csv", &report.to_csv())?;
    run.write_json("sweep.json", &serde_json::to_value(&report)?)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let failed = report.non_monotone();
    for name in &failed {
        eprintln!("monotone decrease fails for {name}");
    }
    let contraction: Vec<Value> = report
        .points
        .iter()
        .map(|pt| json!({"mu": pt.mu, "c0": pt.state.c0, "inner": pt.state.inner_contraction, "outer": pt.state.outer_contraction, "inversion_ratio": pt.state.inversion_ratio}))
        .collect();
    run.constants.insert("per_scale".into(), Value::Array(contraction));
    run.constants.insert("non_monotone".into(), json!(failed));
    run.finish(&loaded)?;
    Ok(failed.is_empty())
}

fn zero_find(common: &Common, t_only: bool) -> anyhow::Result<()> {
    let loaded = load(&common.config)?;
    let cfg = &loaded.cfg;
    let mut run = Run::new(&common.out, "zero-find")?;
    let bg = run.timed("background", || Background::new(cfg))?;
    let mode = if t_only { ZeroMode::TOnly } else { ZeroMode::Full };
    let (t0, z) = run.timed("zero_search", || locate_zero(&bg, &loaded.settings, mode))?;
    let v = json!({"mu": cfg.mu, "t0": t0, "zero": serde_json::to_value(&z)?});
    run.write_json("zero.json", &v)?;
    run.constants.insert("t0".into(), json!(t0));
    run.constants.insert("t_star".into(), json!(z.t));
    run.constants.insert("certificate".into(), json!(z.certificate));
    run.finish(&loaded)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(err) => err.exit_code() as u8,
        None => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Constants(c) => constants(c).map(|_| true),
        Command::GroundState(c) => ground_state(c).map(|_| true),
        Command::GreenCheck(c) => green_check(c),
        Command::Reduce { common, point, dump_field } => reduce(common, point, *dump_field).map(|_| true),
        Command::Sweep { common, point, mu_list, workers, find_zero } => {
            if *workers == 0 {
                Err(anyhow!(Error::Config("--workers must be ≥ 1".into())))
            } else {
                sweep_cmd(common, point, mu_list, *workers, *find_zero)
            }
        }
        Command::ZeroFind { common, t_only } => zero_find(common, *t_only).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => match cli.command {
            Command::GreenCheck(_) => ExitCode::from(4),
            _ => ExitCode::from(1),
        },
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
