//! Command-line front end: config loading, subcommand dispatch and CSV/JSON output.
//!
//! Every run writes its numeric results into the output directory together
//! with `manifest.json`. Exit codes: 0 success, 1 solver error, 2 usage or
//! config error.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::PhenotypeGrid;
use crate::operators::{check_assumptions, Model, ModelConfig};
use crate::parabolic::{matching_eigen, simulate, SimulationParams};
use crate::spectral::{
    classify_trichotomy, eigen_nonlocal, eigen_regularized, gamma1_and_mucrit, minimal_speed, singular_eigenvector,
    weak_eigen_residual, cosine_tests, EigenOptions, MeasureProfile, Normalization,
};
use crate::stationary::{
    beta0, concentration_detector, mass_bounds, rho_beta_constant, solve_stationary, sup_bound_holds, viscosity_sweep,
    window_fraction, window_nodes, NewtonOptions, StationaryProblem,
};
use crate::validation::{perron_oracle_report, richardson_quadrature_check, weak_eigen_residual_bruteforce, OracleReport};
use crate::waves::{
    box_nodes, default_box_length, extend_line, kpp_front, limit_pairings, normalization_n, select_speed, separated_wave,
    solve_box, wave_diagnostics, weak_residual, BoxProblem, TestFunctionSet, WaveOptions, WaveProfile, WeakTerms,
    XDerivatives,
};

#[derive(Debug, Parser)]
#[command(name = "phenowave", version, about = "Nonlocal mutation-selection-competition models: eigenpairs, stationary states, fronts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Principal eigenpair (regularized when eps > 0).
    Eigen(Common),
    /// Singular Perron value γ₁¹ and critical rate μ₀ = 1/γ₁¹.
    Mucrit(Common),
    /// Continuous / L¹-critical / singular regime label.
    Classify(Common),
    /// Eigenmeasure with an atom on the fitness maximum.
    SingularEigvec(Common),
    /// Stationary state for the configured eps and beta.
    Stationary(Common),
    /// Stationary states along a decreasing eps list.
    ViscSweep(SweepArgs),
    /// Lower-bound constants ρ_β, β₀, l₀, τ₀.
    RhoBeta(Common),
    /// Box wave at a fixed speed.
    WaveBox(WaveArgs),
    /// Speed selected by the normalization on one box.
    WaveSpeed(WaveArgs),
    /// Speed selection along doubling box lengths.
    WaveLine(WaveArgs),
    /// Separated wave ρ(x)φ(dy) built from the eigenmeasure.
    SingularWave(WaveArgs),
    /// Monotone KPP front for r = −λ₁.
    KppFront(WaveArgs),
    /// Time integration with front tracking.
    Simulate(SimArgs),
    /// Small-instance oracles, appended to validation.jsonl.
    Validate(Common),
}

#[derive(Debug, Clone, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// Write a gnuplot script next to the CSV files.
    #[arg(long)]
    emit_gnuplot: bool,
}

#[derive(Debug, Clone, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated, strictly decreasing.
    #[arg(long, value_delimiter = ',', default_value = "1e-1,1e-2,1e-3,1e-4")]
    eps_list: Vec<f64>,
    /// Window width around the fitness maximum, in cells.
    #[arg(long, default_value_t = 10)]
    window_cells: usize,
}

#[derive(Debug, Clone, Args)]
struct WaveArgs {
    #[command(flatten)]
    common: Common,
    /// Box half-length (line half-length for kpp-front and singular-wave).
    #[arg(long)]
    l: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Wave speed; defaults to the minimal speed.
    #[arg(long)]
    c: Option<f64>,
}

#[derive(Debug, Clone, Args)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 40.0)]
    tmax: f64,
    #[arg(long)]
    dt: Option<f64>,
    /// Keep a full field every this many front samples.
    #[arg(long)]
    snapshot_stride: Option<usize>,
}

/// One per run, written as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: String,
    pub config_hash: String,
    pub output_dir: String,
    pub wall_time_s: f64,
    pub versions: Value,
    pub outputs: Vec<String>,
}

/// SHA-256 of the resolved config serialized as compact JSON.
pub fn config_hash(cfg: &ModelConfig) -> Result<String> {
    let text = serde_json::to_string(cfg)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::InvalidPreset(_)
            | Error::InvalidGrid(_)
            | Error::DegenerateGrid(_)
            | Error::OriginNotInterior { .. }
            | Error::KernelPositivity { .. }
            | Error::NotIntegrable(_)
            | Error::Json(_)
    )
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = std::env::var("PHENOWAVE_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        // Fails harmlessly when the global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if is_config_error(&e) {
                2
            } else {
                1
            }
        }
    }
}

struct Ctx {
    name: &'static str,
    common: Common,
    cfg: ModelConfig,
    model: Model,
    outputs: Vec<String>,
    started: Instant,
}

impl Ctx {
    fn new(name: &'static str, common: &Common) -> Result<Self> {
        let mut cfg = ModelConfig::load(&common.config)?;
        if let Some(v) = common.eps {
            cfg.eps = v;
        }
        if let Some(v) = common.beta {
            cfg.beta = v;
        }
        if let Some(v) = common.mu {
            cfg.mu = v;
        }
        cfg.validate()?;
        let model = cfg.assemble()?;
        std::fs::create_dir_all(&common.out)?;
        Ok(Self {
            name,
            common: common.clone(),
            cfg,
            model,
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn grid(&self) -> &PhenotypeGrid {
        &self.model.grid
    }

    fn eigen_opts(&self) -> EigenOptions {
        EigenOptions {
            tol: self.cfg.tol.eigen,
            max_iter: self.cfg.tol.eigen_max_iter,
        }
    }

    fn newton_opts(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.cfg.tol.newton,
            max_iter: self.cfg.tol.newton_max_iter,
            eigen: self.eigen_opts(),
        }
    }

    fn write(&mut self, file: &str, contents: &str) -> Result<()> {
        std::fs::write(self.common.out.join(file), contents)?;
        self.outputs.push(file.to_string());
        Ok(())
    }

    fn json(&mut self, value: &Value) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(&format!("{}.json", self.name), &text)
    }

    fn gnuplot(&mut self, csv: &str, using: &str, title: &str) -> Result<()> {
        if !self.common.emit_gnuplot {
            return Ok(());
        }
        let script = format!(
            "set datafile separator ','\nset key autotitle columnhead\nset title '{title}'\nplot '{csv}' using {using} with lines\npause -1\n"
        );
        self.write(&csv.replace(".csv", ".gp"), &script)
    }

    fn finish(self) -> Result<()> {
        let manifest = RunManifest {
            subcommand: self.name.to_string(),
            config_path: self.common.config.display().to_string(),
            config_hash: config_hash(&self.cfg)?,
            output_dir: self.common.out.display().to_string(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            versions: json!({ "phenowave": env!("CARGO_PKG_VERSION") }),
            outputs: self.outputs,
        };
        std::fs::write(self.common.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

fn y_header(grid: &PhenotypeGrid) -> String {
    if grid.dim() == 1 {
        "y".into()
    } else {
        (1..=grid.dim()).map(|k| format!("y{k}")).collect::<Vec<_>>().join(",")
    }
}

fn y_cells(grid: &PhenotypeGrid, i: usize) -> String {
    grid.node(i).iter().map(|v| f(*v)).collect::<Vec<_>>().join(",")
}

fn node_csv(grid: &PhenotypeGrid, column: &str, values: &[f64]) -> String {
    let mut s = format!("{},{column}\n", y_header(grid));
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{},{}", y_cells(grid, i), f(*v));
    }
    s
}

fn measure_csv(grid: &PhenotypeGrid, p: &MeasureProfile) -> String {
    let mut s = format!("{},value,kind\n", y_header(grid));
    for (i, v) in p.ac.iter().enumerate() {
        let _ = writeln!(s, "{},{},density", y_cells(grid, i), f(*v));
    }
    for at in &p.atoms {
        let _ = writeln!(s, "{},{},atom", y_cells(grid, at.node), f(at.mass));
    }
    s
}

/// Rows (x, y, value, kind) at every `stride`-th x node.
fn wave_csv(grid: &PhenotypeGrid, wave: &WaveProfile, stride: usize) -> String {
    let mut s = String::from("x,y,value,kind\n");
    for j in (0..wave.nx()).step_by(stride.max(1)) {
        let slice = wave.slice(j);
        for (i, v) in slice.ac.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},density", f(wave.x[j]), y_cells(grid, i), f(*v));
        }
        for at in &slice.atoms {
            let _ = writeln!(s, "{},{},{},atom", f(wave.x[j]), y_cells(grid, at.node), f(at.mass));
        }
    }
    s
}

fn x_stride(nx: usize) -> usize {
    nx.div_ceil(400).max(1)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eigen(c) => cmd_eigen(Ctx::new("eigen", &c)?),
        Command::Mucrit(c) => cmd_mucrit(Ctx::new("mucrit", &c)?),
        Command::Classify(c) => cmd_classify(Ctx::new("classify", &c)?),
        Command::SingularEigvec(c) => cmd_singular_eigvec(Ctx::new("singular-eigvec", &c)?),
        Command::Stationary(c) => cmd_stationary(Ctx::new("stationary", &c)?),
        Command::ViscSweep(a) => cmd_visc_sweep(Ctx::new("visc-sweep", &a.common)?, &a),
        Command::RhoBeta(c) => cmd_rho_beta(Ctx::new("rho-beta", &c)?),
        Command::WaveBox(a) => cmd_wave_box(Ctx::new("wave-box", &a.common)?, &a),
        Command::WaveSpeed(a) => cmd_wave_speed(Ctx::new("wave-speed", &a.common)?, &a),
        Command::WaveLine(a) => cmd_wave_line(Ctx::new("wave-line", &a.common)?, &a),
        Command::SingularWave(a) => cmd_singular_wave(Ctx::new("singular-wave", &a.common)?, &a),
        Command::KppFront(a) => cmd_kpp_front(Ctx::new("kpp-front", &a.common)?, &a),
        Command::Simulate(a) => cmd_simulate(Ctx::new("simulate", &a.common)?, &a),
        Command::Validate(c) => cmd_validate(Ctx::new("validate", &c)?),
    }
}

fn cmd_eigen(mut ctx: Ctx) -> Result<()> {
    let (mu, eps) = (ctx.cfg.mu, ctx.cfg.eps);
    let r = if eps > 0.0 {
        eigen_regularized(ctx.grid(), &ctx.model.m, &ctx.model.a, mu, eps, ctx.eigen_opts())?
    } else {
        eigen_nonlocal(ctx.grid(), &ctx.model.m, &ctx.model.a, mu, ctx.eigen_opts())?
    };
    println!("lambda_1 = {:.12} (eps = {eps}, mu = {mu}), residual {:.2e}", r.lambda, r.residual);
    ctx.json(&json!({
        "eps": eps, "mu": mu, "lambda": r.lambda, "normalization": r.normalization,
        "residual": r.residual, "iterations": r.iterations, "n_nodes": r.n_nodes,
        "c_star": minimal_speed(r.lambda).ok(),
    }))?;
    let csv = node_csv(ctx.grid(), "phi", &r.phi);
    ctx.write("eigen.csv", &csv)?;
    ctx.gnuplot("eigen.csv", "1:2", "principal eigenvector")?;
    ctx.finish()
}

fn cmd_mucrit(mut ctx: Ctx) -> Result<()> {
    let r = gamma1_and_mucrit(ctx.grid(), &ctx.model.m, &ctx.model.a, ctx.eigen_opts())?;
    println!("gamma_1^1 = {:.10}, mu_0 = {:.10}", r.gamma1, r.mu0);
    ctx.json(&serde_json::to_value(r)?)?;
    ctx.finish()
}

fn cmd_classify(mut ctx: Ctx) -> Result<()> {
    let mu = ctx.cfg.mu;
    let rate = gamma1_and_mucrit(ctx.grid(), &ctx.model.m, &ctx.model.a, ctx.eigen_opts())?;
    let lambda1 = eigen_nonlocal(ctx.grid(), &ctx.model.m, &ctx.model.a, mu, ctx.eigen_opts())?.lambda;
    let band = 10.0 * ctx.grid().spacing()[0];
    let cl = classify_trichotomy(rate.gamma1, mu, lambda1, ctx.model.a.sup_a, ctx.cfg.tol.critical_band, band);
    let assumptions = check_assumptions(mu, ctx.grid(), &ctx.model.m, &ctx.model.k, &ctx.model.a);
    println!("regime: {:?} (mu * gamma_1^1 = {:.6}, lambda_1 = {:.8})", cl.regime, cl.product, lambda1);
    ctx.json(&json!({
        "mu": mu, "gamma1": rate.gamma1, "mu0": rate.mu0, "lambda1": lambda1,
        "classification": cl, "gap_band": band, "assumptions": assumptions,
    }))?;
    ctx.finish()
}

fn cmd_singular_eigvec(mut ctx: Ctx) -> Result<()> {
    let mu = ctx.cfg.mu;
    let se = singular_eigenvector(ctx.grid(), &ctx.model.m, &ctx.model.a, mu)?;
    let tests = cosine_tests(ctx.grid(), 16);
    let res = weak_eigen_residual(ctx.grid(), &ctx.model.m, &ctx.model.a, &se.effective_gap, mu, &se.profile, &tests)?;
    println!("lambda_1 = {:.10}, atom mass = {:.10}, weak residual {:.2e}", se.lambda, se.atom_mass, res);
    ctx.json(&json!({
        "mu": mu, "lambda": se.lambda, "atom_mass": se.atom_mass,
        "total_mass": se.profile.total_mass(ctx.grid()), "linear_residual": se.linear_residual,
        "weak_residual": res,
    }))?;
    let csv = measure_csv(ctx.grid(), &se.profile);
    ctx.write("singular-eigvec.csv", &csv)?;
    ctx.gnuplot("singular-eigvec.csv", "1:2", "singular eigenvector, density part")?;
    ctx.finish()
}

fn cmd_stationary(mut ctx: Ctx) -> Result<()> {
    let (mu, eps, beta) = (ctx.cfg.mu, ctx.cfg.eps, ctx.cfg.beta);
    let r = solve_stationary(&StationaryProblem::from_model(&ctx.model, mu, eps), beta, ctx.newton_opts())?;
    let (k0, kinf, sup_a) = (ctx.model.k.lower_bound, ctx.model.k.upper_bound, ctx.model.a.sup_a);
    let mb = mass_bounds(ctx.grid(), &r.profile, r.lambda_eps, k0, kinf, sup_a, 1e-8);
    let sup_ok = sup_bound_holds(&r.profile, sup_a, beta, 1e-8);
    println!(
        "mass = {:.10} in [{:.6}, {:.6}], sup = {:.6}, residual {:.2e}",
        mb.mass,
        mb.lower,
        mb.upper,
        r.profile.sup_density(),
        r.residual
    );
    ctx.json(&json!({
        "eps": eps, "beta": beta, "mu": mu, "lambda_eps": r.lambda_eps, "residual": r.residual,
        "iterations": r.iterations, "extinct": r.extinct, "homotopy_path": r.homotopy_path,
        "sup": r.profile.sup_density(), "mass_bounds": mb, "sup_bound_ok": sup_ok,
    }))?;
    let csv = node_csv(ctx.grid(), "p", &r.profile.ac);
    ctx.write("stationary.csv", &csv)?;
    ctx.gnuplot("stationary.csv", "1:2", "stationary state")?;
    ctx.finish()
}

fn cmd_visc_sweep(mut ctx: Ctx, args: &SweepArgs) -> Result<()> {
    let (mu, beta) = (ctx.cfg.mu, ctx.cfg.beta);
    let report = viscosity_sweep(&ctx.model, mu, beta, &args.eps_list, ctx.newton_opts())?;
    let verdict = concentration_detector(&ctx.model, &report, args.window_cells, 0.25);
    let anchor = ctx.model.a.omega0.first().copied().unwrap_or(ctx.grid().anchor());
    let window = window_nodes(ctx.grid(), anchor, args.window_cells);
    let mut entries = Vec::new();
    for e in &report.entries {
        let wf = e.profile.as_ref().map(|p| window_fraction(&ctx.model.grid, p, &window));
        entries.push(json!({
            "eps": e.eps, "lambda_eps": e.lambda_eps, "mass": e.mass, "sup": e.sup,
            "window_fraction": wf, "residual": e.residual, "error": e.error,
        }));
        if let Some(p) = &e.profile {
            let name = format!("visc-sweep_eps_{:e}.csv", e.eps);
            let csv = node_csv(&ctx.model.grid, "p", p);
            ctx.write(&name, &csv)?;
        }
        println!(
            "eps = {:e}: mass {:?}, sup {:?}, window fraction {:?}",
            e.eps, e.mass, e.sup, wf
        );
    }
    println!("concentration: {:?}", verdict.label);
    ctx.json(&json!({
        "mu": mu, "beta": beta, "lambda1": report.lambda1, "mass_lower_bound": report.mass_lower_bound,
        "limit_mass_ok": report.limit_mass_ok, "entries": entries, "concentration": verdict,
    }))?;
    ctx.finish()
}

fn cmd_rho_beta(mut ctx: Ctx) -> Result<()> {
    let (mu, eps, beta) = (ctx.cfg.mu, ctx.cfg.eps, ctx.cfg.beta);
    let m = &ctx.model;
    let mut dc = rho_beta_constant(&m.grid, &m.m, &m.k, &m.a, mu, beta, None, ctx.eigen_opts())?;
    if eps > 0.0 {
        let le = eigen_regularized(&m.grid, &m.m, &m.a, mu, eps, ctx.eigen_opts())?.lambda;
        dc = dc.with_lambda_eps(le)?;
    }
    println!("rho_beta = {:.6e}, beta_0 = {:.6}, delta = {:.6}", dc.rho_beta, dc.beta0, dc.delta);
    ctx.json(&serde_json::to_value(&dc)?)?;
    ctx.finish()
}

struct WaveSetup {
    lambda_eps: f64,
    c_star: f64,
    l0: f64,
    tau: f64,
    p_left: Vec<f64>,
}

fn wave_setup(ctx: &Ctx, args: &WaveArgs) -> Result<WaveSetup> {
    let (mu, eps, beta) = (ctx.cfg.mu, ctx.cfg.eps, ctx.cfg.beta);
    if !(eps > 0.0) {
        return Err(Error::Precondition("box waves need eps > 0 (set eps in the config or pass --eps)".into()));
    }
    let m = &ctx.model;
    let eig = eigen_regularized(&m.grid, &m.m, &m.a, mu, eps, ctx.eigen_opts())?;
    let c_star = minimal_speed(eig.lambda)?;
    let tau = args.tau.or(ctx.cfg.wave.tau).unwrap_or(-eig.lambda / 4.0);
    let p_left = solve_stationary(&StationaryProblem::from_model(m, mu, eps), beta, ctx.newton_opts())?.profile.ac;
    Ok(WaveSetup {
        lambda_eps: eig.lambda,
        c_star,
        l0: std::f64::consts::PI / (-eig.lambda).sqrt(),
        tau,
        p_left,
    })
}

fn box_length(ctx: &Ctx, args: &WaveArgs, s: &WaveSetup) -> Result<f64> {
    match args.l.or(ctx.cfg.wave.l) {
        Some(l) => Ok(l),
        None => Ok(default_box_length(&ctx.model, ctx.cfg.mu, ctx.cfg.eps, ctx.cfg.beta, s.tau, &s.p_left)?.max(4.0 * s.l0)),
    }
}

fn rho_beta0(ctx: &Ctx) -> Result<f64> {
    let m = &ctx.model;
    let b0 = beta0(&m.m, &m.k, &m.a, ctx.cfg.mu);
    Ok(rho_beta_constant(&m.grid, &m.m, &m.k, &m.a, ctx.cfg.mu, b0, None, ctx.eigen_opts())?.rho_beta)
}

fn wave_summary(ctx: &Ctx, wave: &WaveProfile, s: &WaveSetup, l: f64, residual: f64) -> Result<Value> {
    let diag = wave_diagnostics(&ctx.model, wave, rho_beta0(ctx)?, 1e-8);
    Ok(json!({
        "c": wave.c, "c_star_eps": s.c_star, "lambda_eps": s.lambda_eps, "tau": s.tau, "l": l, "l0": s.l0,
        "eps": ctx.cfg.eps, "beta": ctx.cfg.beta, "mu": ctx.cfg.mu,
        "residuals": { "box": residual, "max_forward_increase": wave.max_forward_increase() },
        "normalization": normalization_n(wave, &ctx.model.k, ctx.cfg.beta, s.l0).ok(),
        "diagnostics": diag,
    }))
}

fn write_wave(ctx: &mut Ctx, wave: &WaveProfile) -> Result<()> {
    let name = format!("{}.csv", ctx.name);
    let csv = wave_csv(&ctx.model.grid, wave, x_stride(wave.nx()));
    ctx.write(&name, &csv)?;
    ctx.gnuplot(&name, "1:2:3", "wave profile")
}

fn cmd_wave_box(mut ctx: Ctx, args: &WaveArgs) -> Result<()> {
    let s = wave_setup(&ctx, args)?;
    let l = box_length(&ctx, args, &s)?;
    let c = args.c.unwrap_or(s.c_star);
    let prob = BoxProblem::new(&ctx.model, ctx.cfg.mu, ctx.cfg.eps, ctx.cfg.beta, l, box_nodes(l, s.c_star), s.p_left.clone())?;
    let wave = solve_box(&prob, c, s.c_star, None, ctx.newton_opts())?;
    let res = prob.residual_norm(&wave)?;
    println!("box wave at c = {c:.8} on (-{l:.4}, {l:.4}): residual {res:.2e}");
    let summary = wave_summary(&ctx, &wave, &s, l, res)?;
    ctx.json(&summary)?;
    write_wave(&mut ctx, &wave)?;
    ctx.finish()
}

fn cmd_wave_speed(mut ctx: Ctx, args: &WaveArgs) -> Result<()> {
    let s = wave_setup(&ctx, args)?;
    let l = box_length(&ctx, args, &s)?;
    let opts = WaveOptions {
        newton: ctx.newton_opts(),
        normalization_tol: ctx.cfg.tol.normalization,
        ..WaveOptions::default()
    };
    let sel = select_speed(&ctx.model, ctx.cfg.mu, ctx.cfg.eps, ctx.cfg.beta, s.tau, l, opts)?;
    println!("c = {:.10} (c* = {:.10}, ratio {:.6}), N = {:.3e}", sel.c, sel.c_star_eps, sel.c / sel.c_star_eps, sel.normalization);
    let mut summary = wave_summary(&ctx, &sel.wave, &s, l, sel.residual)?;
    summary["evaluations"] = json!(sel.evaluations);
    ctx.json(&summary)?;
    write_wave(&mut ctx, &sel.wave)?;
    ctx.finish()
}

fn cmd_wave_line(mut ctx: Ctx, args: &WaveArgs) -> Result<()> {
    let s = wave_setup(&ctx, args)?;
    let l = args.l.or(ctx.cfg.wave.l).unwrap_or(4.0 * s.l0);
    let seq = [l, 2.0 * l, 4.0 * l];
    let opts = WaveOptions {
        newton: ctx.newton_opts(),
        normalization_tol: ctx.cfg.tol.normalization,
        ..WaveOptions::default()
    };
    let ext = extend_line(&ctx.model, ctx.cfg.mu, ctx.cfg.eps, ctx.cfg.beta, s.tau, &seq, opts)?;
    for (l, c) in &ext.speeds {
        println!("l = {l:.4}: c = {c:.10} (c/c* = {:.6})", c / ext.c_star_eps);
    }
    let mut summary = wave_summary(&ctx, &ext.wave, &s, seq[2], f64::NAN)?;
    summary["speeds"] = json!(ext.speeds);
    summary["converged"] = json!(ext.converged);
    summary["max_slice_mass"] = json!(ext.max_slice_mass);
    summary["slice_mass_bound"] = json!(ext.slice_mass_bound);
    ctx.json(&summary)?;
    write_wave(&mut ctx, &ext.wave)?;
    ctx.finish()
}

/// Eigenmeasure of the nonlocal problem, K-mass one, with the fitness seen by
/// its density part.
fn separated_inputs(ctx: &Ctx) -> Result<(f64, MeasureProfile, Vec<f64>)> {
    let m = &ctx.model;
    let mu = ctx.cfg.mu;
    let rate = gamma1_and_mucrit(&m.grid, &m.m, &m.a, ctx.eigen_opts())?;
    if mu * rate.gamma1 < 1.0 && m.a.omega0.len() == 1 {
        let se = singular_eigenvector(&m.grid, &m.m, &m.a, mu)?;
        let mut phi = se.profile.clone();
        phi.scale(1.0 / phi.k_mass(&m.grid, &m.k)?);
        let a_eff = se.effective_gap.iter().map(|g| m.a.sup_a - g).collect();
        Ok((se.lambda, phi, a_eff))
    } else {
        let mut eig = eigen_nonlocal(&m.grid, &m.m, &m.a, mu, ctx.eigen_opts())?;
        eig.renormalize(&m.grid, Normalization::KMassOne, Some(&m.k))?;
        Ok((eig.lambda, MeasureProfile::density(eig.phi), m.a.values.clone()))
    }
}

fn cmd_singular_wave(mut ctx: Ctx, args: &WaveArgs) -> Result<()> {
    let (lambda, phi, a_eff) = separated_inputs(&ctx)?;
    let r = -lambda;
    let c = args.c.unwrap_or(minimal_speed(lambda)?);
    let half = args.l.unwrap_or(60.0);
    let front = kpp_front(r, c, half, 0.5 * r, (200.0 * half) as usize + 1)?;
    let m = &ctx.model;
    let wave = separated_wave(&m.grid, &m.k, &phi, &front)?;
    let tests = TestFunctionSet::standard(&m.grid, 0.0, 4.0);
    let res = weak_residual(&m.grid, &m.m, &m.k, &m.a, &a_eff, ctx.cfg.mu, &wave, &tests, XDerivatives::Analytic, WeakTerms::default())?;
    let lp = limit_pairings(&m.grid, &wave, &tests);
    println!("separated wave: c = {c:.10}, weak residual {res:.2e} over {} tests, atom mass {:.6}", tests.len(), phi.atom_mass());
    ctx.json(&json!({
        "c": c, "lambda1": lambda, "r": r, "half_length": half, "atom_mass": phi.atom_mass(),
        "residuals": { "weak": res, "front": front.residual }, "tests": tests.len(),
        "decay_rate": front.decay_rate, "limit_pairings": { "left_min": lp.left_min, "right_max": lp.right_max },
    }))?;
    write_wave(&mut ctx, &wave)?;
    ctx.finish()
}

fn cmd_kpp_front(mut ctx: Ctx, args: &WaveArgs) -> Result<()> {
    let m = &ctx.model;
    let lambda = if ctx.cfg.eps > 0.0 {
        eigen_regularized(&m.grid, &m.m, &m.a, ctx.cfg.mu, ctx.cfg.eps, ctx.eigen_opts())?.lambda
    } else {
        eigen_nonlocal(&m.grid, &m.m, &m.a, ctx.cfg.mu, ctx.eigen_opts())?.lambda
    };
    let r = -lambda;
    let c = args.c.unwrap_or(minimal_speed(lambda)?);
    let half = args.l.unwrap_or(60.0);
    let front = kpp_front(r, c, half, 0.5 * r, (200.0 * half) as usize + 1)?;
    println!("KPP front: r = {r:.10}, c = {c:.10}, decay rate {:?} (c/2 = {:.10})", front.decay_rate, c / 2.0);
    ctx.json(&json!({
        "r": r, "c": c, "half_length": half, "residual": front.residual, "decay_rate": front.decay_rate,
        "expected_decay_rate": c / 2.0,
    }))?;
    let mut csv = String::from("x,rho\n");
    for (x, v) in front.x.iter().zip(&front.rho) {
        let _ = writeln!(csv, "{},{}", f(*x), f(*v));
    }
    ctx.write("kpp-front.csv", &csv)?;
    ctx.gnuplot("kpp-front.csv", "1:2", "KPP front")?;
    ctx.finish()
}

fn cmd_simulate(mut ctx: Ctx, args: &SimArgs) -> Result<()> {
    let (mu, eps) = (ctx.cfg.mu, ctx.cfg.eps);
    let lambda = matching_eigen(&ctx.model, mu, eps)?.lambda;
    let mut params = SimulationParams::for_run(lambda, mu, eps, args.tmax)?;
    params.beta = ctx.cfg.beta;
    params.dt = args.dt;
    params.snapshot_stride = args.snapshot_stride;
    let r = simulate(&ctx.model, &params, None)?;
    match &r.estimate {
        Some(e) => println!(
            "c_obs = {:.6} ± {:.1e} (c* = {:.6}, ratio {:.4}){}",
            e.c_obs,
            e.stderr,
            r.c_star,
            e.c_obs / r.c_star,
            if e.reliable { "" } else { " [edge-contaminated]" }
        ),
        None => println!("too few front samples for a speed estimate"),
    }
    ctx.json(&json!({
        "c_obs": r.estimate.map(|e| e.c_obs), "stderr": r.estimate.map(|e| e.stderr),
        "c_star": r.c_star, "lambda_eps": r.lambda_eps, "theta": r.theta,
        "flags": {
            "edge_contaminated": r.estimate.map(|e| e.edge_contaminated),
            "reliable": r.estimate.map(|e| e.reliable),
            "dt_halved": r.dt_halved,
            "mass_alarms": r.state.alarms.len(),
        },
        "clipped_mass": r.state.clipped_mass, "steps": r.state.steps, "dt": r.state.dt, "hx": r.state.hx,
        "x_half": params.x_half, "t_final": params.t_final,
    }))?;
    let mut csv = String::from("t,x_f\n");
    for (t, x) in &r.state.front {
        let _ = writeln!(csv, "{},{}", f(*t), f(*x));
    }
    ctx.write("simulate.csv", &csv)?;
    ctx.gnuplot("simulate.csv", "1:2", "front position")?;
    if !r.snapshots.is_empty() {
        let grid = &ctx.model.grid;
        let ny = grid.len();
        let stride = x_stride(r.state.nx());
        let mut snap = String::from("t,x,y,u\n");
        for (t, u) in &r.snapshots {
            for j in (0..r.state.nx()).step_by(stride) {
                for i in 0..ny {
                    let _ = writeln!(snap, "{},{},{},{}", f(*t), f(r.state.x[j]), y_cells(grid, i), f(u[j * ny + i]));
                }
            }
        }
        ctx.write("simulate_snapshots.csv", &snap)?;
    }
    ctx.finish()
}

fn cmd_validate(mut ctx: Ctx) -> Result<()> {
    use rand::{Rng, SeedableRng};
    let log = ctx.common.out.join("validation.jsonl");
    let mut reports: Vec<OracleReport> = Vec::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    for k in 0..5 {
        let n = rng.gen_range(2..=8);
        let a = nalgebra::DMatrix::from_fn(n, n, |i, j| if i == j { rng.gen_range(-1.0..1.0) } else { rng.gen_range(0.0..1.0) });
        reports.push(perron_oracle_report(format!("random Metzler {n}x{n} #{k}"), &a, 1e-8)?);
    }
    // Coarse copy of the configured model, small enough for the determinant scan.
    let mut small = ctx.cfg.clone();
    small.grid.n = if small.grid.dim == 1 { 11 } else { 3 };
    let sm = small.assemble()?;
    let a = crate::spectral::regularized_operator(&sm.grid, &sm.m, &sm.a.values, small.mu, small.eps.max(0.0))?;
    reports.push(perron_oracle_report(format!("configured model on {} nodes, eps = {}", sm.grid.len(), small.eps), &a, 1e-8)?);
    let m = &ctx.model;
    let mu = ctx.cfg.mu;
    if m.grid.dim() == 1 && m.a.omega0.len() == 1 {
        if let Ok(se) = singular_eigenvector(&m.grid, &m.m, &m.a, mu) {
            let tests = cosine_tests(&m.grid, 16);
            let main = weak_eigen_residual(&m.grid, &m.m, &m.a, &se.effective_gap, mu, &se.profile, &tests)?;
            let oracle = weak_eigen_residual_bruteforce(&m.grid, &m.m, &m.a, &se.effective_gap, mu, &se.profile, &tests);
            reports.push(OracleReport::new("brute-force weak residual", "singular eigenvector, 16 cosine tests", vec![oracle], vec![main], 1e-10)?);
        }
    }
    let cfg = ctx.cfg.clone();
    let base = cfg.grid.n.max(11);
    let sizes = [base, 2 * base - 1, 4 * base - 3];
    let conv = richardson_quadrature_check(&sizes, None, |n| {
        let mut c = cfg.clone();
        c.grid.n = n;
        let md = c.assemble()?;
        let opts = EigenOptions::default();
        Ok(if c.eps > 0.0 {
            eigen_regularized(&md.grid, &md.m, &md.a, c.mu, c.eps, opts)?.lambda
        } else {
            eigen_nonlocal(&md.grid, &md.m, &md.a, c.mu, opts)?.lambda
        })
    });
    for r in &reports {
        r.append_to(&log)?;
        println!("{} [{}]: discrepancy {:.2e} -> {}", r.oracle, r.instance, r.discrepancy, if r.pass { "pass" } else { "FAIL" });
    }
    ctx.outputs.push("validation.jsonl".into());
    let conv_json = match conv {
        Ok(c) => {
            println!("refinement of lambda_1: order {:?} ({})", c.order, c.label);
            serde_json::to_value(c)?
        }
        Err(e) => json!({ "error": e.to_string() }),
    };
    let all = reports.iter().all(|r| r.pass);
    ctx.json(&json!({ "reports": reports, "lambda_refinement": conv_json, "all_pass": all }))?;
    ctx.finish()?;
    if all {
        Ok(())
    } else {
        Err(Error::Precondition("an oracle disagreed with the main path".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("c.json");
        std::fs::write(&p, body).unwrap();
        p
    }

    const STANDARD: &str = r#"{
        "grid": {"dim": 1, "bounds": [[-1, 1]], "n": 201},
        "mu": 0.25,
        "a": {"preset": "one_minus_sqrt_abs"},
        "M": {"preset": "uniform"},
        "K": {"preset": "constant"}
    }"#;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(dispatch(["phenowave", "frobnicate"]), 2);
        assert_eq!(dispatch(["phenowave", "eigen"]), 2);
        assert_eq!(dispatch(["phenowave", "eigen", "--config", "x.json", "--bogus", "1"]), 2);
    }

    #[test]
    fn bad_config_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), r#"{"grid": {"dim": 1, "bounds": [[-1, 1]], "n": 11}, "mu": 0.25, "extra": 1}"#);
        let out = dir.path().join("out");
        assert_eq!(dispatch(["phenowave", "eigen", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 2);
    }

    #[test]
    fn eigen_writes_outputs_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), STANDARD);
        let out = dir.path().join("out");
        let argv = ["phenowave", "eigen", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--eps", "1e-3", "--emit-gnuplot"];
        assert_eq!(dispatch(argv), 0);
        let first = std::fs::read(out.join("eigen.json")).unwrap();
        let csv = std::fs::read_to_string(out.join("eigen.csv")).unwrap();
        assert!(csv.starts_with("y,phi\n") && csv.lines().count() == 202);
        assert!(out.join("eigen.gp").exists());
        let v: Value = serde_json::from_slice(&first).unwrap();
        assert!(v["lambda"].as_f64().unwrap() < 0.0);
        assert_eq!(dispatch(argv), 0);
        assert_eq!(std::fs::read(out.join("eigen.json")).unwrap(), first);
        let manifest: Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["subcommand"], "eigen");
        assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn config_hash_is_deterministic_and_sensitive() {
        let a = ModelConfig::standard(11, 0.25);
        let mut b = a.clone();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.mu = 0.3;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }

    #[test]
    fn solver_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), STANDARD);
        let out = dir.path().join("out");
        // μ = 0.75 lies above μ₀, so there is no singular eigenvector.
        let argv = ["phenowave", "singular-eigvec", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--mu", "0.75"];
        assert_eq!(dispatch(argv), 1);
    }
}
