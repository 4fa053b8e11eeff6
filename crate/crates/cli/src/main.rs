use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use loopshaper::ccp::{synthesize_with, SynthesisConfig};
use loopshaper::kfactor::{self, KFactorSpec};
use loopshaper::loops::{characteristic_polynomials, verify_norms, CompensatorParams, FilterParams, NormBounds};
use loopshaper::lti::{bode_csv, roots};
use loopshaper::plant::{
    dc_operating_point, identified_plant_set, math_models, paper_controllers, paper_weights, ConverterParams, EsrTerm,
};
use loopshaper::sim::{self, event_windows, metrics, SimConfig, SimMode, SimScenario};
use loopshaper::verify::{verify_paper_suite, RowStatus, VerifyOptions};
use loopshaper::{Error, FrequencyGrid, TransferFunction};

#[derive(Parser)]
#[command(name = "loopshaper", version, about = "Fixed-order H-infinity loop shaping for interleaved boost converters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export converter parameters, identified and analytic models, weights and Bode data.
    Models(ModelsArgs),
    /// Run the two-stage convex-concave synthesis.
    Synthesize(SynthesizeArgs),
    /// Place a Type-III compensator by the K-factor method.
    Kfactor(KfactorArgs),
    /// Dense-grid norms and stability of a compensator and filter.
    Analyze(AnalyzeArgs),
    /// Closed-loop time-domain simulation.
    Simulate(SimulateArgs),
    /// Check the published controllers against the published fixtures.
    VerifyPaper(VerifyArgs),
}

#[derive(Args, Clone, Copy)]
struct GridArgs {
    /// Lowest grid frequency (rad/s)
    #[arg(long)]
    grid_lo: Option<f64>,
    /// Highest grid frequency (rad/s)
    #[arg(long)]
    grid_hi: Option<f64>,
    /// Number of log-spaced grid points
    #[arg(long)]
    grid_points: Option<usize>,
}

impl GridArgs {
    fn any(&self) -> bool {
        self.grid_lo.is_some() || self.grid_hi.is_some() || self.grid_points.is_some()
    }

    fn grid(&self, lo: f64, hi: f64, n: usize) -> Result<FrequencyGrid, Failure> {
        Ok(FrequencyGrid::logspace(
            self.grid_lo.unwrap_or(lo),
            self.grid_hi.unwrap_or(hi),
            self.grid_points.unwrap_or(n),
        )?)
    }
}

#[derive(Args)]
struct ModelsArgs {
    #[arg(long)]
    out: PathBuf,
    /// Converter parameters JSON (defaults to the measured prototype values)
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "as-printed")]
    esr: EsrArg,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum EsrArg {
    AsPrinted,
    Harmonized,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    out: PathBuf,
    /// Synthesis configuration JSON; missing fields take the published defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Outer iteration limit
    #[arg(long, short = 'l')]
    max_iters: Option<usize>,
    #[arg(long)]
    solver_tol: Option<f64>,
    /// Write each subproblem to this path before it is solved; after a failure it holds the failing one
    #[arg(long)]
    dump_subproblem: Option<PathBuf>,
    /// Keep per-solve wall-clock times in report.json and trace.csv (breaks byte-identical reruns)
    #[arg(long)]
    record_timings: bool,
}

#[derive(Args)]
struct KfactorArgs {
    /// Crossover frequency (Hz)
    #[arg(long)]
    fc: f64,
    /// Phase boost (degrees)
    #[arg(long, allow_negative_numbers = true)]
    phase_boost: f64,
    /// Compensator gain at the crossover (dB)
    #[arg(long, allow_negative_numbers = true)]
    gain_db: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Published {
    #[value(name = "k_x")]
    KX,
    #[value(name = "k_k")]
    KK,
    #[value(name = "k_2x")]
    K2x,
}

#[derive(Args)]
struct ControllerArgs {
    /// Compensator JSON `{"X": [...], "Y": [...]}`
    #[arg(long, conflicts_with = "published")]
    controller: Option<PathBuf>,
    /// One of the published compensators
    #[arg(long, value_enum)]
    published: Option<Published>,
}

impl ControllerArgs {
    fn load(&self) -> Result<CompensatorParams, Failure> {
        match (&self.controller, self.published) {
            (Some(p), _) => Ok(serde_json::from_str(&read(p)?)?),
            (None, Some(which)) => {
                let pc = paper_controllers();
                let tf = match which {
                    Published::KX => pc.k_x,
                    Published::KK => pc.k_k,
                    Published::K2x => pc.k_2x,
                };
                Ok(CompensatorParams::from_transfer_function(&tf)?)
            }
            (None, None) => Err(Failure::Usage("give --controller or --published".into())),
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    ctrl: ControllerArgs,
    /// Filter JSON `{"N": [...], "M": [...]}` (defaults to the published Q)
    #[arg(long)]
    filter: Option<PathBuf>,
    /// Squared stage-1 bound; with --gamma2 the bounded rows get pass/fail verdicts
    #[arg(long, requires = "gamma2")]
    gamma1: Option<f64>,
    #[arg(long, requires = "gamma1")]
    gamma2: Option<f64>,
    #[arg(long, default_value_t = 0.15)]
    slack: f64,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    ALti,
    AAveraged,
    B,
    InputVoltage,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Scenario JSON
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[command(flatten)]
    ctrl: ControllerArgs,
    /// Q-filter JSON; enables the disturbance observer
    #[arg(long, conflicts_with = "dob")]
    filter: Option<PathBuf>,
    /// Enable the disturbance observer with the published Q
    #[arg(long)]
    dob: bool,
    /// Converter parameters JSON for averaged mode
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    output_dt: Option<f64>,
    #[arg(long)]
    substeps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Force sensor noise on
    #[arg(long)]
    noise: bool,
    /// Nominal set-point for the overshoot percentages
    #[arg(long, default_value_t = 100.0)]
    nominal: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    /// Skip the load-step simulation rows
    #[arg(long)]
    no_sim: bool,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Io(String),
    Usage(String),
    /// Verification ran but some rows failed.
    Rejected(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(Error::Json(e))
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Core(Error::InfeasibleSubproblem { .. }) => 3,
            Failure::Core(
                Error::SolverFailure { .. }
                | Error::NonFiniteState { .. }
                | Error::NonDescent { .. }
                | Error::UnstableIterate { .. }
                | Error::DegenerateLoop
                | Error::DegenerateResult
                | Error::PoleOnGrid { .. },
            ) => 4,
            Failure::Rejected(_) => 1,
            _ => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Core(e) => match e {
                Error::InfeasibleSubproblem { .. } => "infeasible_subproblem",
                Error::SolverFailure { .. } => "solver_failure",
                Error::NonFiniteState { .. } => "non_finite_state",
                Error::NonDescent { .. } => "non_descent",
                Error::UnstableIterate { .. } => "unstable_iterate",
                Error::ImproperComposite(_) => "improper_composite",
                Error::NoEquilibrium(_) => "no_equilibrium",
                Error::Json(_) => "invalid_json",
                _ => "configuration",
            },
            Failure::Io(_) => "io",
            Failure::Usage(_) => "usage",
            Failure::Rejected(_) => "verification_failed",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Io(m) | Failure::Usage(m) => m.clone(),
            Failure::Rejected(n) => format!("{n} verification row(s) failed"),
        }
    }
}

fn read(p: &Path) -> Result<String, Failure> {
    fs::read_to_string(p).map_err(|e| Failure::Io(format!("reading {}: {e}", p.display())))
}

/// Output directory whose files appear only once fully written.
struct Out {
    dir: PathBuf,
}

impl Out {
    fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("creating {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        write_atomic(&self.dir.join(name), bytes)
    }

    fn json<T: Serialize>(&self, name: &str, v: &T) -> Result<(), Failure> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Io(format!("writing {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn load_params(path: &Option<PathBuf>) -> Result<ConverterParams, Failure> {
    let p = match path {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => ConverterParams::table1(),
    };
    p.validate()?;
    Ok(p)
}

fn tf_roots(tf: &TransferFunction) -> Result<serde_json::Value, Failure> {
    let pair = |v: Vec<num_complex::Complex64>| v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>();
    Ok(json!({ "zeros": pair(tf.zeros()?), "poles": pair(tf.poles()?) }))
}

/// Extra facts for the metadata file, kept out of the reproducible outputs.
#[derive(Default)]
struct Meta {
    solve_ms: Vec<f64>,
}

fn models(a: &ModelsArgs, out: &Out, _meta: &mut Meta) -> Result<(), Failure> {
    let p = load_params(&a.params)?;
    let op = dc_operating_point(&p)?;
    let esr = match a.esr {
        EsrArg::AsPrinted => EsrTerm::AsPrinted,
        EsrArg::Harmonized => EsrTerm::Harmonized,
    };
    let mm = math_models(&p, &op, esr)?;
    let plants = identified_plant_set();
    out.json("params.json", &p)?;
    out.json("operating_point.json", &op)?;
    out.json("identified_models.json", &plants)?;
    out.json("math_models.json", &mm)?;
    out.json("weights.json", &paper_weights())?;
    out.json("controllers.json", &paper_controllers())?;
    let grid = a.grid.grid(1e1, 1e6, 500)?;
    let tfs = [
        ("G", &plants.g),
        ("G_i", &plants.g_i),
        ("G_v", &plants.g_v),
        ("W_n", &plants.w_n),
        ("G_m", &mm.g_m),
        ("G_im", &mm.g_im),
        ("G_vm", &mm.g_vm),
    ];
    for (name, tf) in tfs {
        out.write(&format!("bode_{name}.csv"), bode_csv(tf, &grid)?.as_bytes())?;
    }
    println!("U = {:.7}, I_L = {:.5} A per phase", op.u, op.i_l);
    Ok(())
}

fn synthesize(a: &SynthesizeArgs, out: &Out, meta: &mut Meta) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => SynthesisConfig::from_json(&read(p)?)?,
        None => SynthesisConfig::paper(),
    };
    if a.grid.any() {
        cfg.grid = a.grid.grid(cfg.grid.lo(), cfg.grid.hi(), cfg.grid.len())?;
    }
    if let Some(v) = a.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = a.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = a.solver_tol {
        cfg.solver_tol = v;
    }
    cfg.validate()?;
    let dump = a.dump_subproblem.clone();
    let report = synthesize_with(&cfg, |stage, it, program| {
        if let Some(path) = &dump {
            log::debug!("dumping {stage} program of iteration {it}");
            let text = program.to_json()?;
            write_atomic(path, text.as_bytes()).map_err(|f| Error::Config(f.message()))?;
        }
        Ok(())
    })?;
    let (clean, times) = report.without_timings();
    meta.solve_ms = times;
    let report = if a.record_timings { report } else { clean };
    out.json("report.json", &report)?;
    out.write("trace.csv", report.trace_csv().as_bytes())?;
    out.json("controller.json", &report.compensator)?;
    out.json("filter.json", &report.filter)?;
    println!(
        "{:?} after {} iterations: gamma1 = {:.6}, gamma2 = {}",
        report.status,
        report.iterations,
        report.gamma1,
        report.gamma2.map_or("-".into(), |g| format!("{g:.6}"))
    );
    println!("K(s) = {}", report.compensator_tf);
    println!("Q(s) = {}", report.filter_tf);
    if !report.violations.is_empty() {
        eprintln!("{} dense-grid violation(s), see report.json", report.violations.len());
    }
    Ok(())
}

fn kfactor_cmd(a: &KfactorArgs, out: Option<&Out>) -> Result<(), Failure> {
    let spec = KFactorSpec::from_db(a.fc, a.phase_boost, a.gain_db);
    let k = kfactor::design(&spec)?;
    let (f_z, f_p) = kfactor::place_zeros_poles(a.fc, a.phase_boost)?;
    let params = CompensatorParams::from_transfer_function(&k)?;
    let mut table = String::from("kind,re_rad_s,im_rad_s,hz\n");
    for (kind, zs) in [("zero", k.zeros()?), ("pole", k.poles()?)] {
        for z in zs {
            table.push_str(&format!("{kind},{:e},{:e},{:e}\n", z.re, z.im, z.norm() / (2.0 * std::f64::consts::PI)));
        }
    }
    let doc = json!({
        "spec": spec,
        "k": kfactor::k_gain(a.phase_boost)?,
        "f_z_hz": f_z,
        "f_p_hz": f_p,
        "transfer_function": k,
        "compensator": params,
        "roots": tf_roots(&k)?,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    eprint!("{table}");
    if let Some(out) = out {
        out.json("kfactor.json", &doc)?;
        out.json("controller.json", &params)?;
        out.write("pole_zero.csv", table.as_bytes())?;
    }
    Ok(())
}

fn load_filter(path: &Option<PathBuf>) -> Result<FilterParams, Failure> {
    match path {
        Some(p) => Ok(serde_json::from_str(&read(p)?)?),
        None => Ok(FilterParams::from_transfer_function(&paper_controllers().q)?),
    }
}

fn analyze(a: &AnalyzeArgs, out: &Out) -> Result<(), Failure> {
    let comp = a.ctrl.load()?;
    let filt = load_filter(&a.filter)?;
    let plants = identified_plant_set();
    let grid = a.grid.grid(1e2, 1e5, 2000)?;
    let bounds = match (a.gamma1, a.gamma2) {
        (Some(g1), Some(g2)) => Some(NormBounds::from_gammas(g1, g2, a.slack)),
        _ => None,
    };
    let report = verify_norms(&comp, &filt, &plants, &paper_weights(), &grid, bounds)?;
    let (outer, inner, combined) = characteristic_polynomials(&comp, &filt, &plants.g);
    let pair = |p| -> Result<Vec<[f64; 2]>, Failure> { Ok(roots(p)?.iter().map(|z| [z.re, z.im]).collect()) };
    let doc = json!({
        "compensator": comp,
        "filter": filt,
        "norms": report,
        "characteristic_roots": {
            "outer": pair(&outer)?,
            "inner": pair(&inner)?,
            "combined": pair(&combined)?,
        },
    });
    out.json("analysis.json", &doc)?;
    let bode_grid = FrequencyGrid::logspace(1e0, 1e6, 500)?;
    out.write("bode_K.csv", bode_csv(&comp.transfer_function(), &bode_grid)?.as_bytes())?;
    out.write("bode_Q.csv", bode_csv(&filt.q(), &bode_grid)?.as_bytes())?;
    for r in &report.rows {
        let verdict = match r.pass {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "-",
        };
        println!("{:<26} {:>12.5e} at {:>10.4e} rad/s  {verdict}", r.name, r.peak, r.omega_at_peak);
    }
    let s = report.stability;
    println!("stable: outer {} inner {} combined {}", s.outer, s.inner, s.combined);
    Ok(())
}

fn simulate(a: &SimulateArgs, out: &Out) -> Result<(), Failure> {
    let mut scenario: SimScenario = match (&a.scenario, a.preset) {
        (Some(p), _) => serde_json::from_str(&read(p)?)?,
        (None, Some(Preset::ALti)) => sim::scenario_a(SimMode::Lti),
        (None, Some(Preset::AAveraged)) => sim::scenario_a(SimMode::Averaged),
        (None, Some(Preset::B)) => sim::scenario_b(),
        (None, Some(Preset::InputVoltage)) => sim::scenario_input_voltage(),
        (None, None) => return Err(Failure::Usage("give --scenario or --preset".into())),
    };
    if a.noise {
        scenario.noise_enabled = true;
    }
    let comp = a.ctrl.load()?;
    let filt = if a.dob || a.filter.is_some() {
        Some(load_filter(&a.filter)?)
    } else {
        None
    };
    let params = load_params(&a.params)?;
    let defaults = SimConfig::default();
    let cfg = SimConfig {
        dt: a.dt.unwrap_or(defaults.dt),
        output_dt: a.output_dt.unwrap_or(defaults.output_dt),
        substeps: a.substeps,
        seed: a.seed,
    };
    let res = sim::simulate(&scenario, &comp, filt.as_ref(), &identified_plant_set(), &params, &cfg)?;
    let mut csv = Vec::new();
    res.write_csv(&mut csv)?;
    out.write("sim.csv", &csv)?;
    let windows = event_windows(&scenario);
    let m = if windows.is_empty() {
        None
    } else {
        Some(metrics(&res, &windows, a.nominal)?)
    };
    let doc = json!({
        "settling_definition": "first time after the event from which |v_o - v_final| stays within 2% of the window's peak deviation; v_final is the mean of the last 5% of the window",
        "overshoot_definition": "percent of the nominal set-point; set-point windows: excursion past v_final in the step direction; other windows: peak |v_o - v_final|",
        "scenario": scenario,
        "config": cfg,
        "observer": filt.is_some(),
        "metrics": m,
    });
    out.json("metrics.json", &doc)?;
    if let Some(m) = &m {
        for e in &m.events {
            println!(
                "{:?} at {} s: overshoot {:.3}%, settling {:.1} ms{}",
                e.kind,
                e.t,
                e.overshoot_pct,
                e.settling_time * 1e3,
                if e.unsettled { " (unsettled)" } else { "" }
            );
        }
    }
    Ok(())
}

fn verify(a: &VerifyArgs, out: &Out) -> Result<(), Failure> {
    let mut opts = VerifyOptions {
        simulate: !a.no_sim,
        ..VerifyOptions::default()
    };
    if a.grid.any() {
        opts.grid = a.grid.grid(opts.grid.lo(), opts.grid.hi(), opts.grid.len())?;
    }
    let table = verify_paper_suite(&opts)?;
    out.json("verify.json", &table)?;
    let mut csv = String::from("check,subject,value,bound,status\n");
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in &table.rows {
        let status = serde_json::to_value(r.status)?;
        let status = status.as_str().unwrap_or_default().to_string();
        csv.push_str(&format!("\"{}\",\"{}\",{},{},{status}\n", r.check, r.subject, opt(r.value), opt(r.bound)));
        let mark = match r.status {
            RowStatus::Pass => "pass",
            RowStatus::Fail => "FAIL",
            RowStatus::GridInsufficient => "grid-insufficient",
            RowStatus::Info => "info",
        };
        println!("{mark:<18} {:<40} {:<42} {}", r.check, r.subject, opt(r.value));
    }
    out.write("verify.csv", csv.as_bytes())?;
    let failed = table.failures().count();
    if failed > 0 {
        return Err(Failure::Rejected(failed));
    }
    Ok(())
}

fn threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("LOOPSHAPER_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| Failure::Usage(format!("LOOPSHAPER_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))
}

fn out_dir(c: &Command) -> Option<&Path> {
    match c {
        Command::Models(a) => Some(&a.out),
        Command::Synthesize(a) => Some(&a.out),
        Command::Kfactor(a) => a.out.as_deref(),
        Command::Analyze(a) => Some(&a.out),
        Command::Simulate(a) => Some(&a.out),
        Command::VerifyPaper(a) => Some(&a.out),
    }
}

fn run(cli: &Cli, meta: &mut Meta) -> Result<(), Failure> {
    let out = out_dir(&cli.command).map(Out::new).transpose()?;
    threads()?;
    match (&cli.command, out.as_ref()) {
        (Command::Models(a), Some(o)) => models(a, o, meta),
        (Command::Synthesize(a), Some(o)) => synthesize(a, o, meta),
        (Command::Kfactor(a), o) => kfactor_cmd(a, o),
        (Command::Analyze(a), Some(o)) => analyze(a, o),
        (Command::Simulate(a), Some(o)) => simulate(a, o),
        (Command::VerifyPaper(a), Some(o)) => verify(a, o),
        _ => unreachable!("every command but kfactor requires --out"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let start = Instant::now();
    let mut meta = Meta::default();
    let result = run(&cli, &mut meta);
    let dir = out_dir(&cli.command);
    let code = match &result {
        Ok(()) => 0,
        Err(f) => f.code(),
    };
    if let Some(dir) = dir.filter(|d| d.is_dir()) {
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let md = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "args": std::env::args().collect::<Vec<_>>(),
            "unix_time": stamp,
            "elapsed_s": start.elapsed().as_secs_f64(),
            "exit_code": code,
            "solve_ms": meta.solve_ms,
        });
        let _ = write_atomic(&dir.join("metadata.json"), format!("{md:#}\n").as_bytes());
        if let Err(f) = &result {
            let doc = json!({ "exit_code": code, "kind": f.kind(), "message": f.message() });
            let _ = write_atomic(&dir.join("error.json"), format!("{doc:#}\n").as_bytes());
        } else {
            let _ = fs::remove_file(dir.join("error.json"));
        }
    }
    if let Err(f) = &result {
        eprintln!("error: {}", f.message());
    }
    ExitCode::from(code)
}
