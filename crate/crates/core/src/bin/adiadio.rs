use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use adiadio::cli::{write_json, ConfigError, ConfigFile, Resolver, RunManifest, WithManifest};
use adiadio::decide::{run_decision, DecideError, DecisionConfig};
use adiadio::evolve::{self, coherent_initial_state, probabilities, DistributionExport, EvolveError, EvolveOptions, EvolveReport, Propagator};
use adiadio::fock::{FockBasis, Truncation, DEFAULT_STATE_CAP};
use adiadio::odeflow::{integrate_flow, level_convergence, FlowSystem, LevelConvergence, LevelCoupling, OdeFlowOptions};
use adiadio::ops::{build_hi, build_hp, CoherentParams, OperatorMatrix, ProblemHamiltonian, Ramp, Schedule, DEFAULT_ALPHA};
use adiadio::poly::{annotate, parse_constant_binding, parse_equation, ParseOptions, Polynomial};
use adiadio::spectral::{gap_and_time, spectral_flow, FlowExport, FlowOptions, GapOptions, GapReport};

const EXIT_INPUT: u8 = 2;
const EXIT_NORM_DRIFT: u8 = 3;
const EXIT_FAILURE: u8 = 5;

/// Every key a config file may set.
const CONFIG_KEYS: &[&str] = &[
    "alpha",
    "cutoff",
    "truncation",
    "levels",
    "grid",
    "ramp",
    "format",
    "symmetry",
    "T",
    "propagator",
    "conv-tol",
    "tail-tol",
    "max-steps",
    "epsilon",
    "p",
    "seed",
    "max-cutoff",
    "reference-cutoff",
    "initial-cutoff",
    "initial-T",
    "max-T",
    "t-growth",
    "trend-margin",
    "gap-grid",
    "s-margin",
    "coupling",
    "local-tol",
    "drift-tol",
    "gap-floor",
    "zero-tol",
    "bound",
    "volume-cap",
];

#[derive(Parser)]
#[command(name = "adiadio", version, about = "Adiabatic Fock-space simulator and decision harness for Diophantine equations")]
struct Cli {
    /// key=value file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "ADIADIO_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Canonical expanded form of an equation as JSON.
    Parse(EquationArgs),
    /// Lowest eigencurves of the interpolating Hamiltonian.
    Flow(FlowArgs),
    /// Final measurement distribution of one adiabatic run.
    Evolve(EvolveArgs),
    /// Full decision loop; the exit code encodes the verdict.
    Decide(DecideArgs),
    /// Integrates the eigenvalue flow equations towards s = 1.
    Odeflow(OdeflowArgs),
    /// Exhaustive search for roots in a box.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct EquationArgs {
    /// Polynomial equation, e.g. "(x+1)^2 + (y+1)^2 - (z+1)^2"; "= 0" is optional.
    equation: String,
    /// Integer constant substituted before parsing, as NAME=VALUE.
    #[arg(long = "const", value_name = "NAME=VALUE")]
    constants: Vec<String>,
}

#[derive(Args)]
struct BasisArgs {
    /// Coherent-state parameter: one value for every mode or a comma list.
    #[arg(long)]
    alpha: Option<AlphaList>,
    /// Total-occupation cutoff (per-mode cap with --truncation per-mode).
    #[arg(long)]
    cutoff: Option<u32>,
    #[arg(long, value_name = "total|per-mode")]
    truncation: Option<Truncation>,
    #[arg(long, value_name = "linear|smoothstep|sine")]
    ramp: Option<Ramp>,
}

#[derive(Args)]
struct FlowArgs {
    #[command(flatten)]
    eq: EquationArgs,
    #[command(flatten)]
    basis: BasisArgs,
    /// Number of eigencurves (default 8); clamped to the basis dimension.
    #[arg(long)]
    levels: Option<usize>,
    /// Number of equally spaced s values (default 101).
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, value_name = "csv|json")]
    format: Option<OutputFormat>,
    /// Split dense solves along a mode-exchange symmetry when present.
    #[arg(long)]
    symmetry: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvolveArgs {
    #[command(flatten)]
    eq: EquationArgs,
    #[command(flatten)]
    basis: BasisArgs,
    /// Total evolution time.
    #[arg(long = "T")]
    total_time: Option<f64>,
    #[arg(long, value_name = "auto|spectral|krylov|split")]
    propagator: Option<Propagator>,
    /// Step-halving tolerance on the final probabilities; 0 runs once.
    #[arg(long)]
    conv_tol: Option<f64>,
    /// Largest coherent-state weight allowed outside the basis.
    #[arg(long)]
    tail_tol: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecideArgs {
    #[command(flatten)]
    eq: EquationArgs,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Confidence level.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Largest truncated-model cutoff.
    #[arg(long)]
    max_cutoff: Option<u32>,
    /// Cutoff of the reference simulation.
    #[arg(long)]
    reference_cutoff: Option<u32>,
    #[arg(long)]
    initial_cutoff: Option<u32>,
    #[arg(long = "initial-T")]
    initial_t: Option<f64>,
    #[arg(long = "max-T")]
    max_t: Option<f64>,
    #[arg(long)]
    t_growth: Option<f64>,
    #[arg(long)]
    alpha: Option<AlphaList>,
    #[arg(long)]
    ramp: Option<Ramp>,
    #[arg(long)]
    trend_margin: Option<f64>,
    #[arg(long)]
    tail_tol: Option<f64>,
    #[arg(long)]
    propagator: Option<Propagator>,
    #[arg(long)]
    conv_tol: Option<f64>,
    #[arg(long)]
    gap_grid: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Writes the loop trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct OdeflowArgs {
    #[command(flatten)]
    eq: EquationArgs,
    #[command(flatten)]
    basis: BasisArgs,
    /// Tracked levels; clamped to the working dimension.
    #[arg(long)]
    levels: Option<usize>,
    /// Integration stops at s = 1 - margin.
    #[arg(long)]
    s_margin: Option<f64>,
    #[arg(long, value_name = "tracked|complete")]
    coupling: Option<LevelCoupling>,
    #[arg(long)]
    local_tol: Option<f64>,
    #[arg(long)]
    drift_tol: Option<f64>,
    #[arg(long)]
    gap_floor: Option<f64>,
    #[arg(long)]
    symmetry: Option<bool>,
    /// Extrapolated ground energies within this of 0 count as a root.
    #[arg(long)]
    zero_tol: Option<f64>,
    /// Also rerun with twice the tracked levels and report the change.
    #[arg(long)]
    convergence: bool,
    /// Trajectory CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary JSON; stdout when --out is given, stderr otherwise.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    eq: EquationArgs,
    /// Upper bound for every variable.
    #[arg(long)]
    bound: Option<u64>,
    /// Per-variable upper bounds, overriding --bound.
    #[arg(long, value_delimiter = ',')]
    bounds: Option<Vec<u64>>,
    /// Largest number of points searched.
    #[arg(long)]
    volume_cap: Option<u128>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format '{other}' (expected csv|json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
struct AlphaList(Vec<f64>);

impl FromStr for AlphaList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(AlphaList)
    }
}

impl AlphaList {
    fn for_modes(&self, k: usize) -> Result<Vec<f64>, CliError> {
        match self.0.len() {
            1 => Ok(vec![self.0[0]; k]),
            n if n == k => Ok(self.0.clone()),
            n => Err(CliError::Input(format!("{n} alpha values given for {k} modes"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    NormDrift(EvolveError),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) | CliError::Input(_) | CliError::Config(_) => EXIT_INPUT,
            CliError::NormDrift(_) => EXIT_NORM_DRIFT,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }

    fn failure(e: impl std::fmt::Display) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<EvolveError> for CliError {
    fn from(e: EvolveError) -> Self {
        match e {
            EvolveError::NormDrift { .. } => CliError::NormDrift(e),
            EvolveError::TailMass { .. } => CliError::Input(e.to_string()),
            other => CliError::failure(other),
        }
    }
}

impl From<DecideError> for CliError {
    fn from(e: DecideError) -> Self {
        match e {
            DecideError::Evolve(inner) => inner.into(),
            DecideError::Config(msg) => CliError::Input(msg),
            other => CliError::failure(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global().map_err(CliError::failure)?;
    }
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    file.check_keys(CONFIG_KEYS)?;
    let mut res = Resolver::new(file);
    match cli.command {
        Command::Parse(a) => cmd_parse(a, &mut res),
        Command::Flow(a) => cmd_flow(a, &mut res),
        Command::Evolve(a) => cmd_evolve(a, &mut res),
        Command::Decide(a) => cmd_decide(a, &mut res),
        Command::Odeflow(a) => cmd_odeflow(a, &mut res),
        Command::Oracle(a) => cmd_oracle(a, &mut res),
    }
}

fn parse_input(args: &EquationArgs, res: &mut Resolver) -> Result<Polynomial, CliError> {
    let mut opts = ParseOptions::default();
    for binding in &args.constants {
        let (name, value) = parse_constant_binding(binding).map_err(CliError::Input)?;
        opts.constants.insert(name, value);
    }
    let constants: Vec<String> = opts.constants.iter().map(|(k, v)| format!("{k}={v}")).collect();
    res.record("const", &constants);
    parse_equation(&args.equation, &opts).map_err(|e| CliError::Parse(annotate(&args.equation, &e)))
}

fn nonconstant(p: &Polynomial) -> Result<(), CliError> {
    if p.is_constant() {
        return Err(CliError::Input(format!(
            "'{p}' is constant: it {} a root, no simulation needed",
            if p.is_zero() { "trivially has" } else { "never has" }
        )));
    }
    Ok(())
}

struct Operators {
    basis: Arc<FockBasis>,
    coherent: CoherentParams,
    hi: OperatorMatrix,
    hp: ProblemHamiltonian,
    ramp: Ramp,
}

fn build_operators(p: &Polynomial, args: &BasisArgs, default_cutoff: u32, res: &mut Resolver) -> Result<Operators, CliError> {
    let k = p.num_vars();
    let alpha = res.value("alpha", args.alpha.clone(), AlphaList(vec![DEFAULT_ALPHA]))?;
    let cutoff = res.value("cutoff", args.cutoff, default_cutoff)?;
    let truncation = res.value("truncation", args.truncation, Truncation::Total)?;
    let ramp = res.value("ramp", args.ramp, Ramp::Linear)?;
    let basis = FockBasis::with_truncation(k, cutoff, truncation, DEFAULT_STATE_CAP).map_err(|e| CliError::Input(e.to_string()))?;
    let coherent = CoherentParams::new(alpha.for_modes(k)?).map_err(|e| CliError::Input(e.to_string()))?;
    let hp = build_hp(p, &basis).map_err(|e| CliError::Input(e.to_string()))?;
    let hi = build_hi(&coherent, &basis).map_err(CliError::failure)?;
    Ok(Operators { basis: Arc::new(basis), coherent, hi, hp, ramp })
}

/// Opens `path` or stdout.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::Failure(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit_json<T: Serialize>(path: Option<&Path>, manifest: &RunManifest, body: &T) -> Result<(), CliError> {
    let mut w = sink(path)?;
    write_json(&mut w, &WithManifest { manifest, body })?;
    w.flush()?;
    Ok(())
}

fn cmd_parse(a: EquationArgs, res: &mut Resolver) -> Result<u8, CliError> {
    let p = parse_input(&a, res)?;
    let manifest = RunManifest::new("parse", res, Some(&a.equation), None);
    emit_json(None, &manifest, &p.to_dump())?;
    Ok(0)
}

#[derive(Serialize)]
struct FlowOutput {
    flow: FlowExport,
    gap: Option<GapReport>,
    gap_note: Option<String>,
}

fn cmd_flow(a: FlowArgs, res: &mut Resolver) -> Result<u8, CliError> {
    let p = parse_input(&a.eq, res)?;
    nonconstant(&p)?;
    let ops = build_operators(&p, &a.basis, 8, res)?;
    let requested = res.value("levels", a.levels, 8usize)?;
    let levels = requested.clamp(1, ops.basis.len());
    res.record("levels", &levels);
    let grid = res.value("grid", a.grid, 101usize)?;
    let format = res.value("format", a.format, OutputFormat::Csv)?;
    let use_symmetry = res.value("symmetry", a.symmetry, true)?;
    let sched = Schedule::uniform(1.0, ops.ramp, grid).map_err(|e| CliError::Input(e.to_string()))?;
    let opts = FlowOptions { num_levels: levels, use_symmetry, keep_vectors: format == OutputFormat::Json, ..Default::default() };
    let flow = spectral_flow(&ops.hi, ops.hp.matrix(), &sched, &opts).map_err(CliError::failure)?;
    let manifest = RunManifest::new("flow", res, Some(&a.eq.equation), None);
    match format {
        OutputFormat::Csv => {
            let mut w = sink(a.out.as_deref())?;
            flow.write_csv(&mut w).map_err(CliError::failure)?;
            w.flush()?;
            if let Some(path) = &a.out {
                manifest.write_beside(path)?;
            }
        }
        OutputFormat::Json => {
            let (gap, gap_note) = match gap_and_time(&flow, &ops.hi, ops.hp.matrix(), &GapOptions::default()) {
                Ok(g) => (Some(g), None),
                Err(e) => (None, Some(e.to_string())),
            };
            emit_json(a.out.as_deref(), &manifest, &FlowOutput { flow: flow.export(), gap, gap_note })?;
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct EvolveOutput {
    final_time: f64,
    norm: f64,
    report: EvolveReport,
    modal_state: Vec<u32>,
    modal_probability: f64,
    /// Basis states where `H_P` attains its minimum.
    ground_states: Vec<Vec<u32>>,
    ground_energy: String,
    ground_probability: f64,
    distribution: DistributionExport,
}

fn cmd_evolve(a: EvolveArgs, res: &mut Resolver) -> Result<u8, CliError> {
    let p = parse_input(&a.eq, res)?;
    nonconstant(&p)?;
    let ops = build_operators(&p, &a.basis, 24, res)?;
    let total_time = res.value("T", a.total_time, 10.0)?;
    let defaults = EvolveOptions::default();
    let propagator = res.value("propagator", a.propagator, defaults.propagator)?;
    let conv_tol = res.value("conv-tol", a.conv_tol, defaults.conv_tol.unwrap_or(0.0))?;
    let tail_tol = res.value("tail-tol", a.tail_tol, evolve::DEFAULT_TAIL_TOL)?;
    let max_steps = res.value("max-steps", a.max_steps, defaults.max_steps)?;
    let opts = EvolveOptions { propagator, conv_tol: (conv_tol > 0.0).then_some(conv_tol), max_steps, ..defaults };
    let sched = Schedule::uniform(total_time, ops.ramp, 2).map_err(|e| CliError::Input(e.to_string()))?;
    let psi0 = coherent_initial_state(&ops.coherent, ops.basis.clone(), tail_tol)?;
    let (psi, report) = evolve::evolve(&ops.hi, ops.hp.matrix(), &sched, &psi0, &opts)?;
    let dist = probabilities(&psi);
    let probs = dist.probs();
    let modal = (0..probs.len()).fold(0, |best, i| if probs[i] > probs[best] { i } else { best });
    let minimizers = ops.hp.minimizers();
    let out = EvolveOutput {
        final_time: psi.time(),
        norm: psi.norm(),
        report,
        modal_state: ops.basis.state(modal).to_vec(),
        modal_probability: probs[modal],
        ground_states: minimizers.iter().map(|&i| ops.basis.state(i).to_vec()).collect(),
        ground_energy: ops.hp.min_exact().to_string(),
        ground_probability: minimizers.iter().map(|&i| probs[i]).sum(),
        distribution: dist.export(),
    };
    let manifest = RunManifest::new("evolve", res, Some(&a.eq.equation), None);
    emit_json(a.out.as_deref(), &manifest, &out)?;
    Ok(0)
}

fn cmd_decide(a: DecideArgs, res: &mut Resolver) -> Result<u8, CliError> {
    let p = parse_input(&a.eq, res)?;
    let d = DecisionConfig::default();
    let alphas = res.optional("alpha", a.alpha)?.map(|l| l.for_modes(p.num_vars())).transpose()?;
    let cfg = DecisionConfig {
        epsilon: res.value("epsilon", a.epsilon, d.epsilon)?,
        confidence: res.value("p", a.p, d.confidence)?,
        seed: res.value("seed", a.seed, d.seed)?,
        initial_t: res.value("initial-T", a.initial_t, d.initial_t)?,
        max_t: res.value("max-T", a.max_t, d.max_t)?,
        t_growth: res.value("t-growth", a.t_growth, d.t_growth)?,
        reference_cutoff: res.optional("reference-cutoff", a.reference_cutoff)?,
        initial_model_cutoff: res.value("initial-cutoff", a.initial_cutoff, d.initial_model_cutoff)?,
        max_model_cutoff: res.optional("max-cutoff", a.max_cutoff)?,
        alphas,
        ramp: res.value("ramp", a.ramp, d.ramp)?,
        trend_margin: res.value("trend-margin", a.trend_margin, d.trend_margin)?,
        tail_tol: res.value("tail-tol", a.tail_tol, d.tail_tol)?,
        gap_grid: res.value("gap-grid", a.gap_grid, d.gap_grid)?,
        flow_levels: res.value("levels", a.levels, d.flow_levels)?,
        propagator: res.value("propagator", a.propagator, d.propagator)?,
        conv_tol: res.optional("conv-tol", a.conv_tol)?,
    };
    let report = run_decision(&p, &cfg)?;
    let manifest = RunManifest::new("decide", res, Some(&a.eq.equation), Some(cfg.seed));
    emit_json(a.out.as_deref(), &manifest, &report)?;
    if let Some(path) = &a.trace {
        let mut w = sink(Some(path))?;
        report.write_trace_lines(&mut w).map_err(CliError::failure)?;
        w.flush()?;
    }
    Ok(report.verdict.exit_code() as u8)
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum Terminal {
    /// The extrapolated ground energy vanishes: a root lies in the basis.
    Zero,
    Positive,
}

#[derive(Serialize)]
struct OdeflowSummary {
    terminal: Terminal,
    extrapolated_e0: f64,
    extrapolation_error: f64,
    start_s: f64,
    final_s: f64,
    final_energies: Vec<f64>,
    checkpoints: Vec<(f64, f64)>,
    max_check_diff: f64,
    accepted_steps: usize,
    rejected_steps: usize,
    swapped_modes: Option<(usize, usize)>,
    levels: usize,
    convergence: Option<LevelConvergence>,
}

fn cmd_odeflow(a: OdeflowArgs, res: &mut Resolver) -> Result<u8, CliError> {
    let p = parse_input(&a.eq, res)?;
    nonconstant(&p)?;
    let ops = build_operators(&p, &a.basis, 24, res)?;
    let d = OdeFlowOptions::default();
    let use_symmetry = res.value("symmetry", a.symmetry, d.use_symmetry)?;
    let requested = res.value("levels", a.levels, d.levels)?;
    let dim = FlowSystem::new(&ops.hi, ops.hp.matrix(), ops.ramp, &ops.basis, use_symmetry).map_err(CliError::failure)?.dim();
    let levels = requested.clamp(1, dim);
    res.record("levels", &levels);
    let opts = OdeFlowOptions {
        levels,
        use_symmetry,
        s_margin: res.value("s-margin", a.s_margin, d.s_margin)?,
        coupling: res.value("coupling", a.coupling, d.coupling)?,
        local_tol: res.value("local-tol", a.local_tol, d.local_tol)?,
        drift_tol: res.value("drift-tol", a.drift_tol, d.drift_tol)?,
        gap_floor: res.value("gap-floor", a.gap_floor, d.gap_floor)?,
        ..d
    };
    let zero_tol = res.value("zero-tol", a.zero_tol, 1e-6)?;
    let result = integrate_flow(&ops.hi, ops.hp.matrix(), ops.ramp, &ops.basis, &opts).map_err(CliError::failure)?;
    let convergence = if a.convergence {
        Some(level_convergence(&ops.hi, ops.hp.matrix(), ops.ramp, &ops.basis, &opts).map_err(CliError::failure)?)
    } else {
        None
    };
    let manifest = RunManifest::new("odeflow", res, Some(&a.eq.equation), None);
    let mut w = sink(a.out.as_deref())?;
    result.write_csv(&mut w).map_err(CliError::failure)?;
    w.flush()?;
    drop(w);
    if let Some(path) = &a.out {
        manifest.write_beside(path)?;
    }
    let summary = OdeflowSummary {
        terminal: if result.extrapolated_e0.abs() <= zero_tol { Terminal::Zero } else { Terminal::Positive },
        extrapolated_e0: result.extrapolated_e0,
        extrapolation_error: result.extrapolation_error,
        start_s: result.start_s,
        final_s: result.final_state.s,
        final_energies: result.final_state.energies.clone(),
        checkpoints: result.checkpoints.clone(),
        max_check_diff: result.max_check_diff(),
        accepted_steps: result.accepted_steps,
        rejected_steps: result.rejected_steps,
        swapped_modes: result.swapped_modes,
        levels,
        convergence,
    };
    let body = WithManifest { manifest: &manifest, body: &summary };
    match (&a.summary, &a.out) {
        (Some(path), _) => {
            let mut w = sink(Some(path))?;
            write_json(&mut w, &body)?;
            w.flush()?;
        }
        (None, Some(_)) => write_json(io::stdout().lock(), &body)?,
        (None, None) => write_json(io::stderr().lock(), &body)?,
    }
    Ok(0)
}

#[derive(Serialize)]
struct OracleOutput {
    bounds: Vec<u64>,
    count: usize,
    solutions: Vec<Vec<u64>>,
}

fn cmd_oracle(a: OracleArgs, res: &mut Resolver) -> Result<u8, CliError> {
    let p = parse_input(&a.eq, res)?;
    let k = p.num_vars();
    let bound = res.value("bound", a.bound, 20u64)?;
    let bounds = match a.bounds {
        Some(b) if b.len() != k => return Err(CliError::Input(format!("{} bounds given for {k} variables", b.len()))),
        Some(b) => b,
        None => vec![bound; k],
    };
    res.record("bounds", &bounds);
    let volume_cap = res.value("volume-cap", a.volume_cap, 100_000_000u128)?;
    let solutions = p.brute_force_search(&bounds, volume_cap).map_err(|e| CliError::Input(e.to_string()))?;
    let manifest = RunManifest::new("oracle", res, Some(&a.eq.equation), None);
    emit_json(a.out.as_deref(), &manifest, &OracleOutput { bounds, count: solutions.len(), solutions })?;
    Ok(0)
}
