//! Command-line front end: argument parsing, configuration files, result
//! caching, sweeps, and stable JSON/CSV artifact emission.
//!
//! Every artifact is a single document carrying the resolved configuration,
//! the results with their error estimates, the seed and a schema version,
//! and no timestamps: identical configurations must produce byte-identical
//! artifacts whatever the worker count. Floats are written with 17
//! significant digits (see [`crate::jsonio`]), which round-trips f64
//! exactly.
//!
//! Exit codes: 0 success, 2 validation failure (including unknown flags),
//! 3 numerical non-convergence, 4 a lemma margin below the gate.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{assemble_t, matrix_path_vev, FockSpace};
use crate::jsonio::{format_float, to_json_string};
use crate::lemma_lab::{lemma_suite, FormBoundReport};
use crate::modes::{
    binding_integral_closed, build_mode_grid, coupling_constants, default_ir_shift,
    ConstantsReport, Cutoff, ModelParams,
};
use crate::quad::{integrate_mc, integrate_reduced_grid};
use crate::spectral::{
    atom_energy, binding_expansion, lanczos_ground, rayleigh_quotient, refine_ground_dd,
    self_energy_expansion, trial_state_selfenergy, EnergyBudgets, EnergyReport,
};
use crate::wick::{builtin_vevs, IntegrandExpr};

/// Artifact schema version, embedded in every JSON document.
pub const SCHEMA: &str = "nelson/1";

/// Lemma margins below this gate fail the `lemmas` command with exit 4.
pub const MARGIN_GATE: f64 = -1e-8;

/// Exact sweep CSV header; columns never move or change name.
pub const CSV_HEADER: &str = "e,z,lambda,n_radial,n_angular,n_max,E_at,a4,a4_err,b1,b1_err,\
b2,b2_err,b3,b3_err,E0_expansion,E0_lanczos,E0_trial,E_bin_expansion,residual_order_fit,seed";

// ---------------------------------------------------------------------------
// Run configuration

/// The dispatched subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Coeffs,
    Selfenergy,
    Binding,
    Vev,
    Lemmas,
    Sweep,
}

/// Evaluation path for a single expansion coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VevMethod {
    /// deterministic tensor-product quadrature of the two-photon reduction
    Grid,
    /// importance-sampled Monte Carlo on the full contraction integral
    Mc,
    /// operator products on a truncated occupation basis
    Matrix,
}

impl std::fmt::Display for VevMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str(match self {
            VevMethod::Grid => "grid",
            VevMethod::Mc => "mc",
            VevMethod::Matrix => "matrix",
        })
    }
}

/// Occupation-basis resolution: mode-grid node counts and the photon cap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisGrid {
    pub n_radial: usize,
    pub n_angular: usize,
    pub n_max: u32,
}

impl Default for BasisGrid {
    fn default() -> Self {
        BasisGrid { n_radial: 3, n_angular: 4, n_max: 3 }
    }
}

/// Deterministic-quadrature resolution and the Monte Carlo sample budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunBudgets {
    /// radial nodes of the two-photon grid quadrature
    pub quad_radial: usize,
    /// angular nodes of the grid quadrature
    pub quad_angular: usize,
    /// Monte Carlo samples per coefficient
    pub mc_budget: u64,
}

impl Default for RunBudgets {
    fn default() -> Self {
        RunBudgets { quad_radial: 24, quad_angular: 16, mc_budget: 200_000 }
    }
}

/// One fully resolved run. Every field has a default, a configuration file
/// (`--config`) supplies baseline values, explicit flags override both, and
/// the resulting configuration is echoed verbatim into the artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: Command,
    pub params: ModelParams,
    pub grid: BasisGrid,
    pub budgets: RunBudgets,
    pub seed: u64,
    /// artifact destination; "-" writes to standard output
    pub out_path: String,
    /// directory for cached coefficient evaluations; null disables caching
    pub cache_dir: Option<String>,
    /// sweep-only coupling grid; a missing grid sweeps the single params.e
    pub sweep_e: Option<Vec<f64>>,
    /// sweep-only cutoff grid; entries must be finite
    pub sweep_lambda: Option<Vec<f64>>,
    /// vev-only coefficient name from the built-in table
    pub vev_name: String,
    /// vev-only evaluation path
    pub vev_method: VevMethod,
}

fn default_params() -> ModelParams {
    ModelParams::new(0.1, 1.0, Cutoff::Finite(1.0)).expect("default parameters are valid")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::Coeffs,
            params: default_params(),
            grid: BasisGrid::default(),
            budgets: RunBudgets::default(),
            seed: 1,
            out_path: "-".into(),
            cache_dir: None,
            sweep_e: None,
            sweep_lambda: None,
            vev_name: "a4".into(),
            vev_method: VevMethod::Mc,
        }
    }
}

/// One coefficient evaluation as stored in artifacts and cache entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VevRecord {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
    pub n_evals: u64,
    pub method: VevMethod,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Flag grammar

#[derive(Parser, Debug)]
#[command(
    name = "nelson",
    version,
    about = "Numerical laboratory for the Nelson model: self-energy and \
             binding-energy expansion, coefficient integrals, and operator \
             inequality checks on truncated Fock bases",
    after_help = "Examples:\n  \
        nelson binding --e 0.1 --z 1 --lambda inf\n  \
        nelson coeffs --lambda 1\n  \
        nelson vev --name a4 --method mc --budget 1000000 --seed 7\n  \
        nelson sweep --e 0.05,0.1,0.2,0.3 --lambda 1 --out sweep.csv"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand, Debug)]
enum CliCommand {
    /// Coupling-constant integrals and the form-factor norm
    Coeffs(CommonArgs),
    /// Self-energy expansion coefficients with matrix-path cross-checks
    Selfenergy(CommonArgs),
    /// Binding energy through the radiative-correction integral
    Binding(CommonArgs),
    /// One expansion coefficient by one evaluation path
    Vev {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        flags: VevFlags,
    },
    /// Operator-inequality suite on a truncated basis
    Lemmas(CommonArgs),
    /// CSV sweep over coupling and cutoff value grids
    Sweep(CommonArgs),
}

#[derive(clap::Args, Debug, Default)]
struct CommonArgs {
    /// JSON run-configuration file; explicit flags override its fields
    #[arg(long, value_name = "PATH")]
    config: Option<String>,
    /// coupling charge e in [0, 1); comma-separated list under sweep
    #[arg(long, value_name = "E")]
    e: Option<String>,
    /// nuclear charge Z >= 0
    #[arg(long, value_name = "Z")]
    z: Option<f64>,
    /// ultraviolet cutoff: a positive number or "inf"; comma-separated list
    /// under sweep
    #[arg(long, value_name = "CUTOFF")]
    lambda: Option<String>,
    /// infrared shift added to every photon frequency; defaults to e^7
    #[arg(long, value_name = "EPS")]
    ir_shift: Option<f64>,
    /// radial node count of the occupation-basis mode grid
    #[arg(long, value_name = "N")]
    n_radial: Option<usize>,
    /// angular node count of the mode grid
    #[arg(long, value_name = "N")]
    n_angular: Option<usize>,
    /// photon-number cap of the occupation basis
    #[arg(long, value_name = "N")]
    n_max: Option<u32>,
    /// radial node count of the deterministic coefficient quadrature
    #[arg(long, value_name = "N")]
    quad_radial: Option<usize>,
    /// angular node count of the deterministic coefficient quadrature
    #[arg(long, value_name = "N")]
    quad_angular: Option<usize>,
    /// Monte Carlo sample budget
    #[arg(long, value_name = "N")]
    budget: Option<u64>,
    /// RNG seed; takes precedence over NELSON_SEED
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// artifact path; "-" writes to standard output
    #[arg(long, value_name = "PATH")]
    out: Option<String>,
    /// directory for cached coefficient evaluations
    #[arg(long, value_name = "DIR")]
    cache_dir: Option<String>,
}

#[derive(clap::Args, Debug, Default)]
struct VevFlags {
    /// coefficient name from the built-in table: a4, b1, b2 or b3
    #[arg(long, value_name = "NAME")]
    name: Option<String>,
    /// evaluation path: grid, mc or matrix
    #[arg(long, value_name = "METHOD")]
    method: Option<String>,
}

// ---------------------------------------------------------------------------
// Entry point

/// Parses argv, dispatches, and returns the process exit code. The first
/// element of `argv` is the program name, as in `std::env::args`.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            // clap routes usage errors to stderr with code 2 and the
            // help/version displays to stdout with code 0.
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

/// Exit-code mapping of the crate error variants: everything that rejects
/// the input is 2, a numerical method exhausting its budget is 3, a lemma
/// margin below the gate is 4.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NoConvergence { .. } | Error::NonFiniteSample { .. } => 3,
        Error::LemmaMargin { .. } => 4,
        _ => 2,
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    init_workers()?;
    let (command, common, vev) = match &cli.command {
        CliCommand::Coeffs(c) => (Command::Coeffs, c, None),
        CliCommand::Selfenergy(c) => (Command::Selfenergy, c, None),
        CliCommand::Binding(c) => (Command::Binding, c, None),
        CliCommand::Vev { common, flags } => (Command::Vev, common, Some(flags)),
        CliCommand::Lemmas(c) => (Command::Lemmas, c, None),
        CliCommand::Sweep(c) => (Command::Sweep, c, None),
    };
    let config = resolve_config(command, common, vev)?;
    // Configuration files bypass the parameter constructor, so the merged
    // values go through it once before any computation.
    let params = ModelParams::with_ir_shift(
        config.params.e,
        config.params.z,
        config.params.lambda,
        config.params.ir_shift,
    )?;
    match command {
        Command::Coeffs => cmd_coeffs(&config, &params),
        Command::Selfenergy => cmd_selfenergy(&config, &params),
        Command::Binding => cmd_binding(&config, &params),
        Command::Vev => cmd_vev(&config, &params),
        Command::Lemmas => cmd_lemmas(&config, &params),
        Command::Sweep => cmd_sweep(&config),
    }
}

/// Applies NELSON_WORKERS to the global rayon pool. All parallel reductions
/// in the crate are worker-count independent, so a pool that was already
/// built (as happens when tests call [`run`] repeatedly in one process) is
/// left alone.
fn init_workers() -> Result<()> {
    let Ok(raw) = std::env::var("NELSON_WORKERS") else {
        return Ok(());
    };
    let workers: usize = raw.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
        Error::InvalidParams(format!("NELSON_WORKERS must be a positive integer, got {raw:?}"))
    })?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    Ok(())
}

/// NELSON_SEED as the environment-level default seed, or None when unset.
fn env_seed() -> Result<Option<u64>> {
    match std::env::var("NELSON_SEED") {
        Ok(raw) => raw.trim().parse::<u64>().map(Some).map_err(|_| {
            Error::InvalidParams(format!(
                "NELSON_SEED must be an unsigned integer, got {raw:?}"
            ))
        }),
        Err(_) => Ok(None),
    }
}

// ---------------------------------------------------------------------------
// Flag merging

fn parse_scalar(raw: &str, what: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidParams(format!("{what} expects a number, got {raw:?}")))
}

fn parse_cutoff(raw: &str) -> Result<Cutoff> {
    let trimmed = raw.trim();
    if trimmed == "inf" {
        return Ok(Cutoff::Infinite);
    }
    Ok(Cutoff::Finite(parse_scalar(trimmed, "lambda")?))
}

/// Comma-separated sweep grid; the empty string is the empty grid.
fn parse_list(raw: &str, what: &str) -> Result<Vec<f64>> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed.split(',').map(|s| parse_scalar(s, what)).collect()
}

fn parse_method(raw: &str) -> Result<VevMethod> {
    match raw.trim() {
        "grid" => Ok(VevMethod::Grid),
        "mc" => Ok(VevMethod::Mc),
        "matrix" => Ok(VevMethod::Matrix),
        other => Err(Error::InvalidParams(format!(
            "unknown method {other:?}; expected grid, mc or matrix"
        ))),
    }
}

/// Merges defaults, the optional configuration file, the environment seed
/// and explicit flags into one [`RunConfig`]. Seed precedence: flag, then
/// configuration file, then NELSON_SEED, then the built-in default.
fn resolve_config(
    command: Command,
    args: &CommonArgs,
    vev: Option<&VevFlags>,
) -> Result<RunConfig> {
    let from_file = args.config.is_some();
    let mut config = match &args.config {
        Some(path) => serde_json::from_str::<RunConfig>(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    config.command = command;

    // The infrared shift tracks e^7 unless pinned: a stored value equal to
    // the current coupling's seventh power is treated as derived and moves
    // with the coupling.
    let tracking_default = config.params.ir_shift == default_ir_shift(config.params.e);

    match command {
        Command::Sweep => {
            if let Some(raw) = &args.e {
                config.sweep_e = Some(parse_list(raw, "e")?);
            }
            if let Some(raw) = &args.lambda {
                config.sweep_lambda = Some(parse_list(raw, "lambda")?);
            }
        }
        _ => {
            if let Some(raw) = &args.e {
                config.params.e = parse_scalar(raw, "e")?;
            }
            if let Some(raw) = &args.lambda {
                config.params.lambda = parse_cutoff(raw)?;
            }
        }
    }
    if let Some(z) = args.z {
        config.params.z = z;
    }
    if let Some(eps) = args.ir_shift {
        config.params.ir_shift = eps;
    } else if tracking_default {
        config.params.ir_shift = default_ir_shift(config.params.e);
    }

    if let Some(v) = args.n_radial {
        config.grid.n_radial = v;
    }
    if let Some(v) = args.n_angular {
        config.grid.n_angular = v;
    }
    if let Some(v) = args.n_max {
        config.grid.n_max = v;
    }
    if let Some(v) = args.quad_radial {
        config.budgets.quad_radial = v;
    }
    if let Some(v) = args.quad_angular {
        config.budgets.quad_angular = v;
    }
    if let Some(v) = args.budget {
        config.budgets.mc_budget = v;
    }
    config.seed = match (args.seed, from_file) {
        (Some(seed), _) => seed,
        (None, true) => config.seed,
        (None, false) => env_seed()?.unwrap_or(config.seed),
    };
    if let Some(out) = &args.out {
        config.out_path = out.clone();
    }
    if let Some(dir) = &args.cache_dir {
        config.cache_dir = Some(dir.clone());
    }
    if let Some(flags) = vev {
        if let Some(name) = &flags.name {
            config.vev_name = name.clone();
        }
        if let Some(method) = &flags.method {
            config.vev_method = parse_method(method)?;
        }
    }
    Ok(config)
}

// ---------------------------------------------------------------------------
// Artifact emission

#[derive(Serialize)]
struct CoeffsArtifact<'a> {
    schema: &'static str,
    config: &'a RunConfig,
    constants: ConstantsReport,
}

#[derive(Serialize)]
struct ReportArtifact<'a> {
    schema: &'static str,
    config: &'a RunConfig,
    report: EnergyReport,
}

#[derive(Serialize)]
struct VevArtifact<'a> {
    schema: &'static str,
    config: &'a RunConfig,
    vev: &'a VevRecord,
}

#[derive(Serialize)]
struct LemmasArtifact<'a> {
    schema: &'static str,
    config: &'a RunConfig,
    reports: &'a [FormBoundReport],
}

fn write_out(out_path: &str, text: &str) -> Result<()> {
    if out_path == "-" {
        use std::io::Write;
        std::io::stdout().write_all(text.as_bytes())?;
    } else {
        fs::write(out_path, text)?;
    }
    Ok(())
}

fn emit<T: Serialize>(config: &RunConfig, artifact: &T) -> Result<()> {
    write_out(&config.out_path, &to_json_string(artifact)?)
}

// ---------------------------------------------------------------------------
// Commands

fn basis_space(config: &RunConfig, params: &ModelParams) -> Result<FockSpace> {
    let grid = build_mode_grid(config.grid.n_radial, config.grid.n_angular, params)?;
    FockSpace::new(grid, config.grid.n_max, params)
}

fn cmd_coeffs(config: &RunConfig, params: &ModelParams) -> Result<()> {
    let constants = coupling_constants(params)?;
    emit(config, &CoeffsArtifact { schema: SCHEMA, config, constants })
}

fn cmd_binding(config: &RunConfig, params: &ModelParams) -> Result<()> {
    let report = binding_expansion(params)?;
    emit(config, &ReportArtifact { schema: SCHEMA, config, report })
}

fn cmd_selfenergy(config: &RunConfig, params: &ModelParams) -> Result<()> {
    let budgets = EnergyBudgets {
        n_radial: config.budgets.quad_radial,
        n_angular: config.budgets.quad_angular,
        mc_budget: config.budgets.mc_budget,
        basis: Some((config.grid.n_radial, config.grid.n_angular, config.grid.n_max)),
        seed: config.seed,
    };
    let report = self_energy_expansion(params, &budgets)?;
    emit(config, &ReportArtifact { schema: SCHEMA, config, report })
}

fn cmd_vev(config: &RunConfig, params: &ModelParams) -> Result<()> {
    let vevs = builtin_vevs();
    let Some(opstring) = vevs.get(&config.vev_name) else {
        return Err(Error::InvalidParams(format!(
            "unknown coefficient {:?}; the built-in table has a4, b1, b2, b3",
            config.vev_name
        )));
    };
    let record = cached_vev(config, params, &config.vev_name, config.vev_method, opstring)?;
    emit(config, &VevArtifact { schema: SCHEMA, config, vev: &record })
}

fn cmd_lemmas(config: &RunConfig, params: &ModelParams) -> Result<()> {
    let space = basis_space(config, params)?;
    let reports = lemma_suite(&space, config.seed)?;
    // The artifact is written before the gate so a failing margin still
    // leaves the full evidence on disk.
    emit(config, &LemmasArtifact { schema: SCHEMA, config, reports: &reports })?;
    for report in &reports {
        if report.margin < MARGIN_GATE {
            return Err(Error::LemmaMargin {
                lemma: report.lemma_id.clone(),
                margin: report.margin,
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Coefficient evaluation and caching

fn compute_vev(
    config: &RunConfig,
    params: &ModelParams,
    name: &str,
    method: VevMethod,
    opstring: &crate::wick::OpString,
) -> Result<VevRecord> {
    let record = |value: f64, stderr: f64, n_evals: u64| VevRecord {
        name: name.into(),
        value,
        stderr,
        n_evals,
        method,
        seed: config.seed,
    };
    match method {
        VevMethod::Grid => {
            let lambda = params.lambda.finite()?;
            let expr = IntegrandExpr::from_string(opstring, params)?;
            let q = integrate_reduced_grid(
                &expr,
                lambda,
                config.budgets.quad_radial,
                config.budgets.quad_angular,
            )?;
            Ok(record(q.value, q.stderr, q.n_evals))
        }
        VevMethod::Mc => {
            let expr = IntegrandExpr::from_string(opstring, params)?;
            let q = integrate_mc(&expr, params, config.budgets.mc_budget, config.seed)?;
            Ok(record(q.value, q.stderr, q.n_evals))
        }
        VevMethod::Matrix => {
            let space = basis_space(config, params)?;
            let value = matrix_path_vev(&space, opstring)?;
            Ok(record(value, 0.0, space.dim() as u64))
        }
    }
}

/// Cache filename for one coefficient evaluation, keyed by grid, cutoff,
/// infrared shift, budget and seed. The float keys enter as exact bit
/// patterns so distinct cutoffs or shifts can never collide.
fn cache_file(
    config: &RunConfig,
    params: &ModelParams,
    name: &str,
    method: VevMethod,
) -> Option<PathBuf> {
    let dir = config.cache_dir.as_ref()?;
    let lambda_bits = match params.lambda {
        Cutoff::Finite(l) => l.to_bits(),
        Cutoff::Infinite => u64::MAX,
    };
    let file = format!(
        "vev-{name}-{method}-r{}-a{}-n{}-L{lambda_bits:016x}-E{:016x}-b{}-s{}.json",
        config.grid.n_radial,
        config.grid.n_angular,
        config.grid.n_max,
        params.ir_shift.to_bits(),
        config.budgets.mc_budget,
        config.seed,
    );
    Some(Path::new(dir).join(file))
}

/// Looks a coefficient up in the cache, recomputing on a miss and storing
/// the result; an unreadable or mislabeled entry is recomputed with a
/// warning. Entries hold full 17-digit precision, so cached and fresh runs
/// produce identical value fields.
fn cached_vev(
    config: &RunConfig,
    params: &ModelParams,
    name: &str,
    method: VevMethod,
    opstring: &crate::wick::OpString,
) -> Result<VevRecord> {
    let Some(path) = cache_file(config, params, name, method) else {
        return compute_vev(config, params, name, method, opstring);
    };
    match fs::read_to_string(&path) {
        Ok(text) => match serde_json::from_str::<VevRecord>(&text) {
            Ok(record) if record.name == name && record.method == method => return Ok(record),
            _ => eprintln!(
                "warning: cache entry {} is corrupt; recomputing",
                path.display()
            ),
        },
        Err(err) if err.kind() == std::io::ErrorKind::NotFound => {}
        Err(err) => eprintln!(
            "warning: cache entry {} is unreadable ({err}); recomputing",
            path.display()
        ),
    }
    let record = compute_vev(config, params, name, method, opstring)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, to_json_string(&record)?)?;
    Ok(record)
}

// ---------------------------------------------------------------------------
// Sweeps

fn cmd_sweep(config: &RunConfig) -> Result<()> {
    let es: Vec<f64> = match &config.sweep_e {
        Some(grid) => grid.clone(),
        None => vec![config.params.e],
    };
    let lambdas: Vec<f64> = match &config.sweep_lambda {
        Some(grid) => grid.clone(),
        None => vec![config.params.lambda.finite()?],
    };
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for &lambda in &lambdas {
        for &e in &es {
            csv.push_str(&sweep_row(config, e, lambda)?);
            csv.push('\n');
        }
    }
    write_out(&config.out_path, &csv)
}

/// One sweep row: same-basis matrix-path coefficients (deterministic, so
/// the error columns are exactly zero), the truncated-basis ground energy
/// against its expansion, and the closed-form binding energy. The residual
/// column holds |E0_lanczos - E0_expansion| for the row, the quantity whose
/// log-log slope against e measures the first omitted expansion order.
fn sweep_row(config: &RunConfig, e: f64, lambda: f64) -> Result<String> {
    let tracking_default = config.params.ir_shift == default_ir_shift(config.params.e);
    let ir_shift = if tracking_default { default_ir_shift(e) } else { config.params.ir_shift };
    let params = ModelParams::with_ir_shift(e, config.params.z, Cutoff::Finite(lambda), ir_shift)?;
    let space = basis_space(config, &params)?;

    let vevs = builtin_vevs();
    let mut coeff: BTreeMap<&str, VevRecord> = BTreeMap::new();
    for name in ["a4", "b1", "b2", "b3"] {
        let record = cached_vev(config, &params, name, VevMethod::Matrix, &vevs[name])?;
        coeff.insert(name, record);
    }
    let e4 = e.powi(4);
    let e6 = e.powi(6);
    let e0_expansion = -e4 * coeff["a4"].value - 4.0 * e6 * coeff["b1"].value
        - 4.0 * e6 * coeff["b2"].value
        + 2.0 * e6 * coeff["b3"].value;

    // The trial state has 1-, 2- and 3-photon components, so its column
    // only exists for bases that reach the three-photon sector. At e = 0
    // the interaction vanishes, the vacuum is an exact eigenstate at energy
    // zero, and every spectral column is exactly zero.
    let has_trial = config.grid.n_max >= 3;
    let (e0_lanczos, e0_trial) = if e == 0.0 {
        (0.0, has_trial.then_some(0.0))
    } else {
        let t = assemble_t(&space, e);
        let (_, vector) = lanczos_ground(&t, 1e-11, 600, config.seed)?;
        let ground = refine_ground_dd(&t, &vector).to_f64();
        let trial = if has_trial {
            Some(rayleigh_quotient(&t, &trial_state_selfenergy(&space, e)?))
        } else {
            None
        };
        (ground, trial)
    };

    let e_at = atom_energy(e, params.z);
    let e_bin = -e_at * (1.0 + e * e * binding_integral_closed(&params.lambda));
    let residual = (e0_lanczos - e0_expansion).abs();

    let cells = [
        format_float(e),
        format_float(params.z),
        format_float(lambda),
        config.grid.n_radial.to_string(),
        config.grid.n_angular.to_string(),
        config.grid.n_max.to_string(),
        format_float(e_at),
        format_float(coeff["a4"].value),
        format_float(coeff["a4"].stderr),
        format_float(coeff["b1"].value),
        format_float(coeff["b1"].stderr),
        format_float(coeff["b2"].value),
        format_float(coeff["b2"].stderr),
        format_float(coeff["b3"].value),
        format_float(coeff["b3"].stderr),
        format_float(e0_expansion),
        format_float(e0_lanczos),
        e0_trial.map(format_float).unwrap_or_default(),
        format_float(e_bin),
        format_float(residual),
        config.seed.to_string(),
    ];
    Ok(cells.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args() -> CommonArgs {
        CommonArgs::default()
    }

    #[test]
    fn defaults_fill_every_field() {
        let config = resolve_config(Command::Coeffs, &args(), None).unwrap();
        assert_eq!(config.grid, BasisGrid { n_radial: 3, n_angular: 4, n_max: 3 });
        assert_eq!(config.budgets.mc_budget, 200_000);
        assert_eq!(config.out_path, "-");
        assert_eq!(config.vev_name, "a4");
        assert!(config.cache_dir.is_none());
        assert_eq!(config.params.e, 0.1);
        assert_eq!(config.params.lambda, Cutoff::Finite(1.0));
    }

    #[test]
    fn ir_shift_tracks_the_coupling_unless_pinned() {
        let mut a = args();
        a.e = Some("0.2".into());
        let config = resolve_config(Command::Binding, &a, None).unwrap();
        assert_eq!(config.params.ir_shift, default_ir_shift(0.2));

        a.ir_shift = Some(1e-9);
        let pinned = resolve_config(Command::Binding, &a, None).unwrap();
        assert_eq!(pinned.params.ir_shift, 1e-9);
    }

    #[test]
    fn sweep_flags_become_value_grids() {
        let mut a = args();
        a.e = Some("0.05, 0.1".into());
        a.lambda = Some("1,10".into());
        let config = resolve_config(Command::Sweep, &a, None).unwrap();
        assert_eq!(config.sweep_e, Some(vec![0.05, 0.1]));
        assert_eq!(config.sweep_lambda, Some(vec![1.0, 10.0]));
        // the empty string is the empty grid
        a.e = Some("".into());
        let empty = resolve_config(Command::Sweep, &a, None).unwrap();
        assert_eq!(empty.sweep_e, Some(vec![]));
    }

    #[test]
    fn cutoff_strings_parse_and_garbage_is_rejected() {
        assert_eq!(parse_cutoff("inf").unwrap(), Cutoff::Infinite);
        assert_eq!(parse_cutoff(" 2.5 ").unwrap(), Cutoff::Finite(2.5));
        assert!(parse_cutoff("soon").is_err());
        assert!(parse_method("nope").is_err());
        assert!(parse_list("1,,2", "e").is_err());
    }

    #[test]
    fn config_round_trips_through_artifact_json() {
        let mut config = resolve_config(Command::Lemmas, &args(), None).unwrap();
        config.cache_dir = Some("cache".into());
        config.sweep_lambda = Some(vec![1.0, 10.0]);
        let text = to_json_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn exit_codes_follow_the_variant_classes() {
        assert_eq!(exit_code(&Error::InvalidParams("x".into())), 2);
        assert_eq!(exit_code(&Error::SingularInput), 2);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 2);
        assert_eq!(
            exit_code(&Error::NoConvergence { what: "x".into(), value: 0.0, err: 1.0 }),
            3
        );
        assert_eq!(exit_code(&Error::NonFiniteSample { point: vec![] }), 3);
        assert_eq!(exit_code(&Error::LemmaMargin { lemma: "she1".into(), margin: -1.0 }), 4);
    }

    #[test]
    fn run_rejects_bad_input_with_usage_code() {
        assert_eq!(run(["nelson", "coeffs", "--bogus"]), 2);
        assert_eq!(run(["nelson", "noncommand"]), 2);
        assert_eq!(run(["nelson", "binding", "--e", "2", "--out", "/dev/null"]), 2);
        assert_eq!(run(["nelson", "coeffs", "--lambda", "0", "--out", "/dev/null"]), 2);
        assert_eq!(run(["nelson", "vev", "--method", "nope", "--out", "/dev/null"]), 2);
        assert_eq!(run(["nelson", "selfenergy", "--lambda", "inf", "--out", "/dev/null"]), 2);
        assert_eq!(run(["nelson", "lemmas", "--lambda", "inf", "--out", "/dev/null"]), 2);
        assert_eq!(run(["nelson", "--help"]), 0);
    }

    #[test]
    fn empty_sweep_emits_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sweep.csv");
        let code = run([
            "nelson",
            "sweep",
            "--e",
            "",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn sweep_rows_cover_the_grid_and_zero_coupling_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sweep.csv");
        let code = run([
            "nelson",
            "sweep",
            "--e",
            "0,0.1",
            "--lambda",
            "1",
            "--n-radial",
            "2",
            "--n-angular",
            "2",
            "--n-max",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let text = fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CSV_HEADER);
        let zero_row: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(zero_row.len(), 21);
        let zero = format_float(0.0);
        // e, E_at, E0_expansion, E0_lanczos, E_bin, residual all exactly zero
        for idx in [0, 6, 15, 16, 18, 19] {
            assert_eq!(zero_row[idx], zero, "column {idx} of the e = 0 row");
        }
        // the trial column is empty below the three-photon cap
        assert_eq!(zero_row[17], "");
        // a4 is coupling-independent up to the infrared shift, so both rows
        // carry a nonzero matrix value
        assert!(zero_row[7].parse::<f64>().unwrap() > 0.0);
        let row: Vec<&str> = lines[2].split(',').collect();
        assert!(row[16].parse::<f64>().unwrap() < 0.0, "E0_lanczos at e = 0.1");
    }

    #[test]
    fn vev_cache_reuses_and_survives_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache");
        let out = dir.path().join("vev.json");
        let argv = [
            "nelson",
            "vev",
            "--name",
            "a4",
            "--method",
            "matrix",
            "--n-radial",
            "2",
            "--n-angular",
            "2",
            "--n-max",
            "2",
            "--cache-dir",
            cache.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        assert_eq!(run(argv), 0);
        let fresh = fs::read(&out).unwrap();
        let entries: Vec<_> = fs::read_dir(&cache).unwrap().collect();
        assert_eq!(entries.len(), 1, "one cache entry per key");

        assert_eq!(run(argv), 0);
        assert_eq!(fs::read(&out).unwrap(), fresh, "cached run must match byte for byte");

        // corruption: recompute with a warning and the same values
        let entry = entries[0].as_ref().unwrap().path();
        fs::write(&entry, "{ not json").unwrap();
        assert_eq!(run(argv), 0);
        assert_eq!(fs::read(&out).unwrap(), fresh);
        // the recomputed entry is written back
        let restored: VevRecord =
            serde_json::from_str(&fs::read_to_string(&entry).unwrap()).unwrap();
        assert_eq!(restored.name, "a4");
    }

    #[test]
    fn vev_runs_are_deterministic_for_fixed_seed() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("vev.json");
        let argv = [
            "nelson",
            "vev",
            "--name",
            "b1",
            "--method",
            "mc",
            "--budget",
            "10000",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ];
        assert_eq!(run(argv), 0);
        let first = fs::read(&out).unwrap();
        assert_eq!(run(argv), 0);
        assert_eq!(fs::read(&out).unwrap(), first);
    }

    #[test]
    fn artifact_config_reparses_and_revalidates() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("coeffs.json");
        let code = run(["nelson", "coeffs", "--lambda", "1", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
        let text = fs::read_to_string(&out).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["schema"], "nelson/1");
        let config: RunConfig = serde_json::from_value(value["config"].clone()).unwrap();
        assert_eq!(config.command, Command::Coeffs);
        ModelParams::with_ir_shift(
            config.params.e,
            config.params.z,
            config.params.lambda,
            config.params.ir_shift,
        )
        .unwrap();
        // the artifact can seed a new run as a configuration file
        let cfg_path = dir.path().join("config.json");
        fs::write(&cfg_path, to_json_string(&config).unwrap()).unwrap();
        let out2 = dir.path().join("again.json");
        let code = run([
            "nelson",
            "coeffs",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out2.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }

    #[test]
    fn lemmas_command_writes_reports_and_passes_the_gate() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("lemmas.json");
        let code = run([
            "nelson",
            "lemmas",
            "--n-radial",
            "2",
            "--n-angular",
            "2",
            "--n-max",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let value: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        let reports = value["reports"].as_array().unwrap();
        assert_eq!(reports.len(), 8);
        for report in reports {
            assert!(report["margin"].as_f64().unwrap() >= MARGIN_GATE);
        }
    }
}
