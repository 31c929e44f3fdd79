//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed verification or runtime failure, 2 usage errors
//! (bad flags, unknown formats, invalid parameters).
//!
//! `--config FILE` reads `key = value` lines (long flag names without the leading
//! dashes, `_` accepted for `-`, `#` comments allowed). They are inserted before the
//! command-line flags, so flags given on the command line win.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::constraints::{hull_violation, ConvexSet};
use crate::density::ScalarDensity;
use crate::energy::{EnergyModel, Fidelity};
use crate::error::{Error, Result};
use crate::io::{read_image, write_image};
use crate::solver::{minimize, Init, SolverConfig};
use crate::tv::{convergence_experiment, ParamFamily, TvProblem, TvVariant};
use crate::verify::run_suite;

#[derive(Parser, Debug)]
#[command(name = "lingrow", version, about = "Linear-growth variational denoising of multichannel images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Minimize a smooth energy and write the result.
    #[command(args_override_self = true)]
    Denoise(DenoiseArgs),
    /// Compare smooth solutions along a μ- or ε-sequence with the TV solution (CSV).
    #[command(name = "compare-tv", args_override_self = true)]
    CompareTv(CompareArgs),
    /// Run the built-in property suite.
    #[command(args_override_self = true)]
    Verify(VerifyArgs),
    /// Denoise and report how far the result leaves a convex set.
    #[command(args_override_self = true)]
    Hullcheck(HullArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// File of `key = value` lines supplying defaults for the other flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Iso,
    Aniso,
    Blend,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DensityKind {
    /// Φ_μ
    Phimu,
    /// (μ-1)Φ_μ, recession slope 1
    Scaled,
    /// √(ε²+t²) - ε
    Phuber,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum InitKind {
    Data,
    Zero,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "iso")]
    model: ModelKind,
    #[arg(long, value_enum, default_value = "phimu")]
    density: DensityKind,
    /// Exponent μ for phimu/scaled.
    #[arg(long, default_value_t = 1.5)]
    mu: f64,
    /// ε for phuber.
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// ε of the smoothed spectral density (aniso).
    #[arg(long, default_value_t = 1e-3)]
    smoothing_eps: f64,
    /// Fidelity weight; intensities are normalized to [0, 1].
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Weight of the (δ/2)|∇u|² term.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// quad | phuber:E | power:P
    #[arg(long, default_value = "quad")]
    fidelity: String,
    /// Spatial weight η ∈ [0, 1] of the primary density (blend).
    #[arg(long, value_name = "PATH")]
    blend_mask: Option<PathBuf>,
    /// μ of the secondary Φ_μ density (blend).
    #[arg(long, default_value_t = 2.0)]
    mu2: f64,
}

#[derive(Args, Debug)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    #[arg(long, default_value_t = 20_000)]
    max_iters: usize,
    #[arg(long)]
    energy_tol: Option<f64>,
    #[arg(long, value_enum, default_value = "data")]
    init: InitKind,
    /// Descending δ values for continuation, e.g. `1e-2,1e-3,0`.
    #[arg(long, value_name = "LIST")]
    delta_schedule: Option<String>,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Also write the JSON report to this file.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("sweep").required(true).args(["mu_list", "eps_list"])))]
struct CompareArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = ["frobenius", "nuclear"], default_value = "frobenius")]
    variant: String,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-6)]
    gap_tol: f64,
    #[arg(long, default_value_t = 200_000)]
    tv_max_iters: usize,
    /// Increasing μ values for the (μ-1)Φ_μ family, e.g. `4,8,16`.
    #[arg(long, value_name = "LIST")]
    mu_list: Option<String>,
    /// Decreasing ε values for the pseudo-Huber family, e.g. `0.5,0.1,0.02`.
    #[arg(long, value_name = "LIST")]
    eps_list: Option<String>,
    /// ε of the smoothed spectral density used with the nuclear variant.
    #[arg(long, default_value_t = 1e-6)]
    smoothing_eps: f64,
    #[arg(long, default_value_t = 1e-7)]
    grad_tol: f64,
    #[arg(long, default_value_t = 20_000)]
    max_iters: usize,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt the named check (smoke test of the suite itself).
    #[arg(long = "break", value_name = "CHECK", hide = true)]
    sabotage: Option<String>,
    /// Also write the JSON report to this file.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args, Debug)]
struct HullArgs {
    #[arg(long)]
    input: PathBuf,
    /// box:lo,hi | ball:c1,...,cN,r | psd:m,alpha
    #[arg(long)]
    set: String,
    /// Write the denoised image here as well.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    config: ConfigArg,
}

/// Run the command line `args` (including the program name) and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => return report_error(&e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Denoise(a) => denoise(a),
        Command::CompareTv(a) => compare_tv(a),
        Command::Verify(a) => verify(a),
        Command::Hullcheck(a) => hullcheck(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &Error) -> i32 {
    eprintln!("lingrow: {e}");
    exit_code(e)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Parameter(_) | Error::Format { .. } | Error::NonSmooth(_) => 2,
        _ => 1,
    }
}

/// Replace `--config FILE` by the file's flags, placed right after the subcommand so
/// later command-line occurrences override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            let path = iter
                .next()
                .ok_or_else(|| Error::Usage("--config needs a file argument".into()))?;
            config = Some(PathBuf::from(path));
        } else if let Some(path) = text.strip_prefix("--config=") {
            config = Some(PathBuf::from(path));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let tokens = config_tokens(&path)?;
    // Program name, then the subcommand (first non-flag argument).
    let at = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|i| i + 2)
        .ok_or_else(|| Error::Usage("--config given without a subcommand".into()))?;
    rest.splice(at..at, tokens);
    Ok(rest)
}

fn config_tokens(path: &Path) -> Result<Vec<OsString>> {
    let text = fs::read_to_string(path)?;
    let mut tokens = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Usage(format!("{}:{}: expected `key = value`", path.display(), lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || key.starts_with('-') || key == "config" {
            return Err(Error::Usage(format!(
                "{}:{}: invalid key '{key}'",
                path.display(),
                lineno + 1
            )));
        }
        tokens.push(OsString::from(format!("--{}", key.replace('_', "-"))));
        tokens.push(OsString::from(value));
    }
    Ok(tokens)
}

fn parse_list(list: &str, what: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Usage(format!("{what} entry '{s}': {e}")))
        })
        .collect()
}

fn build_model(args: &ModelArgs) -> Result<EnergyModel> {
    let density = match args.density {
        DensityKind::Phimu => ScalarDensity::phi_mu(args.mu)?,
        DensityKind::Scaled => ScalarDensity::scaled_phi_mu(args.mu)?,
        DensityKind::Phuber => ScalarDensity::pseudo_huber(args.eps)?,
    };
    let model = match args.model {
        ModelKind::Iso => EnergyModel::isotropic(density, args.lambda),
        ModelKind::Aniso => EnergyModel::anisotropic(density, args.smoothing_eps, args.lambda),
        ModelKind::Blend => {
            let path = args
                .blend_mask
                .as_ref()
                .ok_or_else(|| Error::Usage("--model blend needs --blend-mask".into()))?;
            let mask = read_image(path)?;
            EnergyModel::blend(density, ScalarDensity::phi_mu(args.mu2)?, mask, args.lambda)
        }
    };
    let model = model
        .with_delta(args.delta)
        .with_fidelity(Fidelity::parse(&args.fidelity)?);
    model.validate()?;
    Ok(model)
}

fn build_solver(args: &SolverArgs) -> Result<SolverConfig> {
    let config = SolverConfig {
        max_iters: args.max_iters,
        grad_tol: args.grad_tol,
        energy_tol: args.energy_tol,
        init: match args.init {
            InitKind::Data => Init::DataF,
            InitKind::Zero => Init::Zero,
        },
        delta_schedule: match &args.delta_schedule {
            Some(list) => parse_list(list, "delta schedule")?,
            None => Vec::new(),
        },
        ..SolverConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn write_report(value: &serde_json::Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    println!("{text}");
    if let Some(path) = path {
        fs::write(path, text + "\n")?;
    }
    Ok(())
}

fn denoise(args: DenoiseArgs) -> Result<i32> {
    let model = build_model(&args.model)?;
    let solver = build_solver(&args.solver)?;
    let f = read_image(&args.input)?;
    let (u, report) = minimize(&model, &f, &solver)?;
    write_image(&args.output, &u)?;
    let value = json!({
        "input": args.input,
        "output": args.output,
        "iterations": report.iterations,
        "final_energy": report.final_energy,
        "final_grad_norm": report.final_grad_norm,
        "energy_trace": report.energy_trace,
        "termination": report.termination,
        "stage_starts": report.stage_starts,
    });
    write_report(&value, args.report.as_deref())?;
    Ok(0)
}

fn compare_tv(args: CompareArgs) -> Result<i32> {
    let variant = TvVariant::parse(&args.variant)?;
    let (family, params) = match (&args.mu_list, &args.eps_list) {
        (Some(list), None) => (ParamFamily::Mu, parse_list(list, "mu list")?),
        (None, Some(list)) => (ParamFamily::Eps, parse_list(list, "eps list")?),
        _ => return Err(Error::Usage("give exactly one of --mu-list and --eps-list".into())),
    };
    let f = read_image(&args.input)?;
    // The density is replaced per parameter; only the family and λ matter here.
    let template = match variant {
        TvVariant::Frobenius => EnergyModel::isotropic(ScalarDensity::Linear, args.lambda),
        TvVariant::Nuclear => EnergyModel::anisotropic(ScalarDensity::Linear, args.smoothing_eps, args.lambda),
    };
    let tv = TvProblem {
        max_iters: args.tv_max_iters,
        gap_tol: args.gap_tol,
        ..TvProblem::new(variant, args.lambda)
    };
    let solver = SolverConfig {
        grad_tol: args.grad_tol,
        max_iters: args.max_iters,
        ..SolverConfig::default()
    };
    let table = convergence_experiment(family, &params, &f, &template, &tv, &solver)?;
    let csv = table.to_csv();
    match &args.output {
        Some(path) => fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    if !table.tv_converged {
        eprintln!(
            "warning: TV oracle stopped at gap {:.3e} > gap_tol {:.3e}",
            table.tv_gap, args.gap_tol
        );
    }
    eprintln!(
        "L2 distances non-increasing within {:.1e}: {} (empirical expectation, no rate is guaranteed)",
        table.tolerance,
        table.l2_non_increasing()
    );
    Ok(0)
}

fn verify(args: VerifyArgs) -> Result<i32> {
    let report = run_suite(args.seed, args.sabotage.as_deref())?;
    print!("{}", report.table());
    let passed = report.checks.iter().filter(|c| c.passed).count();
    println!("{passed}/{} checks passed (seed {})", report.checks.len(), args.seed);
    if let Some(path) = &args.report {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(path, text + "\n")?;
    }
    Ok(if report.all_passed() { 0 } else { 1 })
}

fn hullcheck(args: HullArgs) -> Result<i32> {
    let model = build_model(&args.model)?;
    let solver = build_solver(&args.solver)?;
    let f = read_image(&args.input)?;
    let set = ConvexSet::parse(&args.set, f.channels())?;
    let data_violation = hull_violation(&set, &f)?;
    if data_violation > 0.0 {
        eprintln!("warning: the data itself leaves the set (violation {data_violation:.3e})");
    }
    let (u, report) = minimize(&model, &f, &solver)?;
    if let Some(path) = &args.output {
        write_image(path, &u)?;
    }
    let value = json!({
        "hull_violation": hull_violation(&set, &u)?,
        "data_violation": data_violation,
        "iterations": report.iterations,
        "final_grad_norm": report.final_grad_norm,
        "termination": report.termination,
    });
    write_report(&value, None)?;
    Ok(0)
}
