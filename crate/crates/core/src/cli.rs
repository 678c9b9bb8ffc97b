//! Command-line front end. Every subcommand is a thin wrapper over the
//! library.
//!
//! Exit status: 0 success, 1 usage error, 2 data or model error, 3
//! optimization failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asymptotics::birch_diagnostics;
use crate::divergence::Family;
use crate::error::{Error, Result};
use crate::io::{
    load_counts, load_model_spec, load_plan, parse_rational, parse_theta, read_file, sha256_hex,
    write_file, AsymptoticsDocument, InputsDocument, ResultDocument,
};
use crate::model::ParameterVector;
use crate::optimizer::{multistart_fit, MultistartConfig};
use crate::simulation::run_study;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_OPTIMIZATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "lcmdiv",
    version,
    about = "Minimum phi-divergence estimation for latent class models with binary items"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to pattern counts by multistart minimization.
    Fit(FitArgs),
    /// Asymptotic standard errors and covariances at a given parameter vector.
    Se(SeArgs),
    /// Run a Monte Carlo study described by a plan file.
    Simulate(SimulateArgs),
    /// Check a model file and report rank diagnostics.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Power-divergence index; accepts ratios such as 2/3 or -1/2.
    #[arg(long, allow_hyphen_values = true)]
    a: String,
    #[arg(long, default_value_t = 500)]
    starts: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Search box for every parameter.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    bounds: Option<Vec<f64>>,
    /// Output file; the document goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SeArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON with `lambda` and `eta`, or a result document.
    #[arg(long)]
    theta: PathBuf,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    plan: PathBuf,
    /// CSV summary file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Parameter vector for the diagnostics; a random one is drawn otherwise.
    #[arg(long)]
    theta: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Optimization(_) => EXIT_OPTIMIZATION,
        _ => EXIT_DATA,
    }
}

/// Write time, honouring `SOURCE_DATE_EPOCH` for reproducible output.
fn timestamp() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse().ok())
    {
        return v;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn emit(out: &mut dyn Write, path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => out.write_all(text.as_bytes()).map_err(|source| Error::Io {
            path: "<stdout>".into(),
            source,
        }),
    }
}

fn fit(args: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let a = parse_rational(&args.a)?;
    let model_text = read_file(&args.model)?;
    let data_text = read_file(&args.data)?;
    let spec = load_model_spec(&args.model)?;
    let counts = load_counts(&args.data, spec.k)?;
    let mut config = match &args.bounds {
        Some(b) => MultistartConfig::with_box(&spec, b[0], b[1]),
        None => MultistartConfig::for_spec(&spec),
    };
    config.n_initial = args.starts;
    config.rng_seed = args.seed;
    let fit = multistart_fit(&spec, &counts, &Family::power(a), &config)?;
    let inputs = InputsDocument {
        model_sha256: sha256_hex(model_text.as_bytes()),
        data_sha256: sha256_hex(data_text.as_bytes()),
    };
    let doc = ResultDocument::new(&fit, &spec, &counts, Some(a), &config, inputs, timestamp());
    emit(out, args.out.as_ref(), &doc.to_json())
}

fn se(args: &SeArgs, out: &mut dyn Write) -> Result<()> {
    let spec = load_model_spec(&args.model)?;
    let theta = parse_theta(&read_file(&args.theta)?)?;
    if theta.lambda.len() != spec.t || theta.eta.len() != spec.u {
        return Err(Error::Dimension(format!(
            "theta has {} lambda and {} eta entries, model needs {} and {}",
            theta.lambda.len(),
            theta.eta.len(),
            spec.t,
            spec.u
        )));
    }
    if args.n == 0 {
        return Err(Error::InvalidInput("--n must be at least 1".into()));
    }
    let doc = AsymptoticsDocument::compute(&spec, &theta, args.n);
    let mut text = serde_json::to_string_pretty(&doc).expect("plain data serializes");
    text.push('\n');
    emit(out, args.out.as_ref(), &text)
}

fn simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let (plan, config) = load_plan(&args.plan)?;
    let summary = run_study(&plan, &config)?;
    write_file(&args.out, &summary.to_csv()?)?;
    out.write_all(summary.to_text().as_bytes())
        .map_err(|source| Error::Io {
            path: "<stdout>".into(),
            source,
        })
}

fn validate(args: &ValidateArgs, out: &mut dyn Write) -> Result<()> {
    let spec = load_model_spec(&args.model)?;
    let (theta, source) = match &args.theta {
        Some(p) => (parse_theta(&read_file(p)?)?, p.display().to_string()),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let flat: Vec<f64> = (0..spec.n_params())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            (
                ParameterVector::from_flat(spec.t, &flat),
                format!("random (seed {})", args.seed),
            )
        }
    };
    let d = birch_diagnostics(&spec, &theta)?;
    let mut text = String::new();
    text.push_str(&format!(
        "model: m={} k={} t={} u={} ({} cells)\n",
        spec.m,
        spec.k,
        spec.t,
        spec.u,
        spec.n_cells()
    ));
    text.push_str(&format!("theta: {source}\n"));
    text.push_str(&format!(
        "min cell probability: {:e}\n",
        d.min_cell_probability
    ));
    text.push_str(&format!("jacobian rank: {} of {}\n", d.rank, d.parameters));
    text.push_str(&format!("condition number: {:e}\n", d.condition_number));
    text.push_str(&format!(
        "regularity: {}\n",
        if d.satisfied() {
            "satisfied"
        } else {
            "NOT satisfied"
        }
    ));
    out.write_all(text.as_bytes()).map_err(|source| Error::Io {
        path: "<stdout>".into(),
        source,
    })
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => fit(a, out),
        Command::Se(a) => se(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Validate(a) => validate(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
