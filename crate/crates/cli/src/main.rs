//! `vfl`: key generation, runs, sweeps and comparison tables.
//!
//! Every failure prints one JSON line on stderr,
//! `{"error":"<kind>","message":"<text>"}`, and exits nonzero:
//! 2 for usage and configuration problems, 1 for everything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use vfl_core::config::RunConfig;
use vfl_core::error::Error;
use vfl_core::he::{keygen, PrivateExport};
use vfl_core::metrics::{summary_csv_header, summary_csv_row, write_run_dir, RunMetrics, ComparisonTable};

#[derive(Parser)]
#[command(name = "vfl", version, about = "Vertical federated learning under Paillier encryption")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Paillier key pair as PEM files.
    Keygen {
        #[arg(long, default_value_t = 1024)]
        bits: usize,
        /// Deterministic keys from this seed; fresh randomness when omitted.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "keys")]
        out: PathBuf,
    },
    /// Train once from a config file and write its metrics.
    Run(RunArgs),
    /// Train every (beta, p, pca_ratio) combination and write one row per cell.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        beta: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        ratio: Vec<f64>,
    },
    /// Render the comparison table from run directories.
    Report {
        /// `MODE=DIR`, repeatable; the first run is the baseline.
        #[arg(long = "run", value_name = "MODE=DIR")]
        runs: Vec<String>,
        /// Add the full-scale reference column.
        #[arg(long)]
        reference: bool,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the reference config with every default documented.
    Defaults {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Config(String),
    Io(String),
    Run(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Run(_) => "run",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Io(m) | CliError::Run(m) => m,
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Run(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::Data(_) | Error::Labels(_) | Error::DegenerateLabels => {
                CliError::Config(msg)
            }
            _ => CliError::Run(msg),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail(CliError::Usage(e.to_string())),
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    let line = serde_json::json!({ "error": e.kind(), "message": one_line(e.message()) });
    eprintln!("{line}");
    ExitCode::from(e.code())
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Keygen { bits, seed, out } => cmd_keygen(bits, seed, &out),
        Command::Run(args) => cmd_run(&args),
        Command::Sweep {
            run,
            beta,
            p,
            ratio,
        } => cmd_sweep(&run, &beta, &p, &ratio),
        Command::Report {
            runs,
            reference,
            csv,
        } => cmd_report(&runs, reference, csv.as_deref()),
        Command::Defaults { out } => {
            let text = RunConfig::reference_toml();
            match out {
                Some(path) => std::fs::write(&path, text).map_err(io_err(&path)),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn cmd_keygen(bits: usize, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut rng = match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    };
    let kp = keygen(bits, &mut rng).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let public = out.join("public.pem");
    let private = out.join("private.pem");
    std::fs::write(&public, kp.public_key.to_pem()).map_err(io_err(&public))?;
    std::fs::write(
        &private,
        kp.private_key.to_pem(PrivateExport::acknowledge_unsafe()),
    )
    .map_err(io_err(&private))?;
    restrict(&private)?;
    println!("wrote {} and {}", public.display(), private.display());
    Ok(())
}

#[cfg(unix)]
fn restrict(path: &Path) -> Result<(), CliError> {
    use std::os::unix::fs::PermissionsExt;
    std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600)).map_err(io_err(path))
}

#[cfg(not(unix))]
fn restrict(_: &Path) -> Result<(), CliError> {
    Ok(())
}

/// Loads the config, applies overrides and makes CSV paths absolute so the
/// echoed copy runs from anywhere.
fn load(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    if let Some(csv) = &mut cfg.data.csv {
        for p in &mut csv.paths {
            if p.is_relative() {
                let joined = base.join(&*p);
                *p = joined.canonicalize().unwrap_or(joined);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Trains and writes the run directory, echoing the effective config.
fn execute(cfg: &RunConfig, dir: &Path) -> Result<RunMetrics, CliError> {
    let res = cfg.execute(Path::new("."))?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let echo = dir.join("config.toml");
    std::fs::write(&echo, cfg.to_toml_string()).map_err(io_err(&echo))?;
    write_run_dir(dir, &res.metrics, &res.trace)?;
    for w in &res.metrics.warnings {
        eprintln!("warning: {w}");
    }
    Ok(res.metrics)
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let cfg = load(args)?;
    let dir = cfg.output.dir.clone();
    let m = execute(&cfg, &dir)?;
    println!("{}", summary_csv_header());
    println!("{}", summary_csv_row(&m));
    Ok(())
}

fn cmd_sweep(args: &RunArgs, betas: &[u32], ps: &[f64], ratios: &[f64]) -> Result<(), CliError> {
    let base = load(args)?;
    let mut cells = Vec::new();
    for &beta in betas {
        for &p in ps {
            for &ratio in ratios {
                let mut cfg = base.clone();
                cfg.straggler.backup_workers = beta;
                cfg.network.slowdown_prob = p;
                cfg.compression.pca_ratio = vec![ratio];
                cfg.label = format!("{}_b{beta}_p{p}_r{ratio}", base.label);
                cfg.validate()?;
                cells.push((beta, p, ratio, cfg));
            }
        }
    }
    let out = base.output.dir.clone();
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let mut table = format!("beta,p,pca_ratio,{}\n", summary_csv_header());
    for (beta, p, ratio, cfg) in &cells {
        let m = execute(cfg, &out.join(&cfg.label))?;
        table.push_str(&format!("{beta},{p},{ratio},{}\n", summary_csv_row(&m)));
        eprintln!("done {}", cfg.label);
    }
    let path = out.join("sweep.csv");
    std::fs::write(&path, &table).map_err(io_err(&path))?;
    print!("{table}");
    Ok(())
}

fn cmd_report(runs: &[String], reference: bool, csv: Option<&Path>) -> Result<(), CliError> {
    let reference_table = ComparisonTable::reference();
    if runs.is_empty() {
        if !reference {
            return Err(CliError::Usage("report needs --run MODE=DIR or --reference".into()));
        }
        print!("{}", reference_table.render(None));
        return Ok(());
    }
    let mut loaded = Vec::new();
    for spec in runs {
        let (mode, dir) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected MODE=DIR, got {spec}")))?;
        let path = Path::new(dir).join("metrics.json");
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: RunMetrics = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        loaded.push((mode.to_string(), m));
    }
    let refs: Vec<(&str, &RunMetrics)> = loaded.iter().map(|(k, m)| (k.as_str(), m)).collect();
    let table = ComparisonTable::from_runs(&refs);
    print!("{}", table.render(reference.then_some(&reference_table)));
    if let Some(path) = csv {
        std::fs::write(path, table.to_csv()).map_err(io_err(path))?;
    }
    Ok(())
}
