use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairkit::config::{BalanceMethod, ConfigError, ModelConfig, ReweightMode, RunConfig};
use fairkit::model::{Grid, ModelFamily, SvmGrid};
use fairkit::pipeline::{audit_predictions, run_pipeline};
use fairkit::report::fairness_csv;
use fairkit::svm::{Gamma, KernelKind};

#[derive(Parser)]
#[command(name = "fairkit", version, about = "Train, audit and reweight classifiers on categorical data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline described by a config file.
    Run(RunArgs),
    /// Compute fairness metrics for an existing predictions CSV.
    Audit(AuditArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: the config's `out`, else ./fairkit-out]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["smoten", "none"])]
    balance: Option<String>,
    #[arg(long)]
    k_neighbors: Option<usize>,
    #[arg(long)]
    model: Option<ModelFamily>,
    /// SVM kernels; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    kernel: Vec<KernelKind>,
    /// SVM C values, comma separated.
    #[arg(long, value_delimiter = ',')]
    c_grid: Vec<f64>,
    /// `scale`, `auto` or a positive number.
    #[arg(long)]
    gamma: Option<Gamma>,
    #[arg(long)]
    degree: Option<u32>,
    #[arg(long, allow_negative_numbers = true)]
    coef: Option<f64>,
    /// TOML file with a `family` key and the grid table for that family.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, value_parser = ["none", "intersectional"])]
    reweight: Option<String>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Also write audit.json and fairness.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn apply_overrides(cfg: &mut RunConfig, args: &RunArgs) -> Result<(), ConfigError> {
    let invalid = |m: &str| ConfigError::Invalid(m.to_string());
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(b) = &args.balance {
        cfg.balance.method = if b == "none" {
            BalanceMethod::None
        } else {
            BalanceMethod::Smoten
        };
    }
    if let Some(k) = args.k_neighbors {
        cfg.balance.k_neighbors = k;
    }
    if let Some(r) = &args.reweight {
        cfg.reweight = if r == "none" {
            ReweightMode::None
        } else {
            ReweightMode::Intersectional
        };
    }
    if let Some(path) = &args.grid {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.clone(),
            source,
        })?;
        let grid: ModelConfig = toml::from_str(&text)?;
        cfg.model.set_grid(grid.grid());
    }
    if let Some(family) = args.model {
        cfg.model.family = family;
    }
    let svm_flags = !args.kernel.is_empty()
        || !args.c_grid.is_empty()
        || args.gamma.is_some()
        || args.degree.is_some()
        || args.coef.is_some();
    if svm_flags {
        if cfg.model.family != ModelFamily::Svm {
            return Err(invalid("--kernel, --c-grid, --gamma, --degree and --coef need --model svm"));
        }
        let mut g: SvmGrid = match cfg.model.grid() {
            Grid::Svm(g) => g,
            _ => unreachable!("family checked above"),
        };
        if !args.kernel.is_empty() {
            g.kernels = args.kernel.clone();
        }
        if !args.c_grid.is_empty() {
            g.c = args.c_grid.clone();
        }
        if let Some(gamma) = args.gamma {
            g.gamma = vec![gamma];
        }
        if let Some(d) = args.degree {
            g.degree = vec![d];
        }
        if let Some(c) = args.coef {
            g.coef = vec![c];
        }
        cfg.model.set_grid(Grid::Svm(g));
    }
    cfg.validate()
}

fn run(args: RunArgs) -> ExitCode {
    let mut cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Err(e) = apply_overrides(&mut cfg, &args) {
        return config_error(e);
    }
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.out_dir())
        .unwrap_or_else(|| PathBuf::from("fairkit-out"));
    let output = run_pipeline(&cfg);
    if let Err(e) = output.write(&dir) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match &output.error {
        None => {
            let best = output.report.best.as_ref().map_or(0.0, |b| b.accuracy);
            println!("wrote {} (best accuracy {:.4})", dir.display(), best);
            ExitCode::SUCCESS
        }
        Some(e) => {
            eprintln!("error: {e}");
            eprintln!("partial report written to {}", dir.display());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn write_audit(dir: &Path, json: &str, csv: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("audit.json"), json)?;
    std::fs::write(dir.join("fairness.csv"), csv)
}

fn audit(args: AuditArgs) -> ExitCode {
    let cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let report = match audit_predictions(&cfg, &args.predictions) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let rendered = serde_json::to_string_pretty(&report).map(|mut s| {
        s.push('\n');
        s
    });
    let csv = fairness_csv(&[("audit", &report)]);
    let (json, csv) = match (rendered, csv) {
        (Ok(j), Ok(c)) => (j, c),
        _ => {
            eprintln!("error: failed to render the audit");
            return ExitCode::from(1);
        }
    };
    print!("{json}");
    if let Some(dir) = &args.out {
        if let Err(e) = write_audit(dir, &json, &csv) {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(args),
        Command::Audit(args) => audit(args),
    }
}

