use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zonotrain::experiment::{self, ExperimentConfig, Preset};
use zonotrain::Error;

const EXIT_UNSAFE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "zonotrain",
    version,
    about = "Exact ReLU reachability and safety-constrained training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Preset: quick or full.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the input set and write dataset.csv.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and write a run directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Objective only; the constraint is evaluated once at the end.
        #[arg(long)]
        unconstrained: bool,
    },
    /// Check a model against the unsafe sets and write a verdict file.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Verdict file (defaults to verify.json next to the model).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the reachable set of a model and write it as JSON.
    Reach {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export CSV and SVG plot data for a run directory.
    ExportPlot {
        /// Run directory written by `train`.
        run: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &common.preset {
        cfg.apply_preset(p.parse::<Preset>()?);
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn beside(model: &Path, name: &str) -> PathBuf {
    model.parent().unwrap_or_else(|| Path::new(".")).join(name)
}

fn verdict_code(safe: bool) -> u8 {
    if safe {
        0
    } else {
        EXIT_UNSAFE
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::GenData { common, out } => {
            let cfg = resolve(&common)?;
            let data = experiment::gen_data(&cfg, &out)?;
            println!(
                "wrote {} samples to {}",
                data.len(),
                out.join(experiment::DATASET_FILE).display()
            );
            Ok(0)
        }
        Command::Train {
            common,
            out,
            unconstrained,
        } => {
            let mut cfg = resolve(&common)?;
            if unconstrained {
                cfg.constrained = false;
            }
            let outcome = experiment::run_train(&cfg, &out)?;
            let s = &outcome.summary;
            println!("final objective loss   {:.6}", s.final_objective_loss);
            println!("final constraint loss  {:.6}", s.final_constraint_loss);
            println!("pieces                 {}", s.pieces);
            println!(
                "verdict                {}",
                if s.safe { "safe" } else { "unsafe" }
            );
            println!("run directory          {}", out.display());
            // An unconstrained run is not expected to be safe.
            Ok(if cfg.constrained {
                verdict_code(s.safe)
            } else {
                0
            })
        }
        Command::Verify { common, model, out } => {
            let cfg = resolve(&common)?;
            let net = experiment::load_network(&model)?;
            let cert = experiment::verify(&net, &cfg)?;
            let out = out.unwrap_or_else(|| beside(&model, "verify.json"));
            experiment::write_verdict(&out, &cert)?;
            println!(
                "{} ({} pieces, max constraint loss {:.6}); wrote {}",
                if cert.safe { "safe" } else { "unsafe" },
                cert.pieces.len(),
                cert.max_constraint_loss,
                out.display()
            );
            Ok(verdict_code(cert.safe))
        }
        Command::Reach { common, model, out } => {
            let cfg = resolve(&common)?;
            let net = experiment::load_network(&model)?;
            let r = experiment::compute_reach(&net, &cfg)?;
            let out = out.unwrap_or_else(|| beside(&model, "reach.json"));
            experiment::write_reach(&out, &r)?;
            println!("{} pieces; wrote {}", r.len(), out.display());
            Ok(0)
        }
        Command::ExportPlot { run } => {
            let bundle = experiment::export_plot(&run)?;
            for p in bundle.csv.iter().chain(&bundle.svg) {
                println!("{}", p.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            })
        }
    }
}
