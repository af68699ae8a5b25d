use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use kbmpc::bilinear::Variant;
use kbmpc::config::RunConfig;
use kbmpc::mpc::ControllerKind;
use kbmpc::pipeline::{self, DATASET_FILE, MODEL_FILE};
use kbmpc::Error;

#[derive(Parser)]
#[command(name = "kbmpc", version, about = "Koopman bilinear model identification and MPC for a tractor-trailer")]
struct Cli {
    /// JSON run configuration; defaults are used for absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the data seed (the evaluation seed is derived from it).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for data generation and batch evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the identification dataset.
    Generate,
    /// Fit the bilinear model and write the basis manifest and validation report.
    Identify {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Overrides the derivative order of the basis.
        #[arg(long)]
        rho: Option<usize>,
    },
    /// Compare predictors on random open-loop rollouts.
    EvalOpenloop {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated subset of kbm, lkbm, nm, llnm.
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Vec<Variant>,
        /// Also write the per-step outputs of this rollout.
        #[arg(long)]
        rollout_debug: Option<usize>,
    },
    /// Run closed-loop tracking on the slip plant.
    Track {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Reference CSV; the configured built-in profile otherwise.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Which::Both)]
        controller: Which,
    },
    /// generate, identify, eval-openloop and track in one go.
    Demo,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Kbmpc,
    Lmpc,
    Both,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => 1,
        Error::Numerical(_) | Error::RankDeficient | Error::NotPositiveDefinite(_) | Error::Dimension { .. } => 2,
        Error::Io { .. } | Error::ModelFormat { .. } | Error::BasisMismatch { .. } | Error::Json(_) => 3,
    }
}

fn run(cli: Cli) -> kbmpc::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Generate => {
            pipeline::cmd_generate(&cfg, &out)?;
        }
        Command::Identify { dataset, rho } => {
            if let Some(r) = rho {
                cfg.lifting.rho = r;
            }
            let dataset = dataset.unwrap_or_else(|| out.join(DATASET_FILE));
            pipeline::cmd_identify(&cfg, &dataset, &out)?;
        }
        Command::EvalOpenloop {
            model,
            variants,
            rollout_debug,
        } => {
            let variants = if variants.is_empty() { Variant::ALL.to_vec() } else { variants };
            let model = model.unwrap_or_else(|| out.join(MODEL_FILE));
            let s = pipeline::cmd_eval_openloop(&cfg, &model, &out, &variants, rollout_debug)?;
            for v in &s.mean {
                let e = v.errors;
                println!(
                    "{:5} e_x0y0 {:.4e}  e_x1y1 {:.4e}  e_theta0 {:.4e}  e_theta1 {:.4e}",
                    v.variant.name(),
                    e.e_x0y0,
                    e.e_x1y1,
                    e.e_theta0,
                    e.e_theta1
                );
            }
        }
        Command::Track {
            model,
            reference,
            controller,
        } => {
            let kinds = match controller {
                Which::Kbmpc => vec![ControllerKind::Kbmpc],
                Which::Lmpc => vec![ControllerKind::Lmpc],
                Which::Both => vec![ControllerKind::Kbmpc, ControllerKind::Lmpc],
            };
            let needs_model = kinds.contains(&ControllerKind::Kbmpc);
            let model = needs_model.then(|| model.unwrap_or_else(|| out.join(MODEL_FILE)));
            let (report, _) = pipeline::cmd_track(&cfg, model.as_deref(), reference.as_deref(), &kinds, &out)?;
            print_tracking(&report);
        }
        Command::Demo => {
            let s = pipeline::cmd_demo(&cfg, &out)?;
            println!(
                "basis N = {}, open-loop ordering holds: {}",
                s.identify.basis_size,
                s.openloop.ordering_holds.unwrap_or(false)
            );
            print_tracking(&s.tracking);
        }
    }
    Ok(())
}

fn print_tracking(report: &pipeline::TrackReport) {
    for r in &report.runs {
        println!(
            "{:6} e_x0y0 {:.4}  e_x1y1 {:.4}  e_theta0 {:.4}  e_theta1 {:.4}  cost {:.4}  fallbacks {}",
            r.controller.name(),
            r.mean_errors.e_x0y0,
            r.mean_errors.e_x1y1,
            r.mean_errors.e_theta0,
            r.mean_errors.e_theta1,
            r.mean_cost,
            r.fallbacks
        );
    }
    if let Some(c) = &report.comparison {
        println!("LMPC cost relative to K-BMPC: {:+.1}%", 100.0 * c.relative_cost_increase);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
