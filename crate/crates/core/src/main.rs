use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tdca_core::error::Result;
use tdca_core::harness::experiments::{
    run_compare, run_diffusion_sweep, run_evolve, run_field, run_flops, run_landscape, run_transfer, FieldSelection,
};
use tdca_core::harness::{ExperimentConfig, RunContext};

#[derive(Parser)]
#[command(name = "tdca", version, about = "Evolved top-down credit assignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dataset root holding mnist/, fashion-mnist/ and cifar-10-batches-bin/.
    #[arg(long, env = "TDCA_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Output directory; defaults to the config's `output` or runs/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the seed list with this single seed and reseeds evolution.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for candidate and seed evaluation.
    #[arg(long)]
    threads: Option<usize>,
    /// Print per-generation progress to stderr.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a credit net and write its checkpoint and fitness history.
    Evolve(Common),
    /// BP over every seed against the configured evolved credit net.
    Compare(Common),
    /// Apply credit nets evolved on some datasets to others.
    Transfer(Common),
    /// Evolve one credit net per credit granularity in [sweep].
    Diffuse(Common),
    /// Analytic per-step operation counts.
    Flops(Common),
    /// PCA plane through BP and TDCA trajectories and the loss on it.
    Landscape(Common),
    /// Update fields on the mixed Gaussian and their repeated application.
    Field {
        #[command(flatten)]
        common: Common,
        /// bp, tdca or both.
        #[arg(long, default_value = "both")]
        method: String,
    },
}

fn default_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn setup(common: &Common) -> Result<(ExperimentConfig, RunContext)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
        cfg.pgpe.seed = seed;
    }
    if let Some(n) = common.threads {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| Path::new("runs").join(&cfg.name));
    let ctx = RunContext {
        data_dir: common.data_dir.clone().unwrap_or_else(default_data_dir),
        out,
        config_path: Some(common.config.clone()),
        verbose: common.verbose,
    };
    Ok((cfg, ctx))
}

fn print_file(path: &Path) {
    if let Ok(text) = std::fs::read_to_string(path) {
        print!("{text}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Evolve(c) => {
            let (cfg, ctx) = setup(&c)?;
            let out = run_evolve(&cfg, &ctx)?;
            if let Some(last) = out.result.history.last() {
                println!(
                    "{} generations, final best fitness {:.4}, mean {:.4}",
                    out.result.history.len(),
                    last.best_fitness,
                    last.mean_fitness
                );
            }
            println!("checkpoint: {}", out.checkpoint.display());
        }
        Command::Compare(c) => {
            let (cfg, ctx) = setup(&c)?;
            run_compare(&cfg, &ctx)?;
            print_file(&ctx.out.join("compare.txt"));
        }
        Command::Transfer(c) => {
            let (cfg, ctx) = setup(&c)?;
            run_transfer(&cfg, &ctx)?;
            print_file(&ctx.out.join("transfer.txt"));
        }
        Command::Diffuse(c) => {
            let (cfg, ctx) = setup(&c)?;
            run_diffusion_sweep(&cfg, &ctx)?;
            print_file(&ctx.out.join("sweep.txt"));
        }
        Command::Flops(c) => {
            let (cfg, ctx) = setup(&c)?;
            run_flops(&cfg, &ctx)?;
            print_file(&ctx.out.join("flops.txt"));
        }
        Command::Landscape(c) => {
            let (cfg, ctx) = setup(&c)?;
            run_landscape(&cfg, &ctx)?;
            print_file(&ctx.out.join("landscape_summary.txt"));
        }
        Command::Field { common, method } => {
            let which: FieldSelection = method.parse()?;
            let (cfg, ctx) = setup(&common)?;
            run_field(&cfg, &ctx, which)?;
            print_file(&ctx.out.join("field.txt"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
