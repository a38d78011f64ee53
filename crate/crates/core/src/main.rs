use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nlcd::cli::{self, Command, Options, EXIT_OK, EXIT_USAGE};

#[derive(Parser)]
#[command(version, about = "Adaptive space-time FEM for non-linear convection-diffusion")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "nlcd.toml")]
    config: PathBuf,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads, 0 for the rayon default.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Overrides `verify.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve and write the trajectory.
    Run,
    /// Solve, then evaluate the error estimator.
    Estimate,
    /// Checks on a manufactured case.
    Verify,
    /// Convergence table of a manufactured case.
    Convergence,
    /// Mesh metrics.
    MeshInfo,
}

fn main() -> ExitCode {
    env_logger::init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK } as u8);
        }
    };
    // Dense factorizations stay single threaded so results do not depend
    // on the thread count.
    faer::set_global_parallelism(faer::Par::Seq);
    let cmd = match args.command {
        Cmd::Run => Command::Run,
        Cmd::Estimate => Command::Estimate,
        Cmd::Verify => Command::Verify,
        Cmd::Convergence => Command::Convergence,
        Cmd::MeshInfo => Command::MeshInfo,
    };
    let opts = Options {
        config: args.config,
        out: args.out,
        threads: args.threads,
        seed: args.seed,
    };
    ExitCode::from(cli::execute(cmd, &opts) as u8)
}
