use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use see_lab::{run, Overrides, RunError, Subcommand};

#[derive(Parser)]
#[command(name = "see-lab", version, about = "Simulate and verify reflected stochastic evolution equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Simulate paths and dump trajectories.
    Simulate(Common),
    /// Run coupled pairs and dump their gaps.
    Couple(Common),
    /// Check the model assumptions.
    VerifyModel(Common),
    /// Run the Monte Carlo estimator battery.
    Ergodicity(Common),
    /// Navier-Stokes experiments.
    Nse {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["verify-model", "simulate", "ergodicity"])]
        kind: Option<String>,
    },
    /// Compare the penalized scheme to the projected one.
    Convergence(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "SEE_LAB_WORKERS")]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (sub, common, kind) = match cli.command {
        Command::Simulate(c) => (Subcommand::Simulate, c, None),
        Command::Couple(c) => (Subcommand::Couple, c, None),
        Command::VerifyModel(c) => (Subcommand::VerifyModel, c, None),
        Command::Ergodicity(c) => (Subcommand::Ergodicity, c, None),
        Command::Nse { common, kind } => (Subcommand::Nse, common, kind),
        Command::Convergence(c) => (Subcommand::Convergence, c, None),
    };
    let ov = Overrides { seed: common.seed, paths: common.paths, out: common.out, workers: common.workers, kind };
    match run(sub, &common.config, &ov) {
        Ok(summary) => {
            for v in &summary.manifest.verdicts {
                println!("{} {} margin={:e}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.margin);
                if !v.passed {
                    eprintln!("see-lab\tverdict-failed\t{}\tmargin={:e}\t{}", v.name, v.margin, v.detail);
                }
            }
            for w in &summary.manifest.warnings {
                eprintln!("see-lab\twarning\t{w}");
            }
            println!("results in {}", summary.out_dir.display());
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            match &e {
                RunError::Config(c) => {
                    for v in &c.violations {
                        let line = v.line.map_or_else(|| "-".to_string(), |l| l.to_string());
                        eprintln!("see-lab\tconfig-error\tline={line}\t{}", v.message);
                    }
                }
                other => eprintln!("see-lab\trun-error\t{other}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
