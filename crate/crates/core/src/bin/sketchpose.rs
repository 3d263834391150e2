use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use sketchpose::augment::SeverityPreset;
use sketchpose::body_model::SkeletonTemplate;
use sketchpose::camera::Camera;
use sketchpose::lift::LiftConfig;
use sketchpose::pipeline::{
    ablation_cases, evaluate_dataset, generate_dataset, roundtrip_batch, roundtrip_summary, EvalSummary, GenerateConfig,
};
use sketchpose::service::{serve, ServiceConfig};

#[derive(Parser)]
#[command(name = "sketchpose", version, about = "Primitive-figure sketches to posed 3D mannequins")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render and augment a synthetic sketch dataset.
    Generate {
        #[arg(long)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "default")]
        severity: SeverityPreset,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpret, lift and score every sketch of a generated dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Re-render each pose without augmentation and keep the clean subset.
        #[arg(long)]
        clean_only: bool,
        /// Largest tolerated fraction of failed items before exiting with 2.
        #[arg(long, default_value_t = 0.05)]
        max_failed: f64,
    },
    /// Round-trip freshly sampled poses, clean and at every severity.
    Roundtrip {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 0.05)]
        max_failed: f64,
    },
    /// Run the session HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Append mutating requests to this file as JSON lines.
        #[arg(long)]
        request_log: Option<PathBuf>,
    },
}

fn check_failures(summary: &EvalSummary, max_failed: f64) -> anyhow::Result<()> {
    let total = summary.evaluated + summary.failed;
    if total == 0 {
        bail!("nothing was evaluated");
    }
    let fraction = summary.failed as f64 / total as f64;
    if fraction > max_failed {
        bail!("{} of {total} items failed", summary.failed);
    }
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    let template = SkeletonTemplate::canonical();
    match command {
        Command::Generate { count, seed, severity, out } => {
            let config = GenerateConfig::new(count, seed, severity);
            let manifest = generate_dataset(&config, &out, template)?;
            println!("wrote {} sketches to {}", manifest.items.len(), out.display());
        }
        Command::Eval { dataset, clean_only, max_failed } => {
            let summary = evaluate_dataset(&dataset, clean_only, template, &LiftConfig::default())?;
            print!("{}", summary.table());
            println!("evaluated {} skipped {} failed {}", summary.evaluated, summary.skipped, summary.failed);
            check_failures(&summary, max_failed)?;
        }
        Command::Roundtrip { seed, count, max_failed } => {
            let items =
                roundtrip_batch(seed, count, &SeverityPreset::ALL, template, &Camera::default(), &LiftConfig::default());
            let summary = roundtrip_summary(&items);
            print!("{}", summary.table());
            let (mut ok, mut cases) = (0, 0);
            for item in &items {
                for (_, sketch, outcome) in &item.augmented {
                    if let Ok(rt) = outcome {
                        let (a, b) = ablation_cases(sketch, &rt.interpretation);
                        ok += a;
                        cases += b;
                    }
                }
            }
            println!("evaluated {} failed {}; hidden-part joints at confidence <= 0.5: {ok}/{cases}", summary.evaluated, summary.failed);
            check_failures(&summary, max_failed)?;
        }
        Command::Serve { port, host, request_log } => {
            let addr: SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("bad address {host}:{port}"))?;
            let config = ServiceConfig { request_log, ..Default::default() };
            tokio::runtime::Runtime::new()?.block_on(serve(config, addr))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
