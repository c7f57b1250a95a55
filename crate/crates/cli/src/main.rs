use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dualrl_core::harness::{apply_overrides, run, ExperimentConfig, ExperimentKind};

/// Run one experiment from a TOML config and write its tables and manifest.
#[derive(Parser, Debug)]
#[command(name = "dualrl", version)]
struct Args {
    /// duality | maximizer | recoil | ratio | reward | reductions | fdvl
    experiment: ExperimentKind,
    /// TOML config; omitted keys take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use seeds 0..N (overrides `seeds`)
    #[arg(long)]
    seeds: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = match &args.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::new(args.experiment)),
    };
    let config = match config.and_then(|c| apply_overrides(c, args.experiment, args.out.clone(), args.seeds)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("dualrl: {e}");
            return ExitCode::from(2);
        }
    };
    let manifest = match run(&config) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("dualrl: {e}");
            return ExitCode::from(2);
        }
    };
    for c in &manifest.checks {
        let seed = c.seed.map(|s| format!(" [seed {s}]")).unwrap_or_default();
        println!(
            "{} {}{}: {:.4e} {} {}",
            if c.pass { "ok  " } else { "FAIL" },
            c.name,
            seed,
            c.value,
            c.relation,
            c.threshold
        );
    }
    if let Some(f) = &manifest.failure {
        println!("driver failed: {f}");
    }
    println!(
        "{} in {:.2}s, outputs in {}",
        if manifest.pass { "pass" } else { "fail" },
        manifest.wall_clock_seconds,
        config.output_dir.display()
    );
    if manifest.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
