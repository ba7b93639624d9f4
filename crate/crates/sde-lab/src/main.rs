use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use sde_lab::config::Experiment;
use sde_lab::mapper::mapper_from_env;
use sde_lab::runner::{load_config, output_dir, run_experiment, verify_manifest};

/// Numerical laboratory for SDEs with singular drifts.
///
/// `LAB_THREADS` (the only environment knob) sets the worker count; `1`
/// runs serially. Outputs are identical either way.
#[derive(Parser)]
#[command(name = "lab", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment config; write reports and a manifest.
    Run { config: PathBuf },
    /// List the known experiments.
    List,
    /// Re-run a manifest's embedded config and diff the outputs.
    Verify { manifest: PathBuf },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Run { config } => {
            let cfg = load_config(&config)?;
            let mapper = mapper_from_env()?;
            let dir = output_dir(&cfg);
            println!("experiment {} seed {} ({})", cfg.experiment.name(), cfg.mc.seed, mapper.label());
            let manifest = run_experiment(&cfg, &dir, &mapper)?;
            for check in &manifest.checks {
                let verdict = if check.pass { "pass" } else { "FAIL" };
                println!("check {}: {verdict} ({})", check.name, check.detail);
            }
            println!(
                "wrote {} ({} outputs, {} ms)",
                dir.join("manifest.json").display(),
                manifest.outputs.len(),
                manifest.wall_time_ms
            );
            Ok(if manifest.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::List => {
            for e in Experiment::ALL {
                println!("{:<16} {}", e.name(), e.summary());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Verify { manifest } => {
            let mapper = mapper_from_env()?;
            let report = verify_manifest(&manifest, &mapper)?;
            println!("config digest: {}", if report.config_sha_match { "match" } else { "MISMATCH" });
            for (file, ok) in &report.outputs {
                println!("output {file}: {}", if *ok { "match" } else { "MISMATCH" });
            }
            for file in &report.unexpected {
                println!("output {file}: UNEXPECTED (absent from manifest)");
            }
            for (name, old, new) in &report.flipped_checks {
                println!("check {name}: recorded {old}, reran {new}");
            }
            let clean = report.clean();
            println!("verification: {}", if clean { "reproduced" } else { "DIVERGED" });
            Ok(if clean { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
