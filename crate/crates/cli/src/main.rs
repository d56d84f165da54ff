//! Binary entry point: argument handling, config loading, experiment
//! dispatch, and the single-writer artifact pass.
//!
//! The run itself assembles every output in memory; this module is the only
//! place that writes files. The manifest is rendered after the inventory is
//! hashed and written last, so a complete manifest on disk implies the run
//! finished. Exit codes: 0 on success, 2 when the config or problem
//! statement is rejected, 3 when the numerics abort midway.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use vanishlab_cli::manifest::{checksum, RunManifest};
use vanishlab_cli::{config, run};

/// Deterministic experiment runner for the advection-diffusion laboratory.
#[derive(Parser)]
#[command(name = "vanishlab", version)]
struct Cli {
    /// Path to a sectioned key=value experiment config.
    config: PathBuf,

    /// Output directory; overrides the config's `output` value for this
    /// invocation only (the manifest echoes the config value).
    #[arg(long)]
    output: Option<PathBuf>,

    /// Worker threads for independent jobs; outputs are bit-identical for
    /// any value.
    #[arg(long)]
    jobs: Option<usize>,

    /// Run flagged parameters below the resolution guards instead of
    /// rejecting them.
    #[arg(long)]
    allow_underresolved: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

fn real_main(cli: &Cli) -> Result<(), (u8, String)> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err((
                2,
                "invalid config at --jobs: need at least one worker".to_string(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| (2, format!("cannot size the worker pool: {e}")))?;
    }

    let text = std::fs::read_to_string(&cli.config).map_err(|e| {
        (
            2,
            format!("cannot read config '{}': {e}", cli.config.display()),
        )
    })?;
    let mut cfg = config::parse(&text).map_err(|e| (2, e.to_string()))?;
    // The echo must reproduce this run without the flag, so the effective
    // value lands in the config itself.
    cfg.allow_under_resolved = cfg.allow_under_resolved || cli.allow_underresolved;
    let base = cli
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();

    let started = Instant::now();
    let output = run::execute(&cfg, &base, cli.allow_underresolved)
        .map_err(|e| (e.exit_code() as u8, e.to_string()))?;

    let out_dir = cli
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output));
    std::fs::create_dir_all(&out_dir).map_err(|e| {
        (
            3,
            format!(
                "numerical abort in cli::write: cannot create '{}': {e}",
                out_dir.display()
            ),
        )
    })?;

    let mut inventory = BTreeMap::new();
    for (name, bytes) in &output.files {
        inventory.insert(name.clone(), checksum(bytes));
    }
    let manifest = RunManifest {
        artifact: "vanishlab-run",
        artifact_version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment.as_str().to_string(),
        seed: cfg.seed,
        config: cfg.echo(),
        field_truncation: output.truncation,
        wall_clock_seconds: None,
        outputs: inventory,
    };

    for (name, bytes) in &output.files {
        std::fs::write(out_dir.join(name), bytes).map_err(|e| {
            (
                3,
                format!("numerical abort in cli::write: cannot write '{name}': {e}"),
            )
        })?;
    }
    std::fs::write(out_dir.join("manifest.json"), manifest.render()).map_err(|e| {
        (
            3,
            format!("numerical abort in cli::write: cannot write 'manifest.json': {e}"),
        )
    })?;

    for line in &output.summary {
        println!("{line}");
    }
    println!(
        "wrote {} files to {}",
        output.files.len() + 1,
        out_dir.display()
    );
    eprintln!("elapsed: {:.3}s", started.elapsed().as_secs_f64());
    Ok(())
}
