//! The `nbend` pipeline: generate, dump, train-metric, cluster and bend,
//! each leaving a `run-manifest.json` that `replay` can re-execute.

pub mod args;
mod commands;
pub mod manifest;
pub mod picture;

use std::path::PathBuf;

use anyhow::{bail, Result};

pub use args::{Cli, Command, RunCommand};
use manifest::{artifact_differences, check_inputs, Recorder, RunManifest};

/// Run a command whose paths are already absolute and write its manifest
/// into the output directory.
pub fn execute(run: &RunCommand) -> Result<RunManifest> {
    let mut rec = Recorder::new(run.out());
    match run {
        RunCommand::Generate(a) => commands::generate(a, &mut rec)?,
        RunCommand::Dump(a) => commands::dump(a, &mut rec)?,
        RunCommand::TrainMetric(a) => commands::train_metric(a, &mut rec)?,
        RunCommand::Cluster(a) => commands::cluster(a, &mut rec)?,
        RunCommand::Bend(a) => commands::bend(a, &mut rec)?,
    }
    let manifest = rec.finish(run.clone());
    manifest.save(run.out())?;
    Ok(manifest)
}

/// Make the command's paths absolute, then [`execute`] it.
pub fn run(mut run: RunCommand) -> Result<RunManifest> {
    run.absolutize()?;
    execute(&run)
}

/// Re-execute a recorded run, optionally into another directory, and fail
/// unless every artifact comes out byte-identical.
pub fn replay(manifest: &std::path::Path, out: Option<PathBuf>) -> Result<RunManifest> {
    let recorded = RunManifest::load(manifest)?;
    check_inputs(&recorded)?;
    let mut run = recorded.run.clone();
    if let Some(out) = out {
        run.set_out(std::path::absolute(out)?);
    }
    let fresh = execute(&run)?;
    let diff = artifact_differences(&recorded, &fresh);
    if !diff.is_empty() {
        let names: Vec<String> = diff.iter().map(|p| p.display().to_string()).collect();
        bail!("replay produced different artifacts: {}", names.join(", "));
    }
    Ok(fresh)
}
