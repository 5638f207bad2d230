//! `spn` command-line front end.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches};

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};
use crate::manifest::{digest, unix_ms, FileDigest, RunContext, RunManifest};

enum Failure {
    Clap(clap::Error),
    Cli(CliError),
}

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        Failure::Cli(e)
    }
}

impl From<clap::Error> for Failure {
    fn from(e: clap::Error) -> Self {
        Failure::Clap(e)
    }
}

/// Runs `argv` (program name first) and returns the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    match execute(&argv) {
        Ok(_) => 0,
        Err(Failure::Clap(e)) => {
            let _ = e.print();
            if e.use_stderr() {
                1
            } else {
                0
            }
        }
        Err(Failure::Cli(e)) => {
            eprintln!("spn: {e}");
            e.exit_code()
        }
    }
}

fn parse(argv: &[String]) -> Result<Cli, Failure> {
    let matches = Cli::command()
        .mut_subcommands(|s| s.args_override_self(true))
        .try_get_matches_from(argv)?;
    Ok(Cli::from_arg_matches(&matches)?)
}

/// Parses and runs one invocation, returning the manifest it wrote.
fn execute(argv: &[String]) -> Result<Option<PathBuf>, Failure> {
    let (argv, config) = config::expand(argv)?;
    let cli = parse(&argv)?;
    if let Command::Replay(a) = &cli.command {
        replay(&a.manifest)?;
        return Ok(None);
    }
    let common = cli
        .command
        .common()
        .expect("every run command has common flags");
    if common.threads == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()).into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let mut ctx = RunContext::default();
    if let Some(c) = &config {
        ctx.read(c);
    }
    let started = unix_ms();
    pool.install(|| commands::dispatch(&cli.command, &mut ctx))?;
    let finished = unix_ms();
    let manifest_path = common
        .manifest
        .clone()
        .or_else(|| cli.command.default_manifest())
        .expect("every run command has a default manifest");
    let digests = |paths: &[PathBuf]| {
        paths
            .iter()
            .map(|p| digest(p))
            .collect::<CliResult<Vec<FileDigest>>>()
    };
    let manifest = RunManifest {
        tool: "spn".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cli.command.name().into(),
        argv: argv[1..].to_vec(),
        cwd: std::env::current_dir().map_err(|e| CliError::io(".", e))?,
        parameters: serde_json::to_value(&cli.command)
            .map_err(|e| CliError::format(&manifest_path, e))?,
        seed: common.seed,
        seeds: ctx.seeds.clone(),
        threads: common.threads,
        inputs: digests(&ctx.inputs)?,
        outputs: digests(&ctx.outputs)?,
        started_unix_ms: started,
        finished_unix_ms: finished,
    };
    manifest.save(&manifest_path)?;
    Ok(Some(manifest_path))
}

fn relative_paths(m: &RunManifest) -> bool {
    m.inputs
        .iter()
        .chain(&m.outputs)
        .any(|d| d.path.is_relative())
}

/// Checks the recorded inputs, re-runs the recorded argv and compares outputs.
fn replay(path: &Path) -> CliResult<()> {
    let recorded = RunManifest::load(path)?;
    let cwd = std::env::current_dir().map_err(|e| CliError::io(".", e))?;
    if cwd != recorded.cwd && relative_paths(&recorded) {
        return Err(CliError::Replay(format!(
            "run used relative paths from {}; replay from there",
            recorded.cwd.display()
        )));
    }
    for input in &recorded.inputs {
        let now =
            digest(&input.path).map_err(|e| CliError::Replay(format!("input unavailable: {e}")))?;
        if now.sha256 != input.sha256 {
            return Err(CliError::Replay(format!(
                "input {} changed since the run",
                input.path.display()
            )));
        }
    }
    let mut argv = vec!["spn".to_string()];
    argv.extend(recorded.argv.iter().cloned());
    let new_path = match execute(&argv) {
        Ok(Some(p)) => p,
        Ok(None) => {
            return Err(CliError::Replay(
                "recorded command is itself a replay".into(),
            ))
        }
        Err(Failure::Cli(e)) => return Err(e),
        Err(Failure::Clap(e)) => {
            return Err(CliError::Replay(format!(
                "recorded argv no longer parses: {e}"
            )))
        }
    };
    let fresh = RunManifest::load(&new_path)?;
    let mut mismatched: Vec<String> = recorded
        .outputs
        .iter()
        .filter(|o| !fresh.outputs.contains(o))
        .map(|o| o.path.display().to_string())
        .collect();
    mismatched.extend(
        fresh
            .outputs
            .iter()
            .filter(|o| !recorded.outputs.iter().any(|r| r.path == o.path))
            .map(|o| format!("{} (new)", o.path.display())),
    );
    if !mismatched.is_empty() {
        return Err(CliError::Replay(format!(
            "outputs differ: {}",
            mismatched.join(", ")
        )));
    }
    // The fresh manifest only differs in timestamps; keep the original record.
    recorded.save(&new_path)?;
    eprintln!("replay ok: {} outputs reproduced", recorded.outputs.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &[&str]) -> Vec<String> {
        s.iter().map(|v| v.to_string()).collect()
    }

    #[test]
    fn exit_codes_follow_the_failure_class() {
        assert_eq!(run(argv(&["spn", "synth", "--bogus"])), 1);
        assert_eq!(run(argv(&["spn"])), 1);
        assert_eq!(run(argv(&["spn", "--help"])), 0);
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        let out = dir.path().join("fp.spnf");
        let code = run(argv(&[
            "spn",
            "fingerprint",
            "--images",
            missing.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]));
        assert_eq!(code, 2);
    }

    #[test]
    fn repeated_flags_take_the_last_value() {
        let cli = parse(&argv(&[
            "spn", "synth", "--out", "a", "--n", "3", "--n", "5",
        ]))
        .ok()
        .unwrap();
        match cli.command {
            Command::Synth(a) => assert_eq!(a.n, 5),
            _ => unreachable!(),
        }
    }

    #[test]
    fn zero_threads_is_a_usage_error() {
        assert_eq!(
            run(argv(&["spn", "synth", "--out", "x", "--threads", "0"])),
            1
        );
    }
}
