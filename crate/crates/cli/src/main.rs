mod cli;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use diffbal::io::read_json;
use diffbal::{Error, Result};

use crate::cli::{CheckCommand, Cli, Command, ReplayArgs};
use crate::manifest::{sha256_hex, Run, RunManifest};

/// Stable exit codes: 0 ok, 2 configuration, 3 divergence, 4 Gramian
/// validity, 5 rank. A replay whose artifacts differ exits with 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } | Error::NonFinite { .. } | Error::Eval { .. } => 3,
        Error::NotPsd { .. } | Error::NotSymmetric { .. } => 4,
        Error::Rank { .. } => 5,
        _ => 2,
    }
}

fn configure_threads(threads: Option<usize>) -> Result<bool> {
    match threads {
        None => Ok(true),
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(n > 1)
        }
    }
}

fn execute(cli: &Cli, args: Vec<String>, parallel: bool) -> Result<RunManifest> {
    std::fs::create_dir_all(&cli.out)?;
    let mut run = Run {
        manifest: RunManifest::new(cli.command.name(), args, cli.seed, cli.out.clone()),
        parallel,
    };
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&mut run, a)?,
        Command::Gramian(a) => commands::gramian(&mut run, a)?,
        Command::Balance(a) => commands::balance_cmd(&mut run, a)?,
        Command::Reduce(a) => commands::reduce(&mut run, a)?,
        Command::Compare(a) => commands::compare(&mut run, a)?,
        Command::Check(CheckCommand::Pd(a)) => commands::check_pd(&mut run, a)?,
        Command::Check(CheckCommand::Symmetry(a)) => commands::check_symmetry(&mut run, a)?,
        Command::Replay(_) => unreachable!("replay is dispatched before execute"),
    }
    run.finish()
}

/// Re-runs the recorded command and compares artifact hashes. Returns the
/// names of artifacts that differ.
fn replay(args: &ReplayArgs, parallel: bool) -> Result<Vec<String>> {
    let recorded: RunManifest = read_json(&args.manifest)?;
    for (path, hash) in &recorded.inputs {
        let now = std::fs::read(path)
            .map_err(|e| Error::Config(format!("recorded input {path}: {e}")))?;
        if sha256_hex(&now) != *hash {
            return Err(Error::Config(format!("recorded input {path} has changed")));
        }
    }
    let mut cli = Cli::try_parse_from(
        std::iter::once("diffbal".to_string()).chain(recorded.args.iter().cloned()),
    )
    .map_err(|e| Error::Config(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Config("a replay manifest cannot be replayed".into()));
    }
    cli.out = args.into.clone().unwrap_or_else(|| recorded.out_dir.clone());
    let fresh = execute(&cli, recorded.args.clone(), parallel)?;

    let mut differing = Vec::new();
    for (name, hash) in &recorded.artifacts {
        if fresh.artifacts.get(name) != Some(hash) {
            differing.push(name.clone());
        }
    }
    for name in fresh.artifacts.keys() {
        if !recorded.artifacts.contains_key(name) {
            differing.push(name.clone());
        }
    }
    if differing.is_empty() {
        println!(
            "replayed {}: {} artifacts match",
            recorded.command,
            recorded.artifacts.len()
        );
    }
    Ok(differing)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads(cli.threads).and_then(|parallel| match &cli.command {
        Command::Replay(args) => replay(args, parallel).map(|differing| {
            if differing.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("replay mismatch: {}", differing.join(", "));
                ExitCode::from(1)
            }
        }),
        _ => {
            let args: Vec<String> = std::env::args().skip(1).collect();
            execute(&cli, args, parallel).map(|m| {
                println!("wrote {} artifacts to {}", m.artifacts.len(), m.out_dir.display());
                ExitCode::SUCCESS
            })
        }
    });
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(exit_code(&e))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(exit_code(&Error::Grid("x".into())), 2);
        assert_eq!(exit_code(&Error::Divergence { step: 1, t: 0.1 }), 3);
        assert_eq!(exit_code(&Error::NotPsd { lambda_min: -1.0, lambda_max: 1.0 }), 4);
        assert_eq!(exit_code(&Error::NotSymmetric { res_dyn: 1.0, res_out: 0.0 }), 4);
        assert_eq!(exit_code(&Error::Rank { k: 3, rank: 2 }), 5);
    }

    #[test]
    fn command_line_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
