mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("solver stopped at the iteration limit ({0}) before reaching the gap tolerance")]
    NotConverged(usize),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(f) = err.downcast_ref::<Failure>() {
        return match f {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::NotConverged(_) => EXIT_NOT_CONVERGED,
        };
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<mvtv::Error>() {
            return match e {
                mvtv::Error::Io { .. } => EXIT_IO,
                mvtv::Error::InvalidArgument(_) => EXIT_USAGE,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return EXIT_IO;
        }
    }
    1
}

/// The error chain joined by `: `, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if msg.ends_with(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::SpaceInfo(a) => commands::space_info(a),
        Command::Phantom(a) => commands::phantom(a),
        Command::Noise(a) => commands::noise(a),
        Command::Denoise(a) => commands::denoise(a, cli.quiet),
        Command::Eval(a) => commands::eval(a),
        Command::W1(a) => commands::w1(a),
        Command::Tv(a) => commands::tv(a),
        Command::CheckNorms(a) => commands::check_norms(a),
        Command::ExportPlot(a) => commands::export_plot(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
