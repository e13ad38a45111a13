//! `synproxy`: run simulated scenarios, replay captures through the engine,
//! encode and check cookies, and benchmark the engine.

mod bench;
mod cookie_cmd;
mod replay;
mod sim_cmd;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit codes shared by the subcommands.
pub(crate) mod exit {
    pub const REJECT: u8 = 1;
    pub const INVALID: u8 = 2;
    pub const IO: u8 = 3;
}

#[derive(Parser)]
#[command(
    name = "synproxy",
    version,
    about = "SYN-flood mitigation proxy harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated scenario and write metrics CSVs.
    Sim(sim_cmd::SimArgs),
    /// Push a pcap capture through one engine shard.
    Replay(replay::ReplayArgs),
    /// Encode or verify a single SYN cookie.
    #[command(subcommand)]
    Cookie(cookie_cmd::CookieCommand),
    /// Measure engine throughput on synthetic traffic.
    Bench(bench::BenchArgs),
}

/// A failure with the exit code it maps to.
pub(crate) struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn invalid(message: impl std::fmt::Display) -> Self {
        Failure {
            code: exit::INVALID,
            message: message.to_string(),
        }
    }

    pub fn io(message: impl std::fmt::Display) -> Self {
        Failure {
            code: exit::IO,
            message: message.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim(a) => sim_cmd::run(a),
        Command::Replay(a) => replay::run(a),
        Command::Cookie(c) => cookie_cmd::run(c),
        Command::Bench(a) => bench::run(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
