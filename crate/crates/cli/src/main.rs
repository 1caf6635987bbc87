mod commands;
mod fail;
mod setup;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AbrArgs, BenchArgs, CapacityArgs, DecodeArgs, EmulateArgs, FuseArgs, SimulateArgs};
use fail::CliError;

/// Control-channel telemetry toolkit: simulate cells, decode their control
/// channel, estimate capacity and drive transport and video experiments.
#[derive(Parser, Debug)]
#[command(name = "ngkit", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a ground-truth message log and per-cell LLR streams.
    Simulate(SimulateArgs),
    /// Blind-decode LLR streams into a message log.
    Decode(DecodeArgs),
    /// Per-subframe capacity of a target UE, plus a link trace.
    Capacity(CapacityArgs),
    /// Run congestion controllers over a link trace.
    Emulate(EmulateArgs),
    /// Stream a video over link traces with several ABR policies.
    Abr(AbrArgs),
    /// Histogram of decoding attempts per subframe.
    Bench(BenchArgs),
    /// Align a receiver packet log with a message log.
    Fuse(FuseArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Decode(a) => commands::decode(a),
        Command::Capacity(a) => commands::capacity(a),
        Command::Emulate(a) => commands::emulate_cmd(a),
        Command::Abr(a) => commands::abr(a),
        Command::Bench(a) => commands::bench(a),
        Command::Fuse(a) => commands::fuse_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("ngkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => {
            eprintln!("ngkit: internal invariant violated (panic)");
            ExitCode::from(3)
        }
    }
}
