mod args;
mod commands;
mod config;
mod output;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde_json::Value;

use args::{Cli, Command, Format};
use commands::Failure;

fn config_echo(command: &Command) -> Value {
    let v = match command {
        Command::Green(a) => serde_json::to_value(a),
        Command::Nondegen(a) => serde_json::to_value(a),
        Command::Ansatz(a) => serde_json::to_value(a),
        Command::Residual(a) => serde_json::to_value(a),
        Command::Fixpoint(a) => serde_json::to_value(a),
        Command::Solve(a) => serde_json::to_value(a),
        Command::Branch(a) => serde_json::to_value(a),
        Command::Report(a) => serde_json::to_value(a),
    };
    v.expect("serializable arguments")
}

fn init_threads() -> Result<(), Failure> {
    if let Ok(s) = std::env::var("KSLAYERS_THREADS") {
        let n: usize = s.trim().parse().map_err(|_| Failure::usage(format!("KSLAYERS_THREADS must be a positive integer, got '{s}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot set thread count: {e}")))?;
    }
    Ok(())
}

fn emit(cli: &Cli, outcome: &commands::Outcome, config: &Value) -> Result<(), Failure> {
    let name = cli.command.name();
    let json = output::json_document(name, config, &outcome.result);
    match &cli.out {
        Some(dir) => {
            let dir = Path::new(dir);
            let io = |e: std::io::Error| Failure::usage(format!("cannot write to {}: {e}", dir.display()));
            output::write_atomic(dir, &format!("{name}.json"), &json).map_err(io)?;
            if let Some(t) = &outcome.table {
                output::write_atomic(dir, &format!("{name}.csv"), &t.render()).map_err(io)?;
            }
        }
        None => {
            let want_csv = match cli.format {
                Some(Format::Csv) => true,
                Some(Format::Json) => false,
                None => outcome.table.is_some(),
            };
            match (&outcome.table, want_csv) {
                (Some(t), true) => print!("{}", t.render()),
                (None, true) => return Err(Failure::usage(format!("{name} has no CSV output; use --format json"))),
                _ => print!("{json}"),
            }
        }
    }
    Ok(())
}

fn run() -> Result<(), Failure> {
    let argv = config::merge(std::env::args_os().collect()).map_err(Failure::usage)?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return if code == 0 { Ok(()) } else { Err(Failure { code, message: String::new() }) };
        }
    };
    init_threads()?;
    let config = config_echo(&cli.command);
    let mut outcome = commands::run(&cli.command, &config)?;
    emit(&cli, &outcome, &config)?;
    match outcome.failure.take() {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code as u8)
        }
    }
}
