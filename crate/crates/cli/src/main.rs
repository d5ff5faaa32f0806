mod args;
mod commands;
mod run;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Exit codes of the binary.
pub mod exit {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const VERIFICATION: u8 = 3;
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: exit::USAGE,
            error: error.into(),
        }
    }

    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: exit::DATA,
            error: error.into(),
        }
    }

    pub fn verification(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: exit::VERIFICATION,
            error: error.into(),
        }
    }
}

/// Configuration problems are usage errors; everything else the library
/// reports comes from the inputs.
impl From<dhgcn::Error> for Failure {
    fn from(e: dhgcn::Error) -> Self {
        match e {
            dhgcn::Error::Config(_) => Self::usage(e),
            _ => Self::data(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Partition(a) => commands::partition(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Probe(a) => commands::probe(a),
        Command::Eval(a) => commands::eval(a),
        Command::AblateSigma(a) => commands::ablate_sigma(a),
        Command::AblateAttention(a) => commands::ablate_attention(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::ExportAttention(a) => commands::export_attention(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
