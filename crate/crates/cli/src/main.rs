mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_VERIFICATION: u8 = 3;

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn validation(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            error: error.into(),
        }
    }

    pub fn verification(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_VERIFICATION,
            error: error.into(),
        }
    }
}

impl From<ltcmh::Error> for Failure {
    fn from(e: ltcmh::Error) -> Self {
        let code = if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME };
        Failure { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        match error.downcast::<ltcmh::Error>() {
            Ok(e) => e.into(),
            Err(error) => Failure {
                code: EXIT_RUNTIME,
                error,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_VALIDATION),
            };
        }
    };
    let out = cli.output_dir.clone();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&out, a),
        Command::Train(a) => commands::train(&out, a),
        Command::Encode(a) => commands::encode(&out, a),
        Command::Eval(a) => commands::eval(&out, a),
        Command::Ablate(a) => commands::ablate(&out, a),
        Command::CheckGrad(a) => commands::check_grad(&out, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
