pub mod commands;
pub mod pipeline;
pub mod rows;

use std::path::PathBuf;

use qdr_core::linalg::SolverSettings;
use qdr_core::Error;

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Global {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub tolerance: f64,
}

impl Global {
    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.tolerance,
            ..SolverSettings::default()
        }
    }
}

/// 1 = bad input or I/O, 2 = a verification or certificate failed,
/// 3 = an iterative solver gave up.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_)
        | Error::Json(_)
        | Error::InvalidModel(_)
        | Error::InvalidInput(_)
        | Error::UnknownSymbol(_)
        | Error::AlphabetMismatch(_)
        | Error::NotErgodic(_)
        | Error::BudgetExceeded(_) => 1,
        Error::Gauge(_) => 2,
        Error::SolverFailure { .. }
        | Error::DegenerateSpectrum { .. }
        | Error::Renormalization(_) => 3,
    }
}

/// Status-column spelling of the same three classes.
pub fn error_class(e: &Error) -> &'static str {
    match exit_code(e) {
        2 => "error:verify",
        3 => "error:solver",
        _ => "error:input",
    }
}
