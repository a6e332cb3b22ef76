//! Command-line front end: `lrt rectify` and `lrt bench`.

use std::path::PathBuf;

pub mod args;
pub mod commands;
pub mod pnm;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    InputError = 1,
    NotConverged = 2,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image: {0}")]
    Image(String),

    #[error(transparent)]
    Lib(#[from] lrt::Error),
}

/// Parses `args` (program name first) and runs the command, printing
/// diagnostics to stderr.
pub fn run<I, T>(args: I) -> Exit
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use clap::Parser;
    let cli = match args::Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    Exit::Success
                }
                _ => Exit::InputError,
            };
        }
    };
    let outcome = match cli.command {
        args::Command::Rectify(a) => a.resolve().and_then(|cfg| commands::rectify(&cfg)),
        args::Command::Bench(a) => a.resolve().and_then(|cfg| commands::bench(&cfg)),
    };
    match outcome {
        Ok(exit) => exit,
        Err(e) => {
            eprintln!("error: {e}");
            Exit::InputError
        }
    }
}
