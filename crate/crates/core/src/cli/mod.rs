//! The `sbprune` command line.
//!
//! Every command prints a JSON report on stdout and a short human summary on
//! stderr. Exit codes: 0 on success, 1 for usage and config errors, 2 for data
//! and model errors. Output files are written only once the whole command has
//! succeeded, each atomically.

pub mod args;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

use crate::data::write_atomic;
use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::Config(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match config::expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match args::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command).and_then(commit) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Writes every output file, removing the earlier ones if a later write fails,
/// then prints the report.
fn commit(outcome: commands::Outcome) -> Result<()> {
    let mut written: Vec<PathBuf> = Vec::new();
    let mut created_dirs: Vec<PathBuf> = Vec::new();
    for (path, bytes) in &outcome.writes {
        let result = ensure_parent(path, &mut created_dirs).and_then(|()| write_atomic(path, bytes));
        if let Err(e) = result {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            for d in created_dirs.iter().rev() {
                let _ = std::fs::remove_dir(d);
            }
            return Err(e);
        }
        written.push(path.clone());
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&outcome.report).expect("serializable")
    );
    eprintln!("{}", outcome.summary);
    Ok(())
}

fn ensure_parent(path: &std::path::Path, created: &mut Vec<PathBuf>) -> Result<()> {
    let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) else {
        return Ok(());
    };
    if !dir.exists() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        created.push(dir.to_path_buf());
    }
    Ok(())
}
