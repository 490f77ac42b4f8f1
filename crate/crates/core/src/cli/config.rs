//! Flat `key = value` config files, merged into the command line as flags.
//!
//! Each recognized line `key = value` becomes `--key value`, inserted ahead of
//! the flags given on the command line so that explicit flags win. Blank lines
//! and `#` comments are skipped; values may be wrapped in double quotes;
//! underscores in keys are read as dashes.

use std::ffi::OsString;
use std::path::Path;

use crate::error::{Error, Result};

/// Parses config text into `(key, value)` pairs in file order.
pub fn parse_config(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |message: &str| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            message: message.to_string(),
        };
        let (key, value) = line.split_once('=').ok_or_else(|| fail("expected key = value"))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(fail("malformed key"));
        }
        if key == "config" {
            return Err(fail("config files cannot include other config files"));
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        out.push((key, value.to_string()));
    }
    Ok(out)
}

/// Removes `--config PATH` / `--config=PATH` from `args` (after the
/// subcommand at index 1) and splices the file's entries in its place.
pub fn expand_config(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let pos = args
        .iter()
        .position(|a| a == "--config" || a.to_string_lossy().starts_with("--config="));
    let Some(pos) = pos else {
        return Ok(args);
    };
    let flag = args.remove(pos).to_string_lossy().into_owned();
    let path = match flag.strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => {
            if pos >= args.len() {
                return Err(Error::usage("--config requires a path"));
            }
            args.remove(pos).to_string_lossy().into_owned()
        }
    };
    if args
        .iter()
        .any(|a| a == "--config" || a.to_string_lossy().starts_with("--config="))
    {
        return Err(Error::usage("--config may be given once"));
    }
    let text = std::fs::read_to_string(Path::new(&path)).map_err(|e| Error::io(&path, e))?;
    let entries = parse_config(&text, &path)?;
    // flags from the file go right after the subcommand, before explicit flags
    let at = 2.min(args.len());
    let injected = entries
        .into_iter()
        .flat_map(|(k, v)| [OsString::from(format!("--{k}")), OsString::from(v)]);
    args.splice(at..at, injected);
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_quotes_and_underscores() {
        let cfg = parse_config("# c\n\nhidden_dim = 8\nout = \"a b.ckpt\"\n", "f").unwrap();
        assert_eq!(
            cfg,
            vec![
                ("hidden-dim".to_string(), "8".to_string()),
                ("out".to_string(), "a b.ckpt".to_string())
            ]
        );
    }

    #[test]
    fn malformed_lines_name_the_line() {
        match parse_config("a = 1\nnot a pair\n", "f.cfg") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_config("config = x", "f").is_err());
    }
}
