//! Config-file overlay.
//!
//! A config file holds `key = value` lines (`#` starts a comment). Each key is
//! a long flag name of the chosen subcommand. The file's entries are spliced in
//! right after the subcommand as `--key=value`, so anything given on the command
//! line later overrides them and unknown keys are rejected like unknown flags.

use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};

const CONFIG_FLAG: &str = "--config";
/// Global flags that take a separate value token.
const VALUED_GLOBALS: &[&str] = &[CONFIG_FLAG, "--threads"];

/// Parses overlay text into `--key=value` arguments.
pub fn parse(text: &str) -> Result<Vec<String>> {
    let mut args = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`, got `{line}`", n + 1);
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            bail!("config line {}: invalid key `{}`", n + 1, key);
        }
        args.push(format!("--{key}={}", value.trim()));
    }
    Ok(args)
}

fn config_path(args: &[OsString]) -> Result<Option<OsString>> {
    let mut found = None;
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == CONFIG_FLAG {
            found = Some(it.next().cloned().context("--config needs a file path")?);
        } else if let Some(p) = s.strip_prefix("--config=") {
            found = Some(OsString::from(p));
        }
    }
    Ok(found)
}

/// Position of the subcommand token, skipping global flags and their values.
fn subcommand_index(args: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if VALUED_GLOBALS.contains(&s.as_ref()) {
            i += 2;
        } else if s.starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

/// Returns `args` with the overlay from `--config`, if any, spliced in.
pub fn apply(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args)? else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.to_string_lossy()))?;
    let extra = parse(&text)?;
    let Some(at) = subcommand_index(&args) else {
        return Ok(args);
    };
    let mut out = args[..=at].to_vec();
    out.extend(extra.into_iter().map(OsString::from));
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}
