//! `key=value` config files merged under the command line.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;

use clap::CommandFactory;

use crate::{Cli, Usage};

/// Global options that may also appear in a config file.
const GLOBAL_KEYS: [&str; 2] = ["jobs", "seed"];

/// Returns `argv` with every config file entry not already given as a flag
/// inserted right after the subcommand. Keys may use `_` or `-`.
pub fn merge(argv: Vec<OsString>) -> Result<Vec<OsString>, Usage> {
    let args: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let Some(path) = config_path(&args)? else {
        return Ok(argv);
    };
    let command = Cli::command();
    let Some(sub_pos) = args
        .iter()
        .skip(1)
        .position(|a| command.find_subcommand(a).is_some())
        .map(|p| p + 1)
    else {
        return Ok(argv);
    };
    let sub = command
        .find_subcommand(&args[sub_pos])
        .expect("found above");
    let mut allowed: BTreeSet<String> = sub
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    allowed.extend(GLOBAL_KEYS.iter().map(|k| k.to_string()));

    let text = fs::read_to_string(&path)
        .map_err(|e| Usage(format!("cannot read config `{path}`: {e}")))?;
    let mut extra = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Usage(format!("config line {}: expected key=value", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if !allowed.contains(&key) {
            return Err(Usage(format!(
                "config line {}: unknown key `{key}` for {}",
                i + 1,
                sub.get_name()
            )));
        }
        let flag = format!("--{key}");
        let given = args
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if !given {
            extra.push(OsString::from(format!("{flag}={}", value.trim())));
        }
    }
    let mut merged = argv;
    merged.splice(sub_pos + 1..sub_pos + 1, extra);
    Ok(merged)
}

fn config_path(args: &[String]) -> Result<Option<String>, Usage> {
    let mut iter = args.iter().skip(1);
    while let Some(a) = iter.next() {
        if a == "--config" {
            return iter
                .next()
                .cloned()
                .map(Some)
                .ok_or_else(|| Usage("--config needs a path".into()));
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Ok(Some(p.to_string()));
        }
    }
    Ok(None)
}
