//! `key = value` config files. Each key names a long flag of the invoked
//! subcommand; flags given on the command line win.

use std::collections::BTreeMap;
use std::ffi::OsString;

use clap::Command;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

pub fn parse(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError { line: i + 1, message: format!("expected `key = value`, got `{line}`") })?;
        let k = k.trim().trim_start_matches("--").to_string();
        if k.is_empty() {
            return Err(ConfigError { line: i + 1, message: "empty key".into() });
        }
        out.insert(k, v.trim().to_string());
    }
    Ok(out)
}

/// Value of `--config` in `args`, if any.
pub fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Appends `--key value` for every config entry the invoked subcommand
/// accepts and the command line does not already set. Keys the subcommand
/// does not know are skipped, so one file can serve several subcommands.
pub fn merge(cmd: &Command, args: Vec<OsString>, config: &BTreeMap<String, String>) -> Vec<OsString> {
    let mut sub = cmd;
    for a in args.iter().skip(1) {
        let s = a.to_string_lossy();
        if s.starts_with('-') {
            continue;
        }
        match sub.find_subcommand(s.as_ref()) {
            Some(next) => sub = next,
            None => continue,
        }
    }
    let given = |long: &str| {
        args.iter().any(|a| {
            let s = a.to_string_lossy();
            s == format!("--{long}") || s.starts_with(&format!("--{long}="))
        })
    };
    let mut out = args.clone();
    for (key, value) in config {
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else { continue };
        if given(key) {
            continue;
        }
        let is_switch = matches!(arg.get_action(), clap::ArgAction::SetTrue);
        if is_switch {
            if matches!(value.as_str(), "true" | "yes" | "1") {
                out.push(format!("--{key}").into());
            }
        } else {
            out.push(format!("--{key}").into());
            out.push(value.into());
        }
    }
    out
}
