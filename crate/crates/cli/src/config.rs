//! Flat `key = value` experiment configuration.
//!
//! Every command has a fixed key set with defaults. Values come from, in
//! increasing precedence: defaults, a config file, command-line flags.
//! Unknown keys are rejected, and the fully resolved map is echoed into each
//! run's `meta.txt`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Sample,
    Sweep,
    Toy,
    Opcheck,
    Geom,
    Repro,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Sweep => "sweep",
            Command::Toy => "toy",
            Command::Opcheck => "opcheck",
            Command::Geom => "geom",
            Command::Repro => "repro",
        }
    }

    /// Allowed keys and their defaults. `auto` and the empty string are
    /// resolved by the command itself.
    pub fn defaults(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Command::Sample => &[
                ("model", "lingauss"),
                ("data", ""),
                ("data-seed", "1"),
                ("noise-var", "auto"),
                ("prior-var", "auto"),
                ("scheme", "mt3"),
                ("eta", "0.01"),
                ("C", "10"),
                ("mass", "1"),
                ("K", "1"),
                ("mode", "full"),
                ("nl", "1"),
                ("vhat", "0"),
                ("n", "1000"),
                ("burn-in", "2000"),
                ("thin", "500"),
                ("seed", "0"),
                ("jobs", "1"),
                ("out", ""),
            ],
            Command::Sweep => &[
                ("model", "lingauss"),
                ("data", ""),
                ("data-seed", "1"),
                ("noise-var", "auto"),
                ("prior-var", "auto"),
                ("scheme", "euler,lie-trotter,symmetric,spv,mt3"),
                ("eta-grid", "0.04,0.02,0.01,0.005"),
                ("C", "10"),
                ("mass", "1"),
                ("K", "1"),
                ("mode", "perm"),
                ("nl", "1"),
                ("vhat", "0"),
                ("n", "2000"),
                ("reps", "4"),
                ("burn-in", "auto"),
                ("thin", "auto"),
                ("seed", "0"),
                ("jobs", "1"),
                ("out", ""),
            ],
            Command::Toy => &[
                ("data", ""),
                ("noise-var", "2"),
                ("prior-var", "0.5"),
                ("eta", "0.4"),
                ("C", "2"),
                ("n", "100000"),
                ("burn-in", "1000"),
                ("thin", "auto"),
                ("bins", "128"),
                ("seed", "0"),
                ("jobs", "1"),
                ("out", ""),
            ],
            Command::Opcheck => &[
                ("trials", "100"),
                ("K", "2,3"),
                ("dims", "2,3,4"),
                ("eta", "0.1"),
                ("points", "5"),
                ("norm", "spectral"),
                ("seed", "0"),
                ("jobs", "1"),
                ("out", ""),
            ],
            Command::Geom => &[
                ("model", "lingauss"),
                ("data", ""),
                ("data-seed", "1"),
                ("noise-var", "auto"),
                ("prior-var", "auto"),
                ("scheme", "euler,leapfrog,spv,lie-trotter,symmetric,mt3,sghmc,hmc"),
                ("eta", "0.1"),
                ("C", "1,0.1,0.01,0"),
                ("mass", "1"),
                ("nl", "1"),
                ("eps", "1e-5"),
                ("seed", "0"),
                ("jobs", "1"),
                ("out", ""),
            ],
            Command::Repro => &[
                ("n", "20000"),
                ("reps", "4"),
                ("seed", "0"),
                ("jobs", "1"),
                ("out", ""),
            ],
        }
    }
}

/// Resolved configuration of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub command: Command,
    values: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::invalid(format!("config line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Config {
    /// Defaults only.
    pub fn new(command: Command) -> Self {
        Config {
            command,
            values: command
                .defaults()
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Defaults, then the optional file, then `overrides` (flags).
    pub fn resolve(
        command: Command,
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> CliResult<Self> {
        let mut cfg = Config::new(command);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            for (k, v) in parse_kv(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::invalid(format!(
                "unknown key '{key}' for command {}",
                self.command.name()
            ))),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key '{key}' is not defined for {}", self.command.name()))
    }

    pub fn is_auto(&self, key: &str) -> bool {
        matches!(self.raw(key), "auto" | "")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::invalid(format!("{key} = '{raw}': {e}")))
    }

    /// `None` for `auto` or empty values.
    pub fn get_opt<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.is_auto(key) {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        let items: CliResult<Vec<T>> = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::invalid(format!("{key}: '{s}': {e}")))
            })
            .collect();
        let items = items?;
        if items.is_empty() {
            return Err(CliError::invalid(format!("{key} must not be empty")));
        }
        Ok(items)
    }

    /// Resolved `key = value` lines, command first.
    pub fn echo(&self) -> String {
        let mut s = format!("command = {}\n", self.command.name());
        for (k, v) in &self.values {
            s.push_str(&format!("config.{k} = {v}\n"));
        }
        s
    }
}
