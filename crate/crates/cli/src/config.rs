//! Flat `key = value` run configuration.
//!
//! Values resolve in three layers: built-in defaults, then an optional
//! config file, then command-line flags. Flags are the keys in kebab-case
//! (`batch_size` becomes `--batch-size`).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, Result};

/// A configuration key. `default: None` marks a required key.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default: Some(default),
        help,
    }
}

pub const fn required(name: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default: None,
        help,
    }
}

pub const OUT: Key = required("out", "output directory");
pub const DATA: Key = required("data", "dataset directory written by build-dataset or toy-corpus");
pub const MODEL: Key = required("model", "model checkpoint (model.json from train)");
pub const PRECISION: Key = key("precision", "f32", "floating point precision: f32 or f64");

pub const MODEL_KEYS: &[Key] = &[
    key("arch", "gru-gru", "architecture: gru-gru or trans-trans"),
    key("hidden", "100", "GRU hidden size"),
    key("embed_dim", "100", "GRU embedding size"),
    key("gru_attention", "false", "attention over encoder states in the GRU decoder"),
    key("d_model", "96", "Transformer width"),
    key("heads", "3", "Transformer attention heads"),
    key("layers", "3", "Transformer layers per stack"),
    key("ff_dim", "384", "Transformer feed-forward width"),
    key("init_seed", "0", "parameter initialization seed"),
    PRECISION,
];

pub const TRAIN_KEYS: &[Key] = &[
    key("batch_size", "32", "minibatch size"),
    key("rho", "0.5", "fraction of aligned pairs used with the supervised loss"),
    key("tf_ratio", "0.2", "teacher-forcing probability per decoding step"),
    key("losses", "rec+bt+sup", "enabled losses, joined with '+'"),
    key("w_rec", "1", "weight of the reconstruction loss"),
    key("w_bt", "1", "weight of the back-translation loss"),
    key("w_sup", "1", "weight of the supervised loss"),
    key("epochs", "40", "training epochs"),
    key("seed", "0", "seed for batching, masking and supervision sampling"),
    key("optimizer", "adam", "adam or sgd"),
    key("schedule", "auto", "constant, noam, or auto (noam for trans-trans)"),
    key("lr", "0.001", "learning rate for the constant schedule"),
    key("warmup", "20000", "Noam warmup steps"),
    key("noam_factor", "1", "Noam scale factor"),
    key("clip_norm", "5", "global gradient-norm clip"),
    key("p_mask_path", "0.5", "probability of masking a path entity in reconstruction"),
    key("p_mask_token", "0.1", "per-token masking probability for sentences"),
    key("eval_every", "1", "dev evaluation interval in epochs"),
    key("dev_limit", "0", "evaluate on at most this many dev tuples and pairs (0 = all)"),
];

/// Resolved key/value settings of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Layers `file` entries and `overrides` over the defaults of `keys`.
    pub fn resolve(
        command: &str,
        keys: &[Key],
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut values: BTreeMap<String, String> = keys
            .iter()
            .filter_map(|k| k.default.map(|d| (k.name.to_string(), d.to_string())))
            .collect();
        let known = |name: &str| keys.iter().any(|k| k.name == name);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            for (name, value) in parse_flat(&text).map_err(|m| CliError::Config(format!("{}: {m}", path.display())))? {
                if !known(&name) {
                    return Err(CliError::Config(format!("{}: unknown key {name:?} for {command}", path.display())));
                }
                values.insert(name, value);
            }
        }
        for (name, value) in overrides {
            values.insert(name.clone(), value.clone());
        }
        for k in keys {
            if !values.contains_key(k.name) {
                return Err(CliError::Config(format!(
                    "missing required key {:?} (--{})",
                    k.name,
                    flag_name(k.name)
                )));
            }
        }
        Ok(RunConfig {
            command: command.to_string(),
            values,
        })
    }

    pub fn str(&self, name: &str) -> &str {
        self.values.get(name).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.str(name);
        raw.trim()
            .parse()
            .map_err(|e| CliError::Config(format!("bad value {raw:?} for {name}: {e}")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, name: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        self.str(name)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| CliError::Config(format!("bad item {s:?} in {name}: {e}"))))
            .collect()
    }

    pub fn set(&mut self, name: &str, value: impl ToString) {
        self.values.insert(name.to_string(), value.to_string());
    }

    /// The config file format read by `resolve`.
    pub fn render(&self) -> String {
        let mut out = format!("# textkb {}\n", self.command);
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_flat(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let k = k.trim().replace('-', "_");
        if k.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}
