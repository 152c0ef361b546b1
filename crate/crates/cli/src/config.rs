//! Config files and flag overrides.
//!
//! Every subcommand reads an optional TOML file whose keys mirror a config
//! struct. Each leaf key `a.b_c` can be overridden by the flag `--a.b-c`.

use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches};
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::CliError;

pub const OUT_DIR_ENV: &str = "EDGEMASK_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "edgemask-out";

/// Kind of value a run-level key holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    Scalar,
    List,
}

#[derive(Debug, Clone)]
pub struct Key {
    pub name: String,
    pub kind: KeyKind,
    pub help: String,
}

impl Key {
    pub fn scalar(name: &str, help: &str) -> Self {
        Key {
            name: name.into(),
            kind: KeyKind::Scalar,
            help: help.into(),
        }
    }

    pub fn list(name: &str, help: &str) -> Self {
        Key {
            name: name.into(),
            kind: KeyKind::List,
            help: help.into(),
        }
    }
}

/// Dotted names of every leaf in the TOML form of `value`, plus `extra`.
pub fn leaf_keys<T: Serialize>(value: &T, extra: &[&str]) -> Vec<Key> {
    let table = Table::try_from(value).expect("config structs serialize to a table");
    let mut out = Vec::new();
    collect("", &table, &mut out);
    out.extend(extra.iter().map(|s| s.to_string()));
    out.into_iter()
        .map(|name| {
            let help = format!("overrides `{name}`");
            Key::scalar(&name, &help)
        })
        .collect()
}

fn collect(prefix: &str, table: &Table, out: &mut Vec<String>) {
    for (k, v) in table {
        let name = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => collect(&name, t, out),
            _ => out.push(name),
        }
    }
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

pub fn key_args(keys: &[Key]) -> Vec<Arg> {
    keys.iter()
        .map(|k| {
            let arg = Arg::new(k.name.clone())
                .long(flag_name(&k.name))
                .value_name("VALUE")
                .help(k.help.clone());
            match k.kind {
                KeyKind::Scalar => arg.action(ArgAction::Set),
                KeyKind::List => arg.action(ArgAction::Append).value_delimiter(','),
            }
        })
        .collect()
}

pub fn config_arg() -> Arg {
    Arg::new("config")
        .long("config")
        .short('c')
        .value_name("FILE")
        .value_parser(clap::value_parser!(PathBuf))
        .help("TOML config file; flags override its keys")
}

pub fn read_table(path: Option<&Path>) -> Result<Table, CliError> {
    let Some(path) = path else {
        return Ok(Table::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Reads `--config` and applies every key flag given on the command line.
pub fn layered(m: &ArgMatches, keys: &[Key]) -> Result<Table, CliError> {
    let mut table = read_table(m.get_one::<PathBuf>("config").map(PathBuf::as_path))?;
    for k in keys {
        let value = match k.kind {
            KeyKind::Scalar => match m.get_one::<String>(&k.name) {
                Some(raw) => parse_value(raw),
                None => continue,
            },
            KeyKind::List => match m.get_many::<String>(&k.name) {
                Some(raws) => Value::Array(raws.map(|r| parse_value(r)).collect()),
                None => continue,
            },
        };
        set_path(&mut table, &k.name, value)?;
    }
    Ok(table)
}

/// A TOML literal when `raw` parses as one, otherwise a string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

pub fn take_string(table: &mut Table, key: &str) -> Result<Option<String>, CliError> {
    match table.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Ok(Some(other.to_string())),
    }
}

pub fn take_strings(table: &mut Table, key: &str) -> Result<Vec<String>, CliError> {
    match table.remove(key) {
        None => Ok(Vec::new()),
        Some(Value::Array(items)) => Ok(items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => s,
                other => other.to_string(),
            })
            .collect()),
        Some(Value::String(s)) => Ok(vec![s]),
        Some(other) => Err(CliError::config(format!(
            "`{key}` must be a list, got {other}"
        ))),
    }
}

pub fn take_value<T: DeserializeOwned>(
    table: &mut Table,
    key: &str,
) -> Result<Option<T>, CliError> {
    match table.remove(key) {
        None => Ok(None),
        Some(v) => v
            .try_into()
            .map(Some)
            .map_err(|e| CliError::config(format!("`{key}`: {e}"))),
    }
}

/// Deserializes what is left of `table` into the subcommand's config.
pub fn finish<T: DeserializeOwned>(table: Table) -> Result<T, CliError> {
    Value::Table(table)
        .try_into()
        .map_err(|e| CliError::config(e.to_string()))
}

/// `--out-dir`, then `EDGEMASK_OUT_DIR`, then the config file, then the
/// default.
pub fn out_dir(m: &ArgMatches, table: &mut Table) -> Result<PathBuf, CliError> {
    let from_file = take_string(table, "out_dir")?;
    if let Some(flag) = m.get_one::<String>("out_dir") {
        return Ok(PathBuf::from(flag));
    }
    if let Ok(env) = std::env::var(OUT_DIR_ENV) {
        if !env.is_empty() {
            return Ok(PathBuf::from(env));
        }
    }
    Ok(PathBuf::from(
        from_file.unwrap_or_else(|| DEFAULT_OUT_DIR.to_string()),
    ))
}
