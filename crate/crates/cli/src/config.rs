//! `--config <file>` support. The file is a JSON object whose scalar entries
//! are global flags and whose object entries are sections for subcommands:
//!
//! ```json
//! { "seed": 7, "train": { "arch": "cnn1d-gru", "epochs": 30 },
//!   "dataset": { "split": { "folds": 10 } } }
//! ```
//!
//! Entries are expanded into flags placed before the user's own arguments,
//! so anything given on the command line wins.

use std::ffi::OsString;

use anyhow::{bail, Context, Result};
use serde_json::{Map, Value};

/// Global flags that take a value, used to find the subcommand in argv.
const GLOBAL_VALUED: [&str; 3] = ["--seed", "--config", "--jobs"];
/// Subcommands that have their own subcommands.
const NESTED: [&str; 1] = ["dataset"];

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
        if s == "--" {
            break;
        }
    }
    None
}

/// Index just past the subcommand path (e.g. `dataset split`) and the path
/// itself. Only global flags may precede the subcommand.
fn subcommand_path(args: &[OsString]) -> (usize, Vec<String>) {
    let mut i = 1;
    let mut path = Vec::new();
    while i < args.len() {
        let s = args[i].to_string_lossy().into_owned();
        if s.starts_with('-') {
            let takes_value = GLOBAL_VALUED.contains(&s.as_str());
            i += if takes_value { 2 } else { 1 };
            continue;
        }
        path.push(s);
        i += 1;
        if path.len() == 2 || !NESTED.contains(&path[0].as_str()) {
            break;
        }
    }
    (i.min(args.len()), path)
}

fn push_flag(out: &mut Vec<OsString>, key: &str, value: &Value) -> Result<()> {
    let flag = format!("--{}", key.replace('_', "-"));
    match value {
        Value::Bool(true) => out.push(flag.into()),
        Value::Bool(false) | Value::Null => {}
        Value::Number(n) => {
            out.push(flag.into());
            out.push(n.to_string().into());
        }
        Value::String(s) => {
            out.push(flag.into());
            out.push(s.into());
        }
        Value::Array(items) => {
            for item in items {
                push_flag(out, key, item)?;
            }
        }
        Value::Object(_) => bail!("config key {key:?}: nested object not allowed here"),
    }
    Ok(())
}

fn section<'a>(root: &'a Map<String, Value>, path: &[String]) -> Option<&'a Map<String, Value>> {
    let mut cur = root;
    for p in path {
        cur = cur.get(p)?.as_object()?;
    }
    Some(cur)
}

/// Returns argv with config-file flags spliced in.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.to_string_lossy()))?;
    let root: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.to_string_lossy()))?;
    let Value::Object(root) = root else {
        bail!("config {}: top level must be a JSON object", path.to_string_lossy());
    };

    let mut globals = Vec::new();
    for (k, v) in &root {
        if !v.is_object() && k != "config" {
            push_flag(&mut globals, k, v)?;
        }
    }
    let (split_at, sub) = subcommand_path(&args);
    let mut local = Vec::new();
    if let Some(sec) = section(&root, &sub) {
        for (k, v) in sec {
            if !v.is_object() {
                push_flag(&mut local, k, v)?;
            }
        }
    }

    let mut out = Vec::with_capacity(args.len() + globals.len() + local.len());
    out.push(args[0].clone());
    out.extend(globals);
    out.extend_from_slice(&args[1..split_at]);
    out.extend(local);
    out.extend_from_slice(&args[split_at..]);
    Ok(out)
}
