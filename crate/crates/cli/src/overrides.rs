//! `--dotted.key=value` overrides layered over a TOML config.

use toml::{Table, Value};

use multihop::{Error, Result};

/// Top-level training keys that may be overridden without a dot.
const PLAIN_KEYS: &[&str] = &[
    "h",
    "hops",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "batch_size",
    "epochs",
    "steps_per_epoch",
    "seed",
    "checkpoint_interval",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub key: Vec<String>,
    pub value: Value,
}

/// Splits `args` into overrides and everything else (kept in order).
///
/// An override is `--key=value` where `key` contains a dot or is one of the
/// plain training keys.
pub fn extract(args: Vec<String>) -> Result<(Vec<String>, Vec<Override>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut found = Vec::new();
    for arg in args {
        let parsed = arg
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .filter(|(k, _)| k.contains('.') || PLAIN_KEYS.contains(k));
        match parsed {
            Some((key, raw)) => found.push(parse(key, raw)?),
            None => rest.push(arg),
        }
    }
    Ok((rest, found))
}

fn parse(key: &str, raw: &str) -> Result<Override> {
    let mut path: Vec<String> = key.split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    if path == ["hops"] {
        path[0] = "h".into();
    }
    // a bare word that is not valid TOML is taken as a string
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()));
    Ok(Override { key: path, value })
}

pub fn apply(table: &mut Table, overrides: &[Override]) -> Result<()> {
    for o in overrides {
        let (last, parents) = o.key.split_last().expect("non-empty key");
        let mut node = &mut *table;
        for part in parents {
            let entry = node.entry(part.clone()).or_insert_with(|| Value::Table(Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override `{}`: `{part}` is not a section", o.key.join("."))))?;
        }
        if last == "h" {
            node.remove("hops");
        }
        node.insert(last.clone(), o.value.clone());
    }
    Ok(())
}
