//! JSON config loading and `--override key=value` handling.

use std::fmt;
use std::path::Path;

use anyhow::{bail, Context as _, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Marks an error as a configuration problem (exit code 1).
#[derive(Debug)]
pub struct ConfigProblem(pub String);

impl fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigProblem {}

/// Short names accepted in overrides for a differently named key.
const ALIASES: [(&str, &str); 1] = [("lambda", "l2_lambda")];

fn strict<T: DeserializeOwned>(value: Value, origin: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ConfigProblem(format!("{origin}: key `{path}`: {}", e.into_inner())).into()
    })
}

/// Parses a config file, rejecting unknown keys with their full path.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| ConfigProblem(format!("cannot read config {}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path_in = e.path().to_string();
        ConfigProblem(format!(
            "{}: key `{path_in}`: {}",
            path.display(),
            e.into_inner()
        ))
        .into()
    })
}

fn leaf_paths(value: &Value, prefix: &mut Vec<String>, name: &str, out: &mut Vec<Vec<String>>) {
    if let Value::Object(map) = value {
        for (k, v) in map {
            prefix.push(k.clone());
            if k == name {
                out.push(prefix.clone());
            }
            leaf_paths(v, prefix, name, out);
            prefix.pop();
        }
    }
}

/// Resolves an override key to a path in `value`. Dotted keys are taken
/// literally; a bare key matches the shallowest key of that name and must
/// be unambiguous at that depth.
fn resolve(value: &Value, key: &str) -> Result<Vec<String>> {
    let key = ALIASES
        .iter()
        .find(|(a, _)| *a == key)
        .map_or(key, |(_, k)| k);
    if key.contains('.') {
        return Ok(key.split('.').map(str::to_string).collect());
    }
    let mut found = Vec::new();
    leaf_paths(value, &mut Vec::new(), key, &mut found);
    let Some(depth) = found.iter().map(Vec::len).min() else {
        bail!(ConfigProblem(format!("unknown config key `{key}`")));
    };
    let shallowest: Vec<&Vec<String>> = found.iter().filter(|p| p.len() == depth).collect();
    if shallowest.len() > 1 {
        let names: Vec<String> = shallowest.iter().map(|p| p.join(".")).collect();
        bail!(ConfigProblem(format!(
            "override key `{key}` is ambiguous: {}",
            names.join(", ")
        )));
    }
    Ok(shallowest[0].clone())
}

fn set(value: &mut Value, path: &[String], new: Value) -> Result<()> {
    let mut cur = value;
    for (i, seg) in path.iter().enumerate() {
        let Value::Object(map) = cur else {
            bail!(ConfigProblem(format!(
                "`{}` is not a section",
                path[..i].join(".")
            )));
        };
        if i + 1 == path.len() {
            map.insert(seg.clone(), new);
            return Ok(());
        }
        cur = map
            .entry(seg.clone())
            .or_insert_with(|| Value::Object(Default::default()));
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
    Ok(())
}

/// Applies `key=value` overrides. Values are parsed as JSON, falling back
/// to a plain string.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(
    config: T,
    overrides: &[String],
) -> Result<T> {
    if overrides.is_empty() {
        return Ok(config);
    }
    let mut value = serde_json::to_value(&config)?;
    for o in overrides {
        let Some((key, raw)) = o.split_once('=') else {
            bail!(ConfigProblem(format!("override `{o}` is not key=value")));
        };
        let path = resolve(&value, key.trim())?;
        let new = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set(&mut value, &path, new)?;
    }
    strict(value, "override")
}
