//! Config resolution: typed defaults, then the JSON file, then `--set`
//! overrides, each layer merged key by key.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Merges `over` into `base`. Objects merge recursively, except that a
/// change of `"name"` (a target switch) replaces the whole block.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let renamed = matches!((b.get("name"), o.get("name")), (Some(x), Some(y)) if x != y);
            if renamed {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `key.path=value`. The value is read as JSON when it parses,
/// otherwise as a bare string, so `sigma=cv` and `sigma=2.5` both work.
pub fn parse_override(text: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = text.split_once('=').ok_or_else(|| anyhow!("override {text:?} is not of the form key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        bail!("override {text:?} has an empty key segment");
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok((path, value))
}

/// Turns a key path and value into the nested object it denotes.
fn nest(path: &[String], value: Value) -> Value {
    path.iter().rev().fold(value, |acc, key| {
        let mut m = Map::new();
        m.insert(key.clone(), acc);
        Value::Object(m)
    })
}

/// Leaf paths of a user-supplied document. Arrays count as leaves.
fn leaf_paths(v: &Value, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, child) in m {
                prefix.push(k.clone());
                leaf_paths(child, prefix, out);
                prefix.pop();
            }
        }
        _ => out.push(prefix.clone()),
    }
}

fn lookup<'a>(v: &'a Value, path: &[String]) -> Option<&'a Value> {
    path.iter().try_fold(v, |cur, key| cur.as_object()?.get(key))
}

/// Resolves a typed config. Every key the user wrote must survive the
/// round trip through `T`, which catches misspelled keys.
pub fn resolve<T>(file: Option<&Path>, overrides: &[String]) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut doc = serde_json::to_value(T::default())?;
    let mut user = Value::Object(Map::new());
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let layer: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if !layer.is_object() {
            bail!("config {} must hold a JSON object", path.display());
        }
        merge(&mut user, layer.clone());
        merge(&mut doc, layer);
    }
    for text in overrides {
        let (path, value) = parse_override(text)?;
        let layer = nest(&path, value);
        merge(&mut user, layer.clone());
        merge(&mut doc, layer);
    }
    let typed: T = serde_json::from_value(doc).context("config does not match the schema")?;
    let echoed = serde_json::to_value(&typed)?;
    let mut leaves = Vec::new();
    leaf_paths(&user, &mut Vec::new(), &mut leaves);
    for path in leaves.into_iter().filter(|p| !p.is_empty()) {
        if lookup(&echoed, &path).is_none() {
            bail!("unknown config key {}", path.join("."));
        }
    }
    Ok(typed)
}
