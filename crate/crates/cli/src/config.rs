//! JSON run configuration: `{"schema_version": 1, "seed": ..., "<command>": {...}}`.
//! Unknown keys are rejected; command-line flags take precedence.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::{usage, CliResult};

pub const SCHEMA_VERSION: u64 = 1;
const COMMANDS: [&str; 4] = ["analyze", "power", "train", "simulate"];

/// The fully resolved configuration, echoed next to the outputs.
pub fn resolved(command: &str, seed: u64, values: Value) -> Value {
    let mut map = serde_json::Map::new();
    map.insert("schema_version".into(), SCHEMA_VERSION.into());
    map.insert("command".into(), command.into());
    map.insert("seed".into(), seed.into());
    map.insert(command.into(), values);
    Value::Object(map)
}

/// The file's top-level seed and the block for `command`, if any.
pub struct FileConfig<T> {
    pub seed: Option<u64>,
    pub block: Option<T>,
}

pub fn parse<T: DeserializeOwned>(text: &str, command: &str) -> CliResult<FileConfig<T>> {
    let root: Value = serde_json::from_str(text).map_err(|e| usage(format!("config is not valid JSON: {e}")))?;
    let Value::Object(map) = root else {
        return Err(usage("config must be a JSON object"));
    };
    match map.get("schema_version") {
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(usage(format!(
                "unsupported config schema_version {v} (expected {SCHEMA_VERSION})"
            )))
        }
        None => return Err(usage("config is missing `schema_version`")),
    }
    for key in map.keys() {
        if key != "schema_version" && key != "seed" && key != "command" && !COMMANDS.contains(&key.as_str()) {
            return Err(usage(format!("unknown config key `{key}`")));
        }
    }
    if let Some(c) = map.get("command") {
        if c.as_str() != Some(command) {
            return Err(usage(format!("config is for command {c}, not `{command}`")));
        }
    }
    let seed = match map.get("seed") {
        None => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| usage(format!("config seed must be a nonnegative integer, got {v}")))?),
    };
    let block = match map.get(command) {
        None => None,
        Some(v) => Some(
            T::deserialize(v.clone()).map_err(|e| usage(format!("config `{command}` block: {e}")))?,
        ),
    };
    Ok(FileConfig { seed, block })
}

pub fn load<T: DeserializeOwned>(path: Option<&Path>, command: &str) -> CliResult<FileConfig<T>> {
    let Some(path) = path else {
        return Ok(FileConfig { seed: None, block: None });
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text, command)
}

/// Overlays the values set on the command line onto the file block. Unset
/// flags must serialize to nothing for the file value to survive.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<T>) -> CliResult<T> {
    let mut base = match file {
        Some(block) => serde_json::to_value(block)?,
        None => Value::Object(Default::default()),
    };
    let Value::Object(over) = serde_json::to_value(flags)? else {
        unreachable!("argument structs serialize to objects")
    };
    let Value::Object(target) = &mut base else {
        unreachable!("argument structs serialize to objects")
    };
    target.extend(over);
    serde_json::from_value(base).map_err(|e| usage(format!("invalid arguments: {e}")))
}

/// Reads `--config`, merges it under the flags and resolves the seed.
pub fn resolve<T: Serialize + DeserializeOwned>(
    flags: &T,
    path: Option<&Path>,
    seed_flag: Option<u64>,
    command: &str,
) -> CliResult<(T, u64)> {
    let file = load::<T>(path, command)?;
    let seed = seed_flag.or(file.seed).unwrap_or(0);
    Ok((merge(flags, file.block)?, seed))
}
