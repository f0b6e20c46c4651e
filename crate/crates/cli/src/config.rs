//! Layered run configuration: defaults, then a config file, then flags.

use std::path::Path;

use pgds_core::data::read_records;
use pgds_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Flag values keyed by dotted path into the config object.
#[derive(Debug, Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn new() -> Self {
        Overrides::default()
    }

    pub fn set<T: Serialize>(&mut self, path: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            let v = serde_json::to_value(v).expect("flag values serialize");
            insert(&mut self.0, path, v);
        }
        self
    }

    fn into_value(self) -> Value {
        Value::Object(self.0)
    }
}

fn insert(obj: &mut Map<String, Value>, path: &str, value: Value) {
    match path.split_once('.') {
        None => {
            obj.insert(path.to_string(), value);
        }
        Some((head, rest)) => {
            let child = obj
                .entry(head.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            if !child.is_object() {
                *child = Value::Object(Map::new());
            }
            insert(child.as_object_mut().unwrap(), rest, value);
        }
    }
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Config files hold exactly one record in the line-delimited data format.
pub fn load_config_file(path: &Path) -> Result<Value> {
    let records: Vec<Value> = read_records(path)?;
    match records.as_slice() {
        [one] if one.is_object() => Ok(one.clone()),
        _ => Err(Error::Config(format!(
            "{}: config file must contain exactly one JSON object",
            path.display()
        ))),
    }
}

pub fn resolve<C>(defaults: C, file: Option<&Path>, flags: Overrides) -> Result<C>
where
    C: Serialize + DeserializeOwned,
{
    let mut value = serde_json::to_value(&defaults).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(path) = file {
        merge(&mut value, load_config_file(path)?);
    }
    merge(&mut value, flags.into_value());
    serde_path_to_error::deserialize(value)
        .map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))
}
