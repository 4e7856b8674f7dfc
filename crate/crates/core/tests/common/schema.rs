//! Minimal JSON Schema checker covering the keywords used by
//! `protocol/schema.json`.

use serde_json::Value;

pub fn load() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../protocol/schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).expect("schema file")).expect("schema json")
}

/// Validates `value` against `#/$defs/<def>`.
pub fn validate(root: &Value, def: &str, value: &Value) -> Result<(), String> {
    check(root, &root["$defs"][def], value, def)
}

fn check(root: &Value, schema: &Value, value: &Value, at: &str) -> Result<(), String> {
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        let name = r
            .strip_prefix("#/$defs/")
            .ok_or_else(|| format!("unsupported ref {r}"))?;
        return check(root, &root["$defs"][name], value, at);
    }
    if let Some(c) = schema.get("const") {
        if value != c {
            return Err(format!("{at}: expected {c}, got {value}"));
        }
    }
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if !options.contains(value) {
            return Err(format!("{at}: {value} not in {options:?}"));
        }
    }
    match schema.get("type").and_then(Value::as_str) {
        Some("object") => {
            let obj = value.as_object().ok_or_else(|| format!("{at}: not an object"))?;
            let props = schema.get("properties").and_then(Value::as_object);
            for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
                let key = key.as_str().unwrap();
                if !obj.contains_key(key) {
                    return Err(format!("{at}: missing {key}"));
                }
            }
            for (key, v) in obj {
                match props.and_then(|p| p.get(key)) {
                    Some(s) => check(root, s, v, &format!("{at}.{key}"))?,
                    None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                        return Err(format!("{at}: unexpected key {key}"))
                    }
                    None => {}
                }
            }
        }
        Some("string") => {
            let s = value.as_str().ok_or_else(|| format!("{at}: not a string"))?;
            if let Some(n) = schema.get("minLength").and_then(Value::as_u64) {
                if (s.len() as u64) < n {
                    return Err(format!("{at}: shorter than {n}"));
                }
            }
        }
        Some("integer") => {
            if !(value.is_u64() || value.is_i64()) {
                return Err(format!("{at}: not an integer"));
            }
            if let Some(m) = schema.get("minimum").and_then(Value::as_f64) {
                if value.as_f64().unwrap() < m {
                    return Err(format!("{at}: below {m}"));
                }
            }
        }
        Some("array") => {
            let items = value.as_array().ok_or_else(|| format!("{at}: not an array"))?;
            if let Some(s) = schema.get("items") {
                for (i, v) in items.iter().enumerate() {
                    check(root, s, v, &format!("{at}[{i}]"))?;
                }
            }
        }
        Some(other) => return Err(format!("unsupported type {other}")),
        None => {}
    }
    Ok(())
}
