use serde_json::{Map, Value};

#[derive(Debug)]
pub struct OverrideError(pub String);

impl std::fmt::Display for OverrideError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "bad override: {}", self.0)
    }
}

impl std::error::Error for OverrideError {}

/// Applies `key.path=value` to a JSON document, creating missing objects.
pub fn apply(doc: &mut Value, spec: &str) -> Result<(), OverrideError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| OverrideError(format!("`{spec}` is not KEY=VALUE")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(OverrideError(format!("`{key}` is not a dotted key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut parts = key.split('.').peekable();
    let mut node = doc;
    while let Some(part) = parts.next() {
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Map::new());
                node.as_object_mut().expect("just set")
            }
            _ => return Err(OverrideError(format!("`{key}`: `{part}` is inside a non-object"))),
        };
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part).or_insert(Value::Null);
    }
    unreachable!("key has at least one part")
}
