use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

use super::table::{linearize_records, RecordTable};

/// One line of a JSONL dataset, with record tables already linearized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawInstance {
    pub id: u32,
    pub source: String,
    pub target: String,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Shape {
    Text,
    Records,
}

/// Reads a UTF-8 JSONL file of `{"source", "target"}` or `{"records", "target"}`
/// objects. Records are arrays of `[attribute, value]` string pairs.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<RawInstance>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

/// Parses JSONL text; `origin` names the source in error messages.
pub fn parse_jsonl(text: &str, origin: &str) -> Result<Vec<RawInstance>> {
    let mut out = Vec::new();
    let mut shape = None;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Corpus {
            path: origin.to_string(),
            line: n + 1,
            msg,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| err(format!("malformed JSON: {e}")))?;
        let obj = value.as_object().ok_or_else(|| err("expected a JSON object".into()))?;
        let target = obj
            .get("target")
            .and_then(Value::as_str)
            .ok_or_else(|| err("missing string field \"target\"".into()))?;
        let (this_shape, source) = match (obj.get("source"), obj.get("records")) {
            (Some(s), None) => {
                let s = s.as_str().ok_or_else(|| err("\"source\" must be a string".into()))?;
                (Shape::Text, s.to_string())
            }
            (None, Some(r)) => {
                let table = parse_records(r).map_err(err)?;
                (Shape::Records, linearize_records(&table).map_err(|e| err(e.to_string()))?)
            }
            (Some(_), Some(_)) => return Err(err("both \"source\" and \"records\" present".into())),
            (None, None) => return Err(err("missing \"source\" or \"records\"".into())),
        };
        match shape {
            None => shape = Some(this_shape),
            Some(s) if s != this_shape => return Err(err("mixed source/records shapes in one file".into())),
            _ => {}
        }
        out.push(RawInstance {
            id: out.len() as u32,
            source,
            target: target.to_string(),
        });
    }
    Ok(out)
}

fn parse_records(v: &Value) -> std::result::Result<RecordTable, String> {
    let arr = v.as_array().ok_or("\"records\" must be an array")?;
    let mut pairs = Vec::with_capacity(arr.len());
    for item in arr {
        let pair = item
            .as_array()
            .filter(|p| p.len() == 2)
            .ok_or("each record must be an [attribute, value] pair")?;
        let attr = pair[0].as_str().ok_or("record attribute must be a string")?;
        let value = pair[1].as_str().ok_or("record value must be a string")?;
        pairs.push((attr.to_string(), value.to_string()));
    }
    Ok(RecordTable(pairs))
}
