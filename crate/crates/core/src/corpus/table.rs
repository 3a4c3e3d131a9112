use crate::error::{Error, Result};

/// Token placed between linearized records.
pub const RECORD_SEPARATOR: &str = "|";

/// Ordered `(attribute, value)` pairs describing one entity.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecordTable(pub Vec<(String, String)>);

/// Flattens a table into `attr : value tokens | attr : value tokens …`.
///
/// Attribute names are passed through verbatim; value text is re-split on
/// whitespace.
pub fn linearize_records(table: &RecordTable) -> Result<String> {
    if table.0.is_empty() {
        return Err(Error::invalid("cannot linearize an empty record table"));
    }
    let mut parts = Vec::with_capacity(table.0.len());
    for (attr, value) in &table.0 {
        if attr.trim().is_empty() {
            return Err(Error::invalid("record attribute must be a non-empty string"));
        }
        let mut piece = format!("{} :", attr.trim());
        for tok in value.split_whitespace() {
            piece.push(' ');
            piece.push_str(tok);
        }
        parts.push(piece);
    }
    Ok(parts.join(&format!(" {RECORD_SEPARATOR} ")))
}
