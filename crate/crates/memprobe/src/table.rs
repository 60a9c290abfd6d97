//! Feature-table export: `image_id,<feature>@L<layer>,...`, one row per
//! image, shortest round-trip decimal for every value.

use std::fmt::Write as _;
use std::path::Path;

use memprobe_core::features::{Column, FeatureTable};

use crate::error::{Error, Result};
use crate::provenance::{data_lines, Provenance};

pub fn format_feature_table(table: &FeatureTable, provenance: Option<&Provenance>) -> String {
    let mut out = String::new();
    if let Some(p) = provenance {
        out.push_str(&p.comment_line());
        out.push('\n');
    }
    out.push_str("image_id");
    for c in table.columns() {
        write!(out, ",{c}").unwrap();
    }
    out.push('\n');
    for (r, id) in table.image_ids().iter().enumerate() {
        out.push_str(id);
        for v in table.row(r) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_feature_table(path: &Path, table: &FeatureTable, provenance: Option<&Provenance>) -> Result<()> {
    std::fs::write(path, format_feature_table(table, provenance)).map_err(|e| Error::io(path, e))
}

pub fn parse_feature_table(text: &str, path: &Path) -> Result<FeatureTable> {
    let mut lines = data_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty feature table"))?;
    let mut fields = header.split(',');
    if fields.next() != Some("image_id") {
        return Err(Error::parse(path, hline, "first column must be `image_id`"));
    }
    let columns = fields
        .map(|f| f.parse::<Column>().map_err(|e| Error::parse(path, hline, e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, text) in lines {
        let mut fields = text.split(',');
        ids.push(fields.next().unwrap_or_default().to_string());
        let before = values.len();
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(path, line, format!("`{f}` is not a number")))?;
            values.push(v);
        }
        if values.len() - before != columns.len() {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} values, found {}", columns.len(), values.len() - before),
            ));
        }
    }
    Ok(FeatureTable::new(ids, columns, values)?)
}

pub fn read_feature_table(path: &Path) -> Result<FeatureTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_table(&text, path)
}
