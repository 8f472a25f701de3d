//! Line-based text formats: lattice files, label files, and key=value
//! manifests. Serialization is canonical so equal data means equal bytes.

use std::fs;
use std::path::Path;

use super::DataError;
use crate::lattice::{Lattice, Transition};

fn parse_err(line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse { line, message: message.into() }
}

fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    fs::write(path, text).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Canonical lattice serialization: per lattice a `LATTICE <id> <num_nodes>
/// <num_edges>` header, then one `E <prev> <next> <word> <prob>` line per
/// edge sorted by `(prev, next, word, prob)`, probabilities at 17
/// significant digits (lossless for f64), lattices separated by exactly one
/// blank line.
pub fn serialize_lattices(lattices: &[Lattice]) -> String {
    let mut blocks = Vec::with_capacity(lattices.len());
    for lattice in lattices {
        let mut edges: Vec<&Transition> = lattice.transitions.iter().collect();
        edges.sort_by(|a, b| {
            a.prev
                .cmp(&b.prev)
                .then(a.next.cmp(&b.next))
                .then_with(|| a.word.cmp(&b.word))
                .then(a.prob.total_cmp(&b.prob))
        });
        let mut block = format!(
            "LATTICE {} {} {}\n",
            lattice.id,
            lattice.num_nodes,
            lattice.transitions.len()
        );
        for edge in edges {
            block.push_str(&format!(
                "E {} {} {} {:.16e}\n",
                edge.prev, edge.next, edge.word, edge.prob
            ));
        }
        blocks.push(block);
    }
    blocks.join("\n")
}

/// Parses a lattice file, preserving the file's edge order. Every rejection
/// names the offending 1-based line.
pub fn parse_lattices(text: &str) -> Result<Vec<Lattice>, DataError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut lattices = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let lineno = i + 1;
        let header: Vec<&str> = lines[i].split_whitespace().collect();
        if header.is_empty() {
            return Err(parse_err(lineno, "unexpected blank line"));
        }
        if header.len() != 4 || header[0] != "LATTICE" {
            return Err(parse_err(lineno, "expected `LATTICE <id> <num_nodes> <num_edges>`"));
        }
        let id = header[1].to_string();
        let num_nodes: usize = header[2]
            .parse()
            .map_err(|_| parse_err(lineno, format!("num_nodes is not an integer: {}", header[2])))?;
        let num_edges: usize = header[3]
            .parse()
            .map_err(|_| parse_err(lineno, format!("num_edges is not an integer: {}", header[3])))?;
        i += 1;
        let mut transitions = Vec::with_capacity(num_edges);
        for found in 0..num_edges {
            let lineno = i + 1;
            let line = lines.get(i).copied().unwrap_or("");
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                return Err(parse_err(
                    lineno,
                    format!("expected {num_edges} edge lines, found {found}"),
                ));
            }
            if fields.len() != 5 || fields[0] != "E" {
                return Err(parse_err(lineno, "expected `E <prev> <next> <word> <prob>`"));
            }
            let prev: usize = fields[1]
                .parse()
                .map_err(|_| parse_err(lineno, format!("prev is not an integer: {}", fields[1])))?;
            let next: usize = fields[2]
                .parse()
                .map_err(|_| parse_err(lineno, format!("next is not an integer: {}", fields[2])))?;
            let prob: f64 = fields[4]
                .parse()
                .map_err(|_| parse_err(lineno, format!("prob is not a number: {}", fields[4])))?;
            if !(0.0..=1.0).contains(&prob) {
                return Err(parse_err(lineno, format!("prob {prob} outside [0, 1]")));
            }
            transitions.push(Transition::new(prev, next, fields[3], prob));
            i += 1;
        }
        lattices.push(Lattice::new(id, num_nodes, transitions));
        if i < lines.len() {
            if lines[i].split_whitespace().next() == Some("E") {
                return Err(parse_err(i + 1, "more edge lines than the header declared"));
            }
            if !lines[i].trim().is_empty() {
                return Err(parse_err(i + 1, "expected a blank line between lattices"));
            }
            if i + 1 >= lines.len() {
                return Err(parse_err(i + 1, "trailing blank line"));
            }
            i += 1;
        }
    }
    Ok(lattices)
}

pub fn read_lattices(path: impl AsRef<Path>) -> Result<Vec<Lattice>, DataError> {
    parse_lattices(&read_text(path.as_ref())?)
}

pub fn write_lattices(path: impl AsRef<Path>, lattices: &[Lattice]) -> Result<(), DataError> {
    write_text(path.as_ref(), &serialize_lattices(lattices))
}

/// One `<lattice_id>\t<label>` record per line.
pub fn serialize_labels(rows: &[(String, String)]) -> String {
    rows.iter().map(|(id, label)| format!("{id}\t{label}\n")).collect()
}

pub fn parse_labels(text: &str) -> Result<Vec<(String, String)>, DataError> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let (id, label) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(lineno, "expected `<lattice_id>\\t<label>`"))?;
        if id.is_empty() || label.is_empty() {
            return Err(parse_err(lineno, "empty lattice id or label"));
        }
        rows.push((id.to_string(), label.to_string()));
    }
    Ok(rows)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<(String, String)>, DataError> {
    parse_labels(&read_text(path.as_ref())?)
}

pub fn write_labels(path: impl AsRef<Path>, rows: &[(String, String)]) -> Result<(), DataError> {
    write_text(path.as_ref(), &serialize_labels(rows))
}

/// `key=value` lines in row order.
pub fn serialize_manifest(rows: &[(String, String)]) -> String {
    rows.iter().map(|(key, value)| format!("{key}={value}\n")).collect()
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped so the
/// same reader serves config files.
pub fn parse_manifest(text: &str) -> Result<Vec<(String, String)>, DataError> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) =
            trimmed.split_once('=').ok_or_else(|| parse_err(idx + 1, "expected `key=value`"))?;
        rows.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(rows)
}

/// Last value stored under `key`, if any.
pub fn manifest_value<'a>(rows: &'a [(String, String)], key: &str) -> Option<&'a str> {
    rows.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<(String, String)>, DataError> {
    parse_manifest(&read_text(path.as_ref())?)
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[(String, String)]) -> Result<(), DataError> {
    write_text(path.as_ref(), &serialize_manifest(rows))
}
