//! Input parsing and atomic output.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// How sequences are laid out in an input CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One sequence per record.
    #[default]
    Rows,
    /// One sequence per column; every record has one value per sequence.
    Columns,
}

/// Read all of `path`, or standard input when `path` is `None` or `-`.
pub fn read_input(path: Option<&Path>) -> CliResult<String> {
    let mut text = String::new();
    match path {
        Some(p) if p != Path::new("-") => {
            text = std::fs::read_to_string(p)
                .map_err(|e| CliError::invalid("input", format!("cannot read {}: {e}", p.display())))?;
        }
        _ => {
            std::io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| CliError::invalid("input", format!("cannot read standard input: {e}")))?;
        }
    }
    Ok(text)
}

/// Parse numeric sequences from CSV text. Blank lines and lines starting
/// with `#` are skipped. A first record with no numeric field is a header.
pub fn parse_sequences(text: &str, layout: Layout) -> CliResult<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::invalid("input", e.to_string()))?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        let fields: Vec<&str> = rec.iter().filter(|f| !f.is_empty()).collect();
        if fields.is_empty() {
            continue;
        }
        if records.is_empty() && i == 0 && fields.iter().all(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let values = fields
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(CliError::invalid(
                    "input",
                    format!("line {line}: {f:?} is not a finite number"),
                )),
            })
            .collect::<CliResult<Vec<f64>>>()?;
        records.push(values);
    }
    if records.is_empty() {
        return Err(CliError::invalid("input", "no data"));
    }
    match layout {
        Layout::Rows => Ok(records),
        Layout::Columns => {
            let width = records[0].len();
            if let Some(k) = records.iter().position(|r| r.len() != width) {
                return Err(CliError::invalid(
                    "input",
                    format!(
                        "data record {} has {} values, expected {width}",
                        k + 1,
                        records[k].len()
                    ),
                ));
            }
            Ok((0..width).map(|j| records.iter().map(|r| r[j]).collect()).collect())
        }
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory,
/// or to standard output when `path` is `None`.
pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    let fail = |what: &str, e: &dyn std::fmt::Display| CliError::runtime(format!("{what}: {e}"));
    match path {
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .map_err(|e| fail("cannot write standard output", &e))?;
            out.flush().map_err(|e| fail("cannot write standard output", &e))
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let where_ = format!("cannot write {}", path.display());
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&where_, &e))?;
            tmp.write_all(bytes).map_err(|e| fail(&where_, &e))?;
            tmp.as_file().sync_all().map_err(|e| fail(&where_, &e))?;
            tmp.persist(path).map_err(|e| fail(&where_, &e.error))?;
            Ok(())
        }
    }
}
