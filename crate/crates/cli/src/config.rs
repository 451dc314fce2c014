//! Layered configuration: struct defaults, then a TOML file, then `--set`
//! overrides, deserialized with unknown keys rejected.
//!
//! A top-level key present in the file replaces the default value for that
//! key wholesale. Overrides address any nested value by a dotted path
//! (`pi.variance`, `detectors[1].gamma` or `detectors.1.gamma`).

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::{one_line, CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Key(String),
    Index(usize),
}

fn parse_path(path: &str) -> CliResult<Vec<Segment>> {
    let bad = || CliError::invalid("--set", format!("malformed key {path:?}"));
    let mut out = Vec::new();
    for part in path.split('.') {
        let (name, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if name.is_empty() {
            if out.is_empty() || rest.is_empty() {
                return Err(bad());
            }
        } else if let Ok(i) = name.parse::<usize>() {
            if out.is_empty() {
                return Err(bad());
            }
            out.push(Segment::Index(i));
        } else {
            out.push(Segment::Key(name.to_string()));
        }
        while !rest.is_empty() {
            let close = rest.find(']').ok_or_else(bad)?;
            let index = rest[1..close].trim().parse::<usize>().map_err(|_| bad())?;
            out.push(Segment::Index(index));
            rest = &rest[close + 1..];
            if !rest.is_empty() && !rest.starts_with('[') {
                return Err(bad());
            }
        }
    }
    Ok(out)
}

fn render_path(segments: &[Segment]) -> String {
    let mut s = String::new();
    for seg in segments {
        match seg {
            Segment::Key(k) => {
                if !s.is_empty() {
                    s.push('.');
                }
                s.push_str(k);
            }
            Segment::Index(i) => s.push_str(&format!("[{i}]")),
        }
    }
    s
}

/// Parse an override value as TOML, falling back to a bare string.
pub fn parse_value(raw: &str) -> Value {
    raw.parse::<Value>().unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Table, segments: &[Segment], value: Value) -> CliResult<()> {
    let Some((Segment::Key(first), rest)) = segments.split_first() else {
        return Err(CliError::invalid("--set", "empty key"));
    };
    if rest.is_empty() {
        root.insert(first.clone(), value);
        return Ok(());
    }
    let mut slot = root.entry(first.clone()).or_insert_with(|| Value::Table(Table::new()));
    for (depth, seg) in rest.iter().enumerate() {
        let here = render_path(&segments[..depth + 1]);
        let last = depth + 1 == rest.len();
        slot = match (seg, slot) {
            (Segment::Key(k), Value::Table(t)) => {
                if last {
                    t.insert(k.clone(), value);
                    return Ok(());
                }
                t.entry(k.clone()).or_insert_with(|| Value::Table(Table::new()))
            }
            (Segment::Index(i), Value::Array(a)) => {
                let len = a.len();
                let item = a.get_mut(*i).ok_or_else(|| {
                    CliError::invalid(
                        render_path(&segments[..depth + 2]),
                        format!("index out of range (length {len})"),
                    )
                })?;
                if last {
                    *item = value;
                    return Ok(());
                }
                item
            }
            (Segment::Key(_), _) => return Err(CliError::invalid(here, "is not a table")),
            (Segment::Index(_), _) => return Err(CliError::invalid(here, "is not an array")),
        };
    }
    unreachable!("the loop returns on the last segment")
}

fn convert(err: serde_path_to_error::Error<toml::de::Error>) -> CliError {
    let path = err.path().to_string();
    let message = one_line(err.inner().message());
    let parent = if path == "." { String::new() } else { path };
    if let Some(rest) = message.strip_prefix("unknown field `") {
        if let Some((name, tail)) = rest.split_once('`') {
            let key = if parent.is_empty() {
                name.to_string()
            } else if parent == name || parent.ends_with(&format!(".{name}")) {
                parent.clone()
            } else {
                format!("{parent}.{name}")
            };
            let expected = tail.trim_start_matches(',').trim().replace('`', "");
            return CliError::invalid(key, format!("unknown key ({expected})"));
        }
    }
    let field = if parent.is_empty() {
        "config".to_string()
    } else {
        parent
    };
    CliError::invalid(field, message)
}

/// Build a `T` from its defaults, an optional TOML file and `key=value`
/// overrides.
pub fn load<T>(file: Option<&Path>, overrides: &[String]) -> CliResult<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut root = defaults_table(&T::default());
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::invalid("config", format!("cannot read {}: {e}", path.display())))?;
        let table: Table = toml::from_str(&text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            match line {
                Some(line) => CliError::invalid("config", format!("{}: line {line}: {}", path.display(), e.message())),
                None => CliError::invalid("config", format!("{}: {}", path.display(), e.message())),
            }
        })?;
        for (key, value) in table {
            root.insert(key, value);
        }
    }
    for entry in overrides {
        let (key, raw) = entry
            .split_once('=')
            .ok_or_else(|| CliError::invalid("--set", format!("expected key=value, got {entry:?}")))?;
        let segments = parse_path(key.trim())?;
        set_path(&mut root, &segments, parse_value(raw.trim()))?;
    }
    serde_path_to_error::deserialize(Value::Table(root)).map_err(convert)
}

fn defaults_table<T: Serialize>(value: &T) -> Table {
    match Value::try_from(value) {
        Ok(Value::Table(t)) => t,
        other => panic!("config defaults must serialize to a table, got {other:?}"),
    }
}

/// One `key = default` line per top-level config key, for `--help`.
pub fn keys_help<T: Serialize + Default>() -> String {
    let mut out = String::from("Config keys (defaults shown; set in --config or with --set key=value):\n");
    for (key, value) in defaults_table(&T::default()) {
        out.push_str(&format!("  {key} = {value}\n"));
    }
    out
}
