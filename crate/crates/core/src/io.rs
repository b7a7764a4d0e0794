//! Line-delimited record IO.
//!
//! Bulk files are one JSON record per line. For small fixtures a file may
//! instead hold a single JSON document (an object or an array of records);
//! the readers accept all three shapes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {source}")]
    Decode {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

/// Reads records from a line-delimited file; also accepts a single JSON
/// array or a single JSON object (one record).
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(&text).map_err(|source| IoError::Decode {
            path: path.display().to_string(),
            line: 1,
            source,
        });
    }
    // A pretty-printed single JSON object spans lines; accept it whole.
    if trimmed.starts_with('{') && text.trim().lines().count() > 1 {
        if let Ok(value) = serde_json::from_str::<T>(text.trim()) {
            return Ok(vec![value]);
        }
    }
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|source| IoError::Decode {
            path: path.display().to_string(),
            line: idx + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Writes one JSON record per line; field order follows the struct, so
/// outputs are byte-reproducible.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    let mut buffer = Vec::new();
    for record in records {
        serde_json::to_writer(&mut buffer, record).expect("serialization is infallible");
        buffer.push(b'\n');
    }
    write_bytes(path, &buffer)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| IoError::Write {
                path: path.display().to_string(),
                source,
            })?;
        }
    }
    let mut file = fs::File::create(path).map_err(|source| IoError::Write {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(bytes).map_err(|source| IoError::Write {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        id: u32,
        name: String,
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        let rows = vec![
            Row { id: 1, name: "a".to_string() },
            Row { id: 2, name: "b".to_string() },
        ];
        write_records(&path, &rows).unwrap();
        let back: Vec<Row> = read_records(&path).unwrap();
        assert_eq!(rows, back);
    }

    #[test]
    fn single_array_document_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.json");
        std::fs::write(&path, r#"[{"id":1,"name":"a"}]"#).unwrap();
        let rows: Vec<Row> = read_records(&path).unwrap();
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn malformed_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        std::fs::write(&path, "{\"id\":1,\"name\":\"a\"}\nnot-json\n").unwrap();
        match read_records::<Row>(&path) {
            Err(IoError::Decode { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected decode error, got {other:?}"),
        }
    }
}
