//! Score files: CSV with header `path,score`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub path: String,
    pub score: f64,
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?;
    if headers.iter().collect::<Vec<_>>() != ["path", "score"] {
        return Err(Error::Decode { path: path.to_path_buf(), detail: "score file header must be `path,score`".into() });
    }
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        let row: ScoreRow = row.map_err(|e| csv_error(path, e))?;
        if !row.score.is_finite() {
            return Err(Error::Decode { path: path.to_path_buf(), detail: format!("non-finite score for {}", row.path) });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn encode_scores(rows: &[ScoreRow]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|e| Error::Domain(e.to_string()))?;
    }
    writer.into_inner().map_err(|e| Error::Domain(e.to_string()))
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut bytes = encode_scores(rows)?;
    if rows.is_empty() {
        bytes = b"path,score\n".to_vec();
    }
    crate::write_atomic(path, &bytes)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Decode { path: path.to_path_buf(), detail: e.to_string() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_commas() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows = vec![
            ScoreRow { path: "a/b.ppm".into(), score: -1.5 },
            ScoreRow { path: "odd,name.ppm".into(), score: 0.1 + 0.2 },
        ];
        write_scores(&p, &rows).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("path,score\n"));
        assert_eq!(read_scores(&p).unwrap(), rows);
    }

    #[test]
    fn bad_header_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "file,value\nx,1\n").unwrap();
        assert!(matches!(read_scores(&p), Err(Error::Decode { .. })));
        write_scores(&p, &[]).unwrap();
        assert!(read_scores(&p).unwrap().is_empty());
        assert!(matches!(read_scores(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }
}
