//! One JSON object per line, with line numbers on parse errors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path} line {line}: {source}")]
    Parse { path: String, line: usize, source: serde_json::Error },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Encode { path: String, source: serde_json::Error },
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let display = path.display().to_string();
    let io_err = |source| JsonlError::Io { path: display.clone(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|source| JsonlError::Encode { path: display.clone(), source })?;
        writeln!(writer, "{line}").map_err(|source| JsonlError::Io { path: display.clone(), source })?;
    }
    writer.flush().map_err(|source| JsonlError::Io { path: display, source })
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| JsonlError::Io { path: display.clone(), source })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| JsonlError::Io { path: display.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            path: display.clone(),
            line: idx + 1,
            source,
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::templates::default_templates;
    use crate::corpus::{generate_corpus, CorpusConfig, Sample};
    use crate::corpus::region::RegionModel;
    use crate::grammar::DesignatorTable;

    #[test]
    fn round_trip_preserves_samples() {
        let config = CorpusConfig { n_samples: 20, ..CorpusConfig::default() };
        let corpus = generate_corpus(
            &config,
            &RegionModel::default_regions(),
            &default_templates(),
            &DesignatorTable::bundled(),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        write_jsonl(&path, &corpus).unwrap();
        let back: Vec<Sample> = read_jsonl(&path).unwrap();
        assert_eq!(corpus, back);
    }

    #[test]
    fn empty_file_reads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let got: Vec<Sample> = read_jsonl(&path).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\": \"a\"\n").unwrap();
        let err = read_jsonl::<Sample>(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn wire_schema_field_names_are_stable() {
        let config = CorpusConfig { n_samples: 1, ..CorpusConfig::default() };
        let corpus = generate_corpus(
            &config,
            &RegionModel::default_regions(),
            &default_templates(),
            &DesignatorTable::bundled(),
        );
        let json = serde_json::to_value(&corpus[0]).unwrap();
        let obj = json.as_object().unwrap();
        for key in ["id", "transcript", "gold_icao", "commands", "planes", "provenance"] {
            assert!(obj.contains_key(key), "missing {key}");
        }
        let plane = obj["planes"].as_array().unwrap()[0].as_object().unwrap();
        for key in ["callsign", "x", "y", "z", "t"] {
            assert!(plane.contains_key(key), "missing plane field {key}");
        }
        let prov = obj["provenance"].as_object().unwrap();
        assert!(prov.contains_key("target_wer"));
        assert!(prov.contains_key("clipped_words"));
    }
}
