//! Line-delimited JSON manifest: one `SampleRecord` object per line.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{Language, SampleRecord, Task};

// Language and task are read as plain strings so that a bad value is reported
// as an invalid record rather than a syntax error.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    sample_id: String,
    speaker_id: String,
    language: String,
    task: String,
    session_index: u32,
    audio_duration_sec: f64,
    speech_duration_sec: f64,
    embedding_row: usize,
    #[serde(default)]
    model_tag: Option<String>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses manifest lines in order. Blank lines are skipped but still counted.
pub fn read_manifest(reader: impl BufRead) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<manifest>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        let invalid = |message: String| Error::InvalidRecord {
            line: line_no,
            sample_id: raw.sample_id.clone(),
            message,
        };
        let language: Language = raw.language.parse().map_err(|e: Error| invalid(e.to_string()))?;
        let task: Task = raw.task.parse().map_err(|e: Error| invalid(e.to_string()))?;
        let record = SampleRecord {
            sample_id: raw.sample_id.clone(),
            speaker_id: raw.speaker_id.clone(),
            language,
            task,
            session_index: raw.session_index,
            audio_duration_sec: raw.audio_duration_sec,
            speech_duration_sec: raw.speech_duration_sec,
            embedding_row: raw.embedding_row,
            model_tag: raw.model_tag.clone(),
        };
        record.check().map_err(invalid)?;
        if let Some(&first_line) = seen.get(&record.sample_id) {
            return Err(Error::DuplicateSampleId {
                line: line_no,
                sample_id: record.sample_id,
                first_line,
            });
        }
        seen.insert(record.sample_id.clone(), line_no);
        records.push(record);
    }
    Ok(records)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_manifest_to(&mut w, records)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_manifest_to(w: &mut impl Write, records: &[SampleRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r)?;
        writeln!(w, "{line}").map_err(|e| Error::io("<manifest>", e))?;
    }
    Ok(())
}
