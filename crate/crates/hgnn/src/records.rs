//! Line-delimited JSON dialogue corpora.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use hgnn_core::{DialogueRecord, Emotion};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    utterances: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    faces: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audios: Option<Vec<Vec<f64>>>,
    emotions: Vec<String>,
    speakers: Vec<String>,
    next_speaker: String,
    response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    response_emotion: Option<String>,
}

impl RecordLine {
    fn into_record(self) -> hgnn_core::Result<DialogueRecord> {
        let emotions = self
            .emotions
            .iter()
            .map(|e| e.parse::<Emotion>())
            .collect::<hgnn_core::Result<Vec<_>>>()?;
        let response_emotion = self
            .response_emotion
            .map(|e| {
                e.parse::<Emotion>()
                    .map_err(|_| hgnn_core::Error::malformed("response_emotion", format!("unknown emotion {e:?}")))
            })
            .transpose()?;
        Ok(DialogueRecord {
            utterances: self.utterances,
            faces: self.faces,
            audios: self.audios,
            emotions,
            speakers: self.speakers,
            next_speaker: self.next_speaker,
            response: self.response,
            response_emotion,
        })
    }

    fn from_record(d: &DialogueRecord) -> Self {
        RecordLine {
            utterances: d.utterances.clone(),
            faces: d.faces.clone(),
            audios: d.audios.clone(),
            emotions: d.emotions.iter().map(|e| e.name().to_string()).collect(),
            speakers: d.speakers.clone(),
            next_speaker: d.next_speaker.clone(),
            response: d.response.clone(),
            response_emotion: d.response_emotion.map(|e| e.name().to_string()),
        }
    }
}

/// A rejected line and why.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    /// One-based line number.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Default)]
pub struct Loaded {
    pub records: Vec<DialogueRecord>,
    pub rejected: Vec<LineError>,
}

/// Parses one record per non-blank line. Lines that fail to parse or
/// validate are collected in `rejected`; the rest are returned in order.
pub fn parse_corpus<R: BufRead>(reader: R, max_turns: usize) -> Result<Loaded> {
    let mut out = Loaded::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RecordLine>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.into_record().map_err(|e| e.to_string()))
            .and_then(|d| d.validate(max_turns).map(|_| d).map_err(|e| e.to_string()));
        match parsed {
            Ok(d) => out.records.push(d),
            Err(message) => out.rejected.push(LineError { line: i + 1, message }),
        }
    }
    Ok(out)
}

pub fn load_corpus(path: &Path, max_turns: usize) -> Result<Loaded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let loaded = parse_corpus(BufReader::new(file), max_turns)?;
    if loaded.records.is_empty() && loaded.rejected.is_empty() {
        log::warn!("{} holds no dialogues", path.display());
    }
    for r in &loaded.rejected {
        log::warn!("{}: {r}", path.display());
    }
    Ok(loaded)
}

pub fn write_corpus<W: Write>(mut out: W, corpus: &[DialogueRecord]) -> Result<()> {
    for d in corpus {
        serde_json::to_writer(&mut out, &RecordLine::from_record(d))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_corpus(path: &Path, corpus: &[DialogueRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(BufWriter::new(file), corpus)
}
