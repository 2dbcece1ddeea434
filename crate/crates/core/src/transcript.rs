//! Line-delimited transcript files.
//!
//! ```text
//! {"record":"header","format":"blockwork-transcript","version":1,"config":{...}}
//! {"index":0,"timestamp_ms":0,"turn":1,"actor":"architect","kind":"utterance","text":"..."}
//! ...
//! {"record":"final","final_world":[[x,y,z,"color"],...]}
//! ```

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{DialogueEvent, SessionConfig, Transcript};
use crate::world::WorldState;

pub const FORMAT_NAME: &str = "blockwork-transcript";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt transcript at line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

fn corrupt(line: usize, message: impl Into<String>) -> TranscriptError {
    TranscriptError::Corrupt {
        line,
        message: message.into(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Frame {
    Header {
        format: String,
        version: u32,
        config: SessionConfig,
    },
    Final {
        final_world: WorldState,
    },
}

pub fn write_transcript<W: Write>(transcript: &Transcript, mut out: W) -> Result<(), TranscriptError> {
    let header = Frame::Header {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        config: transcript.config.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).map_err(io::Error::other)?)?;
    for event in &transcript.events {
        writeln!(out, "{}", serde_json::to_string(event).map_err(io::Error::other)?)?;
    }
    let footer = Frame::Final {
        final_world: transcript.final_world.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&footer).map_err(io::Error::other)?)?;
    Ok(())
}

pub fn to_jsonl(transcript: &Transcript) -> String {
    let mut buf = Vec::new();
    write_transcript(transcript, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_transcript<R: BufRead>(input: R) -> Result<Transcript, TranscriptError> {
    let mut lines = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    if lines.len() < 2 {
        return Err(corrupt(lines.len(), "missing header or final record"));
    }

    let config = match serde_json::from_str::<Frame>(&lines[0]) {
        Ok(Frame::Header { format, version, config }) => {
            if format != FORMAT_NAME || version != FORMAT_VERSION {
                return Err(corrupt(1, format!("unsupported format {format} v{version}")));
            }
            config
        }
        Ok(_) => return Err(corrupt(1, "first record is not a header")),
        Err(e) => return Err(corrupt(1, e.to_string())),
    };

    let last = lines.len() - 1;
    let final_world = match serde_json::from_str::<Frame>(&lines[last]) {
        Ok(Frame::Final { final_world }) => final_world,
        Ok(_) => return Err(corrupt(last + 1, "last record is not a final record")),
        Err(e) => return Err(corrupt(last + 1, e.to_string())),
    };

    let events = lines[1..last]
        .iter()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str::<DialogueEvent>(line).map_err(|e| corrupt(i + 2, e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Transcript {
        config,
        events,
        final_world,
    })
}

pub fn from_jsonl(text: &str) -> Result<Transcript, TranscriptError> {
    read_transcript(text.as_bytes())
}

pub fn save(transcript: &Transcript, path: &Path) -> Result<(), TranscriptError> {
    fs::write(path, to_jsonl(transcript))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Transcript, TranscriptError> {
    let file = fs::File::open(path)?;
    read_transcript(io::BufReader::new(file))
}
