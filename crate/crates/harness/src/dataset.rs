//! Line-delimited JSON datasets: one conversation per line, each record
//! tagged with a format version.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use dfgcn_core::conversation::Conversation;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, HarnessError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct RecordRef<'a> {
    version: u32,
    #[serde(flatten)]
    conversation: &'a Conversation,
}

#[derive(Deserialize)]
struct Record {
    version: u32,
    #[serde(flatten)]
    conversation: Conversation,
}

pub fn write_jsonl<W: Write>(out: W, data: &[Conversation]) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    for conversation in data {
        let record = RecordRef {
            version: FORMAT_VERSION,
            conversation,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<R: Read>(input: R) -> Result<Vec<Conversation>> {
    let mut data = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| HarnessError::Dataset {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| HarnessError::Dataset {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.version != FORMAT_VERSION {
            return Err(HarnessError::Dataset {
                line: line_no,
                message: format!("unsupported version {} (expected {FORMAT_VERSION})", record.version),
            });
        }
        data.push(record.conversation);
    }
    Ok(data)
}

pub fn save(path: &Path, data: &[Conversation]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_at(path))?;
    write_jsonl(file, data).map_err(io_at(path))
}

pub fn load(path: &Path) -> Result<Vec<Conversation>> {
    read_jsonl(std::fs::File::open(path).map_err(io_at(path))?)
}
