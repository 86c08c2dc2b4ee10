//! Newline-delimited capture of forwarded messages.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    CtrlToSwitch,
    SwitchToCtrl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub timestamp_us: u64,
    pub direction: Direction,
    pub hex: String,
}

impl CaptureRecord {
    pub fn new(timestamp_us: u64, direction: Direction, bytes: &[u8]) -> Self {
        CaptureRecord { timestamp_us, direction, hex: hex::encode(bytes) }
    }

    pub fn bytes(&self) -> Result<Vec<u8>, hex::FromHexError> {
        hex::decode(&self.hex)
    }
}

pub fn write_capture<W: Write>(mut w: W, records: &[CaptureRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_capture<R: BufRead>(r: R) -> io::Result<Vec<CaptureRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(io::Error::other)?);
    }
    Ok(out)
}
