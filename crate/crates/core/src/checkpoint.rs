//! Binary checkpoint files.
//!
//! Layout: the 8 magic bytes `ASTERLAB`, a little-endian `u32` format
//! version, a one-byte payload kind, then the bincode encoding of the
//! payload. Floats are stored as raw IEEE-754 bits, so a save/load round
//! trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ASTERLAB";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    /// Forecaster and Q-network ready for evaluation.
    Model = 1,
    /// Everything needed to resume training bit-exactly.
    Training = 2,
}

pub fn write<T: Serialize, W: Write>(mut w: W, kind: Kind, payload: &T) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[kind as u8])?;
    bincode::serialize_into(&mut w, payload).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.flush()?;
    Ok(())
}

pub fn read<T: DeserializeOwned, R: Read>(mut r: R, kind: Kind) -> Result<T> {
    let mut header = [0u8; 13];
    r.read_exact(&mut header)
        .map_err(|_| Error::Checkpoint("file too short for a checkpoint header".into()))?;
    if &header[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().expect("four bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    if header[12] != kind as u8 {
        return Err(Error::Checkpoint(format!("expected a {kind:?} checkpoint, found kind {}", header[12])));
    }
    bincode::deserialize_from(r).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save<T: Serialize>(path: &Path, kind: Kind, payload: &T) -> Result<()> {
    write(BufWriter::new(File::create(path)?), kind, payload)
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: Kind) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    read(BufReader::new(file), kind)
}
