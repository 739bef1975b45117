//! Model checkpoints.
//!
//! ```text
//! magic "MNET" | version u16 = 1 | spec_len u32 | spec JSON | value_count u64 | value_count f32
//! ```
//!
//! Values follow [`Network::state`] order, all little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{cast, Network, NetworkSpec, Scalar};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MNET";
const VERSION: u16 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(net: &Network<T>, w: &mut W) -> Result<()> {
    let spec = serde_json::to_vec(net.spec())?;
    let values = net.state_values();
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(spec.len() as u32).to_le_bytes())?;
    w.write_all(&spec)?;
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(4 * values.len());
    for v in values {
        buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn fill<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Truncated(what.to_string()),
        _ => Error::Io(e),
    })
}

pub fn read_checkpoint<T: Scalar, R: Read>(r: &mut R) -> Result<Network<T>> {
    let mut magic = [0u8; 4];
    fill(r, &mut magic, "checkpoint header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC, found: magic });
    }
    let mut head = [0u8; 6];
    fill(r, &mut head, "checkpoint header")?;
    let version = u16::from_le_bytes([head[0], head[1]]);
    if version != VERSION {
        return Err(Error::Version { expected: VERSION, found: version });
    }
    let spec_len = u32::from_le_bytes(head[2..6].try_into().unwrap()) as usize;
    let mut spec_bytes = vec![0u8; spec_len];
    fill(r, &mut spec_bytes, "network spec")?;
    let spec: NetworkSpec = serde_json::from_slice(&spec_bytes)?;
    let mut count = [0u8; 8];
    fill(r, &mut count, "value count")?;
    let count = u64::from_le_bytes(count) as usize;
    if count != spec.stored_values() {
        return Err(Error::Shape(format!(
            "checkpoint holds {count} values, spec needs {}",
            spec.stored_values()
        )));
    }
    let mut raw = vec![0u8; 4 * count];
    fill(r, &mut raw, "weights")?;
    let values: Vec<T> = raw
        .chunks_exact(4)
        .map(|b| cast(f32::from_le_bytes(b.try_into().unwrap()) as f64))
        .collect();
    let mut net = Network::new(&spec, 0)?;
    net.load_state(&values)?;
    Ok(net)
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<T>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
