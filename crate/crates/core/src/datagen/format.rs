//! Binary dataset files.
//!
//! Layout (little-endian):
//!
//! ```text
//! header   magic "MAMR" | version u16 = 1 | antennas u16 | length u32 | sample_count u64 | flags u32
//! record   label u8 | pad u8 | snr_decidb i16 | 2C*N f32, row-major
//! ```
//!
//! A JSON sidecar at `<path>.meta.json` carries the label names, the
//! generating spec and any per-sample metadata.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetSpec, IqMatrix, LabeledSample, Provenance, SampleMeta};
use crate::error::{Error, Result};
use crate::modem::ModulationType;

pub const MAGIC: [u8; 4] = *b"MAMR";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;

/// Some samples come from augmentation.
pub const FLAG_AUGMENTED: u32 = 1;
/// The sidecar holds per-sample metadata columns.
pub const FLAG_SAMPLE_META: u32 = 1 << 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleColumns {
    pub provenance: Vec<String>,
    pub meta: Vec<Option<SampleMeta>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub generator: String,
    pub generator_version: String,
    pub labels: BTreeMap<u8, String>,
    pub antennas: usize,
    pub length: usize,
    pub sample_count: u64,
    pub spec: Option<DatasetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<SampleColumns>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn flags_of(d: &Dataset) -> u32 {
    let mut flags = 0;
    if d.samples.iter().any(|s| !s.provenance.is_raw()) {
        flags |= FLAG_AUGMENTED;
    }
    if d.samples.iter().any(|s| s.meta.is_some() || !s.provenance.is_raw()) {
        flags |= FLAG_SAMPLE_META;
    }
    flags
}

fn check_shape(d: &Dataset) -> Result<()> {
    if d.antennas > u16::MAX as usize || d.length > u32::MAX as usize {
        return Err(Error::Shape("dataset dimensions exceed the file format".into()));
    }
    for s in &d.samples {
        if s.matrix.rows() != 2 * d.antennas || s.matrix.cols() != d.length {
            return Err(Error::Shape(format!(
                "sample is {}x{}, dataset expects {}x{}",
                s.matrix.rows(),
                s.matrix.cols(),
                2 * d.antennas,
                d.length
            )));
        }
    }
    Ok(())
}

/// Writes the binary body only.
pub fn write_to<W: Write>(d: &Dataset, w: &mut W) -> Result<()> {
    check_shape(d)?;
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(&MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&(d.antennas as u16).to_le_bytes());
    header.extend_from_slice(&(d.length as u32).to_le_bytes());
    header.extend_from_slice(&(d.samples.len() as u64).to_le_bytes());
    header.extend_from_slice(&flags_of(d).to_le_bytes());
    w.write_all(&header)?;

    let mut buf = Vec::with_capacity(4 + 8 * d.antennas * d.length);
    for s in &d.samples {
        buf.clear();
        buf.push(s.label);
        buf.push(0);
        buf.extend_from_slice(&s.snr_decidb.to_le_bytes());
        for v in s.matrix.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Truncated(what.to_string()),
        _ => Error::Io(e),
    })
}

/// Reads the binary body; per-sample metadata is left empty.
pub fn read_from<R: Read>(r: &mut R) -> Result<(Dataset, u32)> {
    let mut header = [0u8; HEADER_LEN];
    read_exact_or(r, &mut header[..4], "header")?;
    let found: [u8; 4] = header[..4].try_into().unwrap();
    if found != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found });
    }
    read_exact_or(r, &mut header[4..], "header")?;
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(Error::Version { expected: VERSION, found: version });
    }
    let antennas = u16::from_le_bytes([header[6], header[7]]) as usize;
    let length = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
    let flags = u32::from_le_bytes(header[20..24].try_into().unwrap());

    let values = 2 * antennas * length;
    let mut record = vec![0u8; 4 + 4 * values];
    let mut samples = Vec::with_capacity(count.min(1 << 20) as usize);
    for k in 0..count {
        read_exact_or(r, &mut record, &format!("record {k} of {count}"))?;
        let data = record[4..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        samples.push(LabeledSample {
            matrix: IqMatrix::new(2 * antennas, length, data)?,
            label: record[0],
            snr_decidb: i16::from_le_bytes([record[2], record[3]]),
            meta: None,
            provenance: Provenance::RAW,
        });
    }
    Ok((Dataset { antennas, length, samples, spec: None }, flags))
}

pub fn sidecar_of(d: &Dataset) -> DatasetSidecar {
    let samples = (flags_of(d) & FLAG_SAMPLE_META != 0).then(|| SampleColumns {
        provenance: d.samples.iter().map(|s| s.provenance.to_string()).collect(),
        meta: d.samples.iter().map(|s| s.meta.clone()).collect(),
    });
    DatasetSidecar {
        generator: env!("CARGO_PKG_NAME").to_string(),
        generator_version: env!("CARGO_PKG_VERSION").to_string(),
        labels: ModulationType::ALL
            .iter()
            .map(|m| (m.label(), m.name().to_string()))
            .collect(),
        antennas: d.antennas,
        length: d.length,
        sample_count: d.samples.len() as u64,
        spec: d.spec.clone(),
        samples,
    }
}

/// Writes `path` and its `.meta.json` sidecar.
pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    write_to(d, &mut w)?;
    w.flush()?;
    let side = sidecar_of(d);
    let mut sw = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(&mut sw, &side)?;
    sw.write_all(b"\n")?;
    sw.flush()?;
    Ok(())
}

/// Reads `path`, merging its sidecar when present.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let (mut d, _flags) = read_from(&mut r)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Shape("trailing bytes after the last record".into()));
    }
    let side_path = sidecar_path(path);
    if side_path.exists() {
        let side: DatasetSidecar = serde_json::from_reader(BufReader::new(File::open(side_path)?))?;
        if side.sample_count != d.samples.len() as u64 {
            return Err(Error::Shape(format!(
                "sidecar describes {} samples, file holds {}",
                side.sample_count,
                d.samples.len()
            )));
        }
        d.spec = side.spec;
        if let Some(cols) = side.samples {
            if cols.provenance.len() != d.samples.len() || cols.meta.len() != d.samples.len() {
                return Err(Error::Shape("sidecar sample columns have the wrong length".into()));
            }
            for ((s, tag), meta) in d.samples.iter_mut().zip(&cols.provenance).zip(cols.meta) {
                s.provenance = tag.parse()?;
                s.meta = meta;
            }
        }
    }
    Ok(d)
}
