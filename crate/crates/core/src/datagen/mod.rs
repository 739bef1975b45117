//! Labeled multi-antenna IQ datasets.
//!
//! A sample is a `2C x N` real matrix with rows `I1, Q1, I2, Q2, ...`. Every
//! sample's randomness comes from a ChaCha stream keyed by
//! `(master_seed, label, snr, k)`, so generation order and thread count never
//! change the output.

pub mod format;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelConfig};
use crate::error::{Error, Result};
use crate::modem::{self, ComplexSeries, ModemParams, ModulationType};

pub use format::{read_dataset, read_from, sidecar_path, write_dataset, write_to, DatasetSidecar};

/// Real `2C x N` matrix, row-major, rows `I1, Q1, ..., IC, QC`.
#[derive(Debug, Clone, PartialEq)]
pub struct IqMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl IqMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows % 2 != 0 {
            return Err(Error::Shape(format!("row count {rows} is odd")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(antennas: usize, cols: usize) -> Self {
        Self { rows: 2 * antennas, cols, data: vec![0.0; 2 * antennas * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn antennas(&self) -> usize {
        self.rows / 2
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The contiguous `2 x N` block of antenna `i` (zero-based).
    pub fn antenna_block(&self, i: usize) -> &[f32] {
        &self.data[2 * i * self.cols..(2 * i + 2) * self.cols]
    }

    /// A single-antenna matrix holding rows `(2i, 2i+1)`.
    pub fn antenna(&self, i: usize) -> Result<IqMatrix> {
        if i >= self.antennas() {
            return Err(Error::Index(format!(
                "antenna {i} out of range for {} antennas",
                self.antennas()
            )));
        }
        Ok(IqMatrix { rows: 2, cols: self.cols, data: self.antenna_block(i).to_vec() })
    }

    /// Rebuilds antenna `i`'s complex series.
    pub fn antenna_series(&self, i: usize) -> ComplexSeries {
        combine_iq(self.row(2 * i), self.row(2 * i + 1))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Splits a series into its in-phase and quadrature rails.
pub fn extract_iq(y: &ComplexSeries) -> (Vec<f64>, Vec<f64>) {
    y.0.iter().map(|z| (z.re, z.im)).unzip()
}

/// Inverse of [`extract_iq`].
pub fn combine_iq<T: Copy + Into<f64>>(i: &[T], q: &[T]) -> ComplexSeries {
    ComplexSeries(
        i.iter()
            .zip(q)
            .map(|(&a, &b)| Complex64::new(a.into(), b.into()))
            .collect(),
    )
}

/// Splices per-antenna series into one IQ matrix.
pub fn assemble(series: &[ComplexSeries]) -> Result<IqMatrix> {
    let cols = series.first().map_or(0, |s| s.len());
    if let Some(bad) = series.iter().find(|s| s.len() != cols) {
        return Err(Error::Shape(format!(
            "ragged antenna series: {} vs {cols} samples",
            bad.len()
        )));
    }
    let mut data = Vec::with_capacity(2 * series.len() * cols);
    for s in series {
        let (i, q) = extract_iq(s);
        data.extend(i.iter().map(|&v| v as f32));
        data.extend(q.iter().map(|&v| v as f32));
    }
    IqMatrix::new(2 * series.len(), cols, data)
}

/// Flip applied by augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flip {
    I,
    Q,
    IQ,
}

/// How a sample was derived from generated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Provenance {
    /// One-based antenna pair swapped by exchange augmentation.
    pub exchange: Option<(u16, u16)>,
    pub flip: Option<Flip>,
}

impl Provenance {
    pub const RAW: Provenance = Provenance { exchange: None, flip: None };

    pub fn is_raw(&self) -> bool {
        self.exchange.is_none() && self.flip.is_none()
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_raw() {
            return f.write_str("raw");
        }
        let mut parts = Vec::new();
        if let Some((i, j)) = self.exchange {
            parts.push(format!("exchange({i},{j})"));
        }
        if let Some(flip) = self.flip {
            parts.push(
                match flip {
                    Flip::I => "flipI",
                    Flip::Q => "flipQ",
                    Flip::IQ => "flipIQ",
                }
                .to_string(),
            );
        }
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("bad provenance tag {s:?}"));
        let mut out = Provenance::RAW;
        if s == "raw" {
            return Ok(out);
        }
        for part in s.split('+') {
            match part {
                "flipI" => out.flip = Some(Flip::I),
                "flipQ" => out.flip = Some(Flip::Q),
                "flipIQ" => out.flip = Some(Flip::IQ),
                p => {
                    let inner = p
                        .strip_prefix("exchange(")
                        .and_then(|r| r.strip_suffix(')'))
                        .ok_or_else(bad)?;
                    let (a, b) = inner.split_once(',').ok_or_else(bad)?;
                    out.exchange = Some((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?));
                }
            }
        }
        Ok(out)
    }
}

/// Generation parameters of one sample, re-derivable from the dataset spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub rolloff: f64,
    pub freq_offset: f64,
    pub phases: Vec<f64>,
    pub seed_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub matrix: IqMatrix,
    pub label: u8,
    /// SNR in tenths of a dB.
    pub snr_decidb: i16,
    pub meta: Option<SampleMeta>,
    pub provenance: Provenance,
}

impl LabeledSample {
    pub fn new(matrix: IqMatrix, label: u8, snr_db: f64) -> Self {
        Self {
            matrix,
            label,
            snr_decidb: to_decidb(snr_db),
            meta: None,
            provenance: Provenance::RAW,
        }
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_decidb as f64 / 10.0
    }
}

pub(crate) fn to_decidb(snr_db: f64) -> i16 {
    (snr_db * 10.0).round() as i16
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrGrid {
    pub min_db: f64,
    pub max_db: f64,
    pub step_db: f64,
}

impl Default for SnrGrid {
    fn default() -> Self {
        Self { min_db: -20.0, max_db: 30.0, step_db: 2.0 }
    }
}

impl SnrGrid {
    pub fn single(snr_db: f64) -> Self {
        Self { min_db: snr_db, max_db: snr_db, step_db: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_db.is_finite() && self.max_db.is_finite() && self.step_db.is_finite()) {
            return Err(Error::config("snr grid bounds must be finite"));
        }
        if self.step_db <= 0.0 {
            return Err(Error::config(format!("snr step {} must be positive", self.step_db)));
        }
        if self.max_db < self.min_db {
            return Err(Error::config("snr max below snr min"));
        }
        if self.min_db.abs() > 3000.0 || self.max_db.abs() > 3000.0 {
            return Err(Error::config("snr outside the representable ±3000 dB"));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.max_db - self.min_db) / self.step_db + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.min_db + i as f64 * self.step_db).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub mods: Vec<ModulationType>,
    pub snr: SnrGrid,
    pub per_class_per_snr: usize,
    /// Antenna count, setting and phases; `snr_db` is replaced by each grid point.
    pub channel: ChannelConfig,
    /// Oversampling, length, span and FSK index; rolloff and offset are drawn per sample.
    pub modem: ModemParams,
    pub rolloff_range: (f64, f64),
    pub freq_offset_max: f64,
    pub master_seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            mods: ModulationType::ALL.to_vec(),
            snr: SnrGrid::default(),
            per_class_per_snr: 500,
            channel: ChannelConfig::new(4, 0.0),
            modem: ModemParams::default(),
            rolloff_range: (0.2, 0.7),
            freq_offset_max: 0.2,
            master_seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.snr.validate()?;
        self.channel.validate()?;
        if self.mods.is_empty() {
            return Err(Error::config("no modulations selected"));
        }
        let (lo, hi) = self.rolloff_range;
        if !(0.2 <= lo && lo <= hi && hi <= 0.7) {
            return Err(Error::config(format!("rolloff range ({lo}, {hi}) outside [0.2, 0.7]")));
        }
        if !(0.0..=0.2).contains(&self.freq_offset_max) {
            return Err(Error::config("frequency offset bound outside [0, 0.2]"));
        }
        let probe = ModemParams { rolloff: lo, freq_offset: 0.0, ..self.modem.clone() };
        probe.validate()?;
        if self.modem.length > u32::MAX as usize || self.channel.antennas > u16::MAX as usize {
            return Err(Error::config("dataset dimensions exceed the file format"));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.mods.len() * self.snr.values().len() * self.per_class_per_snr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub antennas: usize,
    pub length: usize,
    pub samples: Vec<LabeledSample>,
    pub spec: Option<DatasetSpec>,
}

impl Dataset {
    pub fn empty(antennas: usize, length: usize) -> Self {
        Self { antennas, length, samples: Vec::new(), spec: None }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct SNR values present, ascending, in dB.
    pub fn snr_values(&self) -> Vec<f64> {
        let mut v: Vec<i16> = self.samples.iter().map(|s| s.snr_decidb).collect();
        v.sort_unstable();
        v.dedup();
        v.into_iter().map(|d| d as f64 / 10.0).collect()
    }

    /// Sample indices grouped by `(label, snr_decidb)`, in first-seen order within each group.
    pub fn strata(&self) -> BTreeMap<(u8, i16), Vec<usize>> {
        let mut out: BTreeMap<(u8, i16), Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            out.entry((s.label, s.snr_decidb)).or_default().push(i);
        }
        out
    }

    pub fn class_counts(&self) -> BTreeMap<u8, usize> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            *out.entry(s.label).or_insert(0) += 1;
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            antennas: self.antennas,
            length: self.length,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            spec: self.spec.clone(),
        }
    }

    /// Appends another dataset with the same shape.
    pub fn extend(&mut self, other: Dataset) -> Result<()> {
        if other.antennas != self.antennas || other.length != self.length {
            return Err(Error::Shape(format!(
                "cannot merge {}x{} samples into a {}x{} dataset",
                2 * other.antennas,
                other.length,
                2 * self.antennas,
                self.length
            )));
        }
        self.samples.extend(other.samples);
        Ok(())
    }
}

/// Stream id of sample `k` of `(label, snr)`.
fn stream_id(label: u8, snr_decidb: i16, k: usize) -> u64 {
    ((label as u64) << 56) | (((snr_decidb as u16) as u64) << 40) | (k as u64 & 0xFF_FFFF_FFFF)
}

/// The generator for one sample.
pub fn sample_rng(master_seed: u64, label: u8, snr_decidb: i16, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id(label, snr_decidb, k));
    rng
}

/// Synthesizes one labeled sample; a pure function of its arguments.
pub fn generate_sample(
    spec: &DatasetSpec,
    modulation: ModulationType,
    snr_db: f64,
    k: usize,
) -> Result<LabeledSample> {
    let label = modulation.label();
    let snr_decidb = to_decidb(snr_db);
    let mut rng = sample_rng(spec.master_seed, label, snr_decidb, k);
    let (lo, hi) = spec.rolloff_range;
    let rolloff = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let fmax = spec.freq_offset_max;
    let freq_offset = if fmax > 0.0 { rng.random_range(-fmax..=fmax) } else { 0.0 };
    let ch = ChannelConfig { snr_db, ..spec.channel.clone() };
    let phases = channel::phases(&ch, &mut rng);
    let params = ModemParams { rolloff, freq_offset, ..spec.modem.clone() };
    let x = modem::transmit(modulation, &params, &mut rng)?;
    let gains: Vec<Complex64> = phases.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
    let received = channel::receive_with_gains(&x, &gains, snr_db, &mut rng)?;
    let matrix = assemble(&received)?;
    Ok(LabeledSample {
        matrix,
        label,
        snr_decidb,
        meta: Some(SampleMeta { rolloff, freq_offset, phases, seed_index: k as u64 }),
        provenance: Provenance::RAW,
    })
}

/// Generates the full `mods x snrs x per_class_per_snr` dataset using the current pool.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let snrs = spec.snr.values();
    let per = spec.per_class_per_snr;
    let per_mod = snrs.len() * per;
    let total = spec.mods.len() * per_mod;
    let results = crate::par::map_indices(total, |idx| {
        let m = spec.mods[idx / per_mod];
        let rem = idx % per_mod;
        generate_sample(spec, m, snrs[rem / per], rem % per)
    });
    let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        antennas: spec.channel.antennas,
        length: spec.modem.length,
        samples,
        spec: Some(spec.clone()),
    })
}

/// [`generate`] on a dedicated pool of `threads` workers (`1` is fully serial).
pub fn generate_with_threads(spec: &DatasetSpec, threads: usize) -> Result<Dataset> {
    crate::par::with_threads(threads, || generate(spec))
}

/// Keeps `round(ratio * n)` uniformly chosen samples of every `(class, snr)` stratum.
pub fn split_few_shot<R: Rng + ?Sized>(d: &Dataset, ratio: f64, rng: &mut R) -> Result<Dataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::domain(format!("sample ratio {ratio} outside (0, 1]")));
    }
    if ratio == 1.0 {
        return Ok(d.clone());
    }
    let mut keep = Vec::new();
    for members in d.strata().values() {
        let take = (ratio * members.len() as f64).round() as usize;
        let mut chosen: Vec<usize> = index::sample(rng, members.len(), take.min(members.len()))
            .into_iter()
            .map(|i| members[i])
            .collect();
        chosen.sort_unstable();
        keep.extend(chosen);
    }
    keep.sort_unstable();
    Ok(d.subset(&keep))
}
