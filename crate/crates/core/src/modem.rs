//! Complex baseband modulators.
//!
//! Linear modulations (PSK/QAM/PAM) are Gray mapped, upsampled and shaped
//! with a root raised-cosine filter. FSK is continuous-phase with
//! rectangular frequency pulses and no RRC shaping, so its envelope stays
//! exactly constant.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The twelve modulation classes, in canonical label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModulationType {
    Bpsk,
    Qpsk,
    Psk8,
    Oqpsk,
    Fsk2,
    Fsk4,
    Fsk8,
    Qam16,
    Qam32,
    Qam64,
    Pam4,
    Pam8,
}

impl ModulationType {
    pub const ALL: [ModulationType; 12] = [
        ModulationType::Bpsk,
        ModulationType::Qpsk,
        ModulationType::Psk8,
        ModulationType::Oqpsk,
        ModulationType::Fsk2,
        ModulationType::Fsk4,
        ModulationType::Fsk8,
        ModulationType::Qam16,
        ModulationType::Qam32,
        ModulationType::Qam64,
        ModulationType::Pam4,
        ModulationType::Pam8,
    ];

    pub const COUNT: usize = 12;

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Option<Self> {
        Self::ALL.get(label as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModulationType::Bpsk => "BPSK",
            ModulationType::Qpsk => "QPSK",
            ModulationType::Psk8 => "8PSK",
            ModulationType::Oqpsk => "OQPSK",
            ModulationType::Fsk2 => "2FSK",
            ModulationType::Fsk4 => "4FSK",
            ModulationType::Fsk8 => "8FSK",
            ModulationType::Qam16 => "16QAM",
            ModulationType::Qam32 => "32QAM",
            ModulationType::Qam64 => "64QAM",
            ModulationType::Pam4 => "4PAM",
            ModulationType::Pam8 => "8PAM",
        }
    }

    /// Constellation size, or number of tones for FSK.
    pub fn order(self) -> usize {
        match self {
            ModulationType::Bpsk | ModulationType::Fsk2 => 2,
            ModulationType::Qpsk
            | ModulationType::Oqpsk
            | ModulationType::Fsk4
            | ModulationType::Pam4 => 4,
            ModulationType::Psk8 | ModulationType::Fsk8 | ModulationType::Pam8 => 8,
            ModulationType::Qam16 => 16,
            ModulationType::Qam32 => 32,
            ModulationType::Qam64 => 64,
        }
    }

    pub fn bits_per_symbol(self) -> usize {
        self.order().trailing_zeros() as usize
    }

    pub fn is_fsk(self) -> bool {
        matches!(
            self,
            ModulationType::Fsk2 | ModulationType::Fsk4 | ModulationType::Fsk8
        )
    }

    pub fn is_linear(self) -> bool {
        !self.is_fsk()
    }
}

impl fmt::Display for ModulationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModulationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_uppercase();
        let alias = match wanted.as_str() {
            "PSK8" => "8PSK",
            "FSK2" => "2FSK",
            "FSK4" => "4FSK",
            "FSK8" => "8FSK",
            "QAM16" => "16QAM",
            "QAM32" => "32QAM",
            "QAM64" => "64QAM",
            "PAM4" => "4PAM",
            "PAM8" => "8PAM",
            other => other,
        };
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == alias)
            .ok_or_else(|| Error::config(format!("unknown modulation {s:?}")))
    }
}

/// How a frequency offset value is scaled to cycles per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetReference {
    /// Fraction of the sampling frequency.
    #[default]
    SampleRate,
    /// Fraction of the symbol rate.
    SymbolRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModemParams {
    pub oversampling: usize,
    pub length: usize,
    pub rolloff: f64,
    pub rrc_span: usize,
    pub freq_offset: f64,
    pub fsk_index: f64,
    #[serde(default)]
    pub offset_reference: OffsetReference,
}

impl Default for ModemParams {
    fn default() -> Self {
        Self {
            oversampling: 8,
            length: 512,
            rolloff: 0.35,
            rrc_span: 6,
            freq_offset: 0.0,
            fsk_index: 1.0,
            offset_reference: OffsetReference::SampleRate,
        }
    }
}

impl ModemParams {
    pub fn symbols(&self) -> usize {
        self.length / self.oversampling
    }

    /// Offset converted to cycles per sample.
    pub fn offset_cycles_per_sample(&self) -> f64 {
        match self.offset_reference {
            OffsetReference::SampleRate => self.freq_offset,
            OffsetReference::SymbolRate => self.freq_offset / self.oversampling as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.oversampling == 0 || self.length == 0 {
            return Err(Error::config("oversampling and length must be positive"));
        }
        if self.length % self.oversampling != 0 {
            return Err(Error::config(format!(
                "length {} is not a multiple of oversampling {}",
                self.length, self.oversampling
            )));
        }
        if !(0.2..=0.7).contains(&self.rolloff) {
            return Err(Error::domain(format!("rolloff {} outside [0.2, 0.7]", self.rolloff)));
        }
        if !self.freq_offset.is_finite() || self.freq_offset.abs() > 0.2 {
            return Err(Error::domain(format!(
                "frequency offset {} outside [-0.2, 0.2]",
                self.freq_offset
            )));
        }
        if !(self.fsk_index > 0.0) {
            return Err(Error::domain("fsk index must be positive"));
        }
        Ok(())
    }
}

/// A finite complex baseband sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexSeries(pub Vec<Complex64>);

impl ComplexSeries {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.0
    }

    pub fn mean_power(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.0.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl From<Vec<Complex64>> for ComplexSeries {
    fn from(v: Vec<Complex64>) -> Self {
        ComplexSeries(v)
    }
}

fn gray(k: usize) -> usize {
    k ^ (k >> 1)
}

/// Gray-labelled PAM levels `±1, ±3, ...`, indexed by bit label.
fn pam_levels(order: usize) -> Vec<f64> {
    let mut levels = vec![0.0; order];
    for k in 0..order {
        levels[gray(k)] = 2.0 * k as f64 - (order as f64 - 1.0);
    }
    levels
}

fn normalize(points: Vec<Complex64>) -> Vec<Complex64> {
    let energy = points.iter().map(|z| z.norm_sqr()).sum::<f64>() / points.len() as f64;
    let scale = energy.sqrt().recip();
    points.into_iter().map(|z| z * scale).collect()
}

fn square_qam(order: usize) -> Vec<Complex64> {
    let side = (order as f64).sqrt() as usize;
    let half_bits = side.trailing_zeros();
    let levels = pam_levels(side);
    let mut points = vec![Complex64::new(0.0, 0.0); order];
    for (label, p) in points.iter_mut().enumerate() {
        let i_bits = label >> half_bits;
        let q_bits = label & (side - 1);
        *p = Complex64::new(levels[i_bits], levels[q_bits]);
    }
    points
}

/// Cross 32-QAM: the 6x6 grid without its four corners, labelled in scan order.
fn cross_qam32() -> Vec<Complex64> {
    let axis = [-5.0, -3.0, -1.0, 1.0, 3.0, 5.0];
    let mut points = Vec::with_capacity(32);
    for &q in axis.iter().rev() {
        for &i in axis.iter() {
            let corner = (i as f64).abs() == 5.0 && (q as f64).abs() == 5.0;
            if !corner {
                points.push(Complex64::new(i, q));
            }
        }
    }
    points
}

/// Unit-average-energy constellation indexed by bit label.
pub fn constellation(modulation: ModulationType) -> Result<Vec<Complex64>> {
    let raw = match modulation {
        ModulationType::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
        ModulationType::Qpsk | ModulationType::Oqpsk => (0..4)
            .map(|label| {
                let i = if label & 0b10 == 0 { 1.0 } else { -1.0 };
                let q = if label & 0b01 == 0 { 1.0 } else { -1.0 };
                Complex64::new(i, q) / SQRT_2
            })
            .collect(),
        ModulationType::Psk8 => {
            let mut pts = vec![Complex64::new(0.0, 0.0); 8];
            for k in 0..8 {
                pts[gray(k)] = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / 8.0);
            }
            pts
        }
        ModulationType::Qam16 => square_qam(16),
        ModulationType::Qam64 => square_qam(64),
        ModulationType::Qam32 => cross_qam32(),
        ModulationType::Pam4 | ModulationType::Pam8 => pam_levels(modulation.order())
            .into_iter()
            .map(|l| Complex64::new(l, 0.0))
            .collect(),
        ModulationType::Fsk2 | ModulationType::Fsk4 | ModulationType::Fsk8 => {
            return Err(Error::NotLinear(modulation.name()))
        }
    };
    Ok(normalize(raw))
}

/// Root raised-cosine taps with `span * oversampling + 1` coefficients and unit energy.
pub fn rrc_taps(rolloff: f64, oversampling: usize, span: usize) -> Result<Vec<f64>> {
    if !(rolloff > 0.0 && rolloff < 1.0) {
        return Err(Error::domain(format!("rolloff {rolloff} outside (0, 1)")));
    }
    if oversampling == 0 || span == 0 {
        return Err(Error::domain("oversampling and span must be positive"));
    }
    let beta = rolloff;
    let n = span * oversampling + 1;
    let center = (span * oversampling) as f64 / 2.0;
    let singular = 1.0 / (4.0 * beta);
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - center) / oversampling as f64;
            if t.abs() < 1e-12 {
                1.0 - beta + 4.0 * beta / PI
            } else if (t.abs() - singular).abs() < 1e-9 {
                let a = PI / (4.0 * beta);
                beta / SQRT_2 * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos())
            } else {
                let num = (PI * t * (1.0 - beta)).sin()
                    + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
                let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
                num / den
            }
        })
        .collect();
    let norm = taps.iter().map(|h| h * h).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|h| *h /= norm);
    Ok(taps)
}

/// Draws `n` uniformly random bits.
pub fn random_bits<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

/// Number of bits consumed by [`modulate_linear`].
pub fn linear_bits_needed(modulation: ModulationType, p: &ModemParams) -> usize {
    (p.symbols() + p.rrc_span) * modulation.bits_per_symbol()
}

/// Maps bits to symbols (MSB first within each symbol).
fn map_bits(bits: &[u8], points: &[Complex64], bps: usize, count: usize) -> Vec<Complex64> {
    bits.chunks(bps)
        .take(count)
        .map(|chunk| {
            let label = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
            points[label]
        })
        .collect()
}

/// RRC-shaped output before power normalization, plus the symbols used.
///
/// The window starts at the symbol instant of symbol `rrc_span / 2`, so output
/// sample `m * oversampling` is the (scaled) symbol `rrc_span / 2 + m`.
pub(crate) fn shape_linear(
    bits: &[u8],
    modulation: ModulationType,
    p: &ModemParams,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let points = constellation(modulation)?;
    p.validate()?;
    let bps = modulation.bits_per_symbol();
    let n_sym = p.symbols() + p.rrc_span;
    let needed = n_sym * bps;
    if bits.len() < needed {
        return Err(Error::Length { needed, got: bits.len() });
    }
    let symbols = map_bits(bits, &points, bps, n_sym);
    let taps = rrc_taps(p.rolloff, p.oversampling, p.rrc_span)?;
    let sps = p.oversampling;
    let start = p.rrc_span * sps;
    // Q rail of OQPSK needs sps/2 extra history.
    let lead = if modulation == ModulationType::Oqpsk { sps / 2 } else { 0 };

    let shaped_at = |n: usize| -> Complex64 {
        // n indexes the full convolution of the upsampled symbols with the taps.
        let mut acc = Complex64::new(0.0, 0.0);
        let k_max = (n / sps).min(n_sym - 1);
        let k_min = n.saturating_sub(taps.len() - 1).div_ceil(sps);
        for k in k_min..=k_max {
            acc += symbols[k] * taps[n - k * sps];
        }
        acc
    };

    let out = (0..p.length)
        .map(|i| {
            let n = start + i;
            let z = shaped_at(n);
            if lead > 0 {
                Complex64::new(z.re, shaped_at(n - lead).im)
            } else {
                z
            }
        })
        .collect();
    Ok((out, symbols))
}

/// RRC-shaped linear modulation with exactly `p.length` samples and unit mean power.
///
/// Frequency offset is not applied here; see [`apply_freq_offset`].
pub fn modulate_linear(bits: &[u8], modulation: ModulationType, p: &ModemParams) -> Result<ComplexSeries> {
    let (mut out, _) = shape_linear(bits, modulation, p)?;
    let power = out.iter().map(|z| z.norm_sqr()).sum::<f64>() / out.len() as f64;
    if power > 0.0 {
        let scale = power.sqrt().recip();
        out.iter_mut().for_each(|z| *z *= scale);
    }
    Ok(ComplexSeries(out))
}

/// Continuous-phase FSK with rectangular frequency pulses and unit envelope.
pub fn modulate_fsk(symbols: &[usize], order: usize, p: &ModemParams) -> Result<ComplexSeries> {
    if !matches!(order, 2 | 4 | 8) {
        return Err(Error::domain(format!("fsk order {order} not in {{2, 4, 8}}")));
    }
    if p.oversampling == 0 || p.length % p.oversampling != 0 {
        return Err(Error::config("length must be a positive multiple of oversampling"));
    }
    let sps = p.oversampling as f64;
    let peak = (order as f64 - 1.0) * p.fsk_index / (2.0 * sps);
    if peak >= 0.5 {
        return Err(Error::domain(format!(
            "fsk tone at {peak} cycles/sample aliases (must be < 0.5)"
        )));
    }
    let n_sym = p.symbols();
    if symbols.len() < n_sym {
        return Err(Error::Length { needed: n_sym, got: symbols.len() });
    }
    if let Some(&bad) = symbols.iter().find(|&&s| s >= order) {
        return Err(Error::domain(format!("symbol {bad} out of range for {order}-FSK")));
    }
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(p.length);
    for &s in &symbols[..n_sym] {
        let freq = (2.0 * s as f64 - order as f64 + 1.0) * p.fsk_index / (2.0 * sps);
        let step = 2.0 * PI * freq;
        for _ in 0..p.oversampling {
            out.push(Complex64::from_polar(1.0, phase));
            phase = (phase + step).rem_euclid(2.0 * PI);
        }
    }
    Ok(ComplexSeries(out))
}

/// Multiplies by `exp(j 2π f n)`, `f` in cycles per sample.
pub fn apply_freq_offset(x: &ComplexSeries, cycles_per_sample: f64) -> ComplexSeries {
    if cycles_per_sample == 0.0 {
        return x.clone();
    }
    let out = x
        .0
        .iter()
        .enumerate()
        .map(|(n, &z)| {
            // reduce before scaling by 2π to keep the phase accurate for long series
            let turns = (cycles_per_sample * n as f64).rem_euclid(1.0);
            z * Complex64::from_polar(1.0, 2.0 * PI * turns)
        })
        .collect();
    ComplexSeries(out)
}

/// Full transmitter: draws random data, modulates and applies `p`'s frequency offset.
pub fn transmit<R: Rng + ?Sized>(
    modulation: ModulationType,
    p: &ModemParams,
    rng: &mut R,
) -> Result<ComplexSeries> {
    p.validate()?;
    let base = if modulation.is_fsk() {
        let order = modulation.order();
        let symbols: Vec<usize> = (0..p.symbols()).map(|_| rng.random_range(0..order)).collect();
        modulate_fsk(&symbols, order, p)?
    } else {
        let bits = random_bits(linear_bits_needed(modulation, p), rng);
        modulate_linear(&bits, modulation, p)?
    };
    Ok(apply_freq_offset(&base, p.offset_cycles_per_sample()))
}
