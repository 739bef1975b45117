//! Flat multi-antenna receive model: `y_i(n) = g_i x(n) + w_i(n)`.
//!
//! Gains are unit-magnitude phase rotations, constant over one sample. Noise
//! is circular complex Gaussian, independent across antennas and time, scaled
//! so every antenna sees the configured SNR relative to the transmitted power.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modem::ComplexSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AntennaSetting {
    /// The same phases for every sample.
    #[default]
    Fixed,
    /// Phases redrawn uniformly on `[0, 2π)` per sample.
    Random,
}

impl std::str::FromStr for AntennaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(AntennaSetting::Fixed),
            "random" => Ok(AntennaSetting::Random),
            _ => Err(Error::config(format!("unknown antenna setting {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub antennas: usize,
    pub setting: AntennaSetting,
    /// Phases in radians for the fixed setting; `None` means `2π i / C`.
    #[serde(default)]
    pub fixed_phases: Option<Vec<f64>>,
    /// Per-antenna SNR in dB. `+∞` disables noise.
    pub snr_db: f64,
}

impl ChannelConfig {
    pub fn new(antennas: usize, snr_db: f64) -> Self {
        Self {
            antennas,
            setting: AntennaSetting::Fixed,
            fixed_phases: None,
            snr_db,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 {
            return Err(Error::config("at least one antenna is required"));
        }
        if let Some(ph) = &self.fixed_phases {
            if ph.len() != self.antennas {
                return Err(Error::config(format!(
                    "{} fixed phases given for {} antennas",
                    ph.len(),
                    self.antennas
                )));
            }
            if ph.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite("fixed phases"));
            }
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::config("snr must be a number or +inf"));
        }
        Ok(())
    }

    /// The phases used in the fixed setting.
    pub fn resolved_phases(&self) -> Vec<f64> {
        match &self.fixed_phases {
            Some(p) => p.clone(),
            None => default_phases(self.antennas),
        }
    }
}

/// `φ_i = 2π i / C`.
pub fn default_phases(antennas: usize) -> Vec<f64> {
    (0..antennas)
        .map(|i| 2.0 * PI * i as f64 / antennas as f64)
        .collect()
}

/// Per-antenna gains for one sample.
pub fn make_gains<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> Vec<Complex64> {
    phases(cfg, rng)
        .into_iter()
        .map(|p| Complex64::from_polar(1.0, p))
        .collect()
}

/// The phase angles behind [`make_gains`], in `[0, 2π)` for the random setting.
pub fn phases<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> Vec<f64> {
    match cfg.setting {
        AntennaSetting::Fixed => cfg.resolved_phases(),
        AntennaSetting::Random => (0..cfg.antennas)
            .map(|_| rng.random_range(0.0..2.0 * PI))
            .collect(),
    }
}

/// Total complex noise power giving `snr_db` against a signal of power `signal_power`.
pub fn noise_power(signal_power: f64, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        signal_power / 10f64.powf(snr_db / 10.0)
    }
}

/// Circular Gaussian noise with total variance `power` (each rail gets `power / 2`).
pub fn awgn<R: Rng + ?Sized>(len: usize, power: f64, rng: &mut R) -> ComplexSeries {
    let sigma = (power / 2.0).sqrt();
    ComplexSeries(
        (0..len)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(sigma * re, sigma * im)
            })
            .collect(),
    )
}

/// Applies explicit gains plus AWGN at `cfg.snr_db`.
pub fn receive_with_gains<R: Rng + ?Sized>(
    x: &ComplexSeries,
    gains: &[Complex64],
    snr_db: f64,
    rng: &mut R,
) -> Result<Vec<ComplexSeries>> {
    if !x.is_finite() {
        return Err(Error::NonFinite("transmitted series"));
    }
    let power = noise_power(x.mean_power(), snr_db);
    Ok(gains
        .iter()
        .map(|&g| {
            if power == 0.0 {
                return ComplexSeries(x.0.iter().map(|&s| g * s).collect());
            }
            let w = awgn(x.len(), power, rng);
            ComplexSeries(x.0.iter().zip(&w.0).map(|(&s, &n)| g * s + n).collect())
        })
        .collect())
}

/// Produces the `C` received series for one transmitted series.
pub fn receive<R: Rng + ?Sized>(
    x: &ComplexSeries,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<Vec<ComplexSeries>> {
    cfg.validate()?;
    let gains = make_gains(cfg, rng);
    receive_with_gains(x, &gains, cfg.snr_db, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tone(n: usize) -> ComplexSeries {
        ComplexSeries((0..n).map(|k| Complex64::from_polar(1.0, 0.3 * k as f64)).collect())
    }

    #[test]
    fn fixed_gains_from_phases() {
        let cfg = ChannelConfig {
            fixed_phases: Some(vec![0.0, PI / 2.0]),
            ..ChannelConfig::new(2, 0.0)
        };
        let g = make_gains(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!((g[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((g[1] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn gains_have_unit_modulus() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for setting in [AntennaSetting::Fixed, AntennaSetting::Random] {
            let cfg = ChannelConfig { setting, ..ChannelConfig::new(7, 5.0) };
            for _ in 0..50 {
                for g in make_gains(&cfg, &mut rng) {
                    assert!((g.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn noiseless_identity() {
        let x = tone(64);
        let cfg = ChannelConfig::new(1, f64::INFINITY);
        let y = receive(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(y.len(), 1);
        assert_eq!(y[0], x);
    }

    #[test]
    fn zero_db_noise_power() {
        assert_eq!(noise_power(1.0, 0.0), 1.0);
        assert!((noise_power(1.0, 10.0) - 0.1).abs() < 1e-15);
        assert_eq!(noise_power(1.0, f64::INFINITY), 0.0);
    }

    #[test]
    fn rejects_non_finite_input() {
        let x = ComplexSeries(vec![Complex64::new(f64::NAN, 0.0)]);
        let cfg = ChannelConfig::new(1, 0.0);
        assert!(matches!(
            receive(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn phase_count_must_match() {
        let cfg = ChannelConfig {
            fixed_phases: Some(vec![0.0]),
            ..ChannelConfig::new(2, 0.0)
        };
        assert!(cfg.validate().is_err());
        assert!(ChannelConfig::new(0, 0.0).validate().is_err());
    }

    #[test]
    fn reproducible_with_seed() {
        let x = tone(128);
        let cfg = ChannelConfig { setting: AntennaSetting::Random, ..ChannelConfig::new(3, 4.0) };
        let a = receive(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = receive(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_phases_are_spread() {
        let p = default_phases(4);
        assert_eq!(p, vec![0.0, PI / 2.0, PI, 3.0 * PI / 2.0]);
    }
}
