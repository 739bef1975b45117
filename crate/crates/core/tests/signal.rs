use std::f64::consts::PI;

use mamr::channel::{receive, AntennaSetting, ChannelConfig};
use mamr::datagen::{assemble, combine_iq, extract_iq};
use mamr::modem::{apply_freq_offset, modulate_fsk, transmit, ComplexSeries, ModemParams, ModulationType};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

fn spectrum(x: &[Complex64]) -> Vec<f64> {
    let mut buf = x.to_vec();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf.iter().map(|z| z.norm_sqr()).collect()
}

fn peak_bin(p: &[f64]) -> usize {
    (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap()
}

/// Signed frequency of an FFT bin in cycles per sample.
fn bin_freq(bin: usize, n: usize) -> f64 {
    let f = bin as f64 / n as f64;
    if f >= 0.5 {
        f - 1.0
    } else {
        f
    }
}

#[test]
fn fsk_constant_symbol_is_a_pure_tone() {
    let p = ModemParams::default();
    for order in [2usize, 4, 8] {
        for s in 0..order {
            let x = modulate_fsk(&vec![s; p.symbols()], order, &p).unwrap();
            let spec = spectrum(x.samples());
            let expected = (2.0 * s as f64 - order as f64 + 1.0) / (2.0 * p.oversampling as f64);
            let got = bin_freq(peak_bin(&spec), spec.len());
            assert!((got - expected).abs() < 1.0 / spec.len() as f64, "{order}-FSK symbol {s}: {got} vs {expected}");
        }
    }
}

#[test]
fn fsk_phase_is_continuous() {
    let p = ModemParams::default();
    let syms: Vec<usize> = (0..p.symbols()).map(|k| (k * 5) % 8).collect();
    let x = modulate_fsk(&syms, 8, &p).unwrap();
    let max_step = 7.0 / (2.0 * p.oversampling as f64) * 2.0 * PI;
    for w in x.samples().windows(2) {
        assert!((w[1] / w[0]).arg().abs() <= max_step + 1e-9);
    }
}

#[test]
fn frequency_offset_moves_the_spectrum() {
    let p = ModemParams::default();
    let x = modulate_fsk(&vec![1; p.symbols()], 2, &p).unwrap();
    let base = bin_freq(peak_bin(&spectrum(x.samples())), p.length);
    let shift = 24.0 / p.length as f64;
    let y = apply_freq_offset(&x, shift);
    let moved = bin_freq(peak_bin(&spectrum(y.samples())), p.length);
    assert!((moved - base - shift).abs() < 1e-12);
    for (a, b) in x.samples().iter().zip(y.samples()) {
        assert!((a.norm() - b.norm()).abs() < 1e-12);
    }
}

#[test]
fn linear_modulations_have_unit_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = ModemParams::default();
    for m in ModulationType::ALL.iter().filter(|m| m.is_linear()) {
        let mean: f64 = (0..50).map(|_| transmit(*m, &p, &mut rng).unwrap().mean_power()).sum::<f64>() / 50.0;
        assert!((mean - 1.0).abs() < 0.05, "{m}: {mean}");
    }
}

#[test]
fn oqpsk_rails_never_switch_together() {
    // With the quadrature rail delayed by half a symbol, its zero crossings
    // sit between those of the in-phase rail.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = ModemParams { rolloff: 0.35, ..ModemParams::default() };
    let x = transmit(ModulationType::Oqpsk, &p, &mut rng).unwrap();
    let sps = p.oversampling;
    let crossings = |rail: Vec<f64>| -> Vec<usize> {
        rail.windows(2).enumerate().filter(|(_, w)| w[0] * w[1] < 0.0).map(|(k, _)| (k + 1) % sps).collect()
    };
    let (i, q) = extract_iq(&x);
    let phase_of = |c: &[usize]| {
        let mut hist = vec![0usize; sps];
        c.iter().for_each(|&k| hist[k] += 1);
        (0..sps).max_by_key(|&k| hist[k]).unwrap()
    };
    let (pi, pq) = (phase_of(&crossings(i)), phase_of(&crossings(q)));
    let lag = (pq + sps - pi) % sps;
    assert!(lag.abs_diff(sps / 2) <= 1, "I crossings at phase {pi}, Q at {pq}");
}

#[test]
fn noiseless_channel_rotates_each_antenna() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = transmit(ModulationType::Qam16, &ModemParams::default(), &mut rng).unwrap();
    let cfg = ChannelConfig::new(4, f64::INFINITY);
    let ys = receive(&x, &cfg, &mut rng).unwrap();
    for (i, y) in ys.iter().enumerate() {
        let g = Complex64::from_polar(1.0, 2.0 * PI * i as f64 / 4.0);
        for (a, b) in y.samples().iter().zip(x.samples()) {
            assert!((a - g * b).norm() < 1e-12);
        }
    }
}

#[test]
fn random_setting_redraws_phases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = ComplexSeries(vec![Complex64::new(1.0, 0.0); 16]);
    let cfg = ChannelConfig { setting: AntennaSetting::Random, ..ChannelConfig::new(3, f64::INFINITY) };
    let a = receive(&x, &cfg, &mut rng).unwrap();
    let b = receive(&x, &cfg, &mut rng).unwrap();
    assert_ne!(a[0].samples()[0], b[0].samples()[0]);
    for y in a.iter().chain(&b) {
        assert!((y.samples()[0].norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn channel_rejects_bad_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = ComplexSeries(vec![Complex64::new(1.0, 0.0); 8]);
    assert!(receive(&x, &ChannelConfig::new(0, 10.0), &mut rng).is_err());
    let nan = ComplexSeries(vec![Complex64::new(f64::NAN, 0.0); 8]);
    assert!(receive(&nan, &ChannelConfig::new(2, 10.0), &mut rng).is_err());
}

#[test]
fn iq_matrix_interleaves_antennas() {
    let a = ComplexSeries(vec![Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0)]);
    let b = ComplexSeries(vec![Complex64::new(5.0, 6.0), Complex64::new(7.0, 8.0)]);
    let m = assemble(&[a.clone(), b]).unwrap();
    assert_eq!(m.rows(), 4);
    assert_eq!(m.row(0), &[1.0, 3.0]);
    assert_eq!(m.row(1), &[2.0, 4.0]);
    assert_eq!(m.row(2), &[5.0, 7.0]);
    assert_eq!(m.row(3), &[6.0, 8.0]);
    assert_eq!(combine_iq(m.row(0), m.row(1)), a);
}
