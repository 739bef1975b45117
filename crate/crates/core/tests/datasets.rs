use mamr::channel::ChannelConfig;
use mamr::datagen::format::{read_dataset, read_from, sidecar_path, write_dataset, write_to, FLAG_AUGMENTED, HEADER_LEN};
use mamr::datagen::{generate, split_few_shot, DatasetSpec, SnrGrid};
use mamr::modem::{ModemParams, ModulationType};
use mamr::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> DatasetSpec {
    DatasetSpec {
        mods: vec![ModulationType::Qpsk, ModulationType::Fsk2, ModulationType::Pam8],
        snr: SnrGrid { min_db: -2.0, max_db: 2.0, step_db: 2.0 },
        per_class_per_snr: 5,
        channel: ChannelConfig::new(3, 0.0),
        modem: ModemParams { length: 64, ..ModemParams::default() },
        master_seed: 17,
        ..DatasetSpec::default()
    }
}

#[test]
fn default_spec_matches_the_full_grid() {
    let spec = DatasetSpec::default();
    assert_eq!(spec.snr.values().len(), 26);
    assert_eq!(spec.sample_count(), 156_000);
    assert_eq!(spec.channel.antennas, 4);
    assert_eq!(spec.modem.length, 512);
}

#[test]
fn generation_layout_and_reproducibility() {
    let spec = small();
    let d = generate(&spec).unwrap();
    assert_eq!(d.len(), spec.sample_count());
    assert_eq!(d.len(), 3 * 3 * 5);
    assert!(d.class_counts().values().all(|&n| n == 15));
    assert!(d.samples.iter().all(|s| s.matrix.rows() == 6 && s.matrix.cols() == 64 && s.matrix.is_finite()));
    assert_eq!(generate(&spec).unwrap().samples, d.samples);

    let other = generate(&DatasetSpec { master_seed: 18, ..spec.clone() }).unwrap();
    assert_ne!(other.samples[0].matrix, d.samples[0].matrix);

    // Growing the per-class count keeps every existing sample.
    let bigger = generate(&DatasetSpec { per_class_per_snr: 7, ..spec }).unwrap();
    for s in &d.samples {
        assert!(bigger.samples.iter().any(|b| b.matrix == s.matrix));
    }
}

#[test]
fn few_shot_split_is_stratified() {
    let d = generate(&DatasetSpec { per_class_per_snr: 10, ..small() }).unwrap();
    let few = split_few_shot(&d, 0.3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert!(few.strata().values().all(|v| v.len() == 3));
    assert!(split_few_shot(&d, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).is_err());
    assert_eq!(split_few_shot(&d, 1.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap().len(), d.len());
}

#[test]
fn file_round_trip_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.bin");
    let d = generate(&small()).unwrap();
    write_dataset(&d, &path).unwrap();
    let size = std::fs::metadata(&path).unwrap().len() as usize;
    assert_eq!(size, HEADER_LEN + d.len() * (4 + 4 * 6 * 64));
    assert!(sidecar_path(&path).exists());
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.samples, d.samples);
    assert_eq!(back.spec, d.spec);
}

#[test]
fn body_reads_without_sidecar() {
    let d = generate(&small()).unwrap();
    let mut buf = Vec::new();
    write_to(&d, &mut buf).unwrap();
    let (back, flags) = read_from(&mut buf.as_slice()).unwrap();
    assert_eq!(flags & FLAG_AUGMENTED, 0);
    assert!(back.samples.iter().zip(&d.samples).all(|(a, b)| a.matrix == b.matrix && a.label == b.label));
    assert!(back.samples.iter().all(|s| s.meta.is_none()));
}

#[test]
fn corrupt_files_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.bin");
    let d = generate(&small()).unwrap();
    write_dataset(&d, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(read_dataset(&path), Err(Error::Truncated(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    std::fs::write(&path, &extra).unwrap();
    assert!(read_dataset(&path).is_err());
    std::fs::write(&path, &bytes[..3]).unwrap();
    assert!(matches!(read_dataset(&path), Err(Error::Truncated(_))));
    assert!(read_dataset(dir.path().join("missing.bin")).is_err());
}
