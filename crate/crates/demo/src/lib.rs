//! Browser bindings: synthesize one multi-antenna sample, preview an
//! exchange/flip augmentation, and tabulate closed-form inference cost.

use wasm_bindgen::prelude::*;

use mamr::augment::{exchange, flip};
use mamr::channel::ChannelConfig;
use mamr::complexity::closed_form;
use mamr::datagen::{generate_sample, DatasetSpec, Flip, IqMatrix, SnrGrid};
use mamr::modem::ModulationType;
use mamr::pipeline::FusionMode;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub fn sample(modulation: &str, antennas: usize, length: usize, snr_db: f64, seed: u64) -> Result<Vec<f32>, String> {
    let m: ModulationType = modulation.parse().map_err(err)?;
    let mut spec = DatasetSpec {
        mods: vec![m],
        snr: SnrGrid::single(snr_db),
        per_class_per_snr: 1,
        channel: ChannelConfig::new(antennas, snr_db),
        master_seed: seed,
        ..DatasetSpec::default()
    };
    spec.modem.length = length;
    spec.validate().map_err(err)?;
    let s = generate_sample(&spec, m, snr_db, 0).map_err(err)?;
    Ok(s.matrix.into_data())
}

/// Swaps antennas `i` and `j` (zero-based; equal indices skip the swap),
/// then applies `flip` (`none`, `i`, `q` or `iq`).
pub fn augment(data: Vec<f32>, antennas: usize, i: usize, j: usize, flip_mode: &str) -> Result<Vec<f32>, String> {
    if antennas == 0 || data.len() % (2 * antennas) != 0 {
        return Err(format!("{} values do not split into {antennas} antennas", data.len()));
    }
    let cols = data.len() / (2 * antennas);
    let mut m = IqMatrix::new(2 * antennas, cols, data).map_err(err)?;
    if i != j {
        m = exchange(&m, i, j).map_err(err)?;
    }
    let mode = match flip_mode.to_ascii_lowercase().as_str() {
        "none" => None,
        "i" => Some(Flip::I),
        "q" => Some(Flip::Q),
        "iq" => Some(Flip::IQ),
        other => return Err(format!("unknown flip {other:?}")),
    };
    if let Some(f) = mode {
        m = flip(&m, f);
    }
    Ok(m.into_data())
}

/// JSON array of closed-form costs for every method.
pub fn complexity(antennas: usize, feature_size: u64) -> Result<String, String> {
    let reports = FusionMode::ALL
        .iter()
        .map(|&m| closed_form(m, antennas, feature_size))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    serde_json::to_string(&reports).map_err(err)
}

#[wasm_bindgen]
pub fn modulations() -> Vec<String> {
    ModulationType::ALL.iter().map(|m| m.name().to_string()).collect()
}

#[wasm_bindgen(js_name = generateSample)]
pub fn generate_sample_js(modulation: &str, antennas: u32, length: u32, snr_db: f64, seed: u32) -> Result<Vec<f32>, JsError> {
    sample(modulation, antennas as usize, length as usize, snr_db, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = augmentPreview)]
pub fn augment_preview_js(data: Vec<f32>, antennas: u32, i: u32, j: u32, flip_mode: &str) -> Result<Vec<f32>, JsError> {
    augment(data, antennas as usize, i as usize, j as usize, flip_mode).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = complexityTable)]
pub fn complexity_table_js(antennas: u32, feature_size: u32) -> Result<String, JsError> {
    complexity(antennas as usize, feature_size as u64).map_err(|e| JsError::new(&e))
}
