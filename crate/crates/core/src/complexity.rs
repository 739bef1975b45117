//! Inference cost accounting.
//!
//! Costs follow the multiplications-only convention: a convolution with
//! kernel `K_l x K_w`, `T_in -> T_out` channels and an `F_l x F_w` output
//! costs `F_l F_w K_l K_w T_in T_out` multiplications and stores
//! `K_l K_w T_in T_out` weights. Batchnorm, ReLU and the dense head are
//! left out of the closed form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerKind, NetworkSpec};
use crate::pipeline::FusionMode;

/// Stem coefficient per antenna: a `(2C, 15)` kernel with 16 filters.
pub const STEM_PER_ANTENNA: u64 = 480;
/// Per-stage multiplication coefficients of the residual body.
pub const STAGE_TIME: [u64; 3] = [13824, 26880, 53760];
/// Per-stage weight counts of the residual body.
pub const STAGE_PARAMS: [u64; 3] = [13824, 53760, 215040];
/// Feature memory coefficient: twice the largest (16-channel) map.
pub const FEATURE_MEM: u64 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub method: FusionMode,
    pub antennas: usize,
    /// The scalar `F_l F_w`.
    pub feature_size: u64,
    pub flops: u64,
    pub params: u64,
    pub feature_mem: u64,
    /// `[stem, stage1, stage2, stage3]` multiplications.
    pub time: [u64; 4],
    /// `[stem, stage1, stage2, stage3]` weights.
    pub space: [u64; 4],
}

impl ComplexityReport {
    /// Parameters plus feature memory.
    pub fn space_total(&self) -> u64 {
        self.params + self.feature_mem
    }
}

/// Evaluates the closed-form cost of `method` with `antennas` receivers.
///
/// single, dv and wa run `antennas` (or one, for single) copies of a 2-row
/// network; iq runs one `2C`-row network.
pub fn closed_form(method: FusionMode, antennas: usize, feature_size: u64) -> Result<ComplexityReport> {
    if antennas == 0 || feature_size == 0 {
        return Err(Error::domain("antennas and feature size must be positive"));
    }
    let (stem_rows, copies) = match method {
        FusionMode::Single => (1, 1),
        FusionMode::Dv | FusionMode::Wa => (1, antennas as u64),
        FusionMode::Iq => (antennas as u64, 1),
    };
    let stem = STEM_PER_ANTENNA * stem_rows;
    let f = feature_size;
    let time = [
        copies * stem * f,
        copies * STAGE_TIME[0] * f,
        copies * STAGE_TIME[1] * f,
        copies * STAGE_TIME[2] * f,
    ];
    let space = [copies * stem, copies * STAGE_PARAMS[0], copies * STAGE_PARAMS[1], copies * STAGE_PARAMS[2]];
    Ok(ComplexityReport {
        method,
        antennas,
        feature_size,
        flops: time.iter().sum(),
        params: space.iter().sum(),
        feature_mem: FEATURE_MEM * f,
        time,
        space,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCount {
    pub name: String,
    pub stage: usize,
    pub shortcut: bool,
    pub multiplications: u64,
    pub weights: u64,
}

/// Exact per-layer convolution costs of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerwiseReport {
    pub network: String,
    pub antennas: usize,
    pub length: usize,
    pub layers: Vec<LayerCount>,
    /// Main-path multiplications per stage (index 0 is the stem).
    pub stage_time: Vec<u64>,
    /// Main-path weights per stage.
    pub stage_params: Vec<u64>,
    pub projection_time: u64,
    pub projection_params: u64,
    /// All convolution multiplications, projections included.
    pub flops: u64,
    /// All convolution weights, projections included.
    pub conv_params: u64,
    /// Twice the largest feature map, in values.
    pub feature_mem: u64,
    /// Every value a checkpoint stores: conv weights, batchnorm affine and
    /// running statistics, dense weights and bias.
    pub stored_values: u64,
}

impl LayerwiseReport {
    /// Stage multiplications divided by the input width.
    pub fn stage_time_coefficients(&self) -> Vec<f64> {
        self.stage_time.iter().map(|&t| t as f64 / self.length as f64).collect()
    }
}

pub fn layerwise_count(spec: &NetworkSpec) -> Result<LayerwiseReport> {
    let layers = spec.layers();
    let stages = layers.iter().map(|l| l.stage).max().unwrap_or(0) + 1;
    let mut report = LayerwiseReport {
        network: spec.name.clone(),
        antennas: spec.antennas,
        length: spec.length,
        layers: Vec::new(),
        stage_time: vec![0; stages],
        stage_params: vec![0; stages],
        projection_time: 0,
        projection_params: 0,
        flops: 0,
        conv_params: 0,
        feature_mem: 0,
        stored_values: 0,
    };
    let mut max_map = 0u64;
    for l in &layers {
        report.stored_values += l.stored_values() as u64;
        if l.kind != LayerKind::Conv {
            continue;
        }
        if l.output.0 == 0 || l.output.1 == 0 {
            return Err(Error::config(format!("layer {} has no feature size", l.name)));
        }
        let weights = (l.kernel.0 * l.kernel.1 * l.t_in * l.t_out) as u64;
        let mults = weights * (l.output.0 * l.output.1) as u64;
        max_map = max_map.max((l.t_out * l.output.0 * l.output.1) as u64);
        report.flops += mults;
        report.conv_params += weights;
        if l.shortcut {
            report.projection_time += mults;
            report.projection_params += weights;
        } else {
            report.stage_time[l.stage] += mults;
            report.stage_params[l.stage] += weights;
        }
        report.layers.push(LayerCount {
            name: l.name.clone(),
            stage: l.stage,
            shortcut: l.shortcut,
            multiplications: mults,
            weights,
        });
    }
    report.feature_mem = 2 * max_map;
    Ok(report)
}

/// Reference FLOPs (M) and parameters (M) per method, four antennas.
pub const REFERENCE_COSTS: [(FusionMode, f64, f64); 4] = [
    (FusionMode::Single, 24.73, 0.288),
    (FusionMode::Dv, 98.92, 1.144),
    (FusionMode::Wa, 98.92, 1.144),
    (FusionMode::Iq, 25.09, 0.289),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub method: FusionMode,
    pub reference_flops_m: f64,
    pub reference_params_m: f64,
    /// Closed-form time coefficient (multiplications per unit `F`).
    pub predicted_time_coefficient: u64,
    pub predicted_params: u64,
    pub params_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub antennas: usize,
    pub rows: Vec<ReferenceRow>,
    pub reference_dv_over_single: f64,
    pub predicted_dv_over_single: f64,
    pub reference_iq_over_single: f64,
    pub predicted_iq_over_single: f64,
    pub iq_ratio_relative_error: f64,
    /// Layer-wise ResNet56 stage coefficients (C = 1, normalised to the input width).
    pub layerwise_stage_time: Vec<f64>,
    pub layerwise_stage_params: Vec<u64>,
    pub layerwise_stem_weights: u64,
}

impl ReferenceCheck {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method  FLOPs(M) pub  time coef  params(M) pub  params pred  rel err");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6}  {:>12.2}  {:>9}  {:>13.3}  {:>11}  {:>+7.3}",
                r.method, r.reference_flops_m, r.predicted_time_coefficient, r.reference_params_m, r.predicted_params, r.params_relative_error
            );
        }
        let _ = writeln!(
            s,
            "dv/single FLOPs: reference {:.6}, predicted {:.6}",
            self.reference_dv_over_single, self.predicted_dv_over_single
        );
        let _ = writeln!(
            s,
            "iq/single FLOPs: reference {:.6}, predicted {:.6} (relative difference {:.4}%)",
            self.reference_iq_over_single,
            self.predicted_iq_over_single,
            100.0 * self.iq_ratio_relative_error
        );
        let _ = writeln!(
            s,
            "layer-wise stem weights at C={}: {} ({} per antenna)",
            self.antennas,
            self.layerwise_stem_weights,
            self.layerwise_stem_weights / self.antennas as u64
        );
        for (i, (t, w)) in self.layerwise_stage_time.iter().zip(&self.layerwise_stage_params).enumerate() {
            let (ct, cw) = (STAGE_TIME[i], STAGE_PARAMS[i]);
            let note = if (t - ct as f64).abs() < 1e-9 { String::new() } else { format!("  <- differs from {ct} by x{:.2}", t / ct as f64) };
            let _ = writeln!(s, "stage {}: time coef {t} (closed form {ct}), weights {w} (closed form {cw}){note}", i + 1);
        }
        s
    }
}

/// Compares the closed form with the reference four-antenna figures.
pub fn reference_check() -> Result<ReferenceCheck> {
    const C: usize = 4;
    let mut rows = Vec::new();
    for (method, flops_m, params_m) in REFERENCE_COSTS {
        let r = closed_form(method, C, 1)?;
        rows.push(ReferenceRow {
            method,
            reference_flops_m: flops_m,
            reference_params_m: params_m,
            predicted_time_coefficient: r.flops,
            predicted_params: r.params,
            params_relative_error: r.params as f64 / (params_m * 1e6) - 1.0,
        });
    }
    let coef = |m: FusionMode| rows.iter().find(|r| r.method == m).map(|r| r.predicted_time_coefficient as f64).unwrap_or(f64::NAN);
    let reference_iq = 25.09 / 24.73;
    let predicted_iq = coef(FusionMode::Iq) / coef(FusionMode::Single);

    let body = layerwise_count(&crate::nn::build_resnet56(1, 512, 12)?)?;
    let coeffs = body.stage_time_coefficients();
    let stem = layerwise_count(&crate::nn::build_resnet56(C, 512, 12)?)?;
    Ok(ReferenceCheck {
        antennas: C,
        reference_dv_over_single: 98.92 / 24.73,
        predicted_dv_over_single: coef(FusionMode::Dv) / coef(FusionMode::Single),
        reference_iq_over_single: reference_iq,
        predicted_iq_over_single: predicted_iq,
        iq_ratio_relative_error: (predicted_iq - reference_iq).abs() / reference_iq,
        layerwise_stage_time: coeffs[1..].to_vec(),
        layerwise_stage_params: body.stage_params[1..].to_vec(),
        layerwise_stem_weights: stem.stage_params[0],
        rows,
    })
}

pub fn complexity_csv(reports: &[ComplexityReport]) -> String {
    let mut s = String::from(
        "method,antennas,feature_size,flops,params,feature_mem,space,t_con1,t_block1,t_block2,t_block3,w_con1,w_block1,w_block2,w_block3\n",
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method, r.antennas, r.feature_size, r.flops, r.params, r.feature_mem, r.space_total(),
            r.time[0], r.time[1], r.time[2], r.time[3], r.space[0], r.space[1], r.space[2], r.space[3]
        );
    }
    s
}
