//! Declarative network descriptions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One convolution with its `(height, width)` geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    /// `(K_l, K_w)`.
    pub kernel: (usize, usize),
    pub t_in: usize,
    pub t_out: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    /// Input feature size `(height, width)`.
    pub input: (usize, usize),
    /// Output feature size `(F_l, F_w)`.
    pub output: (usize, usize),
}

impl ConvSpec {
    pub fn new(
        kernel: (usize, usize),
        t_in: usize,
        t_out: usize,
        stride: (usize, usize),
        padding: (usize, usize),
        input: (usize, usize),
    ) -> Result<Self> {
        let out_dim = |i: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            if s == 0 || i + 2 * p < k {
                return Err(Error::config(format!(
                    "kernel {k} does not fit input {i} with padding {p}"
                )));
            }
            Ok((i + 2 * p - k) / s + 1)
        };
        let output = (
            out_dim(input.0, kernel.0, stride.0, padding.0)?,
            out_dim(input.1, kernel.1, stride.1, padding.1)?,
        );
        Ok(Self { kernel, t_in, t_out, stride, padding, input, output })
    }

    /// `K_l K_w T_in T_out`.
    pub fn weights(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.t_in * self.t_out
    }

    /// `F_l F_w K_l K_w T_in T_out`.
    pub fn multiplications(&self) -> usize {
        self.output.0 * self.output.1 * self.weights()
    }

    /// Channel count and kernel width of the equivalent 1-D convolution.
    pub(crate) fn as_1d(&self) -> Result<(usize, usize)> {
        let full_height = self.padding.0 == 0 && self.kernel.0 == self.input.0 && self.stride.0 == 1;
        if !full_height || self.output.0 != 1 {
            return Err(Error::config(format!(
                "kernel height {} must span the input height {} to yield height-1 maps",
                self.kernel.0, self.input.0
            )));
        }
        Ok((self.t_in * self.kernel.0, self.kernel.1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnitSpec {
    /// conv -> batchnorm -> relu
    Plain { name: String, stage: usize, conv: ConvSpec },
    /// relu(bn(conv2(relu(bn(conv1 x)))) + shortcut(x)); the shortcut is
    /// identity or a 1x1 projection conv followed by batchnorm.
    Residual {
        name: String,
        stage: usize,
        conv1: ConvSpec,
        conv2: ConvSpec,
        projection: Option<ConvSpec>,
    },
}

impl UnitSpec {
    pub fn output(&self) -> (usize, usize, usize) {
        match self {
            UnitSpec::Plain { conv, .. } => (conv.t_out, conv.output.0, conv.output.1),
            UnitSpec::Residual { conv2, .. } => (conv2.t_out, conv2.output.0, conv2.output.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub antennas: usize,
    pub length: usize,
    pub classes: usize,
    pub units: Vec<UnitSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Relu,
    ResidualAdd,
    GlobalAvgPool,
    Dense,
    SoftmaxXent,
}

/// Flattened per-layer view consumed by the complexity counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub stage: usize,
    pub kernel: (usize, usize),
    pub t_in: usize,
    pub t_out: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub input: (usize, usize),
    pub output: (usize, usize),
    /// Part of a projection shortcut.
    pub shortcut: bool,
}

impl LayerSpec {
    fn simple(name: String, kind: LayerKind, stage: usize, channels: usize, size: (usize, usize)) -> Self {
        Self {
            name,
            kind,
            stage,
            kernel: (0, 0),
            t_in: channels,
            t_out: channels,
            stride: (1, 1),
            padding: (0, 0),
            input: size,
            output: size,
            shortcut: false,
        }
    }

    fn conv(name: String, stage: usize, c: &ConvSpec, shortcut: bool) -> Self {
        Self {
            name,
            kind: LayerKind::Conv,
            stage,
            kernel: c.kernel,
            t_in: c.t_in,
            t_out: c.t_out,
            stride: c.stride,
            padding: c.padding,
            input: c.input,
            output: c.output,
            shortcut,
        }
    }

    /// Values stored for this layer (weights plus batchnorm running statistics).
    pub fn stored_values(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.kernel.0 * self.kernel.1 * self.t_in * self.t_out,
            LayerKind::BatchNorm => 4 * self.t_out,
            LayerKind::Dense => self.t_in * self.t_out + self.t_out,
            _ => 0,
        }
    }
}

impl NetworkSpec {
    pub fn input_rows(&self) -> usize {
        2 * self.antennas
    }

    /// Convolutions on the main path plus the dense layer (projection shortcuts excluded).
    pub fn weighted_layers(&self) -> usize {
        let convs: usize = self
            .units
            .iter()
            .map(|u| match u {
                UnitSpec::Plain { .. } => 1,
                UnitSpec::Residual { .. } => 2,
            })
            .sum();
        convs + 1
    }

    pub fn final_channels(&self) -> usize {
        self.units.last().map_or(self.input_rows(), |u| u.output().0)
    }

    /// Layer-by-layer description in execution order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        for unit in &self.units {
            match unit {
                UnitSpec::Plain { name, stage, conv } => {
                    out.push(LayerSpec::conv(format!("{name}.conv"), *stage, conv, false));
                    out.push(LayerSpec::simple(format!("{name}.bn"), LayerKind::BatchNorm, *stage, conv.t_out, conv.output));
                    out.push(LayerSpec::simple(format!("{name}.relu"), LayerKind::Relu, *stage, conv.t_out, conv.output));
                }
                UnitSpec::Residual { name, stage, conv1, conv2, projection } => {
                    out.push(LayerSpec::conv(format!("{name}.conv1"), *stage, conv1, false));
                    out.push(LayerSpec::simple(format!("{name}.bn1"), LayerKind::BatchNorm, *stage, conv1.t_out, conv1.output));
                    out.push(LayerSpec::simple(format!("{name}.relu1"), LayerKind::Relu, *stage, conv1.t_out, conv1.output));
                    out.push(LayerSpec::conv(format!("{name}.conv2"), *stage, conv2, false));
                    out.push(LayerSpec::simple(format!("{name}.bn2"), LayerKind::BatchNorm, *stage, conv2.t_out, conv2.output));
                    if let Some(p) = projection {
                        out.push(LayerSpec::conv(format!("{name}.proj"), *stage, p, true));
                        let mut bn = LayerSpec::simple(format!("{name}.proj_bn"), LayerKind::BatchNorm, *stage, p.t_out, p.output);
                        bn.shortcut = true;
                        out.push(bn);
                    }
                    out.push(LayerSpec::simple(format!("{name}.add"), LayerKind::ResidualAdd, *stage, conv2.t_out, conv2.output));
                    out.push(LayerSpec::simple(format!("{name}.relu2"), LayerKind::Relu, *stage, conv2.t_out, conv2.output));
                }
            }
        }
        let (c, h, w) = self.units.last().map_or((self.input_rows(), 1, self.length), |u| u.output());
        let head_stage = self.units.iter().map(|u| match u {
            UnitSpec::Plain { stage, .. } | UnitSpec::Residual { stage, .. } => *stage,
        }).max().unwrap_or(0);
        let mut pool = LayerSpec::simple("pool".into(), LayerKind::GlobalAvgPool, head_stage, c, (h, w));
        pool.output = (1, 1);
        out.push(pool);
        let mut dense = LayerSpec::simple("dense".into(), LayerKind::Dense, head_stage, c, (1, 1));
        dense.t_out = self.classes;
        out.push(dense);
        let mut loss = LayerSpec::simple("loss".into(), LayerKind::SoftmaxXent, head_stage, self.classes, (1, 1));
        loss.t_in = self.classes;
        out.push(loss);
        out
    }

    /// Number of values a checkpoint stores for this network.
    pub fn stored_values(&self) -> usize {
        self.layers().iter().map(LayerSpec::stored_values).sum()
    }
}

fn check_dims(antennas: usize, length: usize, classes: usize) -> Result<()> {
    if antennas == 0 || length == 0 || classes < 2 {
        return Err(Error::config(format!(
            "invalid network dimensions: antennas {antennas}, length {length}, classes {classes}"
        )));
    }
    Ok(())
}

fn stem(antennas: usize, length: usize, width: usize, kernel_w: usize) -> Result<ConvSpec> {
    let rows = 2 * antennas;
    ConvSpec::new((rows, kernel_w), 1, width, (1, 1), (0, kernel_w / 2), (rows, length))
}

/// Stem plus `stages.len()` stages of `blocks` two-conv residual blocks.
///
/// `stages` lists `(channels, stride)` per stage; the stride applies to the
/// first block of the stage.
pub fn build_resnet(
    name: &str,
    antennas: usize,
    length: usize,
    classes: usize,
    stem_width: usize,
    stem_kernel: usize,
    stages: &[(usize, usize)],
    blocks: usize,
) -> Result<NetworkSpec> {
    check_dims(antennas, length, classes)?;
    let mut units = Vec::new();
    let stem = stem(antennas, length, stem_width, stem_kernel)?;
    let mut channels = stem.t_out;
    let mut size = stem.output;
    units.push(UnitSpec::Plain { name: "stem".into(), stage: 0, conv: stem });
    for (s, &(width, stride)) in stages.iter().enumerate() {
        for b in 0..blocks {
            let st = if b == 0 { stride } else { 1 };
            let conv1 = ConvSpec::new((1, 3), channels, width, (1, st), (0, 1), size)?;
            let conv2 = ConvSpec::new((1, 3), width, width, (1, 1), (0, 1), conv1.output)?;
            let projection = if channels != width || st != 1 {
                Some(ConvSpec::new((1, 1), channels, width, (1, st), (0, 0), size)?)
            } else {
                None
            };
            units.push(UnitSpec::Residual {
                name: format!("stage{}.block{}", s + 1, b + 1),
                stage: s + 1,
                conv1,
                conv2,
                projection,
            });
            channels = width;
            size = conv2.output;
        }
    }
    Ok(NetworkSpec { name: name.into(), antennas, length, classes, units })
}

/// ResNet56: 16-channel `(2C, 15)` stem, three stages of nine blocks at
/// 16/32/64 channels with width strides 1, 2, 1.
pub fn build_resnet56(antennas: usize, length: usize, classes: usize) -> Result<NetworkSpec> {
    if length % 2 != 0 {
        return Err(Error::config(format!("length {length} must be even for the stride-2 stage")));
    }
    build_resnet("resnet56", antennas, length, classes, 16, 15, &[(16, 1), (32, 2), (64, 1)], 9)
}

/// Desk-scale CNN: the same stem, four plain convs (16, 32, 32, 64 channels,
/// stride 2 on every second), pooling and dense.
pub fn build_cnn_small(antennas: usize, length: usize, classes: usize) -> Result<NetworkSpec> {
    check_dims(antennas, length, classes)?;
    let stem = stem(antennas, length, 16, 15)?;
    let mut units = vec![UnitSpec::Plain { name: "stem".into(), stage: 0, conv: stem }];
    let mut channels = 16;
    let mut size = stem.output;
    for (i, &(width, stride)) in [(16, 1), (32, 2), (32, 1), (64, 2)].iter().enumerate() {
        let conv = ConvSpec::new((1, 3), channels, width, (1, stride), (0, 1), size)?;
        units.push(UnitSpec::Plain { name: format!("conv{}", i + 1), stage: i + 1, conv });
        channels = width;
        size = conv.output;
    }
    Ok(NetworkSpec { name: "cnn-small".into(), antennas, length, classes, units })
}
