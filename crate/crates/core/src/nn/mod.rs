//! A small CPU convolutional network library.
//!
//! Networks are described declaratively by a [`NetworkSpec`] and instantiated
//! as a [`Network`] over `f32` (training) or `f64` (gradient checks). Every
//! layer has a hand-written backward pass. After the full-height stem all
//! feature maps have height one, so convolutions run as 1-D kernels over
//! `(batch, channel, width)` tensors; a `(2C, K)` stem on a one-channel
//! `2C x N` input is the same operation as a width-`K` kernel over `2C`
//! input channels.

mod checkpoint;
pub mod layers;
mod network;
mod optim;
mod spec;
mod train;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use network::{Mode, Network, ResidualBlock};
pub use optim::{Adam, TrainConfig};
pub use spec::{build_cnn_small, build_resnet, build_resnet56, ConvSpec, LayerKind, LayerSpec, NetworkSpec, UnitSpec};
pub use train::{batch_tensor, evaluate_loss, predict_dataset, train, EpochRecord, History};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Sum + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("representable")
}

/// Activations laid out as `(batch, channels, width)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(n: usize, c: usize, w: usize) -> Self {
        Self { n, c, w, data: vec![T::zero(); n * c * w] }
    }

    pub fn from_vec(n: usize, c: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * w {
            return Err(Error::Shape(format!(
                "{} values for a ({n}, {c}, {w}) tensor",
                data.len()
            )));
        }
        Ok(Self { n, c, w, data })
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.w
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.n, self.c, self.w) == (other.n, other.c, other.w)
    }
}

/// Probabilities over the classes, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPosterior(pub Vec<f64>);

impl ClassPosterior {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn confidence(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}
