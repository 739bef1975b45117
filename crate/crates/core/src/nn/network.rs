use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{softmax, softmax_cross_entropy, BatchNorm, Conv1d, Dense, GlobalAvgPool, Relu};
use super::spec::{ConvSpec, NetworkSpec, UnitSpec};
use super::{ClassPosterior, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, activations cached for backward.
    Train,
    /// Running statistics, no caching.
    Infer,
}

fn conv_from<T: Scalar>(c: &ConvSpec, allow_full_height: bool) -> Result<Conv1d<T>> {
    let (cin, k) = if allow_full_height {
        c.as_1d()?
    } else {
        if c.kernel.0 != 1 || c.input.0 != 1 {
            return Err(Error::config("inner convolutions must operate on height-1 maps"));
        }
        (c.t_in, c.kernel.1)
    };
    Ok(Conv1d::new(cin, c.t_out, k, c.stride.1, c.padding.1))
}

/// conv -> bn -> relu
#[derive(Debug, Clone)]
pub struct PlainUnit<T> {
    pub conv: Conv1d<T>,
    pub bn: BatchNorm<T>,
    relu: Relu<T>,
}

impl<T: Scalar> PlainUnit<T> {
    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.relu.infer(&self.bn.infer(&self.conv.infer(x)))
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.conv.forward(x);
        let h = self.bn.forward(&h);
        self.relu.forward(&h)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let d = self.relu.backward(dy);
        let d = self.bn.backward(&d);
        self.conv.backward(&d)
    }
}

#[derive(Debug, Clone)]
pub struct ResidualBlock<T> {
    pub conv1: Conv1d<T>,
    pub bn1: BatchNorm<T>,
    relu1: Relu<T>,
    pub conv2: Conv1d<T>,
    pub bn2: BatchNorm<T>,
    pub projection: Option<(Conv1d<T>, BatchNorm<T>)>,
    relu_out: Relu<T>,
}

fn add<T: Scalar>(a: &mut Tensor<T>, b: &Tensor<T>) {
    assert!(a.same_shape(b), "residual shapes differ");
    a.data.iter_mut().zip(&b.data).for_each(|(x, &y)| *x = *x + y);
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(
        conv1: Conv1d<T>,
        conv2: Conv1d<T>,
        projection: Option<Conv1d<T>>,
    ) -> Self {
        Self {
            bn1: BatchNorm::new(conv1.cout),
            bn2: BatchNorm::new(conv2.cout),
            projection: projection.map(|p| {
                let c = p.cout;
                (p, BatchNorm::new(c))
            }),
            conv1,
            conv2,
            relu1: Relu::new(),
            relu_out: Relu::new(),
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.relu1.infer(&self.bn1.infer(&self.conv1.infer(x)));
        let mut h = self.bn2.infer(&self.conv2.infer(&h));
        match &self.projection {
            Some((conv, bn)) => add(&mut h, &bn.infer(&conv.infer(x))),
            None => add(&mut h, x),
        }
        self.relu_out.infer(&h)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.conv1.forward(x);
        let h = self.bn1.forward(&h);
        let h = self.relu1.forward(&h);
        let h = self.conv2.forward(&h);
        let mut h = self.bn2.forward(&h);
        match &mut self.projection {
            Some((conv, bn)) => {
                let s = conv.forward(x);
                add(&mut h, &bn.forward(&s));
            }
            None => add(&mut h, x),
        }
        self.relu_out.forward(&h)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let d = self.relu_out.backward(dy);
        let main = self.bn2.backward(&d);
        let main = self.conv2.backward(&main);
        let main = self.relu1.backward(&main);
        let main = self.bn1.backward(&main);
        let mut dx = self.conv1.backward(&main);
        match &mut self.projection {
            Some((conv, bn)) => {
                let s = bn.backward(&d);
                add(&mut dx, &conv.backward(&s));
            }
            None => add(&mut dx, &d),
        }
        dx
    }
}

#[derive(Debug, Clone)]
enum Unit<T> {
    Plain(PlainUnit<T>),
    Residual(ResidualBlock<T>),
}

impl<T: Scalar> Unit<T> {
    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Unit::Plain(u) => u.infer(x),
            Unit::Residual(b) => b.infer(x),
        }
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Unit::Plain(u) => u.forward(x),
            Unit::Residual(b) => b.forward(x),
        }
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        match self {
            Unit::Plain(u) => u.backward(dy),
            Unit::Residual(b) => b.backward(dy),
        }
    }
}

/// Visits `(param, grad)` pairs of a conv.
macro_rules! conv_params {
    ($c:expr, $f:expr) => {
        $f(&mut $c.weight, &$c.grad)
    };
}

fn bn_params<T>(bn: &mut BatchNorm<T>, f: &mut dyn FnMut(&mut [T], &[T])) {
    f(&mut bn.gamma, &bn.grad_gamma);
    f(&mut bn.beta, &bn.grad_beta);
}

fn push_bn<'a, T>(bn: &'a BatchNorm<T>, out: &mut Vec<&'a [T]>) {
    out.extend([&bn.gamma[..], &bn.beta, &bn.running_mean, &bn.running_var]);
}

fn bn_state<T>(bn: &mut BatchNorm<T>, f: &mut dyn FnMut(&mut [T])) {
    f(&mut bn.gamma);
    f(&mut bn.beta);
    f(&mut bn.running_mean);
    f(&mut bn.running_var);
}

/// A trainable network instantiated from a [`NetworkSpec`].
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    units: Vec<Unit<T>>,
    pool: GlobalAvgPool,
    head: Dense<T>,
}

impl<T: Scalar> Network<T> {
    /// Builds the layers and draws He-normal weights from `seed`.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut units = Vec::with_capacity(spec.units.len());
        for (idx, u) in spec.units.iter().enumerate() {
            units.push(match u {
                UnitSpec::Plain { conv, .. } => {
                    let mut c = conv_from(conv, idx == 0)?;
                    c.init(&mut rng);
                    Unit::Plain(PlainUnit { bn: BatchNorm::new(c.cout), conv: c, relu: Relu::new() })
                }
                UnitSpec::Residual { conv1, conv2, projection, .. } => {
                    let mut c1 = conv_from(conv1, idx == 0)?;
                    let mut c2 = conv_from(conv2, false)?;
                    c1.init(&mut rng);
                    c2.init(&mut rng);
                    let proj = match projection {
                        Some(p) => {
                            let mut c = conv_from(p, false)?;
                            c.init(&mut rng);
                            Some(c)
                        }
                        None => None,
                    };
                    Unit::Residual(ResidualBlock::new(c1, c2, proj))
                }
            });
        }
        let mut head = Dense::new(spec.final_channels(), spec.classes);
        head.init(&mut rng);
        Ok(Self { spec: spec.clone(), units, pool: GlobalAvgPool::new(), head })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_rows(&self) -> usize {
        self.spec.input_rows()
    }

    pub fn input_len(&self) -> usize {
        self.spec.length
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.c != self.input_rows() || x.w != self.input_len() {
            return Err(Error::Shape(format!(
                "network expects {}x{} inputs, got {}x{}",
                self.input_rows(),
                self.input_len(),
                x.c,
                x.w
            )));
        }
        Ok(())
    }

    /// Logits with running statistics; a pure function of weights and input.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for u in &self.units {
            h = u.infer(&h);
        }
        Ok(self.head.infer(&self.pool.infer(&h)))
    }

    /// Logits with batch statistics, caching activations for [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for u in &mut self.units {
            h = u.forward(&h);
        }
        let p = self.pool.forward(&h);
        Ok(self.head.forward(&p))
    }

    /// Back-propagates a logit gradient, filling every parameter gradient. Returns the input gradient.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Tensor<T> {
        let d = self.head.backward(dlogits);
        let mut d = self.pool.backward(&d);
        for u in self.units.iter_mut().rev() {
            d = u.backward(&d);
        }
        d
    }

    /// Forward pass returning posteriors.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Vec<ClassPosterior>> {
        let logits = match mode {
            Mode::Train => self.forward_train(x)?,
            Mode::Infer => self.logits(x)?,
        };
        Ok(posteriors(&logits))
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<ClassPosterior>> {
        Ok(posteriors(&self.logits(x)?))
    }

    /// Forward in train mode, mean cross-entropy, backward. Returns `(loss, correct)`.
    pub fn train_batch(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<(T, usize)> {
        if labels.len() != x.n {
            return Err(Error::Shape(format!("{} labels for {} inputs", labels.len(), x.n)));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes()) {
            return Err(Error::Index(format!("label {bad} out of range for {} classes", self.classes())));
        }
        let logits = self.forward_train(x)?;
        let (loss, probs, grad) = softmax_cross_entropy(&logits, labels);
        let m = self.classes();
        let correct = labels
            .iter()
            .enumerate()
            .filter(|(n, &l)| {
                let row: Vec<f64> = probs.data[n * m..(n + 1) * m]
                    .iter()
                    .map(|v| v.to_f64().unwrap_or(0.0))
                    .collect();
                super::argmax(&row) == l
            })
            .count();
        self.backward(&grad);
        Ok((loss, correct))
    }

    /// Visits trainable `(param, grad)` pairs in declaration order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [T], &[T])) {
        for u in &mut self.units {
            match u {
                Unit::Plain(p) => {
                    conv_params!(p.conv, f);
                    bn_params(&mut p.bn, f);
                }
                Unit::Residual(b) => {
                    conv_params!(b.conv1, f);
                    bn_params(&mut b.bn1, f);
                    conv_params!(b.conv2, f);
                    bn_params(&mut b.bn2, f);
                    if let Some((c, bn)) = &mut b.projection {
                        conv_params!(c, f);
                        bn_params(bn, f);
                    }
                }
            }
        }
        f(&mut self.head.weight, &self.head.grad_weight);
        f(&mut self.head.bias, &self.head.grad_bias);
    }

    /// Every stored tensor (parameters and running statistics) in declaration order.
    pub fn state(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for u in &self.units {
            match u {
                Unit::Plain(p) => {
                    out.push(&p.conv.weight);
                    push_bn(&p.bn, &mut out);
                }
                Unit::Residual(b) => {
                    out.push(&b.conv1.weight);
                    push_bn(&b.bn1, &mut out);
                    out.push(&b.conv2.weight);
                    push_bn(&b.bn2, &mut out);
                    if let Some((c, bn)) = &b.projection {
                        out.push(&c.weight);
                        push_bn(bn, &mut out);
                    }
                }
            }
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    /// Mutable counterpart of [`Network::state`], same order.
    pub fn visit_state(&mut self, f: &mut dyn FnMut(&mut [T])) {
        for u in &mut self.units {
            match u {
                Unit::Plain(p) => {
                    f(&mut p.conv.weight);
                    bn_state(&mut p.bn, f);
                }
                Unit::Residual(b) => {
                    f(&mut b.conv1.weight);
                    bn_state(&mut b.bn1, f);
                    f(&mut b.conv2.weight);
                    bn_state(&mut b.bn2, f);
                    if let Some((c, bn)) = &mut b.projection {
                        f(&mut c.weight);
                        bn_state(bn, f);
                    }
                }
            }
        }
        f(&mut self.head.weight);
        f(&mut self.head.bias);
    }

    pub fn state_values(&self) -> Vec<T> {
        self.state().concat()
    }

    pub fn load_state(&mut self, values: &[T]) -> Result<()> {
        let expected = self.spec.stored_values();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{} stored values for a network with {expected}",
                values.len()
            )));
        }
        let mut offset = 0;
        self.visit_state(&mut |t| {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        });
        Ok(())
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p, _| n += p.len());
        n
    }

    /// Copies weights into a network of another float width.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut out = Network::<U>::new(&self.spec, 0).expect("spec already validated");
        let values: Vec<U> = self
            .state_values()
            .into_iter()
            .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
            .collect();
        out.load_state(&values).expect("same spec");
        out
    }
}

fn posteriors<T: Scalar>(logits: &Tensor<T>) -> Vec<ClassPosterior> {
    let p = softmax(logits);
    let m = p.sample_len();
    p.data
        .chunks(m)
        .map(|r| ClassPosterior(r.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{build_cnn_small, build_resnet};

    fn input(n: usize, c: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(n, c, w, (0..n * c * w).map(|v| ((v * 37 % 11) as f64 - 5.0) / 3.0).collect()).unwrap()
    }

    #[test]
    fn posterior_rows_sum_to_one() {
        let spec = build_cnn_small(2, 32, 4).unwrap();
        let mut net = Network::<f64>::new(&spec, 1).unwrap();
        let x = input(3, 4, 32);
        for mode in [Mode::Infer, Mode::Train] {
            for p in net.forward(&x, mode).unwrap() {
                assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn infer_is_deterministic_and_per_sample() {
        let spec = build_cnn_small(1, 16, 3).unwrap();
        let net = Network::<f64>::new(&spec, 2).unwrap();
        let x = input(3, 2, 16);
        let a = net.predict(&x).unwrap();
        assert_eq!(a, net.predict(&x).unwrap());
        let mut swapped = x.clone();
        let len = x.sample_len();
        swapped.data[..len].copy_from_slice(x.sample(2));
        swapped.data[2 * len..].copy_from_slice(x.sample(0));
        let b = net.predict(&swapped).unwrap();
        assert_eq!(a[0], b[2]);
        assert_eq!(a[2], b[0]);
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn zero_input_gives_finite_logits() {
        let spec = build_cnn_small(4, 128, 12).unwrap();
        let net = Network::<f32>::new(&spec, 0).unwrap();
        let logits = net.logits(&Tensor::zeros(2, 8, 128)).unwrap();
        assert!(logits.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let spec = build_cnn_small(2, 32, 4).unwrap();
        let net = Network::<f32>::new(&spec, 0).unwrap();
        assert!(matches!(net.logits(&Tensor::zeros(1, 2, 32)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_conv_block_is_relu_identity() {
        let spec = build_resnet("t", 1, 8, 2, 3, 3, &[(3, 1)], 1).unwrap();
        let mut net = Network::<f64>::new(&spec, 0).unwrap();
        let block = match &mut net.units[1] {
            Unit::Residual(b) => b,
            _ => unreachable!(),
        };
        block.conv1.weight.iter_mut().for_each(|w| *w = 0.0);
        block.conv2.weight.iter_mut().for_each(|w| *w = 0.0);
        let x = input(2, 3, 8);
        let y = block.infer(&x);
        for (a, b) in y.data.iter().zip(&x.data) {
            assert_eq!(*a, b.max(0.0));
        }
    }

    #[test]
    fn state_round_trip_and_count() {
        let spec = build_resnet("t", 2, 16, 3, 4, 5, &[(4, 1), (6, 2)], 1).unwrap();
        let a = Network::<f32>::new(&spec, 3).unwrap();
        let values = a.state_values();
        assert_eq!(values.len(), spec.stored_values());
        let mut b = Network::<f32>::new(&spec, 4).unwrap();
        b.load_state(&values).unwrap();
        assert_eq!(b.state_values(), values);
        assert!(b.load_state(&values[1..]).is_err());
    }
}
