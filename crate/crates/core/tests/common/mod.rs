#![allow(dead_code)]

use mamr::datagen::{generate, Dataset, DatasetSpec, SnrGrid};
use mamr::modem::ModulationType;
use mamr::nn::layers::{softmax_cross_entropy, BatchNorm, Conv1d, Dense, GlobalAvgPool, Relu};
use mamr::nn::{build_resnet, Network, ResidualBlock, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const DESK_MODS: [ModulationType; 4] =
    [ModulationType::Bpsk, ModulationType::Fsk8, ModulationType::Pam4, ModulationType::Qam16];

pub fn desk_spec(antennas: usize, per_class: usize, seed: u64) -> DatasetSpec {
    let mut spec = DatasetSpec {
        mods: DESK_MODS.to_vec(),
        snr: SnrGrid::single(10.0),
        per_class_per_snr: per_class,
        master_seed: seed,
        ..DatasetSpec::default()
    };
    spec.channel.antennas = antennas;
    spec.modem.length = 128;
    spec
}

/// 200 training and 100 test samples per class for trial `seed`.
pub fn desk_split(antennas: usize, seed: u64) -> (Dataset, Dataset) {
    let train = generate(&desk_spec(antennas, 200, 1000 + seed)).unwrap();
    let test = generate(&desk_spec(antennas, 100, 2000 + seed)).unwrap();
    (train, test)
}

// Finite-difference gradient checks in f64.

const H: f64 = 1e-5;

/// `|a - n| / max(|a| + |n|, 1e-6)`; the floor keeps roundoff on
/// vanishing gradients from counting as error.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

fn randn(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn tensor((n, c, w): (usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_vec(n, c, w, randn(rng, n * c * w)).unwrap()
}

/// A layer with flat parameter access.
pub trait Probe {
    fn fwd(&mut self, x: &Tensor<f64>) -> Tensor<f64>;
    fn bwd(&mut self, dy: &Tensor<f64>) -> Tensor<f64>;
    fn params(&mut self) -> Vec<&mut Vec<f64>>;
    fn grads(&self) -> Vec<Vec<f64>>;
}

impl Probe for Conv1d<f64> {
    fn fwd(&mut self, x: &Tensor<f64>) -> Tensor<f64> {
        self.forward(x)
    }
    fn bwd(&mut self, dy: &Tensor<f64>) -> Tensor<f64> {
        self.backward(dy)
    }
    fn params(&mut self) -> Vec<&mut Vec<f64>> {
        vec![&mut self.weight]
    }
    fn grads(&self) -> Vec<Vec<f64>> {
        vec![self.grad.clone()]
    }
}

impl Probe for BatchNorm<f64> {
    fn fwd(&mut self, x: &Tensor<f64>) -> Tensor<f64> {
        self.forward(x)
    }
    fn bwd(&mut self, dy: &Tensor<f64>) -> Tensor<f64> {
        self.backward(dy)
    }
    fn params(&mut self) -> Vec<&mut Vec<f64>> {
        vec![&mut self.gamma, &mut self.beta]
    }
    fn grads(&self) -> Vec<Vec<f64>> {
        vec![self.grad_gamma.clone(), self.grad_beta.clone()]
    }
}

impl Probe for Relu<f64> {
    fn fwd(&mut self, x: &Tensor<f64>) -> Tensor<f64> {
        self.forward(x)
    }
    fn bwd(&mut self, dy: &Tensor<f64>) -> Tensor<f64> {
        self.backward(dy)
    }
    fn params(&mut self) -> Vec<&mut Vec<f64>> {
        Vec::new()
    }
    fn grads(&self) -> Vec<Vec<f64>> {
        Vec::new()
    }
}

impl Probe for GlobalAvgPool {
    fn fwd(&mut self, x: &Tensor<f64>) -> Tensor<f64> {
        self.forward(x)
    }
    fn bwd(&mut self, dy: &Tensor<f64>) -> Tensor<f64> {
        self.backward(dy)
    }
    fn params(&mut self) -> Vec<&mut Vec<f64>> {
        Vec::new()
    }
    fn grads(&self) -> Vec<Vec<f64>> {
        Vec::new()
    }
}

impl Probe for Dense<f64> {
    fn fwd(&mut self, x: &Tensor<f64>) -> Tensor<f64> {
        self.forward(x)
    }
    fn bwd(&mut self, dy: &Tensor<f64>) -> Tensor<f64> {
        self.backward(dy)
    }
    fn params(&mut self) -> Vec<&mut Vec<f64>> {
        vec![&mut self.weight, &mut self.bias]
    }
    fn grads(&self) -> Vec<Vec<f64>> {
        vec![self.grad_weight.clone(), self.grad_bias.clone()]
    }
}

impl Probe for ResidualBlock<f64> {
    fn fwd(&mut self, x: &Tensor<f64>) -> Tensor<f64> {
        self.forward(x)
    }
    fn bwd(&mut self, dy: &Tensor<f64>) -> Tensor<f64> {
        self.backward(dy)
    }
    fn params(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = vec![
            &mut self.conv1.weight,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.weight,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
        ];
        if let Some((c, bn)) = &mut self.projection {
            v.push(&mut c.weight);
            v.push(&mut bn.gamma);
            v.push(&mut bn.beta);
        }
        v
    }
    fn grads(&self) -> Vec<Vec<f64>> {
        let mut v = vec![
            self.conv1.grad.clone(),
            self.bn1.grad_gamma.clone(),
            self.bn1.grad_beta.clone(),
            self.conv2.grad.clone(),
            self.bn2.grad_gamma.clone(),
            self.bn2.grad_beta.clone(),
        ];
        if let Some((c, bn)) = &self.projection {
            v.push(c.grad.clone());
            v.push(bn.grad_gamma.clone());
            v.push(bn.grad_beta.clone());
        }
        v
    }
}

fn projected(layer: &mut dyn Probe, x: &Tensor<f64>, r: &[f64]) -> f64 {
    layer.fwd(x).data.iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Checks `L = <layer(x), r>` against central differences on `coords`
/// random input and parameter coordinates. Returns the worst relative error.
pub fn check_layer(layer: &mut dyn Probe, x: &Tensor<f64>, rng: &mut ChaCha8Rng, coords: usize) -> f64 {
    let y = layer.fwd(x);
    let r = randn(rng, y.data.len());
    let dy = Tensor::from_vec(y.n, y.c, y.w, r.clone()).unwrap();
    let dx = layer.bwd(&dy);
    let grads = layer.grads();
    let mut worst = 0.0f64;

    for _ in 0..coords {
        let i = rng.random_range(0..x.data.len());
        let mut xp = x.clone();
        xp.data[i] += H;
        let lp = projected(layer, &xp, &r);
        xp.data[i] -= 2.0 * H;
        let lm = projected(layer, &xp, &r);
        worst = worst.max(rel_err(dx.data[i], (lp - lm) / (2.0 * H)));
    }
    let sizes: Vec<usize> = grads.iter().map(Vec::len).collect();
    if sizes.iter().sum::<usize>() > 0 {
        for _ in 0..coords {
            let t = loop {
                let t = rng.random_range(0..sizes.len());
                if sizes[t] > 0 {
                    break t;
                }
            };
            let j = rng.random_range(0..sizes[t]);
            let orig = layer.params()[t][j];
            layer.params()[t][j] = orig + H;
            let lp = projected(layer, x, &r);
            layer.params()[t][j] = orig - H;
            let lm = projected(layer, x, &r);
            layer.params()[t][j] = orig;
            worst = worst.max(rel_err(grads[t][j], (lp - lm) / (2.0 * H)));
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct GradResult {
    pub name: &'static str,
    pub trials: usize,
    pub worst: f64,
}

fn with_random_affine(bn: &mut BatchNorm<f64>, rng: &mut ChaCha8Rng) {
    bn.gamma = randn(rng, bn.channels).iter().map(|g| 1.0 + 0.5 * g).collect();
    bn.beta = randn(rng, bn.channels).iter().map(|b| 0.3 * b).collect();
}

/// Runs `trials` randomized checks for every layer type.
pub fn layer_suite(trials: usize, seed: u64) -> Vec<GradResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| {
        let worst = (0..trials).map(|_| f(&mut rng)).fold(0.0, f64::max);
        out.push(GradResult { name, trials, worst });
    };
    for (name, stride) in [("conv1d stride 1", 1usize), ("conv1d stride 2", 2)] {
        run(name, &mut |rng| {
            let (cin, cout) = (rng.random_range(1..5), rng.random_range(1..5));
            let k = [1, 3, 5, 15][rng.random_range(0..4)];
            let mut conv = Conv1d::<f64>::new(cin, cout, k, stride, k / 2);
            conv.init(rng);
            let x = tensor((rng.random_range(1..4), cin, rng.random_range(k.max(5)..20)), rng);
            check_layer(&mut conv, &x, rng, 6)
        });
    }
    run("batchnorm", &mut |rng| {
        let c = rng.random_range(1..5);
        let mut bn = BatchNorm::<f64>::new(c);
        with_random_affine(&mut bn, rng);
        let x = tensor((rng.random_range(2..5), c, rng.random_range(3..10)), rng);
        check_layer(&mut bn, &x, rng, 6)
    });
    run("relu", &mut |rng| {
        let x = tensor((2, 3, 8), rng);
        check_layer(&mut Relu::<f64>::new(), &x, rng, 6)
    });
    run("global average pool", &mut |rng| {
        let x = tensor((rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..10)), rng);
        check_layer(&mut GlobalAvgPool::new(), &x, rng, 6)
    });
    run("dense", &mut |rng| {
        let (din, dout) = (rng.random_range(1..8), rng.random_range(1..6));
        let mut d = Dense::<f64>::new(din, dout);
        d.init(rng);
        d.bias = randn(rng, dout);
        let x = tensor((rng.random_range(1..4), din, 1), rng);
        check_layer(&mut d, &x, rng, 6)
    });
    run("softmax cross-entropy", &mut |rng| {
        let (n, m) = (rng.random_range(1..5), rng.random_range(2..8));
        let logits = tensor((n, m, 1), rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let (_, _, grad) = softmax_cross_entropy(&logits, &labels);
        let mut worst = 0.0f64;
        for _ in 0..6 {
            let i = rng.random_range(0..logits.data.len());
            let mut l = logits.clone();
            l.data[i] += H;
            let lp = softmax_cross_entropy(&l, &labels).0;
            l.data[i] -= 2.0 * H;
            let lm = softmax_cross_entropy(&l, &labels).0;
            worst = worst.max(rel_err(grad.data[i], (lp - lm) / (2.0 * H)));
        }
        worst
    });
    run("residual block", &mut |rng| {
        let cin = rng.random_range(1..4);
        let (cout, stride) = if rng.random_bool(0.5) { (cin, 1) } else { (cin + 1, 2) };
        let mut c1 = Conv1d::<f64>::new(cin, cout, 3, stride, 1);
        let mut c2 = Conv1d::<f64>::new(cout, cout, 3, 1, 1);
        c1.init(rng);
        c2.init(rng);
        let proj = (cin != cout || stride != 1).then(|| {
            let mut p = Conv1d::<f64>::new(cin, cout, 1, stride, 0);
            p.init(rng);
            p
        });
        let mut block = ResidualBlock::new(c1, c2, proj);
        with_random_affine(&mut block.bn1, rng);
        with_random_affine(&mut block.bn2, rng);
        let x = tensor((rng.random_range(2..4), cin, rng.random_range(6..14)), rng);
        check_layer(&mut block, &x, rng, 6)
    });
    out
}

fn net_param(net: &mut Network<f64>, idx: usize, delta: Option<f64>) -> (f64, f64) {
    let mut offset = 0;
    let mut found = (f64::NAN, f64::NAN);
    net.visit_params(&mut |p, g| {
        if idx >= offset && idx < offset + p.len() {
            let j = idx - offset;
            if let Some(d) = delta {
                p[j] += d;
            }
            found = (p[j], g[j]);
        }
        offset += p.len();
    });
    found
}

fn net_loss(net: &mut Network<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    let logits = net.forward_train(x).unwrap();
    softmax_cross_entropy(&logits, labels).0
}

/// Central difference of `f` at 0. A ReLU kink inside the stencil shows up as
/// a second difference far above the smooth O(h^2) level; the step then shrinks.
pub fn kink_safe_derivative(mut f: impl FnMut(f64) -> f64) -> f64 {
    let f0 = f(0.0);
    let mut h = H;
    loop {
        let (lp, lm) = (f(h), f(-h));
        let curvature = (lp - 2.0 * f0 + lm).abs();
        if curvature <= 1e-9 * h / H * (1.0 + f0.abs()) || h < 1e-9 {
            return (lp - lm) / (2.0 * h);
        }
        h /= 100.0;
    }
}

/// Whole-network check on a three-block residual net (one block per stage).
pub fn net_suite(trials: usize, seed: u64) -> GradResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = build_resnet("tiny", 2, 16, 3, 4, 5, &[(4, 1), (6, 2), (6, 1)], 1).unwrap();
    let mut worst = 0.0f64;
    for t in 0..trials {
        let mut net = Network::<f64>::new(&spec, seed + t as u64).unwrap();
        let x = tensor((3, 4, 16), &mut rng);
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..3)).collect();
        let logits = net.forward_train(&x).unwrap();
        let (_, _, g) = softmax_cross_entropy(&logits, &labels);
        let dx = net.backward(&g);
        let total = net.param_count();
        for _ in 0..4 {
            let i = rng.random_range(0..total);
            let (_, analytic) = net_param(&mut net, i, None);
            let numeric = kink_safe_derivative(|d| {
                net_param(&mut net, i, Some(d));
                let l = net_loss(&mut net, &x, &labels);
                net_param(&mut net, i, Some(-d));
                l
            });
            worst = worst.max(rel_err(analytic, numeric));
        }
        for _ in 0..2 {
            let i = rng.random_range(0..x.data.len());
            let numeric = kink_safe_derivative(|d| {
                let mut xp = x.clone();
                xp.data[i] += d;
                net_loss(&mut net, &xp, &labels)
            });
            worst = worst.max(rel_err(dx.data[i], numeric));
        }
    }
    GradResult { name: "three-block network", trials, worst }
}
