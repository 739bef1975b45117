use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::softmax_cross_entropy;
use super::optim::{Adam, TrainConfig};
use super::{cast, ClassPosterior, Network, Scalar, Tensor};
use crate::datagen::Dataset;
use crate::error::{Error, Result};

const EVAL_BATCH: usize = 256;

/// Stacks the selected samples into a `(n, 2C, N)` tensor.
pub fn batch_tensor<T: Scalar>(d: &Dataset, idx: &[usize]) -> Tensor<T> {
    let rows = 2 * d.antennas;
    let mut data = Vec::with_capacity(idx.len() * rows * d.length);
    for &i in idx {
        data.extend(d.samples[i].matrix.data().iter().map(|&v| cast::<T>(v as f64)));
    }
    Tensor { n: idx.len(), c: rows, w: d.length, data }
}

fn check_compatible<T: Scalar>(net: &Network<T>, d: &Dataset) -> Result<()> {
    if net.input_rows() != 2 * d.antennas || net.input_len() != d.length {
        return Err(Error::Shape(format!(
            "network expects {}x{} inputs, dataset holds {}x{}",
            net.input_rows(),
            net.input_len(),
            2 * d.antennas,
            d.length
        )));
    }
    Ok(())
}

/// Inference-mode posteriors for every sample, in dataset order.
pub fn predict_dataset<T: Scalar>(net: &Network<T>, d: &Dataset) -> Result<Vec<ClassPosterior>> {
    check_compatible(net, d)?;
    let mut out = Vec::with_capacity(d.len());
    let idx: Vec<usize> = (0..d.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        out.extend(net.predict(&batch_tensor(d, chunk))?);
    }
    Ok(out)
}

/// Inference-mode mean cross-entropy and accuracy.
pub fn evaluate_loss<T: Scalar>(net: &Network<T>, d: &Dataset) -> Result<(f64, f64)> {
    check_compatible(net, d)?;
    if d.is_empty() {
        return Ok((0.0, 0.0));
    }
    let idx: Vec<usize> = (0..d.len()).collect();
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in idx.chunks(EVAL_BATCH) {
        let x = batch_tensor::<T>(d, chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| d.samples[i].label as usize).collect();
        let logits = net.logits(&x)?;
        let (l, probs, _) = softmax_cross_entropy(&logits, &labels);
        loss += l.to_f64().unwrap_or(f64::NAN) * chunk.len() as f64;
        let m = net.classes();
        for (n, &label) in labels.iter().enumerate() {
            let row: Vec<f64> = probs.data[n * m..(n + 1) * m]
                .iter()
                .map(|v| v.to_f64().unwrap_or(0.0))
                .collect();
            if super::argmax(&row) == label {
                correct += 1;
            }
        }
    }
    Ok((loss / d.len() as f64, correct as f64 / d.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Epoch 0 is the untrained network evaluated in inference mode.
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn initial(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,train_acc,val_acc\n");
        for r in &self.records {
            let val = r.val_acc.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{:.6},{:.6},{}", r.epoch, r.lr, r.train_loss, r.train_acc, val);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Mini-batch Adam training with a per-epoch seeded shuffle and step decay.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    check_compatible(net, train_set)?;
    if let Some(v) = val_set {
        check_compatible(net, v)?;
    }
    let val_acc = |net: &Network<T>| -> Result<Option<f64>> {
        match val_set {
            Some(v) if !v.is_empty() => Ok(Some(evaluate_loss(net, v)?.1)),
            _ => Ok(None),
        }
    };

    let mut history = History::default();
    let (l0, a0) = evaluate_loss(net, train_set)?;
    history.records.push(EpochRecord { epoch: 0, lr: 0.0, train_loss: l0, train_acc: a0, val_acc: val_acc(net)? });

    let mut adam = Adam::new();
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let x = batch_tensor::<T>(train_set, batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train_set.samples[i].label as usize).collect();
            let (loss, hits) = net.train_batch(&x, &labels)?;
            step += 1;
            adam.step(net, lr, step)?;
            loss_sum += loss.to_f64().unwrap_or(f64::NAN) * batch.len() as f64;
            correct += hits;
        }
        let n = train_set.len() as f64;
        history.records.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_acc: val_acc(net)?,
        });
    }
    Ok(history)
}
