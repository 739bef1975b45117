//! Recognition strategies and evaluation.
//!
//! Antenna indices are zero-based throughout, matching [`crate::augment::exchange`].

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, IqMatrix, LabeledSample};
use crate::error::{Error, Result};
use crate::modem::ModulationType;
use crate::nn::{self, ClassPosterior, History, Network, NetworkSpec, Scalar, Tensor, TrainConfig};

const BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Single,
    Dv,
    Wa,
    Iq,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::Single, FusionMode::Dv, FusionMode::Wa, FusionMode::Iq];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Single => "single",
            FusionMode::Dv => "dv",
            FusionMode::Wa => "wa",
            FusionMode::Iq => "iq",
        }
    }

    /// Whether the mode runs a 2-row model once per antenna.
    pub fn per_antenna(self) -> bool {
        !matches!(self, FusionMode::Iq)
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(FusionMode::Single),
            "dv" => Ok(FusionMode::Dv),
            "wa" => Ok(FusionMode::Wa),
            "iq" => Ok(FusionMode::Iq),
            _ => Err(Error::config(format!("unknown mode {s:?} (single|dv|wa|iq)"))),
        }
    }
}

/// Anything that maps IQ matrices to class posteriors.
pub trait Classifier: Sync {
    /// Input rows the classifier expects.
    fn rows(&self) -> usize;
    /// Input length, when fixed.
    fn length(&self) -> Option<usize>;
    fn classes(&self) -> usize;
    fn classify_batch(&self, inputs: &[&IqMatrix]) -> Result<Vec<ClassPosterior>>;
}

impl<T: Scalar> Classifier for Network<T> {
    fn rows(&self) -> usize {
        self.input_rows()
    }

    fn length(&self) -> Option<usize> {
        Some(self.input_len())
    }

    fn classes(&self) -> usize {
        Network::classes(self)
    }

    fn classify_batch(&self, inputs: &[&IqMatrix]) -> Result<Vec<ClassPosterior>> {
        let (rows, len) = (self.input_rows(), self.input_len());
        let mut data = Vec::with_capacity(inputs.len() * rows * len);
        for m in inputs {
            if m.rows() != rows || m.cols() != len {
                return Err(Error::Shape(format!(
                    "network expects {rows}x{len}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
            data.extend(m.data().iter().map(|&v| nn::cast::<T>(v as f64)));
        }
        self.predict(&Tensor::from_vec(inputs.len(), rows, len, data)?)
    }
}

fn check_input(clf: &dyn Classifier, rows: usize, cols: usize) -> Result<()> {
    if clf.rows() != rows || clf.length().is_some_and(|l| l != cols) {
        return Err(Error::Shape(format!(
            "classifier expects {} rows x {:?}, input is {rows}x{cols}",
            clf.rows(),
            clf.length()
        )));
    }
    Ok(())
}

fn one(clf: &dyn Classifier, m: &IqMatrix) -> Result<ClassPosterior> {
    clf.classify_batch(&[m])?
        .pop()
        .ok_or_else(|| Error::Shape("classifier returned no posterior".into()))
}

/// One pass over the spliced `2C x N` matrix.
pub fn classify_iq(clf: &dyn Classifier, m: &IqMatrix) -> Result<ClassPosterior> {
    check_input(clf, m.rows(), m.cols())?;
    one(clf, m)
}

/// One pass over antenna `i`'s two rails.
pub fn classify_single(clf: &dyn Classifier, m: &IqMatrix, antenna: usize) -> Result<ClassPosterior> {
    let block = m.antenna(antenna)?;
    check_input(clf, 2, m.cols())?;
    one(clf, &block)
}

fn check_posteriors(posteriors: &[ClassPosterior]) -> Result<usize> {
    let m = posteriors
        .first()
        .map(|p| p.probs().len())
        .ok_or_else(|| Error::domain("fusion needs at least one posterior"))?;
    if m == 0 || posteriors.iter().any(|p| p.probs().len() != m) {
        return Err(Error::Shape("posteriors have differing class counts".into()));
    }
    Ok(m)
}

/// Plurality of per-antenna argmax votes. Ties go to the larger summed
/// posterior, then the lower class index.
pub fn fuse_dv(posteriors: &[ClassPosterior]) -> Result<usize> {
    let m = check_posteriors(posteriors)?;
    let mut votes = vec![0usize; m];
    let mut mass = vec![0.0; m];
    for p in posteriors {
        votes[p.argmax()] += 1;
        for (acc, v) in mass.iter_mut().zip(p.probs()) {
            *acc += v;
        }
    }
    let mut best = 0;
    for c in 1..m {
        if votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best]) {
            best = c;
        }
    }
    Ok(best)
}

/// Posterior average weighted by each antenna's max probability.
pub fn fuse_wa(posteriors: &[ClassPosterior]) -> Result<usize> {
    Ok(nn::argmax(&wa_scores(posteriors)?))
}

/// The weighted scores behind [`fuse_wa`].
pub fn wa_scores(posteriors: &[ClassPosterior]) -> Result<Vec<f64>> {
    let m = check_posteriors(posteriors)?;
    let mut scores = vec![0.0; m];
    for p in posteriors {
        let w = p.confidence();
        for (s, v) in scores.iter_mut().zip(p.probs()) {
            *s += w * v;
        }
    }
    Ok(scores)
}

/// Every antenna of every sample as its own single-antenna sample.
pub fn split_antennas(d: &Dataset) -> Dataset {
    let mut samples = Vec::with_capacity(d.len() * d.antennas);
    for s in &d.samples {
        for a in 0..d.antennas {
            let matrix = IqMatrix::new(2, d.length, s.matrix.antenna_block(a).to_vec())
                .expect("antenna block has 2 x N values");
            samples.push(LabeledSample { matrix, meta: None, ..s.clone() });
        }
    }
    Dataset { antennas: 1, length: d.length, samples, spec: None }
}

/// Predicted class of every sample of `d` under `mode`.
pub fn predict(mode: FusionMode, clf: &dyn Classifier, d: &Dataset) -> Result<Vec<usize>> {
    let rows = if mode.per_antenna() { 2 } else { 2 * d.antennas };
    check_input(clf, rows, d.length)?;
    let mut out = Vec::with_capacity(d.len());
    for chunk in d.samples.chunks(BATCH) {
        match mode {
            FusionMode::Iq => {
                let inputs: Vec<&IqMatrix> = chunk.iter().map(|s| &s.matrix).collect();
                out.extend(clf.classify_batch(&inputs)?.iter().map(ClassPosterior::argmax));
            }
            FusionMode::Single => {
                let blocks = chunk.iter().map(|s| s.matrix.antenna(0)).collect::<Result<Vec<_>>>()?;
                let inputs: Vec<&IqMatrix> = blocks.iter().collect();
                out.extend(clf.classify_batch(&inputs)?.iter().map(ClassPosterior::argmax));
            }
            FusionMode::Dv | FusionMode::Wa => {
                let c = d.antennas;
                let mut blocks = Vec::with_capacity(chunk.len() * c);
                for s in chunk {
                    for a in 0..c {
                        blocks.push(s.matrix.antenna(a)?);
                    }
                }
                let inputs: Vec<&IqMatrix> = blocks.iter().collect();
                let posts = clf.classify_batch(&inputs)?;
                for per_sample in posts.chunks(c) {
                    out.push(if mode == FusionMode::Dv { fuse_dv(per_sample)? } else { fuse_wa(per_sample)? });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrAccuracy {
    pub snr_db: f64,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: FusionMode,
    pub accuracy: f64,
    pub per_snr: Vec<SnrAccuracy>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub samples: usize,
}

impl EvalReport {
    pub fn from_predictions(mode: FusionMode, d: &Dataset, predictions: &[usize], classes: usize) -> Result<Self> {
        if predictions.len() != d.len() {
            return Err(Error::Length { needed: d.len(), got: predictions.len() });
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        let mut by_snr: BTreeMap<i16, (usize, usize)> = BTreeMap::new();
        let mut correct = 0;
        for (s, &p) in d.samples.iter().zip(predictions) {
            let t = s.label as usize;
            if t >= classes || p >= classes {
                return Err(Error::Index(format!("class {} outside 0..{classes}", t.max(p))));
            }
            confusion[t][p] += 1;
            let e = by_snr.entry(s.snr_decidb).or_default();
            e.1 += 1;
            if t == p {
                correct += 1;
                e.0 += 1;
            }
        }
        let ratio = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        Ok(Self {
            mode,
            accuracy: ratio(correct, d.len()),
            per_snr: by_snr
                .into_iter()
                .map(|(k, (c, n))| SnrAccuracy { snr_db: k as f64 / 10.0, correct: c, total: n, accuracy: ratio(c, n) })
                .collect(),
            confusion,
            samples: d.len(),
        })
    }

    pub fn trace(&self) -> usize {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }

    pub fn confusion_csv(&self) -> String {
        let names: Vec<String> = (0..self.confusion.len()).map(class_name).collect();
        let mut s = format!("true\\pred,{}\n", names.join(","));
        for (name, row) in names.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{name},{}", cells.join(","));
        }
        s
    }
}

fn class_name(i: usize) -> String {
    u8::try_from(i)
        .ok()
        .and_then(ModulationType::from_label)
        .map_or_else(|| format!("class{i}"), |m| m.name().to_string())
}

pub fn evaluate(mode: FusionMode, clf: &dyn Classifier, test: &Dataset) -> Result<EvalReport> {
    let predictions = predict(mode, clf, test)?;
    EvalReport::from_predictions(mode, test, &predictions, clf.classes())
}

pub fn accuracy_by_snr_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("snr_db,mode,accuracy\n");
    for r in reports {
        for p in &r.per_snr {
            let _ = writeln!(s, "{},{},{:.6}", p.snr_db, r.mode, p.accuracy);
        }
    }
    s
}

/// Writes `accuracy_by_snr.csv` and one `confusion_<mode>.csv` per report.
pub fn write_reports(dir: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("accuracy_by_snr.csv"), accuracy_by_snr_csv(reports))?;
    for r in reports {
        std::fs::write(dir.join(format!("confusion_{}.csv", r.mode)), r.confusion_csv())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Resnet56,
    CnnSmall,
}

impl Arch {
    pub fn build(self, antennas: usize, length: usize, classes: usize) -> Result<NetworkSpec> {
        match self {
            Arch::Resnet56 => nn::build_resnet56(antennas, length, classes),
            Arch::CnnSmall => nn::build_cnn_small(antennas, length, classes),
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "resnet56" => Ok(Arch::Resnet56),
            "cnn-small" => Ok(Arch::CnnSmall),
            _ => Err(Error::config(format!("unknown architecture {s:?} (resnet56|cnn-small)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub arch: Arch,
    pub modes: Vec<FusionMode>,
    pub train: TrainConfig,
    /// Weight-initialisation seed shared by all models.
    pub model_seed: u64,
    pub classes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Resnet56,
            modes: FusionMode::ALL.to_vec(),
            train: TrainConfig::default(),
            model_seed: 0,
            classes: ModulationType::COUNT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<EvalReport>,
    pub single_history: Option<History>,
    pub iq_history: Option<History>,
    pub single_net: Option<Network<f32>>,
    pub iq_net: Option<Network<f32>>,
}

impl ExperimentOutcome {
    pub fn accuracy(&self, mode: FusionMode) -> Option<f64> {
        self.reports.iter().find(|r| r.mode == mode).map(|r| r.accuracy)
    }
}

/// Trains the models the requested modes need and evaluates each mode.
///
/// single/dv/wa share one 2-row model trained on every antenna's rails;
/// iq gets one `2C`-row model. Both use the same schedule.
pub fn run_experiment(cfg: &ExperimentConfig, train_set: &Dataset, test: &Dataset) -> Result<ExperimentOutcome> {
    if cfg.modes.is_empty() {
        return Err(Error::config("no modes requested"));
    }
    if train_set.antennas != test.antennas || train_set.length != test.length {
        return Err(Error::Shape(format!(
            "train is {}x{}, test is {}x{}",
            train_set.antennas, train_set.length, test.antennas, test.length
        )));
    }
    let mut out = ExperimentOutcome { reports: Vec::new(), single_history: None, iq_history: None, single_net: None, iq_net: None };
    if cfg.modes.iter().any(|m| m.per_antenna()) {
        let spec = cfg.arch.build(1, train_set.length, cfg.classes)?;
        let mut net = Network::<f32>::new(&spec, cfg.model_seed)?;
        // Every antenna becomes its own sample; scaling the batch keeps the step
        // count equal to the iq model's.
        let per_antenna = TrainConfig { batch_size: cfg.train.batch_size * train_set.antennas.max(1), ..cfg.train.clone() };
        out.single_history = Some(nn::train(&mut net, &split_antennas(train_set), None, &per_antenna)?);
        out.single_net = Some(net);
    }
    if cfg.modes.contains(&FusionMode::Iq) {
        let spec = cfg.arch.build(train_set.antennas, train_set.length, cfg.classes)?;
        let mut net = Network::<f32>::new(&spec, cfg.model_seed)?;
        out.iq_history = Some(nn::train(&mut net, train_set, None, &cfg.train)?);
        out.iq_net = Some(net);
    }
    for &mode in &cfg.modes {
        let net = if mode.per_antenna() { out.single_net.as_ref() } else { out.iq_net.as_ref() };
        let net = net.expect("model trained above");
        out.reports.push(evaluate(mode, net, test)?);
    }
    Ok(out)
}
