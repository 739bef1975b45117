//! Label-preserving augmentation for multi-antenna IQ matrices.
//!
//! Exchange swaps the `(I, Q)` row blocks of two antennas, which is the same
//! sample seen through a relabelled array. Flip negates the I rails, the Q
//! rails, or both. Antenna indices in this module are zero-based; provenance
//! tags record them one-based.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Flip, IqMatrix, LabeledSample, Provenance};
use crate::error::{Error, Result};

/// `C (C - 1) / 2`.
pub fn max_exchanges(antennas: usize) -> usize {
    antennas * antennas.saturating_sub(1) / 2
}

/// All antenna pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn all_pairs(antennas: usize) -> Vec<(usize, usize)> {
    (0..antennas)
        .flat_map(|i| (i + 1..antennas).map(move |j| (i, j)))
        .collect()
}

/// Swaps the row blocks of antennas `i` and `j`.
pub fn exchange(m: &IqMatrix, i: usize, j: usize) -> Result<IqMatrix> {
    let c = m.antennas();
    if i == j || i >= c || j >= c {
        return Err(Error::Index(format!(
            "cannot exchange antennas {i} and {j} of {c}"
        )));
    }
    let (lo, hi) = (i.min(j), i.max(j));
    let block = 2 * m.cols();
    let mut out = m.clone();
    let data = out.data_mut();
    let (head, tail) = data.split_at_mut(hi * block);
    head[lo * block..(lo + 1) * block].swap_with_slice(&mut tail[..block]);
    Ok(out)
}

/// Negates the selected rails of every antenna.
pub fn flip(m: &IqMatrix, mode: Flip) -> IqMatrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let negate = match mode {
            Flip::I => r % 2 == 0,
            Flip::Q => r % 2 == 1,
            Flip::IQ => true,
        };
        if negate {
            out.row_mut(r).iter_mut().for_each(|v| *v = -*v);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangePlan {
    pub pairs: Vec<(usize, usize)>,
}

impl ExchangePlan {
    /// `d` distinct pairs, uniformly without replacement; every pair when `d` is the maximum.
    pub fn draw<R: Rng + ?Sized>(antennas: usize, d: usize, rng: &mut R) -> Result<Self> {
        let max = max_exchanges(antennas);
        if d > max {
            return Err(Error::domain(format!(
                "{d} exchanges requested, max {max} for {antennas} antennas"
            )));
        }
        let all = all_pairs(antennas);
        if d == max {
            return Ok(Self { pairs: all });
        }
        let mut picked: Vec<usize> = index::sample(rng, all.len(), d).into_vec();
        picked.sort_unstable();
        Ok(Self { pairs: picked.into_iter().map(|k| all[k]).collect() })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// A source sample and the samples derived from it, raw first.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSet {
    pub samples: Vec<LabeledSample>,
}

impl AugmentedSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn derived(s: &LabeledSample, matrix: IqMatrix, provenance: Provenance) -> LabeledSample {
    LabeledSample { matrix, provenance, ..s.clone() }
}

fn one_based(pair: (usize, usize)) -> (u16, u16) {
    (pair.0 as u16 + 1, pair.1 as u16 + 1)
}

/// Raw sample followed by `d` exchanged copies.
pub fn build_exchange_set<R: Rng + ?Sized>(s: &LabeledSample, d: usize, rng: &mut R) -> Result<AugmentedSet> {
    let plan = ExchangePlan::draw(s.matrix.antennas(), d, rng)?;
    let mut samples = Vec::with_capacity(1 + plan.len());
    samples.push(s.clone());
    for &(i, j) in &plan.pairs {
        let m = exchange(&s.matrix, i, j)?;
        let prov = Provenance { exchange: Some(one_based((i, j))), ..s.provenance };
        samples.push(derived(s, m, prov));
    }
    Ok(AugmentedSet { samples })
}

/// `{raw, flipI, flipQ, flipIQ}`.
pub fn flip_all(s: &LabeledSample) -> AugmentedSet {
    let mut samples = vec![s.clone()];
    for mode in [Flip::I, Flip::Q, Flip::IQ] {
        samples.push(derived(s, flip(&s.matrix, mode), with_flip(s.provenance, mode)));
    }
    AugmentedSet { samples }
}

/// Composes a flip with whatever flip the provenance already carries.
fn with_flip(p: Provenance, mode: Flip) -> Provenance {
    let bits = |f: Option<Flip>| match f {
        None => 0u8,
        Some(Flip::I) => 1,
        Some(Flip::Q) => 2,
        Some(Flip::IQ) => 3,
    };
    let flip = match bits(p.flip) ^ bits(Some(mode)) {
        0 => None,
        1 => Some(Flip::I),
        2 => Some(Flip::Q),
        _ => Some(Flip::IQ),
    };
    Provenance { flip, ..p }
}

/// Flip expansion applied after exchange in [`compose`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipMode {
    #[default]
    None,
    I,
    Q,
    IQ,
    All,
}

impl FlipMode {
    /// Samples produced per input sample.
    pub fn factor(self) -> usize {
        match self {
            FlipMode::None => 1,
            FlipMode::I | FlipMode::Q | FlipMode::IQ => 2,
            FlipMode::All => 4,
        }
    }

    fn expand(self, s: LabeledSample, out: &mut Vec<LabeledSample>) {
        let single = |mode: Flip| derived(&s, flip(&s.matrix, mode), with_flip(s.provenance, mode));
        match self {
            FlipMode::None => out.push(s),
            FlipMode::I | FlipMode::Q | FlipMode::IQ => {
                let mode = match self {
                    FlipMode::I => Flip::I,
                    FlipMode::Q => Flip::Q,
                    _ => Flip::IQ,
                };
                let extra = single(mode);
                out.push(s);
                out.push(extra);
            }
            FlipMode::All => out.extend(flip_all(&s).samples),
        }
    }
}

impl std::str::FromStr for FlipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(FlipMode::None),
            "i" => Ok(FlipMode::I),
            "q" => Ok(FlipMode::Q),
            "iq" => Ok(FlipMode::IQ),
            "all" => Ok(FlipMode::All),
            _ => Err(Error::config(format!("unknown flip mode {s:?}"))),
        }
    }
}

/// Exchange expansion of every sample, then flip expansion of every result.
///
/// Pairs are redrawn per sample from a stream keyed by the sample's index, so
/// the output does not depend on thread scheduling.
pub fn compose<R: Rng + ?Sized>(d: &Dataset, exchanges: usize, mode: FlipMode, rng: &mut R) -> Result<Dataset> {
    let max = max_exchanges(d.antennas);
    if exchanges > max {
        return Err(Error::domain(format!(
            "{exchanges} exchanges requested, max {max} for {} antennas",
            d.antennas
        )));
    }
    let base_seed = rng.next_u64();
    let groups = crate::par::map_indices(d.len(), |k| -> Result<Vec<LabeledSample>> {
        let mut local = ChaCha8Rng::seed_from_u64(base_seed);
        local.set_stream(k as u64);
        let set = build_exchange_set(&d.samples[k], exchanges, &mut local)?;
        let mut out = Vec::with_capacity(set.len() * mode.factor());
        for s in set.samples {
            mode.expand(s, &mut out);
        }
        Ok(out)
    });
    let mut samples = Vec::with_capacity(d.len() * (1 + exchanges) * mode.factor());
    for g in groups {
        samples.extend(g?);
    }
    Ok(Dataset { antennas: d.antennas, length: d.length, samples, spec: d.spec.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(antennas: usize, cols: usize) -> IqMatrix {
        let data = (0..2 * antennas * cols).map(|v| v as f32 + 1.0).collect();
        IqMatrix::new(2 * antennas, cols, data).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn exchange_two_antennas() {
        let m = matrix(2, 3);
        let x = exchange(&m, 0, 1).unwrap();
        assert_eq!(x.row(0), m.row(2));
        assert_eq!(x.row(1), m.row(3));
        assert_eq!(x.row(2), m.row(0));
        assert_eq!(x.row(3), m.row(1));
        assert_eq!(exchange(&x, 1, 0).unwrap(), m);
    }

    #[test]
    fn exchange_is_local() {
        let m = matrix(4, 5);
        let x = exchange(&m, 1, 2).unwrap();
        for r in [0, 1, 6, 7] {
            assert_eq!(x.row(r), m.row(r));
        }
    }

    #[test]
    fn exchange_index_errors() {
        let m = matrix(2, 2);
        assert!(matches!(exchange(&m, 1, 1), Err(Error::Index(_))));
        assert!(matches!(exchange(&m, 0, 2), Err(Error::Index(_))));
    }

    #[test]
    fn max_exchange_counts() {
        assert_eq!(max_exchanges(1), 0);
        assert_eq!(max_exchanges(4), 6);
        assert_eq!(max_exchanges(16), 120);
        assert_eq!(all_pairs(4), vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn exchange_sets() {
        let s = LabeledSample::new(matrix(4, 2), 3, 6.0);
        assert_eq!(build_exchange_set(&s, 0, &mut rng()).unwrap().len(), 1);
        let full = build_exchange_set(&s, 6, &mut rng()).unwrap();
        assert_eq!(full.len(), 7);
        let tags: Vec<_> = full.samples[1..].iter().map(|x| x.provenance.exchange.unwrap()).collect();
        assert_eq!(tags, vec![(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]);
        let two = build_exchange_set(&s, 2, &mut rng()).unwrap();
        assert_eq!(two.len(), 3);
        assert_ne!(two.samples[1].provenance, two.samples[2].provenance);
        assert!(two.samples.iter().all(|x| x.label == 3 && x.snr_decidb == 60));
        assert!(build_exchange_set(&s, 7, &mut rng()).is_err());
    }

    #[test]
    fn flips() {
        let m = matrix(2, 3);
        assert_eq!(flip(&flip(&m, Flip::I), Flip::I), m);
        assert_eq!(flip(&m, Flip::IQ), flip(&flip(&m, Flip::I), Flip::Q));
        let mut zq = m.clone();
        for r in [1, 3] {
            zq.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
        }
        let f = flip(&zq, Flip::I);
        for r in [0, 2] {
            assert!(f.row(r).iter().zip(zq.row(r)).all(|(a, b)| *a == -*b));
        }
        for r in [1, 3] {
            assert!(f.row(r).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn flip_all_orbit() {
        let s = LabeledSample::new(matrix(2, 2), 1, 0.0);
        let a = flip_all(&s);
        assert_eq!(a.len(), 4);
        let b = flip_all(&a.samples[1]);
        let mut ma: Vec<Vec<f32>> = a.samples.iter().map(|x| x.matrix.data().to_vec()).collect();
        let mut mb: Vec<Vec<f32>> = b.samples.iter().map(|x| x.matrix.data().to_vec()).collect();
        ma.sort_by(|x, y| x.partial_cmp(y).unwrap());
        mb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(ma, mb);
        // flipping a flipI sample by I restores the raw tag
        assert!(b.samples[1].provenance.is_raw());
        let z = LabeledSample::new(IqMatrix::zeros(2, 4), 0, 0.0);
        assert!(flip_all(&z).samples.iter().all(|x| x.matrix.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn compose_sizes() {
        let mut d = Dataset::empty(4, 2);
        for k in 0..10 {
            d.samples.push(LabeledSample::new(matrix(4, 2), k % 3, 2.0));
        }
        assert_eq!(compose(&d, 6, FlipMode::All, &mut rng()).unwrap().len(), 280);
        assert_eq!(compose(&d, 2, FlipMode::I, &mut rng()).unwrap().len(), 60);
        assert_eq!(compose(&d, 0, FlipMode::None, &mut rng()).unwrap(), d);
        assert!(compose(&d, 7, FlipMode::None, &mut rng()).is_err());
        let c = compose(&d, 3, FlipMode::IQ, &mut rng()).unwrap();
        assert_eq!(c, compose(&d, 3, FlipMode::IQ, &mut rng()).unwrap());
    }
}
