use mamr::augment::{compose, exchange, flip, max_exchanges, ExchangePlan, FlipMode};
use mamr::datagen::{Dataset, Flip, IqMatrix, LabeledSample};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix() -> impl Strategy<Value = IqMatrix> {
    (1usize..7, 1usize..10).prop_flat_map(|(c, n)| {
        prop::collection::vec(-10.0f32..10.0, 2 * c * n).prop_map(move |d| IqMatrix::new(2 * c, n, d).unwrap())
    })
}

fn flip_mode() -> impl Strategy<Value = Flip> {
    prop_oneof![Just(Flip::I), Just(Flip::Q), Just(Flip::IQ)]
}

fn dataset(antennas: usize, n: usize) -> Dataset {
    let mut d = Dataset::empty(antennas, 4);
    for k in 0..n {
        let data = (0..8 * antennas).map(|v| (v + 100 * k) as f32).collect();
        d.samples.push(LabeledSample::new(IqMatrix::new(2 * antennas, 4, data).unwrap(), (k % 12) as u8, 5.0));
    }
    d
}

proptest! {
    #[test]
    fn exchange_is_an_involution(m in matrix(), a in 0usize..6, b in 0usize..6) {
        let c = m.antennas();
        let (i, j) = (a % c, b % c);
        prop_assume!(i != j);
        let once = exchange(&m, i, j).unwrap();
        prop_assert_eq!(exchange(&once, i, j).unwrap(), m.clone());
        prop_assert_eq!(exchange(&m, j, i).unwrap(), once);
    }

    #[test]
    fn flip_is_an_involution(m in matrix(), f in flip_mode()) {
        prop_assert_eq!(flip(&flip(&m, f), f), m);
    }

    #[test]
    fn flip_commutes_with_exchange(m in matrix(), f in flip_mode(), a in 0usize..6, b in 0usize..6) {
        let c = m.antennas();
        let (i, j) = (a % c, b % c);
        prop_assume!(i != j);
        prop_assert_eq!(flip(&exchange(&m, i, j).unwrap(), f), exchange(&flip(&m, f), i, j).unwrap());
    }

    #[test]
    fn flips_compose(m in matrix()) {
        prop_assert_eq!(flip(&flip(&m, Flip::I), Flip::Q), flip(&m, Flip::IQ));
    }

    #[test]
    fn exchange_preserves_antenna_contents(m in matrix(), a in 0usize..6, b in 0usize..6) {
        let c = m.antennas();
        let (i, j) = (a % c, b % c);
        prop_assume!(i != j);
        let e = exchange(&m, i, j).unwrap();
        prop_assert_eq!(e.antenna_block(i), m.antenna_block(j));
        prop_assert_eq!(e.antenna_block(j), m.antenna_block(i));
    }

    #[test]
    fn plans_draw_distinct_pairs(c in 2usize..9, seed in any::<u64>()) {
        let max = max_exchanges(c);
        let d = (seed as usize) % (max + 1);
        let plan = ExchangePlan::draw(c, d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(plan.len(), d);
        let mut pairs = plan.pairs.clone();
        pairs.dedup();
        prop_assert_eq!(pairs.len(), d);
        prop_assert!(plan.pairs.iter().all(|&(i, j)| i < j && j < c));
    }
}

#[test]
fn exchange_rejects_bad_pairs() {
    let m = IqMatrix::zeros(3, 4);
    assert!(exchange(&m, 0, 0).is_err());
    assert!(exchange(&m, 0, 3).is_err());
}

#[test]
fn compose_keeps_labels_and_tags_provenance() {
    let d = dataset(4, 3);
    let out = compose(&d, 6, FlipMode::All, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(out.len(), 3 * 7 * 4);
    for (k, group) in out.samples.chunks(28).enumerate() {
        assert!(group.iter().all(|s| s.label == d.samples[k].label && s.snr_decidb == d.samples[k].snr_decidb));
        assert!(group[0].provenance.is_raw());
        assert_eq!(group[0].matrix, d.samples[k].matrix);
        let tags: std::collections::BTreeSet<String> = group.iter().map(|s| s.provenance.to_string()).collect();
        assert_eq!(tags.len(), 28);
    }
}

#[test]
fn compose_is_reproducible_and_thread_independent() {
    let d = dataset(3, 20);
    let run = |threads| {
        mamr::with_threads(threads, || compose(&d, 2, FlipMode::Q, &mut ChaCha8Rng::seed_from_u64(9)).unwrap())
    };
    assert_eq!(run(1).samples, run(4).samples);
}

#[test]
fn compose_rejects_too_many_exchanges() {
    let d = dataset(2, 1);
    let err = compose(&d, 2, FlipMode::None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(err.to_string().contains("max 1"), "{err}");
    assert_eq!(compose(&dataset(1, 2), 0, FlipMode::IQ, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().len(), 4);
}
