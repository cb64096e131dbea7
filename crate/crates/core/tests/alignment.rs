mod common;

use candle_core::{DType, Device, Tensor};
use common::{brute_force_mas, tensor, to_vec};
use parastyle::alignment::{duration_loss, durations_from_alignment, expand_by_duration, mas_align, round_durations};
use parastyle::Error;
use proptest::prelude::*;

#[test]
fn dp_matches_enumeration_on_1000_instances() {
    common::criteria::mas_oracle().unwrap();
}

#[test]
fn two_by_three_tie_places_transition_late() {
    // Both monotonic paths score -1.
    let ll = [0.0, -1.0, -1.0, -1.0, -1.0, 0.0];
    assert_eq!(brute_force_mas(&ll, 2, 3), -1.0);
    let a = mas_align(&ll, 2, 3).unwrap();
    assert_eq!(durations_from_alignment(&a), vec![2, 1]);
    assert_eq!(a.score(&ll), -1.0);
}

#[test]
fn rejects_more_phonemes_than_frames() {
    assert!(matches!(mas_align(&[0.0; 6], 3, 2), Err(Error::Invalid(_))));
    assert!(matches!(mas_align(&[0.0, f64::NAN], 1, 2), Err(Error::NonFinite(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn continuous_scores_match_enumeration(l in 1usize..5, extra in 0usize..4, seed in any::<u64>()) {
        let t = l + extra;
        let mut r = common::rng(seed);
        let ll = common::uniform(&mut r, l * t, -5.0, 0.0);
        let a = mas_align(&ll, l, t).unwrap();
        prop_assert!((a.score(&ll) - brute_force_mas(&ll, l, t)).abs() < 1e-9);
        let d = durations_from_alignment(&a);
        prop_assert_eq!(d.iter().sum::<usize>(), t);
        prop_assert!(d.iter().all(|&x| x >= 1));
        // The dense matrix has exactly one 1 per column.
        let dense = a.dense();
        for j in 0..t {
            prop_assert_eq!((0..l).map(|i| dense[i * t + j]).sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn rounding_is_ceil_with_floor_one(d in proptest::collection::vec(0.01f64..20.0, 1..10), scale in 0.1f64..4.0) {
        let r = round_durations(&d, scale).unwrap();
        for (x, n) in d.iter().zip(&r) {
            prop_assert_eq!(*n, ((x * scale).ceil() as usize).max(1));
        }
    }
}

#[test]
fn expansion_repeats_rows() {
    let x = tensor(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
    let (y, d) = expand_by_duration(&x, &[1.5, 0.4], 1.0).unwrap();
    assert_eq!(d, vec![2, 1]);
    assert_eq!(to_vec(&y), vec![1.0, 2.0, 1.0, 2.0, 3.0, 4.0]);
    assert!(round_durations(&[1.0], 0.0).is_err());
    assert!(round_durations(&[-1.0], 1.0).is_err());
}

#[test]
fn duration_loss_ignores_padding_and_vanishes_on_match() {
    let d = tensor(vec![2.0, 3.0, 1.0, 5.0], &[2, 2]);
    let mask = tensor(vec![1.0, 1.0, 1.0, 0.0], &[2, 2]);
    let zero = duration_loss(&d, &d, &mask, 1e-4).unwrap().to_scalar::<f64>().unwrap();
    assert_eq!(zero, 0.0);
    let d_hat = tensor(vec![2.0, 3.0, 1.0, 500.0], &[2, 2]);
    let still = duration_loss(&d, &d_hat, &mask, 1e-4).unwrap().to_scalar::<f64>().unwrap();
    assert_eq!(still, 0.0);
    // One item, one phoneme off by a factor e: (1/2)·1 averaged over 2 items.
    let d_hat = tensor(vec![2.0 * std::f64::consts::E, 3.0, 1.0, 5.0], &[2, 2]);
    let eps = 0.0;
    let v = duration_loss(&d, &d_hat, &Tensor::ones((2, 2), DType::F64, &Device::Cpu).unwrap(), eps)
        .unwrap()
        .to_scalar::<f64>()
        .unwrap();
    assert!((v - 0.25).abs() < 1e-12);
}
