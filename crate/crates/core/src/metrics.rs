//! Mask precision/recall and PSNR.

use crate::error::{ensure_same_dims, Error, Result};
use crate::grid::{FenceMask, Frame};

/// Precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    let sum = precision + recall;
    if sum <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / sum
    }
}

/// Scores a predicted fence mask against the ground truth.
///
/// Precision is 1 when nothing is predicted.
pub fn mask_prf(predicted: &FenceMask, ground_truth: &FenceMask) -> Result<Prf> {
    ensure_same_dims(ground_truth.dims(), predicted.dims())?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in predicted.as_slice().iter().zip(ground_truth.as_slice()) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fn_ == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(Prf {
        precision,
        recall,
        f_measure: f_measure(precision, recall),
    })
}

/// `10·log10(1 / MSE)` over all channels of the pixels in `region`, or the
/// whole frame when `region` is `None`. Returns `f64::INFINITY` for MSE 0.
pub fn psnr(result: &Frame, reference: &Frame, region: Option<&FenceMask>) -> Result<f64> {
    ensure_same_dims(reference.dims(), result.dims())?;
    if let Some(r) = region {
        ensure_same_dims(reference.dims(), r.dims())?;
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    let a = result.as_slice().chunks_exact(3);
    let b = reference.as_slice().chunks_exact(3);
    for (i, (pa, pb)) in a.zip(b).enumerate() {
        if region.is_some_and(|r| !r.as_slice()[i]) {
            continue;
        }
        sum += pa
            .iter()
            .zip(pb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
        count += 3;
    }
    if count == 0 {
        return Err(Error::EmptyRegion);
    }
    let mse = sum / count as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// One `name<TAB>value` line; infinite values print as `inf`.
pub fn format_record(name: &str, value: f64) -> String {
    if value.is_infinite() && value > 0.0 {
        format!("{name}\tinf")
    } else {
        format!("{name}\t{value:.6}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grey(v: f64) -> Frame {
        Frame::filled(4, 3, [v; 3]).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let m = FenceMask::from_fn(5, 5, |x, y| x == y);
        let prf = mask_prf(&m, &m).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f_measure), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_prediction_and_truth() {
        let truth = FenceMask::from_fn(4, 4, |x, _| x == 1);
        let prf = mask_prf(&FenceMask::empty(4, 4), &truth).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f_measure), (1.0, 0.0, 0.0));
        assert!(matches!(
            mask_prf(&truth, &FenceMask::empty(4, 4)),
            Err(Error::EmptyGroundTruth)
        ));
        assert!(matches!(
            mask_prf(&FenceMask::empty(3, 4), &truth),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn counts() {
        let truth = FenceMask::from_fn(4, 1, |x, _| x < 2);
        let pred = FenceMask::from_fn(4, 1, |x, _| x >= 1);
        let prf = mask_prf(&pred, &truth).unwrap();
        assert!((prf.precision - 1.0 / 3.0).abs() < 1e-15);
        assert!((prf.recall - 0.5).abs() < 1e-15);
        assert!((prf.f_measure - 0.4).abs() < 1e-15);
    }

    #[test]
    fn psnr_closed_forms() {
        assert_eq!(psnr(&grey(0.3), &grey(0.3), None).unwrap(), f64::INFINITY);
        assert!((psnr(&grey(0.4), &grey(0.3), None).unwrap() - 20.0).abs() < 1e-9);
        let six = 20.0 * 2f64.log10();
        assert!((psnr(&grey(1.0), &grey(0.5), None).unwrap() - six).abs() < 1e-12);
    }

    #[test]
    fn psnr_region() {
        let a = Frame::from_fn(2, 1, |x, _| if x == 0 { [0.5; 3] } else { [0.0; 3] }).unwrap();
        let b = Frame::filled(2, 1, [0.0; 3]).unwrap();
        let only_equal = FenceMask::from_fn(2, 1, |x, _| x == 1);
        assert_eq!(psnr(&a, &b, Some(&only_equal)).unwrap(), f64::INFINITY);
        assert!(matches!(
            psnr(&a, &b, Some(&FenceMask::empty(2, 1))),
            Err(Error::EmptyRegion)
        ));
    }

    #[test]
    fn records() {
        assert_eq!(format_record("psnr", f64::INFINITY), "psnr\tinf");
        assert_eq!(format_record("precision", 1.0), "precision\t1.000000");
    }

    proptest! {
        #[test]
        fn f_measure_is_a_symmetric_mean(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            prop_assert!((f_measure(p, r) - f_measure(r, p)).abs() < 1e-15);
            prop_assert!((f_measure(p, p) - p).abs() < 1e-15);
            prop_assert!(f_measure(p, r) <= p.max(r) + 1e-15);
        }

        #[test]
        fn psnr_decreases_with_error(base in 0.0f64..0.4, e1 in 0.001f64..0.3, gap in 0.001f64..0.29) {
            let e2 = e1 + gap;
            let a = psnr(&grey(base + e1), &grey(base), None).unwrap();
            let b = psnr(&grey(base + e2), &grey(base), None).unwrap();
            prop_assert!(b < a);
        }
    }
}
