//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use microseg::data::Mask;
use microseg::rng::SplitMix64;

/// Brute-force scores of `pred` against `gt`, computed straight from pixel
/// sets: `(iou, dice, f2, precision, recall, accuracy)`.
pub fn oracle_scores(pred: &Mask, gt: &Mask) -> [f64; 6] {
    let (mut tp, mut fp, mut fn_, mut tn) = (0.0f64, 0.0, 0.0, 0.0);
    for y in 0..gt.h {
        for x in 0..gt.w {
            match (pred.get(y, x) == 1, gt.get(y, x) == 1) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                (false, false) => tn += 1.0,
            }
        }
    }
    let acc = (tp + tn) / (tp + tn + fp + fn_);
    if tp + fp + fn_ == 0.0 {
        return [1.0, 1.0, 1.0, 1.0, 1.0, acc];
    }
    let frac = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let p = frac(tp, tp + fp);
    let r = frac(tp, tp + fn_);
    let f2 = frac(5.0 * p * r, 4.0 * p + r);
    [frac(tp, tp + fp + fn_), frac(2.0 * tp, 2.0 * tp + fp + fn_), f2, p, r, acc]
}

pub fn random_mask(rng: &mut SplitMix64, h: usize, w: usize, density: f64) -> Mask {
    let data = (0..h * w).map(|_| u8::from(rng.next_f64() < density)).collect();
    Mask::new(h, w, data).unwrap()
}
