//! Segmentation losses on softmax outputs.
//!
//! Both losses take `(N, 2, H, W)` probabilities and one-hot targets and
//! return the mean per-sample loss together with its gradient with respect to
//! the probabilities (post-softmax).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub const DICE_SMOOTH: f64 = 1e-5;
pub const CE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LossValue<F> {
    pub loss: f64,
    /// d loss / d probs
    pub grad: Tensor<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Dice,
    WeightedCe,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dice" => Ok(LossKind::Dice),
            "weighted_ce" => Ok(LossKind::WeightedCe),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss {other:?} (expected dice or weighted_ce)"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Dice => "dice",
            LossKind::WeightedCe => "weighted_ce",
        })
    }
}

fn check_pair<F: Scalar>(probs: &Tensor<F>, target: &Tensor<F>) -> Result<Shape> {
    let s = probs.shape();
    if s.c != 2 {
        return Err(Error::Shape(format!("loss expects 2 class channels, got {s}")));
    }
    target.expect_shape(s, "loss target")?;
    Ok(s)
}

/// `L = 1 - 1/2 * sum_c (2 sum_i p_ci g_ci + eps) / (sum_i p_ci + sum_i g_ci + eps)`
/// per sample, averaged over the batch.
pub fn dice_loss<F: Scalar>(probs: &Tensor<F>, target: &Tensor<F>) -> Result<LossValue<F>> {
    let s = check_pair(probs, target)?;
    let plane = s.plane();
    let batch = s.n as f64;
    let mut grad = Tensor::zeros(s);
    let mut total = 0.0;
    for n in 0..s.n {
        let mut sample = 1.0;
        for c in 0..2 {
            let p = probs.plane(n, c);
            let g = target.plane(n, c);
            let (mut inter, mut sp, mut sg) = (0.0f64, 0.0f64, 0.0f64);
            for i in 0..plane {
                let (pi, gi) = (p[i].to_f64_lossy(), g[i].to_f64_lossy());
                inter += pi * gi;
                sp += pi;
                sg += gi;
            }
            let num = 2.0 * inter + DICE_SMOOTH;
            let den = sp + sg + DICE_SMOOTH;
            sample -= 0.5 * num / den;
            // d/dp_i of -(1/2) num/den = -(1/2) (2 g_i den - num) / den^2
            let scale = -0.5 / (den * den * batch);
            let dst = grad.plane_mut(n, c);
            for i in 0..plane {
                dst[i] = F::of(scale * (2.0 * g[i].to_f64_lossy() * den - num));
            }
        }
        total += sample;
    }
    Ok(LossValue {
        loss: total / batch,
        grad,
    })
}

/// `L = -(1/HW) sum_i sum_c w_c g_ci ln(p_ci + 1e-12)` per sample, averaged
/// over the batch.
pub fn weighted_ce<F: Scalar>(probs: &Tensor<F>, target: &Tensor<F>, class_weights: [f64; 2]) -> Result<LossValue<F>> {
    let s = check_pair(probs, target)?;
    if class_weights.iter().any(|&w| w <= 0.0 || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "class weights must be positive, got {class_weights:?}"
        )));
    }
    let plane = s.plane();
    let norm = (plane * s.n) as f64;
    let mut grad = Tensor::zeros(s);
    let mut total = 0.0;
    for n in 0..s.n {
        for (c, &w) in class_weights.iter().enumerate() {
            let p = probs.plane(n, c);
            let g = target.plane(n, c);
            let dst = grad.plane_mut(n, c);
            for i in 0..plane {
                let gi = g[i].to_f64_lossy();
                if gi == 0.0 {
                    continue;
                }
                let pi = p[i].to_f64_lossy() + CE_FLOOR;
                total -= w * gi * pi.ln();
                dst[i] = F::of(-w * gi / (pi * norm));
            }
        }
    }
    Ok(LossValue {
        loss: total / norm,
        grad,
    })
}
