//! Minibatch SGD training of a single model.

use std::borrow::Cow;

use rayon::prelude::*;

use crate::data::{augment, resize_for_train, Dataset, Sample};
use crate::error::{Error, Result};
use crate::loss::{dice_loss, weighted_ce, LossKind};
use crate::model::Model;
use crate::optim::Sgd;
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::GradMap;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    /// Background and foreground weights for `weighted_ce`.
    pub class_weights: [f64; 2],
    pub augment: bool,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-2,
            momentum: 0.9,
            batch_size: 8,
            loss: LossKind::Dice,
            class_weights: [1.0, 1.0],
            augment: true,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Add `src` into `dst` key by key.
fn accumulate(dst: &mut GradMap<f32>, src: GradMap<f32>) -> Result<()> {
    for (k, g) in src {
        match dst.get_mut(&k) {
            Some(d) => d.add_assign(&g)?,
            None => {
                dst.insert(k, g);
            }
        }
    }
    Ok(())
}

/// Train `model` in place and return the mean loss of every epoch. Samples
/// are resized to the model input size first when needed.
///
/// Epoch `e` shuffles with `SplitMix64::new(derive_seed(shuffle_seed, e))`
/// and, when enabled, augments dataset sample `i` with seed
/// `derive_seed(epoch_seed, i + 1)`. Per-sample gradients within a minibatch
/// may be computed concurrently; they are summed in minibatch order, so the
/// result does not depend on the thread count.
pub fn train_model(model: &mut Model<f32>, train: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let size = model.config().input_size;
    // Samples not already at the input size are resized once, up front.
    let samples: Vec<Cow<'_, Sample>> = train
        .iter()
        .map(|s| {
            if s.height() == size && s.width() == size {
                Cow::Borrowed(s)
            } else {
                Cow::Owned(resize_for_train(s, size))
            }
        })
        .collect();

    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(cfg.shuffle_seed, epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        SplitMix64::new(epoch_seed).shuffle(&mut order);

        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let model_ref = &*model;
            let results = idx
                .par_iter()
                .map(|&i| {
                    let sample = &*samples[i];
                    let sample = if cfg.augment {
                        augment(sample, derive_seed(epoch_seed, i as u64 + 1))
                    } else {
                        sample.clone()
                    };
                    let cache = model_ref.forward(&sample.image)?;
                    let target = sample.mask.one_hot::<f32>();
                    let lv = match cfg.loss {
                        LossKind::Dice => dice_loss(&cache.probs, &target)?,
                        LossKind::WeightedCe => weighted_ce(&cache.probs, &target, cfg.class_weights)?,
                    };
                    let grads = model_ref.backward(&cache, &lv.grad)?;
                    Ok((lv.loss, grads))
                })
                .collect::<Result<Vec<_>>>()?;

            let mut total = GradMap::new();
            let mut batch_loss = 0.0;
            for (loss, grads) in results {
                batch_loss += loss;
                accumulate(&mut total, grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            let scale = 1.0 / idx.len() as f32;
            for g in total.values_mut() {
                g.scale(scale);
            }
            opt.step(model.params_mut(), &total)?;
            epoch_loss += batch_loss;
        }
        history.push(epoch_loss / train.len() as f64);
    }
    Ok(history)
}
