//! Ensembles of independently trained networks fused by the sum rule.

use std::path::Path;

use rayon::prelude::*;

use crate::activation::{default_pool, ActivationKind};
use crate::checkpoint;
use crate::data::{resize_for_train, resize_pred_back, Dataset, Sample};
use crate::error::{Error, Result};
use crate::metrics::{mask_metrics, mean_report, MetricReport};
use crate::model::{assign_activations, Model, NetworkConfig, SelectionMode};
use crate::rng::SplitMix64;
use crate::tensor::{Shape, Tensor};
use crate::train::{train_model, TrainConfig};

pub const DEFAULT_SIZE: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub mode: SelectionMode,
    pub size: usize,
    pub master_seed: u64,
    pub pool: Vec<ActivationKind>,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl EnsembleSpec {
    pub fn new(mode: SelectionMode, size: usize, master_seed: u64) -> Self {
        Self {
            mode,
            size,
            master_seed,
            pool: default_pool(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidArgument("ensemble size must be >= 1".into()));
        }
        if self.pool.is_empty() {
            return Err(Error::InvalidArgument("activation pool is empty".into()));
        }
        if self.mode == SelectionMode::Act && self.size > self.pool.len() {
            return Err(Error::InvalidArgument(format!(
                "act mode needs size <= pool length ({} > {})",
                self.size,
                self.pool.len()
            )));
        }
        self.network.validate()?;
        self.train.validate()
    }

    /// Member seeds: the first `size` outputs of `SplitMix64::new(master_seed)`.
    pub fn member_seeds(&self) -> Vec<u64> {
        let mut rng = SplitMix64::new(self.master_seed);
        (0..self.size).map(|_| rng.next_u64()).collect()
    }

    /// Untrained member `index`.
    pub fn build_member(&self, index: usize, seed: u64) -> Result<Model<f32>> {
        let asg = assign_activations(self.mode, &self.pool, self.network.site_count(), index, seed)?;
        Model::build(&self.network, &asg, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub spec: EnsembleSpec,
    pub members: Vec<Model<f32>>,
    pub seeds: Vec<u64>,
    /// Per-member epoch loss history.
    pub histories: Vec<Vec<f64>>,
}

/// Build and train every member on the same data. Members are trained
/// concurrently on the current rayon pool; the result is identical to
/// sequential training.
pub fn train_ensemble(spec: &EnsembleSpec, train: &Dataset) -> Result<Ensemble> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let seeds = spec.member_seeds();
    let trained = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let wrap = |e: Error| Error::Member {
                member: i,
                err: Box::new(e),
            };
            let mut model = spec.build_member(i, seed).map_err(wrap)?;
            let history = train_model(&mut model, train, &spec.train).map_err(wrap)?;
            Ok((model, history))
        })
        .collect::<Result<Vec<_>>>()?;
    let (members, histories) = trained.into_iter().unzip();
    Ok(Ensemble {
        spec: spec.clone(),
        members,
        seeds,
        histories,
    })
}

/// Sum rule: per-pixel, per-channel arithmetic mean of the member maps.
///
/// Each element is accumulated in `f64` over the member values sorted in
/// ascending order, which makes the result independent of member order and
/// exact for repeated copies of one map.
pub fn fuse_probs(maps: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot fuse zero maps".into()))?;
    for m in maps {
        m.expect_shape(first.shape(), "fuse_probs")?;
    }
    let n = maps.len() as f64;
    let mut buf = vec![0f32; maps.len()];
    Ok(Tensor::from_fn(first.shape(), |i| {
        for (b, m) in buf.iter_mut().zip(maps) {
            *b = m.data()[i];
        }
        buf.sort_unstable_by(f32::total_cmp);
        (buf.iter().map(|&v| v as f64).sum::<f64>() / n) as f32
    }))
}

fn fg_plane(probs: &Tensor<f32>) -> Tensor<f32> {
    let s = probs.shape();
    Tensor::from_vec(Shape::new(1, 1, s.h, s.w), probs.plane(0, 1).to_vec()).expect("plane size")
}

fn check_original(sample: &Sample) -> Result<()> {
    if (sample.mask.h, sample.mask.w) != (sample.orig_h, sample.orig_w) {
        return Err(Error::Shape(format!(
            "test sample {} is not at its original resolution",
            sample.id
        )));
    }
    Ok(())
}

/// Fused report of `models` on `test`: each image is resized to the input
/// size, predicted by every model, fused, resized back to its original
/// resolution, thresholded and scored; scores are averaged over images.
pub fn evaluate_models(models: &[Model<f32>], test: &Dataset) -> Result<MetricReport> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("no models to evaluate".into()))?;
    if test.is_empty() {
        return Err(Error::InvalidArgument("test set is empty".into()));
    }
    let size = first.config().input_size;
    let reports = test
        .samples
        .par_iter()
        .map(|sample| {
            check_original(sample)?;
            let input = resize_for_train(sample, size);
            let maps = models
                .iter()
                .map(|m| m.predict(&input.image))
                .collect::<Result<Vec<_>>>()?;
            let fused = fuse_probs(&maps)?;
            let pred = resize_pred_back(&fg_plane(&fused), sample.orig_h, sample.orig_w);
            mask_metrics(&pred, &sample.mask)
        })
        .collect::<Result<Vec<_>>>()?;
    mean_report(&reports)
}

pub fn ensemble_evaluate(ens: &Ensemble, test: &Dataset) -> Result<MetricReport> {
    evaluate_models(&ens.members, test)
}

/// Individual report of every member, in member order.
pub fn member_reports(ens: &Ensemble, test: &Dataset) -> Result<Vec<MetricReport>> {
    ens.members
        .iter()
        .map(|m| evaluate_models(std::slice::from_ref(m), test))
        .collect()
}

fn member_file(i: usize) -> String {
    format!("member_{i:02}.ckpt")
}

/// Write member checkpoints and `manifest.txt` into `dir`.
pub fn save_ensemble(ens: &Ensemble, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!(
        "mode {}\nsize {}\nmaster_seed {}\npool {}\n",
        ens.spec.mode,
        ens.spec.size,
        ens.spec.master_seed,
        ens.spec.pool.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")
    );
    for (i, (m, seed)) in ens.members.iter().zip(&ens.seeds).enumerate() {
        manifest.push_str(&format!("member {i} {seed} {} {}\n", member_file(i), m.assignment()));
        checkpoint::save(m, &dir.join(member_file(i)))?;
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Load the member models listed in `dir/manifest.txt`, in member order.
pub fn load_members(dir: &Path) -> Result<Vec<Model<f32>>> {
    let path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter_map(|l| l.strip_prefix("member "))
        .map(|rest| {
            let file = rest
                .split_whitespace()
                .nth(2)
                .ok_or_else(|| Error::Checkpoint(format!("bad manifest line {rest:?}")))?;
            checkpoint::load(&dir.join(file))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(fg: &[f32]) -> Tensor<f32> {
        let mut t = Tensor::zeros(Shape::new(1, 2, 1, fg.len()));
        for (i, &p) in fg.iter().enumerate() {
            t.set(0, 1, 0, i, p);
            t.set(0, 0, 0, i, 1.0 - p);
        }
        t
    }

    #[test]
    fn fuse_is_the_mean() {
        let f = fuse_probs(&[map(&[0.6]), map(&[0.2])]).unwrap();
        assert!((f.at(0, 1, 0, 0) - 0.4).abs() < 1e-7);
        assert!((f.at(0, 0, 0, 0) - 0.6).abs() < 1e-7);
    }

    #[test]
    fn fuse_idempotent_and_order_free() {
        let a = map(&[0.1, 0.33, 0.97]);
        let b = map(&[0.7, 0.01, 0.5]);
        let c = map(&[0.2, 0.9, 0.123]);
        assert_eq!(fuse_probs(&vec![a.clone(); 5]).unwrap(), a);
        let abc = fuse_probs(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let cab = fuse_probs(&[c, a, b]).unwrap();
        assert_eq!(abc, cab);
    }

    #[test]
    fn fuse_rejects_bad_input() {
        assert!(fuse_probs(&[]).is_err());
        assert!(fuse_probs(&[map(&[0.1]), map(&[0.1, 0.2])]).is_err());
    }

    #[test]
    fn spec_validation_and_seeds() {
        let mut spec = EnsembleSpec::new(SelectionMode::Act, 18, 3);
        assert!(spec.validate().is_err());
        spec.size = 17;
        assert!(spec.validate().is_ok());
        spec.size = 0;
        assert!(spec.validate().is_err());
        let spec = EnsembleSpec::new(SelectionMode::Sto, 14, 3);
        let seeds = spec.member_seeds();
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 14);
        let mut r = SplitMix64::new(3);
        assert_eq!(seeds[0], r.next_u64());
        assert_eq!(seeds[1], r.next_u64());
    }

    #[test]
    fn act_members_use_pool_entry() {
        let spec = EnsembleSpec::new(SelectionMode::Act, 14, 9);
        for (i, seed) in spec.member_seeds().into_iter().enumerate() {
            let m = spec.build_member(i, seed).unwrap();
            assert!(m.assignment().kinds().iter().all(|&k| k == spec.pool[i]));
        }
    }
}
