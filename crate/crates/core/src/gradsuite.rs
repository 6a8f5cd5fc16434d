//! The full gradient-check suite over every differentiable piece, in 64-bit.

use std::fmt;

use crate::activation::{default_pool, ActivationKind, ActivationState};
use crate::data::Mask;
use crate::gradcheck::{gradcheck, GradCheckOptions, GradCheckReport};
use crate::loss::{dice_loss, weighted_ce};
use crate::model::{assign_activations, Model, NetworkConfig, SelectionMode};
use crate::ops::{self, ConvSpec};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{Shape, Tensor};

pub const UNIT_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_SEEDS: u64 = 24;
/// Step for the losses, whose `ln` term curves sharply near small
/// probabilities, and for the full network, where hidden pre-activations can
/// sit within 1e-3 of a kink. Activation checks keep the default step and
/// sample their inputs away from kinks instead.
pub const FINE_STEP: f64 = 1e-5;

pub fn unit_options() -> GradCheckOptions {
    GradCheckOptions::with_tolerance(UNIT_TOLERANCE)
}

pub fn fine_options(tolerance: f64) -> GradCheckOptions {
    GradCheckOptions {
        step: FINE_STEP,
        tolerance,
    }
}

/// Outcome of one named check over several seeds.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub seeds: u64,
    pub worst: GradCheckReport,
    pub worst_seed: u64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.worst.passed()
    }
}

impl fmt::Display for SuiteEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<28} seeds={:<3} worst_seed={:<3} {}", self.name, self.seeds, self.worst_seed, self.worst)
    }
}

fn over_seeds(name: &str, seeds: u64, mut check: impl FnMut(u64) -> GradCheckReport) -> SuiteEntry {
    let mut worst: Option<(GradCheckReport, u64)> = None;
    for s in 0..seeds {
        let r = check(s);
        let replace = match &worst {
            None => true,
            Some((w, _)) => w.passed() && (!r.passed() || r.max_rel_error > w.max_rel_error),
        };
        if replace {
            worst = Some((r, s));
        }
    }
    let (worst, worst_seed) = worst.expect("at least one seed");
    SuiteEntry {
        name: name.to_string(),
        seeds,
        worst,
        worst_seed,
    }
}

fn random_tensor(rng: &mut SplitMix64, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

/// `sum(upstream * op(x))` as an objective of a flat input vector.
fn weighted_sum(upstream: &Tensor<f64>, out: &Tensor<f64>) -> f64 {
    upstream.data().iter().zip(out.data()).map(|(a, b)| a * b).sum()
}

/// Draw an input at least `margin` away from every kink in `kinks`.
fn away_from_kinks(rng: &mut SplitMix64, kinks: &[f64], margin: f64) -> f64 {
    loop {
        let x = rng.uniform(-3.0, 3.0);
        if kinks.iter().all(|k| (x - k).abs() >= margin) {
            return x;
        }
    }
}

/// Gradient check of one activation kind: inputs and (perturbed) parameters.
pub fn check_activation(kind: ActivationKind, seed: u64, opts: GradCheckOptions) -> GradCheckReport {
    let mut rng = SplitMix64::new(derive_seed(seed, kind as u64 + 100));
    let channels = 2;
    let mut state = ActivationState::<f64>::new(kind, channels).expect("valid state");
    for v in state.params_mut().data_mut() {
        *v += rng.uniform(-0.1, 0.1);
    }
    let shape = Shape::new(2, channels, 2, 3);
    let mut x = Tensor::zeros(shape);
    for n in 0..shape.n {
        for c in 0..channels {
            let kinks = state.kinks(c);
            for v in x.plane_mut(n, c) {
                *v = away_from_kinks(&mut rng, &kinks, 10.0 * opts.step);
            }
        }
    }
    let upstream = random_tensor(&mut rng, shape, -1.0, 1.0);
    let (dx, dp) = state.backward(&x, &upstream).expect("shapes agree");

    let wrt_x = gradcheck(
        |v| {
            let t = Tensor::from_vec(shape, v.to_vec()).unwrap();
            weighted_sum(&upstream, &state.forward(&t).unwrap())
        },
        x.data(),
        dx.data(),
        opts,
    );
    if state.param_count() == 0 {
        return wrt_x;
    }
    let wrt_p = gradcheck(
        |v| {
            let mut s = state.clone();
            s.params_mut().data_mut().copy_from_slice(v);
            weighted_sum(&upstream, &s.forward(&x).unwrap())
        },
        state.params().data(),
        dp.data(),
        opts,
    );
    wrt_x.merge(wrt_p)
}

fn random_probs(rng: &mut SplitMix64, shape: Shape) -> Tensor<f64> {
    let logits = random_tensor(rng, shape, -2.0, 2.0);
    ops::softmax_channel(&logits).unwrap()
}

fn random_target(rng: &mut SplitMix64, h: usize, w: usize) -> Tensor<f64> {
    let data = (0..h * w).map(|_| u8::from(rng.coin())).collect();
    Mask::new(h, w, data).unwrap().one_hot()
}

pub fn check_dice(seed: u64, opts: GradCheckOptions) -> GradCheckReport {
    let mut rng = SplitMix64::new(derive_seed(seed, 1));
    let shape = Shape::new(1, 2, 3, 4);
    let probs = random_probs(&mut rng, shape);
    let target = random_target(&mut rng, 3, 4);
    let lv = dice_loss(&probs, &target).unwrap();
    gradcheck(
        |v| dice_loss(&Tensor::from_vec(shape, v.to_vec()).unwrap(), &target).unwrap().loss,
        probs.data(),
        lv.grad.data(),
        opts,
    )
}

pub fn check_weighted_ce(seed: u64, opts: GradCheckOptions) -> GradCheckReport {
    let mut rng = SplitMix64::new(derive_seed(seed, 2));
    let shape = Shape::new(1, 2, 3, 4);
    let probs = random_probs(&mut rng, shape);
    let target = random_target(&mut rng, 3, 4);
    let weights = [rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)];
    let lv = weighted_ce(&probs, &target, weights).unwrap();
    gradcheck(
        |v| weighted_ce(&Tensor::from_vec(shape, v.to_vec()).unwrap(), &target, weights).unwrap().loss,
        probs.data(),
        lv.grad.data(),
        opts,
    )
}

/// Convolution with a seed-dependent stride, padding and dilation.
pub fn check_conv(seed: u64, opts: GradCheckOptions) -> GradCheckReport {
    let mut rng = SplitMix64::new(derive_seed(seed, 3));
    let spec = ConvSpec::new(1 + rng.below(3), 2, 3)
        .stride(1 + rng.below(2))
        .dilation(1 + rng.below(2))
        .padding(rng.below(3));
    let in_shape = Shape::new(1, 2, 5, 5);
    let x = random_tensor(&mut rng, in_shape, -1.0, 1.0);
    let w = random_tensor(&mut rng, spec.weight_shape(), -1.0, 1.0);
    let b: Vec<f64> = (0..spec.out_c).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let out = ops::conv2d(&x, &w, &b, &spec).unwrap();
    let up = random_tensor(&mut rng, out.shape(), -1.0, 1.0);
    let g = ops::conv2d_backward(&x, &w, &spec, &up).unwrap();

    let rx = gradcheck(
        |v| weighted_sum(&up, &ops::conv2d(&Tensor::from_vec(in_shape, v.to_vec()).unwrap(), &w, &b, &spec).unwrap()),
        x.data(),
        g.input.data(),
        opts,
    );
    let rw = gradcheck(
        |v| {
            let wt = Tensor::from_vec(spec.weight_shape(), v.to_vec()).unwrap();
            weighted_sum(&up, &ops::conv2d(&x, &wt, &b, &spec).unwrap())
        },
        w.data(),
        g.weights.data(),
        opts,
    );
    let rb = gradcheck(
        |v| weighted_sum(&up, &ops::conv2d(&x, &w, v, &spec).unwrap()),
        &b,
        &g.bias,
        opts,
    );
    rx.merge(rw).merge(rb)
}

pub fn check_upsample(seed: u64, opts: GradCheckOptions) -> GradCheckReport {
    let mut rng = SplitMix64::new(derive_seed(seed, 4));
    let factor = 1 + rng.below(4);
    let shape = Shape::new(1, 2, 2 + rng.below(3), 2 + rng.below(3));
    let x = random_tensor(&mut rng, shape, -1.0, 1.0);
    let out = ops::upsample_bilinear(&x, factor).unwrap();
    let up = random_tensor(&mut rng, out.shape(), -1.0, 1.0);
    let dx = ops::upsample_bilinear_backward(&up, shape, factor).unwrap();
    gradcheck(
        |v| weighted_sum(&up, &ops::upsample_bilinear(&Tensor::from_vec(shape, v.to_vec()).unwrap(), factor).unwrap()),
        x.data(),
        dx.data(),
        opts,
    )
}

pub fn check_softmax(seed: u64, opts: GradCheckOptions) -> GradCheckReport {
    let mut rng = SplitMix64::new(derive_seed(seed, 5));
    let shape = Shape::new(2, 2 + rng.below(3), 2, 2);
    let x = random_tensor(&mut rng, shape, -3.0, 3.0);
    let y = ops::softmax_channel(&x).unwrap();
    let up = random_tensor(&mut rng, shape, -1.0, 1.0);
    let dx = ops::softmax_channel_backward(&y, &up).unwrap();
    gradcheck(
        |v| weighted_sum(&up, &ops::softmax_channel(&Tensor::from_vec(shape, v.to_vec()).unwrap()).unwrap()),
        x.data(),
        dx.data(),
        opts,
    )
}

/// Reduced network for `seed`: seeds below the pool length use act mode with
/// `pool[seed]`, later seeds use stochastic assignments.
pub fn reduced_model(seed: u64) -> Model<f64> {
    let pool = default_pool();
    let cfg = NetworkConfig::reduced();
    let (mode, index) = if (seed as usize) < pool.len() {
        (SelectionMode::Act, seed as usize)
    } else {
        (SelectionMode::Sto, 0)
    };
    let asg = assign_activations(mode, &pool, cfg.site_count(), index, derive_seed(seed, 6)).unwrap();
    let mut model = Model::<f64>::build(&cfg, &asg, derive_seed(seed, 7)).unwrap();
    let mut rng = SplitMix64::new(derive_seed(seed, 8));
    for (name, t) in model.params_mut() {
        let jitter = if name.starts_with("act") { 0.1 } else { 0.05 };
        for v in t.data_mut() {
            *v += rng.uniform(-jitter, jitter);
        }
    }
    model
}

fn flat_params(model: &Model<f64>) -> Vec<f64> {
    model.params().iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

fn set_flat_params(model: &mut Model<f64>, flat: &[f64]) {
    let mut off = 0;
    for (_, t) in model.params_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

/// Dice loss of the reduced network against every weight, bias and
/// activation parameter.
pub fn check_end_to_end(seed: u64, opts: GradCheckOptions) -> GradCheckReport {
    let model = reduced_model(seed);
    let size = model.config().input_size;
    let mut rng = SplitMix64::new(derive_seed(seed, 9));
    let image = random_tensor(&mut rng, Shape::new(1, 3, size, size), 0.0, 1.0);
    let target = random_target(&mut rng, size, size);

    let cache = model.forward(&image).unwrap();
    let lv = dice_loss(&cache.probs, &target).unwrap();
    let grads = model.backward(&cache, &lv.grad).unwrap();
    let analytic: Vec<f64> = model
        .params()
        .iter()
        .flat_map(|(name, _)| grads[name].data().to_vec())
        .collect();

    let x = flat_params(&model);
    let mut probe = model.clone();
    gradcheck(
        |v| {
            set_flat_params(&mut probe, v);
            dice_loss(&probe.predict(&image).unwrap(), &target).unwrap().loss
        },
        &x,
        &analytic,
        opts,
    )
}

/// Run every check over `seeds` seeds.
pub fn run_suite(seeds: u64) -> Vec<SuiteEntry> {
    let unit = unit_options();
    let fine = fine_options(UNIT_TOLERANCE);
    let e2e = fine_options(END_TO_END_TOLERANCE);
    let mut out = vec![
        over_seeds("op/conv2d", seeds, |s| check_conv(s, unit)),
        over_seeds("op/upsample_bilinear", seeds, |s| check_upsample(s, unit)),
        over_seeds("op/softmax_channel", seeds, |s| check_softmax(s, unit)),
        over_seeds("loss/dice", seeds, |s| check_dice(s, fine)),
        over_seeds("loss/weighted_ce", seeds, |s| check_weighted_ce(s, fine)),
    ];
    for kind in ActivationKind::ALL {
        out.push(over_seeds(&format!("act/{kind}"), seeds, |s| check_activation(kind, s, unit)));
    }
    out.push(over_seeds("model/end_to_end", seeds, |s| check_end_to_end(s, e2e)));
    out
}
