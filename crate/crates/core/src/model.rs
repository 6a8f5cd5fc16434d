//! MicroDeepLab: a small encoder-decoder with a mini atrous pyramid.
//!
//! Topology for input size `S` (default widths in brackets):
//!
//! ```text
//! stem   conv3x3            3 -> [16]   + site 1
//! down1  conv3x3 stride 2  16 -> [32]   + site 2      S/2
//! down2  conv3x3 stride 2  32 -> [32]   + site 3      S/4
//! aspp   conv3x3 dil d     32 -> [16]   + one site per dilation (1, 2, 4)
//! concat                      -> 48
//! fuse   conv1x1           48 -> [32]   + site 7
//! upsample x4 (bilinear)                              S
//! head   conv1x1           32 -> 2
//! softmax over channels
//! ```
//!
//! Every activation site is filled from the activation pool according to an
//! [`ActivationAssignment`].

use std::fmt;
use std::str::FromStr;

use crate::activation::{ActivationKind, ActivationState};
use crate::error::{Error, Result};
use crate::ops::{self, ConvSpec};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{GradMap, Scalar, Shape, Tensor};

pub const CLASSES: usize = 2;
pub const INPUT_CHANNELS: usize = 3;
const UPSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Widths {
    pub stem: usize,
    pub down1: usize,
    pub down2: usize,
    pub aspp: usize,
    pub fuse: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Self {
            stem: 16,
            down1: 32,
            down2: 32,
            aspp: 16,
            fuse: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub input_size: usize,
    pub widths: Widths,
    pub aspp_dilations: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            widths: Widths::default(),
            aspp_dilations: vec![1, 2, 4],
        }
    }
}

impl NetworkConfig {
    /// The small configuration used for end-to-end gradient checks.
    pub fn reduced() -> Self {
        Self {
            input_size: 8,
            widths: Widths {
                stem: 2,
                down1: 4,
                down2: 4,
                aspp: 2,
                fuse: 4,
            },
            aspp_dilations: vec![1, 2, 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "input size {} must be a positive multiple of 4",
                self.input_size
            )));
        }
        if self.aspp_dilations.is_empty() || self.aspp_dilations.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "aspp dilations must be non-empty and positive, got {:?}",
                self.aspp_dilations
            )));
        }
        let w = &self.widths;
        if [w.stem, w.down1, w.down2, w.aspp, w.fuse].contains(&0) {
            return Err(Error::InvalidArgument(format!("zero channel width in {w:?}")));
        }
        Ok(())
    }

    pub fn site_count(&self) -> usize {
        4 + self.aspp_dilations.len()
    }

    /// Channel count seen by each activation site, in site order.
    pub fn site_channels(&self) -> Vec<usize> {
        let w = &self.widths;
        let mut c = vec![w.stem, w.down1, w.down2];
        c.extend(std::iter::repeat_n(w.aspp, self.aspp_dilations.len()));
        c.push(w.fuse);
        c
    }

    fn layers(&self) -> Vec<(String, ConvSpec)> {
        let w = &self.widths;
        let mut l = vec![
            ("stem".to_string(), ConvSpec::new(w.stem, INPUT_CHANNELS, 3).padding(1)),
            ("down1".to_string(), ConvSpec::new(w.down1, w.stem, 3).stride(2).padding(1)),
            ("down2".to_string(), ConvSpec::new(w.down2, w.down1, 3).stride(2).padding(1)),
        ];
        for (i, &d) in self.aspp_dilations.iter().enumerate() {
            l.push((
                format!("aspp{i}"),
                ConvSpec::new(w.aspp, w.down2, 3).padding(d).dilation(d),
            ));
        }
        let cat = w.aspp * self.aspp_dilations.len();
        l.push(("fuse".to_string(), ConvSpec::new(w.fuse, cat, 1)));
        l.push(("head".to_string(), ConvSpec::new(CLASSES, w.fuse, 1)));
        l
    }
}

/// How an ensemble member's activation sites are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectionMode {
    /// Member `i` uses `pool[i]` at every site.
    Act,
    /// Each site draws uniformly from the pool.
    Sto,
    /// Every site is ReLU; members differ only by initialization.
    Relu,
}

impl SelectionMode {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMode::Act => "act",
            SelectionMode::Sto => "sto",
            SelectionMode::Relu => "relu",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "act" => Ok(SelectionMode::Act),
            "sto" => Ok(SelectionMode::Sto),
            "relu" => Ok(SelectionMode::Relu),
            other => Err(Error::InvalidArgument(format!(
                "unknown selection mode {other:?} (expected act, sto or relu)"
            ))),
        }
    }
}

/// One activation kind per site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationAssignment(pub Vec<ActivationKind>);

impl ActivationAssignment {
    pub fn uniform(kind: ActivationKind, sites: usize) -> Self {
        Self(vec![kind; sites])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn kinds(&self) -> &[ActivationKind] {
        &self.0
    }
}

impl fmt::Display for ActivationAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(k.name())?;
        }
        Ok(())
    }
}

/// Fill `site_count` sites. In `Sto` mode site `j` takes `pool[below(|pool|)]`
/// from the `j`-th draw of `SplitMix64::new(seed)`.
pub fn assign_activations(
    mode: SelectionMode,
    pool: &[ActivationKind],
    site_count: usize,
    member_index: usize,
    seed: u64,
) -> Result<ActivationAssignment> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("activation pool is empty".into()));
    }
    Ok(match mode {
        SelectionMode::Act => {
            let kind = pool.get(member_index).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "member index {member_index} out of range for a pool of {}",
                    pool.len()
                ))
            })?;
            ActivationAssignment::uniform(*kind, site_count)
        }
        SelectionMode::Sto => {
            let mut rng = SplitMix64::new(seed);
            ActivationAssignment((0..site_count).map(|_| pool[rng.below(pool.len())]).collect())
        }
        SelectionMode::Relu => ActivationAssignment::uniform(ActivationKind::Relu, site_count),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<F> {
    pub name: String,
    pub spec: ConvSpec,
    pub weight: Tensor<F>,
    /// `(1, 1, 1, out_c)`
    pub bias: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    config: NetworkConfig,
    assignment: ActivationAssignment,
    layers: Vec<ConvLayer<F>>,
    acts: Vec<ActivationState<F>>,
    init_seed: u64,
}

/// Intermediate values of one forward pass, consumed by [`Model::backward`].
pub struct ForwardCache<F> {
    input: Tensor<F>,
    /// Pre-activation outputs, one per site.
    pre: Vec<Tensor<F>>,
    /// Post-activation outputs, one per site.
    post: Vec<Tensor<F>>,
    concat: Tensor<F>,
    upsampled: Tensor<F>,
    pub probs: Tensor<F>,
}

impl<F: Scalar> Model<F> {
    /// Weights are drawn from `N(0, 2/fan_in)` using the stream
    /// `derive_seed(init_seed, layer_index)`; biases start at zero.
    pub fn build(config: &NetworkConfig, assignment: &ActivationAssignment, init_seed: u64) -> Result<Self> {
        config.validate()?;
        if assignment.len() != config.site_count() {
            return Err(Error::InvalidArgument(format!(
                "assignment has {} sites, network has {}",
                assignment.len(),
                config.site_count()
            )));
        }
        let layers = config
            .layers()
            .into_iter()
            .enumerate()
            .map(|(i, (name, spec))| {
                let mut rng = SplitMix64::new(derive_seed(init_seed, i as u64));
                let std = (2.0 / spec.fan_in() as f64).sqrt();
                let weight = Tensor::from_fn(spec.weight_shape(), |_| F::of(std * rng.normal()));
                ConvLayer {
                    name,
                    spec,
                    weight,
                    bias: Tensor::zeros(Shape::new(1, 1, 1, spec.out_c)),
                }
            })
            .collect();
        let acts = assignment
            .kinds()
            .iter()
            .zip(config.site_channels())
            .map(|(&k, c)| ActivationState::new(k, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            assignment: assignment.clone(),
            layers,
            acts,
            init_seed,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn assignment(&self) -> &ActivationAssignment {
        &self.assignment
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn layers(&self) -> &[ConvLayer<F>] {
        &self.layers
    }

    pub fn activations(&self) -> &[ActivationState<F>] {
        &self.acts
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// All trainable tensors in canonical order.
    pub fn params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((format!("{}.weight", l.name), &l.weight));
            out.push((format!("{}.bias", l.name), &l.bias));
        }
        for (i, a) in self.acts.iter().enumerate() {
            if a.param_count() > 0 {
                out.push((format!("act{}.params", i + 1), a.params()));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push((format!("{}.weight", l.name), &mut l.weight));
            out.push((format!("{}.bias", l.name), &mut l.bias));
        }
        for (i, a) in self.acts.iter_mut().enumerate() {
            if a.param_count() > 0 {
                out.push((format!("act{}.params", i + 1), a.params_mut()));
            }
        }
        out
    }

    fn conv(&self, layer: usize, x: &Tensor<F>) -> Result<Tensor<F>> {
        let l = &self.layers[layer];
        ops::conv2d(x, &l.weight, l.bias.data(), &l.spec)
    }

    fn check_input(&self, image: &Tensor<F>) -> Result<()> {
        let s = image.shape();
        let size = self.config.input_size;
        if s.c != INPUT_CHANNELS || s.h != size || s.w != size {
            return Err(Error::Shape(format!(
                "model input must be Nx{INPUT_CHANNELS}x{size}x{size}, got {s}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, image: &Tensor<F>) -> Result<ForwardCache<F>> {
        self.check_input(image)?;
        let branches = self.config.aspp_dilations.len();
        let mut pre = Vec::with_capacity(self.acts.len());
        let mut post = Vec::with_capacity(self.acts.len());

        let mut x = image.clone();
        for site in 0..3 {
            let z = self.conv(site, &x)?;
            x = self.acts[site].forward(&z)?;
            pre.push(z);
            post.push(x.clone());
        }
        for b in 0..branches {
            let z = self.conv(3 + b, &post[2])?;
            post.push(self.acts[3 + b].forward(&z)?);
            pre.push(z);
        }
        let concat = ops::concat_channels(&post[3..3 + branches].iter().collect::<Vec<_>>())?;
        let fuse = 3 + branches;
        let z = self.conv(fuse, &concat)?;
        post.push(self.acts[fuse].forward(&z)?);
        pre.push(z);
        let upsampled = ops::upsample_bilinear(&post[fuse], UPSAMPLE)?;
        let logits = self.conv(fuse + 1, &upsampled)?;
        let probs = ops::softmax_channel(&logits)?;
        Ok(ForwardCache {
            input: image.clone(),
            pre,
            post,
            concat,
            upsampled,
            probs,
        })
    }

    /// Per-pixel class probabilities `(N, 2, S, S)`.
    pub fn predict(&self, image: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.forward(image)?.probs)
    }

    /// Gradients of a loss given its gradient `dprobs` with respect to the
    /// softmax output of `cache`.
    pub fn backward(&self, cache: &ForwardCache<F>, dprobs: &Tensor<F>) -> Result<GradMap<F>> {
        let branches = self.config.aspp_dilations.len();
        let fuse = 3 + branches;
        let head = fuse + 1;
        let mut grads = GradMap::new();
        let mut act_grads: Vec<Option<Tensor<F>>> = vec![None; self.acts.len()];

        let dlogits = ops::softmax_channel_backward(&cache.probs, dprobs)?;
        let d_up = self.conv_backward(head, &cache.upsampled, &dlogits, &mut grads)?;
        let d_post = ops::upsample_bilinear_backward(&d_up, cache.post[fuse].shape(), UPSAMPLE)?;
        let d_pre = self.act_backward(fuse, cache, &d_post, &mut act_grads)?;
        let d_cat = self.conv_backward(fuse, &cache.concat, &d_pre, &mut grads)?;

        let parts = ops::split_channels(&d_cat, &vec![self.config.widths.aspp; branches])?;
        let mut d_bottleneck = Tensor::zeros(cache.post[2].shape());
        for (b, d_branch) in parts.iter().enumerate() {
            let site = 3 + b;
            let d_pre = self.act_backward(site, cache, d_branch, &mut act_grads)?;
            let d_in = self.conv_backward(site, &cache.post[2], &d_pre, &mut grads)?;
            d_bottleneck.add_assign(&d_in)?;
        }

        let mut d_post = d_bottleneck;
        for site in (0..3).rev() {
            let d_pre = self.act_backward(site, cache, &d_post, &mut act_grads)?;
            let input = if site == 0 { &cache.input } else { &cache.post[site - 1] };
            d_post = self.conv_backward(site, input, &d_pre, &mut grads)?;
        }

        for (i, g) in act_grads.into_iter().enumerate() {
            if let Some(g) = g {
                grads.insert(format!("act{}.params", i + 1), g);
            }
        }
        Ok(grads)
    }

    fn conv_backward(
        &self,
        layer: usize,
        input: &Tensor<F>,
        upstream: &Tensor<F>,
        grads: &mut GradMap<F>,
    ) -> Result<Tensor<F>> {
        let l = &self.layers[layer];
        let g = ops::conv2d_backward(input, &l.weight, &l.spec, upstream)?;
        grads.insert(format!("{}.weight", l.name), g.weights);
        grads.insert(
            format!("{}.bias", l.name),
            Tensor::from_vec(l.bias.shape(), g.bias)?,
        );
        Ok(g.input)
    }

    fn act_backward(
        &self,
        site: usize,
        cache: &ForwardCache<F>,
        upstream: &Tensor<F>,
        act_grads: &mut [Option<Tensor<F>>],
    ) -> Result<Tensor<F>> {
        let act = &self.acts[site];
        let (dx, dp) = act.backward(&cache.pre[site], upstream)?;
        if act.param_count() > 0 {
            act_grads[site] = Some(dp);
        }
        Ok(dx)
    }
}
