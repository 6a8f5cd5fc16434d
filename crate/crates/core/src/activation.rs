//! The pool of seventeen parametric activation functions.
//!
//! Learnable parameters are per channel and stored as a `(1, 1, P, C)` tensor
//! whose row `p` holds parameter `p` for every channel. At points where a
//! function is not differentiable the right derivative is used.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Upper end of the input range the piecewise schedules are laid out for.
pub const MAX_INPUT: f64 = 1.0;
pub const LEAKY_SLOPE: f64 = 0.01;
pub const PDELU_T: f64 = 0.9;
pub const APLU_DEFAULT_HINGES: usize = 3;

/// Hat centres and half-widths for MeLU/GaLU over `[0, 2*MAX_INPUT]`.
const DYADIC_SCHEDULE: [(f64, f64); 7] = [
    (1.0, 1.0),
    (0.5, 0.5),
    (1.5, 0.5),
    (0.25, 0.25),
    (0.75, 0.25),
    (1.25, 0.25),
    (1.75, 0.25),
];

pub const MAX_PARAMS: usize = 8;

/// Members of the activation pool, in their stable pool order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActivationKind {
    Relu,
    LeakyRelu,
    Elu,
    Prelu,
    Srelu,
    Aplu,
    Melu4,
    Melu8,
    Galu4,
    Galu8,
    Pdelu,
    SwishFixed,
    SwishLearnable,
    SoftRootSign,
    MishFixed,
    MishLearnable,
    SoftLearnable,
}

use ActivationKind::*;

impl ActivationKind {
    pub const ALL: [ActivationKind; 17] = [
        Relu,
        LeakyRelu,
        Elu,
        Prelu,
        Srelu,
        Aplu,
        Melu4,
        Melu8,
        Galu4,
        Galu8,
        Pdelu,
        SwishFixed,
        SwishLearnable,
        SoftRootSign,
        MishFixed,
        MishLearnable,
        SoftLearnable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relu => "ReLU",
            LeakyRelu => "LeakyReLU",
            Elu => "ELU",
            Prelu => "PReLU",
            Srelu => "SReLU",
            Aplu => "APLU",
            Melu4 => "MeLU4",
            Melu8 => "MeLU8",
            Galu4 => "GaLU4",
            Galu8 => "GaLU8",
            Pdelu => "PDELU",
            SwishFixed => "SwishFixed",
            SwishLearnable => "SwishLearnable",
            SoftRootSign => "SoftRootSign",
            MishFixed => "MishFixed",
            MishLearnable => "MishLearnable",
            SoftLearnable => "SoftLearnable",
        }
    }

    /// Number of hat terms for MeLU/GaLU kinds.
    fn hats(self) -> usize {
        match self {
            Melu4 | Galu4 => 3,
            Melu8 | Galu8 => 7,
            _ => 0,
        }
    }

    /// Learnable scalars per channel (APLU with the default hinge count).
    pub fn param_count(self) -> usize {
        match self {
            Relu | LeakyRelu | Elu | SwishFixed | MishFixed => 0,
            Prelu | Pdelu | SwishLearnable | MishLearnable | SoftLearnable => 1,
            SoftRootSign => 2,
            Srelu => 4,
            Aplu => APLU_DEFAULT_HINGES,
            Melu4 | Melu8 | Galu4 | Galu8 => self.hats() + 1,
        }
    }

    pub fn is_learnable(self) -> bool {
        self.param_count() > 0
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown activation kind {s:?}")))
    }
}

/// All seventeen kinds in pool order. Ensembles of size 14 use the first 14.
pub fn default_pool() -> Vec<ActivationKind> {
    ActivationKind::ALL.to_vec()
}

/// Non-learnable constants fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedConsts {
    /// `(centre, half-width)` of each MeLU/GaLU hat.
    pub hats: Vec<(f64, f64)>,
    /// APLU hinge locations.
    pub hinges: Vec<f64>,
    pub max_input: f64,
}

/// One activation site: its kind plus learnable per-channel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationState<F> {
    kind: ActivationKind,
    channels: usize,
    params: Tensor<F>,
    consts: FixedConsts,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

fn initial_params(kind: ActivationKind, p: usize) -> Vec<f64> {
    match kind {
        Relu | LeakyRelu | Elu | SwishFixed | MishFixed => vec![],
        Prelu => vec![0.25],
        Srelu => vec![0.0, 0.0, MAX_INPUT, 1.0],
        Aplu => vec![0.0; p],
        Melu4 | Melu8 | Galu4 | Galu8 => {
            let mut v = vec![0.0; p];
            v[0] = 0.25;
            v
        }
        Pdelu => vec![1.0],
        SwishLearnable | MishLearnable | SoftLearnable => vec![1.0],
        SoftRootSign => vec![2.0, 3.0],
    }
}

impl<F: Scalar> ActivationState<F> {
    /// Freshly initialized state for `channels` channels.
    pub fn new(kind: ActivationKind, channels: usize) -> Result<Self> {
        Self::with_hinges(kind, channels, APLU_DEFAULT_HINGES)
    }

    /// Like [`ActivationState::new`] with a custom APLU hinge count
    /// (ignored for other kinds).
    pub fn with_hinges(kind: ActivationKind, channels: usize, hinges: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("activation needs at least one channel".into()));
        }
        if kind == Aplu && hinges == 0 {
            return Err(Error::InvalidArgument("APLU needs at least one hinge".into()));
        }
        let p = if kind == Aplu { hinges } else { kind.param_count() };
        let init = initial_params(kind, p);
        let params = Tensor::from_fn(Shape::new(1, 1, p, channels), |i| F::of(init[i / channels]));
        let consts = FixedConsts {
            hats: DYADIC_SCHEDULE[..kind.hats()]
                .iter()
                .map(|&(a, l)| (a * MAX_INPUT, l * MAX_INPUT))
                .collect(),
            hinges: if kind == Aplu {
                linspace(-MAX_INPUT, MAX_INPUT, hinges)
            } else {
                Vec::new()
            },
            max_input: MAX_INPUT,
        };
        Ok(Self {
            kind,
            channels,
            params,
            consts,
        })
    }

    /// Rebuild a state from stored parameters (checkpoint loading).
    pub fn from_params(kind: ActivationKind, channels: usize, params: Tensor<F>) -> Result<Self> {
        let p = params.shape().h;
        let mut state = Self::with_hinges(kind, channels, p.max(1))?;
        params.expect_shape(state.params.shape(), &format!("{kind} parameters"))?;
        state.params = params;
        Ok(state)
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn params(&self) -> &Tensor<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Tensor<F> {
        &mut self.params
    }

    pub fn consts(&self) -> &FixedConsts {
        &self.consts
    }

    pub fn param_count(&self) -> usize {
        self.params.shape().h
    }

    pub fn channel_params(&self, c: usize) -> [F; MAX_PARAMS] {
        let mut out = [F::zero(); MAX_PARAMS];
        let d = self.params.data();
        for (p, o) in out.iter_mut().enumerate().take(self.param_count()) {
            *o = d[p * self.channels + c];
        }
        out
    }

    /// Input locations where channel `c` has a kink.
    pub fn kinks(&self, c: usize) -> Vec<f64> {
        let prm = self.channel_params(c);
        let mut k = Vec::new();
        match self.kind {
            Relu | LeakyRelu | Elu | Prelu => k.push(0.0),
            Pdelu => k.extend([0.0, -1.0 / (1.0 - PDELU_T)]),
            Srelu => k.extend([prm[0].to_f64_lossy(), prm[2].to_f64_lossy()]),
            Aplu => {
                k.push(0.0);
                k.extend(&self.consts.hinges);
            }
            Melu4 | Melu8 | Galu4 | Galu8 => {
                k.push(0.0);
                let galu = matches!(self.kind, Galu4 | Galu8);
                for &(a, l) in &self.consts.hats {
                    k.extend([a - l, a, a + l]);
                    if galu {
                        k.extend([a + 2.0 * l, a + 3.0 * l]);
                    }
                }
            }
            SwishFixed | SwishLearnable | SoftRootSign | MishFixed | MishLearnable | SoftLearnable => {}
        }
        k
    }

    fn check_channels(&self, x: &Tensor<F>) -> Result<()> {
        if x.shape().c != self.channels {
            return Err(Error::Shape(format!(
                "{} activation: expected {} channels, got {}",
                self.kind,
                self.channels,
                x.shape().c
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_channels(x)?;
        let s = x.shape();
        let mut out = Tensor::zeros(s);
        for c in 0..s.c {
            let prm = self.channel_params(c);
            for n in 0..s.n {
                let src = x.plane(n, c);
                for (o, &v) in out.plane_mut(n, c).iter_mut().zip(src) {
                    *o = self.eval(&prm, v);
                }
            }
        }
        Ok(out)
    }

    /// Returns `(dx, dparams)`; `dparams` has the shape of [`Self::params`]
    /// and sums over batch and spatial positions.
    pub fn backward(&self, x: &Tensor<F>, upstream: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        self.check_channels(x)?;
        upstream.expect_shape(x.shape(), "activation upstream")?;
        let s = x.shape();
        let np = self.param_count();
        let mut dx = Tensor::zeros(s);
        let mut dparams = Tensor::zeros(self.params.shape());
        for c in 0..s.c {
            let prm = self.channel_params(c);
            let mut acc = [F::zero(); MAX_PARAMS];
            for n in 0..s.n {
                let xs = x.plane(n, c);
                let gs = upstream.plane(n, c);
                for ((d, &v), &g) in dx.plane_mut(n, c).iter_mut().zip(xs).zip(gs) {
                    let (dy, dp) = self.grad(&prm, v);
                    *d = dy * g;
                    for p in 0..np {
                        acc[p] += dp[p] * g;
                    }
                }
            }
            let dd = dparams.data_mut();
            for p in 0..np {
                dd[p * self.channels + c] = acc[p];
            }
        }
        Ok((dx, dparams))
    }

    /// Forward value for one scalar with the channel's parameters.
    pub fn eval(&self, prm: &[F; MAX_PARAMS], x: F) -> F {
        let zero = F::zero();
        let one = F::one();
        match self.kind {
            Relu => x.max(zero),
            LeakyRelu => {
                if x > zero {
                    x
                } else {
                    F::of(LEAKY_SLOPE) * x
                }
            }
            Elu => {
                if x > zero {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Prelu => prelu(prm[0], x),
            Srelu => {
                let (tl, al, tr, ar) = (prm[0], prm[1], prm[2], prm[3]);
                if x <= tl {
                    tl + al * (x - tl)
                } else if x < tr {
                    x
                } else {
                    tr + ar * (x - tr)
                }
            }
            Aplu => {
                let mut acc = zero;
                for (s, &b) in self.consts.hinges.iter().enumerate() {
                    acc += prm[s] * (F::of(b) - x).max(zero);
                }
                x.max(zero) + acc
            }
            Melu4 | Melu8 => {
                let mut acc = zero;
                for (j, &(a, l)) in self.consts.hats.iter().enumerate() {
                    acc += prm[j + 1] * hat(x, F::of(a), F::of(l));
                }
                prelu(prm[0], x) + acc
            }
            Galu4 | Galu8 => {
                let mut acc = zero;
                for (j, &(a, l)) in self.consts.hats.iter().enumerate() {
                    acc += prm[j + 1] * galu_wave(x, F::of(a), F::of(l));
                }
                prelu(prm[0], x) + acc
            }
            Pdelu => {
                if x > zero {
                    x
                } else {
                    let k = F::of(1.0 - PDELU_T);
                    let base = (one + k * x).max(zero);
                    prm[0] * (base.powf(one / k) - one)
                }
            }
            SwishFixed => x * sigmoid(x),
            SwishLearnable => x * sigmoid(prm[0] * x),
            SoftRootSign => {
                let (alpha, beta) = (prm[0], prm[1]);
                x / (x / alpha + (-x / beta).exp())
            }
            MishFixed => x * softplus(x).tanh(),
            MishLearnable => x * softplus(prm[0] * x).tanh(),
            SoftLearnable => softplus(prm[0] * x) / prm[0],
        }
    }

    /// `(dy/dx, dy/dparam_p)` for one scalar.
    pub fn grad(&self, prm: &[F; MAX_PARAMS], x: F) -> (F, [F; MAX_PARAMS]) {
        let zero = F::zero();
        let one = F::one();
        let mut dp = [zero; MAX_PARAMS];
        let dx = match self.kind {
            Relu => step(x),
            LeakyRelu => {
                if x >= zero {
                    one
                } else {
                    F::of(LEAKY_SLOPE)
                }
            }
            Elu => {
                if x >= zero {
                    one
                } else {
                    x.exp()
                }
            }
            Prelu => {
                dp[0] = prelu_dslope(x);
                prelu_dx(prm[0], x)
            }
            Srelu => {
                let (tl, al, tr, ar) = (prm[0], prm[1], prm[2], prm[3]);
                if x < tl {
                    dp[0] = one - al;
                    dp[1] = x - tl;
                    al
                } else if x < tr {
                    one
                } else {
                    dp[2] = one - ar;
                    dp[3] = x - tr;
                    ar
                }
            }
            Aplu => {
                let mut d = step(x);
                for (s, &b) in self.consts.hinges.iter().enumerate() {
                    let b = F::of(b);
                    dp[s] = (b - x).max(zero);
                    if x < b {
                        d -= prm[s];
                    }
                }
                d
            }
            Melu4 | Melu8 => {
                dp[0] = prelu_dslope(x);
                let mut d = prelu_dx(prm[0], x);
                for (j, &(a, l)) in self.consts.hats.iter().enumerate() {
                    let (a, l) = (F::of(a), F::of(l));
                    dp[j + 1] = hat(x, a, l);
                    d += prm[j + 1] * hat_dx(x, a, l);
                }
                d
            }
            Galu4 | Galu8 => {
                dp[0] = prelu_dslope(x);
                let mut d = prelu_dx(prm[0], x);
                for (j, &(a, l)) in self.consts.hats.iter().enumerate() {
                    let (a, l) = (F::of(a), F::of(l));
                    dp[j + 1] = galu_wave(x, a, l);
                    let shifted = a + F::of(2.0) * l;
                    d += prm[j + 1] * (hat_dx(x, a, l) - hat_dx(x, shifted, l));
                }
                d
            }
            Pdelu => {
                if x >= zero {
                    one
                } else {
                    let k = F::of(1.0 - PDELU_T);
                    let m = one / k;
                    let base = (one + k * x).max(zero);
                    dp[0] = base.powf(m) - one;
                    prm[0] * k * m * base.powf(m - one)
                }
            }
            SwishFixed => {
                let s = sigmoid(x);
                s + x * s * (one - s)
            }
            SwishLearnable => {
                let beta = prm[0];
                let s = sigmoid(beta * x);
                let ds = s * (one - s);
                dp[0] = x * x * ds;
                s + beta * x * ds
            }
            SoftRootSign => {
                let (alpha, beta) = (prm[0], prm[1]);
                let e = (-x / beta).exp();
                let den = x / alpha + e;
                let den2 = den * den;
                dp[0] = x * x / (alpha * alpha * den2);
                dp[1] = -(x * x * e) / (beta * beta * den2);
                (den - x * (one / alpha - e / beta)) / den2
            }
            MishFixed => mish_grads(x, one).0,
            MishLearnable => {
                let (d, db) = mish_grads(x, prm[0]);
                dp[0] = db;
                d
            }
            SoftLearnable => {
                let beta = prm[0];
                let s = sigmoid(beta * x);
                dp[0] = -softplus(beta * x) / (beta * beta) + x * s / beta;
                s
            }
        };
        (dx, dp)
    }
}

#[inline]
fn step<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one()
    } else {
        F::zero()
    }
}

#[inline]
fn prelu<F: Scalar>(a: F, x: F) -> F {
    if x > F::zero() {
        x
    } else {
        a * x
    }
}

#[inline]
fn prelu_dx<F: Scalar>(a: F, x: F) -> F {
    if x >= F::zero() {
        F::one()
    } else {
        a
    }
}

#[inline]
fn prelu_dslope<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        F::zero()
    } else {
        x
    }
}

/// `max(l - |x - a|, 0)`
#[inline]
fn hat<F: Scalar>(x: F, a: F, l: F) -> F {
    (l - (x - a).abs()).max(F::zero())
}

#[inline]
fn hat_dx<F: Scalar>(x: F, a: F, l: F) -> F {
    if x >= a - l && x < a {
        F::one()
    } else if x >= a && x < a + l {
        -F::one()
    } else {
        F::zero()
    }
}

/// `max(l - |x - a|, 0) + min(|x - a - 2l| - l, 0)`
#[inline]
fn galu_wave<F: Scalar>(x: F, a: F, l: F) -> F {
    hat(x, a, l) + ((x - a - F::of(2.0) * l).abs() - l).min(F::zero())
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
fn softplus<F: Scalar>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

/// Derivatives of `x * tanh(softplus(beta * x))` with respect to `x` and `beta`.
fn mish_grads<F: Scalar>(x: F, beta: F) -> (F, F) {
    let u = beta * x;
    let t = softplus(u).tanh();
    let dt_du = (F::one() - t * t) * sigmoid(u);
    (t + x * beta * dt_du, x * x * dt_du)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(kind: ActivationKind, x: f64) -> f64 {
        let st = ActivationState::<f64>::new(kind, 1).unwrap();
        st.eval(&st.channel_params(0), x)
    }

    #[test]
    fn pool_order_and_size() {
        let pool = default_pool();
        assert_eq!(pool.len(), 17);
        assert_eq!(pool[0], Relu);
        assert_eq!(&pool[..14], &ActivationKind::ALL[..14]);
        assert_eq!(&pool[14..], &[MishFixed, MishLearnable, SoftLearnable]);
    }

    #[test]
    fn names_round_trip() {
        for k in ActivationKind::ALL {
            assert_eq!(k.name().parse::<ActivationKind>().unwrap(), k);
        }
        assert!("Sigmoid".parse::<ActivationKind>().is_err());
    }

    #[test]
    fn init_parameter_table() {
        let relu = ActivationState::<f32>::new(Relu, 16).unwrap();
        assert_eq!(relu.param_count(), 0);
        assert!(relu.params().is_empty());

        let melu = ActivationState::<f32>::new(Melu4, 8).unwrap();
        assert_eq!(melu.params().len(), 32);
        assert_eq!(melu.params().shape(), Shape::new(1, 1, 4, 8));
        assert!(melu.params().data()[..8].iter().all(|&v| v == 0.25));
        assert!(melu.params().data()[8..].iter().all(|&v| v == 0.0));

        let swish = ActivationState::<f32>::new(SwishLearnable, 4).unwrap();
        assert_eq!(swish.params().data(), &[1.0; 4]);

        let prelu = ActivationState::<f32>::new(Prelu, 3).unwrap();
        assert_eq!(prelu.params().data(), &[0.25; 3]);

        let aplu = ActivationState::<f32>::new(Aplu, 2).unwrap();
        assert_eq!(aplu.consts().hinges, vec![-1.0, 0.0, 1.0]);
        assert!(aplu.params().data().iter().all(|&v| v == 0.0));

        let melu8 = ActivationState::<f32>::new(Melu8, 1).unwrap();
        assert_eq!(melu8.consts().hats.len(), 7);
        assert_eq!(melu8.consts().hats[6], (1.75, 0.25));

        assert!(ActivationState::<f32>::new(Relu, 0).is_err());
        for k in ActivationKind::ALL {
            let st = ActivationState::<f64>::new(k, 5).unwrap();
            assert_eq!(st.param_count(), k.param_count(), "{k}");
        }
    }

    #[test]
    fn reference_values() {
        assert_eq!(scalar(Relu, -1.0), 0.0);
        assert_eq!(scalar(Relu, 2.0), 2.0);
        assert_eq!(scalar(Relu, 0.0), 0.0);
        // 1 * sigmoid(1) = 1 / (1 + e^-1)
        assert!((scalar(SwishFixed, 1.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert_eq!(scalar(MishFixed, 0.0), 0.0);
        assert_eq!(scalar(LeakyRelu, -2.0), -0.02);
        assert!((scalar(Elu, -1.0) - ((-1f64).exp() - 1.0)).abs() < 1e-15);
        assert_eq!(scalar(Prelu, -2.0), -0.5);
        // PDELU at t = 0.9: (1 + 0.1 x)^10 - 1
        assert!((scalar(Pdelu, -1.0) - (0.9f64.powi(10) - 1.0)).abs() < 1e-12);
        assert_eq!(scalar(Pdelu, -20.0), -1.0);
        // SoftRootSign(1) = 1 / (1/2 + e^{-1/3})
        assert!((scalar(SoftRootSign, 1.0) - 1.0 / (0.5 + (-1.0f64 / 3.0).exp())).abs() < 1e-15);
        assert!((scalar(SoftLearnable, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(scalar(Srelu, -3.0), 0.0);
        assert_eq!(scalar(Srelu, 0.5), 0.5);
        assert_eq!(scalar(Srelu, 4.0), 4.0);
    }

    #[test]
    fn melu_hat_shapes() {
        let mut st = ActivationState::<f64>::new(Melu4, 1).unwrap();
        // Switch on the widest hat only: centre 1, half-width 1.
        st.params_mut().data_mut()[1] = 1.0;
        let p = st.channel_params(0);
        assert_eq!(st.eval(&p, 1.0), 1.0 + 1.0);
        assert_eq!(st.eval(&p, 0.5), 0.5 + 0.5);
        assert_eq!(st.eval(&p, 2.5), 2.5);

        let mut g = ActivationState::<f64>::new(Galu4, 1).unwrap();
        g.params_mut().data_mut()[1] = 1.0;
        let p = g.channel_params(0);
        // Negative lobe centred at a + 2l = 3.
        assert_eq!(g.eval(&p, 3.0), 3.0 - 1.0);
        assert_eq!(g.eval(&p, 1.0), 1.0 + 1.0);
        assert_eq!(g.eval(&p, 2.0), 2.0);
    }

    #[test]
    fn backward_examples() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 2.0, -2.0]).unwrap();
        let up = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 3), vec![5.0, 7.0, 1.0]).unwrap();
        let relu = ActivationState::<f64>::new(Relu, 1).unwrap();
        let (dx, dp) = relu.backward(&x, &up).unwrap();
        assert_eq!(dx.data(), &[0.0, 7.0, 0.0]);
        assert!(dp.is_empty());

        let prelu = ActivationState::<f64>::new(Prelu, 1).unwrap();
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 1), vec![-2.0]).unwrap();
        let up = Tensor::<f64>::full(Shape::new(1, 1, 1, 1), 1.0);
        let (_, dp) = prelu.backward(&x, &up).unwrap();
        assert_eq!(dp.data(), &[-2.0]);

        // Summed over two batch items and positions.
        let x = Tensor::<f64>::full(Shape::new(2, 1, 1, 2), -2.0);
        let up = Tensor::<f64>::full(Shape::new(2, 1, 1, 2), 1.0);
        let (_, dp) = prelu.backward(&x, &up).unwrap();
        assert_eq!(dp.data(), &[-8.0]);
    }

    #[test]
    fn right_derivative_at_zero() {
        let relu = ActivationState::<f64>::new(Relu, 1).unwrap();
        let (d, _) = relu.grad(&relu.channel_params(0), 0.0);
        assert_eq!(d, 1.0);
        let elu = ActivationState::<f64>::new(Elu, 1).unwrap();
        assert_eq!(elu.grad(&elu.channel_params(0), 0.0).0, 1.0);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let st = ActivationState::<f32>::new(Prelu, 4).unwrap();
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 2, 2));
        assert!(st.forward(&x).is_err());
        assert!(st.backward(&x, &x).is_err());
    }

    #[test]
    fn from_params_validates_shape() {
        let st = ActivationState::<f32>::new(SoftRootSign, 3).unwrap();
        let back = ActivationState::from_params(SoftRootSign, 3, st.params().clone()).unwrap();
        assert_eq!(back, st);
        let bad = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 4));
        assert!(ActivationState::from_params(SoftRootSign, 3, bad).is_err());
    }
}
