//! Synthetic "polyp" images: smooth elliptical bumps on a textured background.

use crate::data::{Dataset, Mask, Sample};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{Shape, Tensor};

pub const MIN_FOREGROUND: f64 = 0.05;
pub const MAX_FOREGROUND: f64 = 0.4;

struct Ellipse {
    cx: f64,
    cy: f64,
    ra: f64,
    rb: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn random(rng: &mut SplitMix64, size: f64) -> Self {
        let theta = rng.uniform(0.0, std::f64::consts::PI);
        Self {
            cx: rng.uniform(0.15, 0.85) * size,
            cy: rng.uniform(0.15, 0.85) * size,
            ra: rng.uniform(0.08, 0.25) * size,
            rb: rng.uniform(0.08, 0.25) * size,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }

    /// Squared normalized radius; inside when < 1.
    fn r2(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.ra;
        let v = (-dx * self.sin + dy * self.cos) / self.rb;
        u * u + v * v
    }
}

fn draw_layout(rng: &mut SplitMix64, size: usize) -> (Vec<Ellipse>, Mask) {
    loop {
        let count = 1 + rng.below(3);
        let blobs: Vec<Ellipse> = (0..count).map(|_| Ellipse::random(rng, size as f64)).collect();
        let mut mask = Mask::zeros(size, size);
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if blobs.iter().any(|e| e.r2(px, py) < 1.0) {
                    mask.data[y * size + x] = 1;
                }
            }
        }
        let f = mask.foreground_fraction();
        if (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&f) {
            return (blobs, mask);
        }
    }
}

fn render(rng: &mut SplitMix64, size: usize, blobs: &[Ellipse]) -> Tensor<f32> {
    let base = [
        rng.uniform(0.55, 0.75),
        rng.uniform(0.25, 0.4),
        rng.uniform(0.2, 0.35),
    ];
    // Low-frequency texture: three random plane waves.
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let freq = rng.uniform(1.0, 4.0) * std::f64::consts::TAU / size as f64;
            let angle = rng.uniform(0.0, std::f64::consts::TAU);
            (freq * angle.cos(), freq * angle.sin(), rng.uniform(0.0, 6.3), rng.uniform(0.02, 0.06))
        })
        .collect();
    let tint = [rng.uniform(0.15, 0.3), rng.uniform(0.1, 0.25), rng.uniform(0.0, 0.15)];
    let light = (rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));

    let mut img = Tensor::zeros(Shape::new(1, 3, size, size));
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let texture: f64 = waves.iter().map(|&(kx, ky, ph, amp)| amp * (kx * px + ky * py + ph).sin()).sum();
            let shade = light.0 * (px / size as f64 - 0.5) + light.1 * (py / size as f64 - 0.5);
            // Brightest blob profile: 0.4 at the rim rising to 1 at the centre.
            let bump = blobs
                .iter()
                .map(|e| e.r2(px, py))
                .filter(|&r2| r2 < 1.0)
                .map(|r2| 0.4 + 0.6 * (1.0 - r2))
                .fold(0.0, f64::max);
            for c in 0..3 {
                let v = base[c] + texture + shade + bump * tint[c] + 0.03 * rng.normal();
                img.set(0, c, y, x, v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    img
}

/// `n` synthetic samples of size `size x size`. Sample `i` is drawn from the
/// stream `derive_seed(seed, i)`; layouts are redrawn until the foreground
/// fraction lies in `[0.05, 0.4]`.
pub fn synth_blobs(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("synthetic dataset needs n >= 1".into()));
    }
    if size < 16 {
        return Err(Error::InvalidArgument(format!("synthetic image size {size} < 16")));
    }
    let samples = (0..n)
        .map(|i| {
            let mut rng = SplitMix64::new(derive_seed(seed, i as u64));
            let (blobs, mask) = draw_layout(&mut rng, size);
            let image = render(&mut rng, size, &blobs);
            Sample::new(format!("blob{i:05}"), image, mask)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, format!("synth_blobs(n={n}, size={size}, seed={seed})"))
}
