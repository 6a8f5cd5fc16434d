use crate::data::{Mask, Sample};
use crate::ops;
use crate::rng::SplitMix64;
use crate::tensor::{Shape, Tensor};

fn remap(sample: &Sample, out_h: usize, out_w: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Sample {
    let w = sample.width();
    let mut image = Tensor::zeros(Shape::new(1, 3, out_h, out_w));
    let mut mask = Mask::zeros(out_h, out_w);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sy, sx) = src(y, x);
            for c in 0..3 {
                image.set(0, c, y, x, sample.image.at(0, c, sy, sx));
            }
            mask.data[y * out_w + x] = sample.mask.data[sy * w + sx];
        }
    }
    Sample {
        id: sample.id.clone(),
        image,
        mask,
        orig_h: sample.orig_h,
        orig_w: sample.orig_w,
    }
}

/// Mirror left-right.
pub fn hflip(sample: &Sample) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    remap(sample, h, w, |y, x| (y, w - 1 - x))
}

/// Mirror top-bottom.
pub fn vflip(sample: &Sample) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    remap(sample, h, w, |y, x| (h - 1 - y, x))
}

/// Rotate 90 degrees counter-clockwise.
pub fn rot90(sample: &Sample) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    let mut out = remap(sample, w, h, |y, x| (x, w - 1 - y));
    std::mem::swap(&mut out.orig_h, &mut out.orig_w);
    out
}

/// Random flips and quarter turns, identical for image and mask: horizontal
/// flip with p = 1/2, vertical flip with p = 1/2, then `k` quarter turns with
/// `k` uniform in `0..4`, drawn in that order from `SplitMix64::new(seed)`.
pub fn augment(sample: &Sample, seed: u64) -> Sample {
    let mut rng = SplitMix64::new(seed);
    let h = rng.coin();
    let v = rng.coin();
    let k = rng.below(4);
    let mut out = if h { hflip(sample) } else { sample.clone() };
    if v {
        out = vflip(&out);
    }
    for _ in 0..k {
        out = rot90(&out);
    }
    out
}

/// Nearest-neighbour source index for half-pixel centres:
/// `floor((o + 1/2) * in / out)`.
fn nearest(o: usize, in_len: usize, out_len: usize) -> usize {
    (((2 * o + 1) * in_len) / (2 * out_len)).min(in_len - 1)
}

/// Resize to `size x size`: bilinear for the image, nearest for the mask.
/// Original dimensions are kept.
pub fn resize_for_train(sample: &Sample, size: usize) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    if h == size && w == size {
        return sample.clone();
    }
    let image = ops::resize_bilinear(&sample.image, size, size).expect("non-empty sample");
    let mut mask = Mask::zeros(size, size);
    for y in 0..size {
        let sy = nearest(y, h, size);
        for x in 0..size {
            mask.data[y * size + x] = sample.mask.get(sy, nearest(x, w, size));
        }
    }
    Sample {
        id: sample.id.clone(),
        image,
        mask,
        orig_h: sample.orig_h,
        orig_w: sample.orig_w,
    }
}

/// Bilinearly resize a foreground probability map `(1, 1, h, w)` to
/// `orig_h x orig_w` and threshold at 0.5 (ties are foreground).
pub fn resize_pred_back(prob_fg: &Tensor<f32>, orig_h: usize, orig_w: usize) -> Mask {
    let s = prob_fg.shape();
    let resized = if (s.h, s.w) == (orig_h, orig_w) {
        prob_fg.clone()
    } else {
        ops::resize_bilinear(prob_fg, orig_h, orig_w).expect("non-empty map")
    };
    Mask {
        h: orig_h,
        w: orig_w,
        data: resized.plane(0, 0).iter().map(|&p| u8::from(p >= 0.5)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(h: usize, w: usize) -> Sample {
        let img = Tensor::from_fn(Shape::new(1, 3, h, w), |i| i as f32 / (3 * h * w) as f32);
        let mask = Mask::new(h, w, (0..h * w).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        Sample::new("s", img, mask).unwrap()
    }

    #[test]
    fn hflip_reverses_rows() {
        let img = Tensor::from_vec(
            Shape::new(1, 3, 2, 2),
            [1.0, 2.0, 3.0, 4.0].repeat(3).into_iter().map(|v| v / 4.0).collect(),
        )
        .unwrap();
        let s = Sample::new("s", img, Mask::new(2, 2, vec![1, 0, 0, 0]).unwrap()).unwrap();
        let f = hflip(&s);
        assert_eq!(f.image.plane(0, 0), &[0.5, 0.25, 1.0, 0.75]);
        assert_eq!(f.mask.data, vec![0, 1, 0, 0]);
    }

    #[test]
    fn flips_and_rotations_cycle() {
        let s = sample(3, 5);
        assert_eq!(hflip(&hflip(&s)), s);
        assert_eq!(vflip(&vflip(&s)), s);
        let r = rot90(&s);
        assert_eq!((r.height(), r.width()), (5, 3));
        assert_eq!(rot90(&rot90(&rot90(&r))), s);
    }

    #[test]
    fn augment_keeps_correspondence() {
        // Encode each pixel's mask value into the red channel so any
        // misalignment between image and mask shows up.
        let h = 6;
        let mask = Mask::new(h, h, (0..h * h).map(|i| ((i * 7) % 5 == 0) as u8).collect()).unwrap();
        let mut img = Tensor::zeros(Shape::new(1, 3, h, h));
        for i in 0..h * h {
            img.plane_mut(0, 0)[i] = mask.data[i] as f32;
            img.plane_mut(0, 1)[i] = i as f32 / 100.0;
        }
        let s = Sample::new("s", img, mask).unwrap();
        for seed in 0..32 {
            let a = augment(&s, seed);
            for i in 0..h * h {
                assert_eq!(a.image.plane(0, 0)[i], a.mask.data[i] as f32);
            }
            assert_eq!(a, augment(&s, seed));
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let s = sample(8, 8);
        assert_eq!(resize_for_train(&s, 8), s);
        let c = Sample::new("c", Tensor::full(Shape::new(1, 3, 5, 7), 0.3), Mask::zeros(5, 7)).unwrap();
        let r = resize_for_train(&c, 8);
        assert!(r.image.data().iter().all(|&v| v == 0.3));
        assert_eq!((r.orig_h, r.orig_w), (5, 7));
    }

    #[test]
    fn nearest_mask_replication() {
        let img = Tensor::zeros(Shape::new(1, 3, 2, 2));
        let s = Sample::new("m", img, Mask::new(2, 2, vec![1, 0, 0, 0]).unwrap()).unwrap();
        let r = resize_for_train(&s, 4);
        #[rustfmt::skip]
        let expected = vec![
            1, 1, 0, 0,
            1, 1, 0, 0,
            0, 0, 0, 0,
            0, 0, 0, 0,
        ];
        assert_eq!(r.mask.data, expected);
    }

    #[test]
    fn pred_back_threshold() {
        let p = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.2, 0.5, 0.7]).unwrap();
        assert_eq!(resize_pred_back(&p, 1, 3).data, vec![0, 1, 1]);
        let c = Tensor::full(Shape::new(1, 1, 4, 4), 0.7f32);
        let m = resize_pred_back(&c, 13, 9);
        assert_eq!((m.h, m.w), (13, 9));
        assert!(m.data.iter().all(|&v| v == 1));
        let row = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        assert_eq!(resize_pred_back(&row, 1, 4).data, vec![0, 0, 1, 1]);
    }
}
