//! Image/mask samples, dataset I/O and the resize and augmentation protocol.

pub mod pnm;
mod synth;
mod transform;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, Shape, Tensor};

pub use synth::synth_blobs;
pub use transform::{augment, hflip, resize_for_train, resize_pred_back, rot90, vflip};

/// Binary `h x w` mask, values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Shape(format!(
                "mask {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!("mask value {v} is not binary")));
        }
        Ok(Self { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    pub fn foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.foreground() as f64 / self.data.len() as f64
    }

    /// `(1, 2, h, w)` one-hot target: channel 0 background, channel 1 foreground.
    pub fn one_hot<F: Scalar>(&self) -> Tensor<F> {
        let mut t = Tensor::zeros(Shape::new(1, 2, self.h, self.w));
        for (i, &v) in self.data.iter().enumerate() {
            let c = v as usize;
            t.plane_mut(0, c)[i] = F::one();
        }
        t
    }
}

/// An image with its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `(1, 3, h, w)` with values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub mask: Mask,
    /// Resolution of the source image, kept through resizing for evaluation.
    pub orig_h: usize,
    pub orig_w: usize,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: Mask) -> Result<Self> {
        let s = image.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::Shape(format!("sample image must be 1x3xHxW, got {s}")));
        }
        if (s.h, s.w) != (mask.h, mask.w) {
            return Err(Error::Shape(format!(
                "image {}x{} and mask {}x{} differ",
                s.h, s.w, mask.h, mask.w
            )));
        }
        let image = image.map(|v| v.clamp(0.0, 1.0));
        Ok(Self {
            id: id.into(),
            orig_h: s.h,
            orig_w: s.w,
            image,
            mask,
        })
    }

    pub fn height(&self) -> usize {
        self.image.shape().h
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate sample id {:?}", s.id)));
            }
        }
        Ok(Self {
            samples,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }
}

/// Seeded Fisher-Yates shuffle, then the first `train_count` samples train and
/// the remaining `test_count` test.
pub fn split(ds: &Dataset, train_count: usize, test_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if train_count + test_count != ds.len() {
        return Err(Error::InvalidArgument(format!(
            "split {train_count} + {test_count} does not cover {} samples",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let pick = |idx: &[usize]| idx.iter().map(|&i| ds.samples[i].clone()).collect::<Vec<_>>();
    Ok((
        Dataset::new(pick(&order[..train_count]), format!("{} [train]", ds.provenance))?,
        Dataset::new(pick(&order[train_count..]), format!("{} [test]", ds.provenance))?,
    ))
}

/// `(train, test)` sizes for `n` samples at `train_fraction`, rounding the
/// training share to the nearest integer.
pub fn split_counts(n: usize, train_fraction: f64) -> (usize, usize) {
    let train = ((n as f64 * train_fraction).round() as usize).min(n);
    (train, n - train)
}

fn image_from_pnm(img: &pnm::PnmImage, path: &Path) -> Result<Tensor<f32>> {
    if img.channels != 3 {
        return Err(Error::Pnm {
            path: path.to_path_buf(),
            msg: "expected a colour (P6/P3) image".into(),
        });
    }
    let (h, w) = (img.height, img.width);
    let scale = 1.0 / img.maxval as f32;
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    for c in 0..3 {
        let plane = t.plane_mut(0, c);
        for (i, v) in plane.iter_mut().enumerate() {
            *v = img.data[i * 3 + c] as f32 * scale;
        }
    }
    Ok(t)
}

fn mask_from_pnm(img: &pnm::PnmImage, path: &Path) -> Result<Mask> {
    if img.channels != 1 {
        return Err(Error::Pnm {
            path: path.to_path_buf(),
            msg: "expected a greyscale (P5/P2) mask".into(),
        });
    }
    // Threshold at 128 on the 0..=255 scale.
    let max = img.maxval as u32;
    let data = img.data.iter().map(|&v| u8::from(v as u32 * 255 >= 128 * max)).collect();
    Mask::new(img.height, img.width, data)
}

pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    image_from_pnm(&pnm::read(path)?, path)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    mask_from_pnm(&pnm::read(path)?, path)
}

pub fn write_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    let mut data = Vec::with_capacity(s.plane() * 3);
    for i in 0..s.plane() {
        for c in 0..3 {
            let v = image.plane(0, c)[i];
            data.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    pnm::write(
        path,
        &pnm::PnmImage {
            width: s.w,
            height: s.h,
            channels: 3,
            maxval: 255,
            data,
        },
    )
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    pnm::write(
        path,
        &pnm::PnmImage {
            width: mask.w,
            height: mask.h,
            channels: 1,
            maxval: 255,
            data: mask.data.iter().map(|&v| v * 255).collect(),
        },
    )
}

fn stems(dir: &Path, ext: &str) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Load `images_dir/<id>.ppm` with `masks_dir/<id>.pgm`, in id order.
pub fn load_dir(images_dir: &Path, masks_dir: &Path) -> Result<Dataset> {
    let images = stems(images_dir, "ppm")?;
    let masks = stems(masks_dir, "pgm")?;
    let mask_ids: HashSet<&str> = masks.iter().map(|(s, _)| s.as_str()).collect();
    let image_ids: HashSet<&str> = images.iter().map(|(s, _)| s.as_str()).collect();
    if let Some((id, _)) = masks.iter().find(|(s, _)| !image_ids.contains(s.as_str())) {
        return Err(Error::MissingFile(images_dir.join(format!("{id}.ppm"))));
    }
    let mut samples = Vec::with_capacity(images.len());
    for (id, image_path) in &images {
        if !mask_ids.contains(id.as_str()) {
            return Err(Error::MissingFile(masks_dir.join(format!("{id}.pgm"))));
        }
        let mask_path = masks_dir.join(format!("{id}.pgm"));
        let image = read_image(image_path)?;
        let mask = read_mask(&mask_path)?;
        samples.push(Sample::new(id.clone(), image, mask).map_err(|e| Error::Pnm {
            path: mask_path.clone(),
            msg: e.to_string(),
        })?);
    }
    Dataset::new(samples, images_dir.display().to_string())
}

/// Write `root/images/<id>.ppm` and `root/masks/<id>.pgm` for every sample.
pub fn save_dir(ds: &Dataset, root: &Path) -> Result<()> {
    let images = root.join("images");
    let masks = root.join("masks");
    for d in [&images, &masks] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for s in &ds.samples {
        write_image(&images.join(format!("{}.ppm", s.id)), &s.image)?;
        write_mask(&masks.join(format!("{}.pgm", s.id)), &s.mask)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(id: &str) -> Sample {
        let img = Tensor::from_fn(Shape::new(1, 3, 2, 3), |i| i as f32 / 17.0);
        Sample::new(id, img, Mask::new(2, 3, vec![0, 1, 1, 0, 0, 1]).unwrap()).unwrap()
    }

    #[test]
    fn mask_validation() {
        assert!(Mask::new(2, 2, vec![0, 1, 2, 0]).is_err());
        assert!(Mask::new(2, 2, vec![0, 1, 0]).is_err());
        let m = Mask::new(1, 4, vec![0, 1, 1, 0]).unwrap();
        assert_eq!(m.foreground_fraction(), 0.5);
        let oh = m.one_hot::<f32>();
        assert_eq!(oh.plane(0, 0), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(oh.plane(0, 1), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn sample_clamps_and_checks_dims() {
        let img = Tensor::full(Shape::new(1, 3, 1, 1), 1.5f32);
        let s = Sample::new("a", img, Mask::zeros(1, 1)).unwrap();
        assert_eq!(s.image.data(), &[1.0; 3]);
        let img = Tensor::full(Shape::new(1, 3, 1, 2), 0.5f32);
        assert!(Sample::new("b", img, Mask::zeros(1, 1)).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Dataset::new(vec![tiny("x"), tiny("x")], "t").is_err());
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let ds = Dataset::new((0..50).map(|i| tiny(&format!("s{i}"))).collect(), "t").unwrap();
        let (a, b) = split_counts(50, 0.88);
        assert_eq!((a, b), (44, 6));
        assert_eq!(split_counts(1000, 0.88), (880, 120));
        let (tr, te) = split(&ds, a, b, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (44, 6));
        let ids: HashSet<_> = tr.iter().chain(te.iter()).map(|s| s.id.clone()).collect();
        assert_eq!(ids.len(), 50);
        let (tr2, _) = split(&ds, a, b, 7).unwrap();
        assert_eq!(tr, tr2);
        let (tr3, _) = split(&ds, a, b, 8).unwrap();
        assert_ne!(tr, tr3);
        assert!(split(&ds, 40, 5, 0).is_err());
    }

    #[test]
    fn mask_threshold() {
        let img = pnm::PnmImage {
            width: 4,
            height: 1,
            channels: 1,
            maxval: 255,
            data: vec![0, 127, 128, 255],
        };
        let m = mask_from_pnm(&img, Path::new("m.pgm")).unwrap();
        assert_eq!(m.data, vec![0, 0, 1, 1]);
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(vec![tiny("a"), tiny("b")], "t").unwrap();
        save_dir(&ds, dir.path()).unwrap();
        let back = load_dir(&dir.path().join("images"), &dir.path().join("masks")).unwrap();
        assert_eq!(back.len(), 2);
        for (x, y) in ds.iter().zip(back.iter()) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.mask, y.mask);
            for (p, q) in x.image.data().iter().zip(y.image.data()) {
                assert!((p - q).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
        // The mask bytes survive a second save bit-exactly.
        let m1 = std::fs::read(dir.path().join("masks/a.pgm")).unwrap();
        write_mask(&dir.path().join("again.pgm"), &back.samples[0].mask).unwrap();
        assert_eq!(m1, std::fs::read(dir.path().join("again.pgm")).unwrap());
    }

    #[test]
    fn missing_mask_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(vec![tiny("a"), tiny("b")], "t").unwrap();
        save_dir(&ds, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("masks/b.pgm")).unwrap();
        let err = load_dir(&dir.path().join("images"), &dir.path().join("masks")).unwrap_err();
        assert!(err.to_string().contains("b.pgm"), "{err}");
    }
}
