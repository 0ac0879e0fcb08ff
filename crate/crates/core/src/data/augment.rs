use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{Mat, RngStream};

/// A stochastic, row-wise transform producing one view of a batch.
pub trait Augmentation: Send + Sync {
    fn name(&self) -> &str;
    fn apply(&self, x: &Mat, rng: &mut RngStream) -> Result<Mat>;
}

/// Two independent stochastic views of the same rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub v: Mat,
    pub v_prime: Mat,
}

impl ViewPair {
    pub fn swapped(&self) -> ViewPair {
        ViewPair {
            v: self.v_prime.clone(),
            v_prime: self.v.clone(),
        }
    }
}

/// Declarative augmentation choice as read from config.
#[derive(Debug, Clone, PartialEq)]
pub struct AugSpec {
    pub tag: String,
    /// Gaussian jitter standard deviation (`jitter`).
    pub sigma: f64,
    /// Probability of zeroing each coordinate (`jitter`).
    pub mask: f64,
    /// `(channels, height, width)` of flattened CHW images (`crop_flip`).
    pub image: Option<(usize, usize, usize)>,
    /// Zero padding before the random crop (`crop_flip`).
    pub pad: usize,
}

impl Default for AugSpec {
    fn default() -> Self {
        Self {
            tag: "jitter".into(),
            sigma: 0.1,
            mask: 0.0,
            image: None,
            pad: 4,
        }
    }
}

impl AugSpec {
    pub fn identity() -> Self {
        Self {
            sigma: 0.0,
            mask: 0.0,
            ..Self::default()
        }
    }
}

/// Additive Gaussian jitter followed by random coordinate masking.
#[derive(Debug, Clone)]
pub struct JitterMask {
    pub sigma: f64,
    pub mask: f64,
}

impl Augmentation for JitterMask {
    fn name(&self) -> &str {
        "jitter"
    }

    fn apply(&self, x: &Mat, rng: &mut RngStream) -> Result<Mat> {
        let mut out = x.clone();
        for v in out.as_mut_slice() {
            if self.sigma > 0.0 {
                *v += self.sigma * rng.normal();
            }
            if self.mask > 0.0 && rng.bernoulli(self.mask) {
                *v = 0.0;
            }
        }
        Ok(out)
    }
}

/// Random crop from a zero-padded image plus a horizontal flip with probability ½.
#[derive(Debug, Clone)]
pub struct CropFlip {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pad: usize,
}

impl Augmentation for CropFlip {
    fn name(&self) -> &str {
        "crop_flip"
    }

    fn apply(&self, x: &Mat, rng: &mut RngStream) -> Result<Mat> {
        let (c, h, w, pad) = (self.channels, self.height, self.width, self.pad);
        if x.cols() != c * h * w {
            return Err(Error::dim(format!(
                "crop_flip expects {c}x{h}x{w} = {} columns, got {}",
                c * h * w,
                x.cols()
            )));
        }
        let mut out = Mat::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let dy = rng.below(2 * pad + 1) as isize - pad as isize;
            let dx = rng.below(2 * pad + 1) as isize - pad as isize;
            let flip = rng.bernoulli(0.5);
            let src = x.row(r);
            let dst = out.row_mut(r);
            for ch in 0..c {
                for i in 0..h {
                    let si = i as isize + dy;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for j in 0..w {
                        let jj = if flip { w - 1 - j } else { j };
                        let sj = jj as isize + dx;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        dst[(ch * h + i) * w + j] = src[(ch * h + si as usize) * w + sj as usize];
                    }
                }
            }
        }
        Ok(out)
    }
}

type AugFactory = fn(&AugSpec) -> Result<Box<dyn Augmentation>>;

/// Augmentations selectable by tag.
pub struct AugmentationRegistry {
    factories: BTreeMap<String, AugFactory>,
}

impl Default for AugmentationRegistry {
    fn default() -> Self {
        let mut reg = Self {
            factories: BTreeMap::new(),
        };
        reg.register("jitter", |s| {
            if s.sigma < 0.0 || !(0.0..=1.0).contains(&s.mask) {
                return Err(Error::config("ssl.aug", "jitter needs sigma >= 0 and mask in [0, 1]"));
            }
            Ok(Box::new(JitterMask {
                sigma: s.sigma,
                mask: s.mask,
            }))
        });
        reg.register("crop_flip", |s| {
            let (channels, height, width) = s
                .image
                .ok_or_else(|| Error::config("ssl.aug.image", "crop_flip needs image dimensions"))?;
            Ok(Box::new(CropFlip {
                channels,
                height,
                width,
                pad: s.pad,
            }))
        });
        reg
    }
}

impl AugmentationRegistry {
    pub fn register(&mut self, tag: &str, factory: AugFactory) {
        self.factories.insert(tag.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, spec: &AugSpec) -> Result<Box<dyn Augmentation>> {
        let factory = self.factories.get(&spec.tag).ok_or_else(|| {
            Error::config(
                "ssl.aug",
                format!(
                    "unknown augmentation `{}` (known: {})",
                    spec.tag,
                    self.names().collect::<Vec<_>>().join(", ")
                ),
            )
        })?;
        factory(spec)
    }
}

pub fn augment_views(x: &Mat, aug: &AugSpec, rng: &mut RngStream) -> Result<ViewPair> {
    let a = AugmentationRegistry::default().build(aug)?;
    Ok(ViewPair {
        v: a.apply(x, rng)?,
        v_prime: a.apply(x, rng)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch() -> Mat {
        Mat::from_rows(&[[1.0, -2.0, 3.0, 0.5], [0.1, 0.2, 0.3, 0.4]]).unwrap()
    }

    #[test]
    fn identity_augmentation() {
        let x = batch();
        let vp = augment_views(&x, &AugSpec::identity(), &mut RngStream::new(1)).unwrap();
        assert_eq!(vp.v, x);
        assert_eq!(vp.v_prime, x);
    }

    #[test]
    fn full_mask_zeroes_both_views() {
        let spec = AugSpec {
            sigma: 0.3,
            mask: 1.0,
            ..AugSpec::default()
        };
        let vp = augment_views(&batch(), &spec, &mut RngStream::new(1)).unwrap();
        assert!(vp.v.as_slice().iter().all(|&v| v == 0.0));
        assert!(vp.v_prime.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_views_differ() {
        let spec = AugSpec::default();
        let a = augment_views(&batch(), &spec, &mut RngStream::new(3)).unwrap();
        let b = augment_views(&batch(), &spec, &mut RngStream::new(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.v, a.v_prime);
    }

    #[test]
    fn unknown_tag() {
        let spec = AugSpec {
            tag: "rotate".into(),
            ..AugSpec::default()
        };
        assert!(matches!(
            augment_views(&batch(), &spec, &mut RngStream::new(0)),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn crop_flip_without_padding_is_flip_or_identity() {
        let img: Vec<f64> = (0..12).map(f64::from).collect();
        let x = Mat::from_vec(1, 12, img).unwrap();
        let spec = AugSpec {
            tag: "crop_flip".into(),
            image: Some((1, 3, 4)),
            pad: 0,
            ..AugSpec::default()
        };
        let mut rng = RngStream::new(11);
        let flipped: Vec<f64> = (0..3)
            .flat_map(|i| (0..4).rev().map(move |j| (i * 4 + j) as f64))
            .collect();
        for _ in 0..10 {
            let vp = augment_views(&x, &spec, &mut rng).unwrap();
            for v in [&vp.v, &vp.v_prime] {
                assert!(v.as_slice() == x.as_slice() || v.as_slice() == flipped.as_slice());
            }
        }
    }

    #[test]
    fn crop_flip_preserves_shape_and_values() {
        let img: Vec<f64> = (1..=2 * 4 * 4).map(f64::from).collect();
        let x = Mat::from_vec(1, 32, img.clone()).unwrap();
        let spec = AugSpec {
            tag: "crop_flip".into(),
            image: Some((2, 4, 4)),
            pad: 1,
            ..AugSpec::default()
        };
        let vp = augment_views(&x, &spec, &mut RngStream::new(2)).unwrap();
        assert_eq!(vp.v.shape(), (1, 32));
        assert!(vp.v.as_slice().iter().all(|v| *v == 0.0 || img.contains(v)));
    }
}
