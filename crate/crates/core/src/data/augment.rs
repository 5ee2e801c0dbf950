//! Stochastic view generation for the self-supervised objective.

use serde::{Deserialize, Serialize};

use super::synthetic::bilinear;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Each view of each image draws every augmentation independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    /// Range of the crop's area fraction; `[1, 1]` disables cropping.
    pub crop_scale: (f64, f64),
    pub flip_prob: f64,
    pub noise_std: f64,
    /// Side of the zeroed square; 0 disables cutout.
    pub cutout: usize,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            crop_scale: (0.6, 1.0),
            // digit-like domains are not mirror symmetric
            flip_prob: 0.0,
            noise_std: 0.05,
            cutout: 4,
        }
    }
}

impl AugmentationPolicy {
    /// Leaves inputs untouched.
    pub fn none() -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            flip_prob: 0.0,
            noise_std: 0.0,
            cutout: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Parameter(format!(
                "crop_scale must satisfy 0 < lo ≤ hi ≤ 1, got ({lo}, {hi})"
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Parameter("flip_prob must lie in [0, 1]".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Parameter("noise_std must be nonnegative".into()));
        }
        Ok(())
    }

    fn augment(&self, img: &[f32], side: usize, rng: &mut Rng) -> Vec<f32> {
        let (lo, hi) = self.crop_scale;
        let mut out = if hi < 1.0 || lo < 1.0 {
            let scale = rng.uniform_in(lo, hi);
            let crop = side as f64 * scale.sqrt();
            let ox = rng.uniform_in(0.0, side as f64 - crop);
            let oy = rng.uniform_in(0.0, side as f64 - crop);
            let step = crop / side as f64;
            let mut o = vec![0.0f32; side * side];
            for y in 0..side {
                for x in 0..side {
                    let sx = ox + (x as f64 + 0.5) * step - 0.5;
                    let sy = oy + (y as f64 + 0.5) * step - 0.5;
                    o[y * side + x] = bilinear(img, side, sx.max(0.0), sy.max(0.0));
                }
            }
            o
        } else {
            img.to_vec()
        };
        if rng.bernoulli(self.flip_prob) {
            for row in out.chunks_exact_mut(side) {
                row.reverse();
            }
        }
        if self.noise_std > 0.0 {
            for p in out.iter_mut() {
                *p += (self.noise_std * rng.normal()) as f32;
            }
        }
        if self.cutout > 0 {
            let c = self.cutout.min(side);
            let cx = rng.below(side - c + 1);
            let cy = rng.below(side - c + 1);
            for y in cy..cy + c {
                out[y * side + cx..y * side + cx + c].fill(0.0);
            }
        }
        for p in out.iter_mut() {
            *p = p.clamp(0.0, 1.0);
        }
        out
    }
}

/// Two independently augmented copies of a batch of flattened square images.
pub fn make_views(
    x: &Tensor<f32>,
    policy: &AugmentationPolicy,
    rng: &mut Rng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (n, dim) = x.dims2("make_views")?;
    let side = (dim as f64).sqrt().round() as usize;
    if side * side != dim {
        return Err(Error::Parameter(format!(
            "views need square images, got {dim} features"
        )));
    }
    let mut a = Vec::with_capacity(n * dim);
    let mut b = Vec::with_capacity(n * dim);
    for i in 0..n {
        a.extend(policy.augment(x.row(i), side, rng));
        b.extend(policy.augment(x.row(i), side, rng));
    }
    Ok((Tensor::new(vec![n, dim], a)?, Tensor::new(vec![n, dim], b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(n: usize) -> Tensor<f32> {
        Rng::new(5).uniform_tensor(&[n, 64], 0.0, 1.0)
    }

    #[test]
    fn zero_strength_is_identity() {
        let x = batch(6);
        let (a, b) = make_views(&x, &AugmentationPolicy::none(), &mut Rng::new(1)).unwrap();
        assert_eq!(a, x);
        assert_eq!(b, x);
    }

    #[test]
    fn full_crop_is_exact() {
        let x = batch(2);
        let p = AugmentationPolicy {
            crop_scale: (1.0, 1.0),
            ..AugmentationPolicy::none()
        };
        assert_eq!(make_views(&x, &p, &mut Rng::new(1)).unwrap().0, x);
    }

    #[test]
    fn output_is_clamped() {
        let x = batch(20);
        let p = AugmentationPolicy {
            noise_std: 2.0,
            flip_prob: 0.5,
            ..Default::default()
        };
        let (a, b) = make_views(&x, &p, &mut Rng::new(2)).unwrap();
        assert_eq!(a.shape(), x.shape());
        for v in a.data().iter().chain(b.data()) {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn rejects_non_square() {
        let x = Tensor::<f32>::zeros(&[2, 10]);
        assert!(make_views(&x, &AugmentationPolicy::default(), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentationPolicy::default().validate().is_ok());
        let p = AugmentationPolicy {
            crop_scale: (0.9, 0.5),
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
