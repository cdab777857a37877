//! Region masks, region extraction and complement occlusion.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{self, tag};
use crate::volume::{Atlas, Shape, Volume};

#[derive(Debug, Error)]
pub enum ParcelError {
    #[error("shape mismatch: volume {volume:?}, mask {mask:?}")]
    ShapeMismatch { volume: Shape, mask: Shape },
}

/// Binary voxel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    shape: Shape,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(shape: Shape, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), shape.len(), "mask length must match shape");
        Mask { shape, bits }
    }

    pub fn full(shape: Shape) -> Self {
        Mask::new(shape, vec![true; shape.len()])
    }

    pub fn empty(shape: Shape) -> Self {
        Mask::new(shape, vec![false; shape.len()])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Adds the 6-connected one-voxel shell.
    pub fn dilate(&self) -> Mask {
        let mut out = self.bits.clone();
        for (idx, &b) in self.bits.iter().enumerate() {
            if b {
                for n in self.shape.face_neighbors(idx) {
                    out[n] = true;
                }
            }
        }
        Mask::new(self.shape, out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub region: u32,
    pub mask: Mask,
    pub dilated: Mask,
}

/// One mask per region `1..=R`; background belongs to none.
pub fn one_hot(atlas: &Atlas) -> Vec<RegionMask> {
    (1..=atlas.n_regions() as i32)
        .map(|r| {
            let mask = Mask::new(atlas.shape(), atlas.labels().iter().map(|&l| l == r).collect());
            let dilated = mask.dilate();
            RegionMask {
                region: r as u32,
                mask,
                dilated,
            }
        })
        .collect()
}

/// Amplitude and seed of the fill noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub eta: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(eta: f64, seed: u64) -> Self {
        assert!(eta >= 0.0 && eta.is_finite(), "eta must be finite and >= 0");
        NoiseSpec { eta, seed }
    }

    fn stream(&self, key: NoiseKey, op: u64) -> rand_chacha::ChaCha8Rng {
        seed::rng(seed::derive(self.seed, &[key.subject, key.region as u64, op]))
    }
}

/// Identifies which (subject, region) pair a noise draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey {
    pub subject: u64,
    pub region: u32,
}

impl NoiseKey {
    pub fn new(subject_id: &str, region: u32) -> Self {
        NoiseKey {
            subject: seed::fnv1a(subject_id.as_bytes()),
            region,
        }
    }
}

/// Keep voxels where `keep` is set and replace the rest with `eta * z`.
/// One normal is drawn per replaced voxel, in index order.
fn fill_outside(
    volume: &Volume,
    keep: impl Fn(usize) -> bool,
    eta: f64,
    rng: &mut impl Rng,
) -> Volume {
    let data = volume
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if keep(i) {
                v
            } else if eta == 0.0 {
                0.0
            } else {
                let z: f64 = rng.sample(StandardNormal);
                (eta * z) as f32
            }
        })
        .collect();
    Volume::new(volume.shape(), data).expect("finite fill")
}

fn check(volume: &Volume, mask: &Mask) -> Result<(), ParcelError> {
    if volume.shape() != mask.shape() {
        return Err(ParcelError::ShapeMismatch {
            volume: volume.shape(),
            mask: mask.shape(),
        });
    }
    Ok(())
}

/// `X ⊙ M + η Z ⊙ (1 − M)`: the region is kept, everything else becomes noise.
pub fn extract_region(
    volume: &Volume,
    mask: &Mask,
    noise: &NoiseSpec,
    key: NoiseKey,
) -> Result<Volume, ParcelError> {
    check(volume, mask)?;
    let mut rng = noise.stream(key, tag::EXTRACT);
    Ok(fill_outside(volume, |i| mask.bits[i], noise.eta, &mut rng))
}

/// `X ⊙ (1 − M) + η Z ⊙ M`: the region becomes noise, the rest is kept.
pub fn occlude_region(
    volume: &Volume,
    mask: &Mask,
    noise: &NoiseSpec,
    key: NoiseKey,
) -> Result<Volume, ParcelError> {
    check(volume, mask)?;
    let mut rng = noise.stream(key, tag::OCCLUDE);
    Ok(fill_outside(volume, |i| !mask.bits[i], noise.eta, &mut rng))
}
