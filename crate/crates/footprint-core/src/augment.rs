//! Training-time augmentation: per-sample random op selection with an
//! application probability and an intensity schedule that grows with epoch.
//!
//! Geometric ops transform image and mask identically (mask via
//! nearest-neighbor); photometric ops never touch the mask. All ops work
//! on raw [0, 255] intensities, before normalization.

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, AffineMap};
use crate::raster::TileSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Rotate,
    Affine,
    Translate,
    InvertColors,
    RandomContrast,
    RandomBrightness,
    HorizontalFlip,
}

impl AugKind {
    /// True exactly for the ops that move pixels.
    pub fn geometric(self) -> bool {
        matches!(
            self,
            AugKind::Rotate | AugKind::Affine | AugKind::Translate | AugKind::HorizontalFlip
        )
    }
}

/// One augmentation op with its magnitude range in kind-specific units:
/// degrees for rotate, shear factor for affine, fraction of side for
/// translate, additive delta on the [0, 1] scale for brightness,
/// multiplicative delta for contrast. Flip and inversion ignore magnitude.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentationOp {
    pub kind: AugKind,
    pub magnitude_range: (f64, f64),
}

impl AugmentationOp {
    pub fn new(kind: AugKind, lo: f64, hi: f64) -> Result<Self> {
        if lo > hi {
            return Err(Error::invalid(
                "augmentation op",
                format!("magnitude range ({lo}, {hi}) has lo > hi"),
            ));
        }
        Ok(Self {
            kind,
            magnitude_range: (lo, hi),
        })
    }

    pub fn geometric(&self) -> bool {
        self.kind.geometric()
    }

    /// Hull of all ramp-scaled ranges; a magnitude must fall inside it.
    fn magnitude_hull(&self) -> (f64, f64) {
        let (lo, hi) = self.magnitude_range;
        (lo.min(0.0), hi.max(0.0))
    }
}

/// Linear intensity ramp: `floor` at epoch 0, 1.0 at `epoch_max` and beyond.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RampSchedule {
    pub epoch_max: usize,
    pub floor: f64,
}

impl Default for RampSchedule {
    fn default() -> Self {
        Self {
            epoch_max: 20,
            floor: 0.25,
        }
    }
}

impl RampSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor > 0.0 && self.floor <= 1.0) {
            return Err(Error::invalid("ramp", format!("floor {} not in (0, 1]", self.floor)));
        }
        if self.epoch_max == 0 {
            return Err(Error::invalid("ramp", "epoch_max must be >= 1"));
        }
        Ok(())
    }
}

/// Scale in (0, 1] at the given epoch; non-decreasing, 1.0 at `epoch_max`.
pub fn ramp_at(schedule: &RampSchedule, epoch: usize) -> f64 {
    let t = (epoch as f64 / schedule.epoch_max as f64).min(1.0);
    schedule.floor + (1.0 - schedule.floor) * t
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub ops: Vec<AugmentationOp>,
    pub apply_probability: f64,
    pub schedule: RampSchedule,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        let op = |kind, lo, hi| AugmentationOp {
            kind,
            magnitude_range: (lo, hi),
        };
        Self {
            ops: vec![
                op(AugKind::Rotate, -30.0, 30.0),
                op(AugKind::Affine, -0.3, 0.3),
                op(AugKind::Translate, -0.2, 0.2),
                op(AugKind::InvertColors, 0.0, 0.0),
                op(AugKind::RandomContrast, -0.3, 0.3),
                op(AugKind::RandomBrightness, -0.2, 0.2),
                op(AugKind::HorizontalFlip, 0.0, 0.0),
            ],
            apply_probability: 0.5,
            schedule: RampSchedule::default(),
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.ops.is_empty() {
            return Err(Error::Empty { what: "augmentation op list".into() });
        }
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(Error::invalid(
                "apply_probability",
                format!("{} not in [0, 1]", self.apply_probability),
            ));
        }
        for op in &self.ops {
            let (lo, hi) = op.magnitude_range;
            if lo > hi {
                return Err(Error::invalid("augmentation op", format!("range ({lo}, {hi})")));
            }
        }
        self.schedule.validate()
    }
}

/// Outcome of one per-sample draw.
#[derive(Debug, Clone, Copy)]
pub struct SampledOp {
    pub applied: bool,
    pub op: AugmentationOp,
    pub magnitude: f64,
}

/// Draws (applied?, op, magnitude) for one sample. The op is uniform over
/// the list; the magnitude is uniform over the op's range scaled by the
/// epoch ramp. Exactly one op per sample per step, never a chain.
pub fn sample_op(policy: &AugmentationPolicy, epoch: usize, rng: &mut impl Rng) -> SampledOp {
    let applied = rng.gen::<f64>() < policy.apply_probability;
    let idx = rng.gen_range(0..policy.ops.len());
    let op = policy.ops[idx];
    let (lo, hi) = op.magnitude_range;
    let raw = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let magnitude = raw * ramp_at(&policy.schedule, epoch);
    SampledOp { applied, op, magnitude }
}

/// Derives an independent random sub-stream for (seed, worker, sample),
/// so parallel workers stay reproducible.
pub fn derive_rng(seed: u64, worker_id: u64, sample_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker_id.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ sample_index);
    rng
}

fn channel_means(sample: &TileSample) -> Vec<f32> {
    sample
        .image
        .axis_iter(Axis(0))
        .map(|plane| plane.mean().unwrap_or(0.0))
        .collect()
}

/// Applies one op at the given magnitude. Geometric ops keep the image
/// and mask in per-pixel correspondence; photometric ops leave the mask
/// untouched. Output dims always equal input dims.
pub fn apply(sample: &TileSample, op: &AugmentationOp, magnitude: f64) -> Result<TileSample> {
    let (lo, hi) = op.magnitude_hull();
    if magnitude < lo || magnitude > hi {
        return Err(Error::MagnitudeOutOfRange { magnitude, lo, hi });
    }

    let (_, h, w) = sample.image.dim();
    let mut out = sample.clone();
    match op.kind {
        AugKind::HorizontalFlip => {
            out.image = geom::hflip_chw(&sample.image);
            out.mask = geom::hflip_plane(&sample.mask);
        }
        AugKind::Rotate => {
            if magnitude != 0.0 {
                let map = AffineMap::rotation_about_center(magnitude, h, w);
                // exposed corners take the channel-mean color; mask fill is 0
                out.image = geom::warp_image(&sample.image, &map, &channel_means(sample));
                out.mask = geom::warp_mask(&sample.mask, &map);
            }
        }
        AugKind::Affine => {
            if magnitude != 0.0 {
                let map = AffineMap::shear_about_center(magnitude, h, w);
                out.image = geom::warp_image(&sample.image, &map, &channel_means(sample));
                out.mask = geom::warp_mask(&sample.mask, &map);
            }
        }
        AugKind::Translate => {
            if magnitude != 0.0 {
                let map = AffineMap::translation(magnitude * w as f64, magnitude * h as f64);
                out.image = geom::warp_image(&sample.image, &map, &channel_means(sample));
                out.mask = geom::warp_mask(&sample.mask, &map);
            }
        }
        AugKind::InvertColors => {
            out.image.mapv_inplace(|v| 255.0 - v);
        }
        AugKind::RandomBrightness => {
            let delta = (magnitude * 255.0) as f32;
            out.image.mapv_inplace(|v| (v + delta).clamp(0.0, 255.0));
        }
        AugKind::RandomContrast => {
            let gain = (1.0 + magnitude) as f32;
            out.image
                .mapv_inplace(|v| (127.5 + gain * (v - 127.5)).clamp(0.0, 255.0));
        }
    }
    Ok(out)
}

/// Draws and applies the per-sample augmentation in one step.
pub fn augment_sample(
    policy: &AugmentationPolicy,
    sample: &TileSample,
    epoch: usize,
    rng: &mut impl Rng,
) -> Result<TileSample> {
    let drawn = sample_op(policy, epoch, rng);
    if drawn.applied {
        apply(sample, &drawn.op, drawn.magnitude)
    } else {
        Ok(sample.clone())
    }
}
