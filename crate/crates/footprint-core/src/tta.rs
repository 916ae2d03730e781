//! Test-time augmentation: expands a plan into invertible input variants,
//! runs inference per variant, inverts predictions back to the original
//! geometry, and merges by arithmetic mean.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom;
use crate::raster::NormalizationSpec;

/// Anything that can turn a raw-intensity (3, H, W) tile into a
/// probability map. Implemented for built models via [`ModelInference`].
pub trait TtaModel {
    fn predict_raw(&self, image_raw: &Array3<f32>) -> Result<Array2<f32>>;
    /// Input sides must be multiples of this.
    fn stride(&self) -> usize;
    /// Smallest legal input side.
    fn min_input(&self) -> usize;
}

/// A segmentation model plus the normalization applied before inference.
pub struct ModelInference<'a> {
    pub model: &'a crate::models::SegmentationModel,
    pub normalization: NormalizationSpec,
}

impl TtaModel for ModelInference<'_> {
    fn predict_raw(&self, image_raw: &Array3<f32>) -> Result<Array2<f32>> {
        let normalized = self.normalization.normalize(image_raw);
        self.model.predict_map(&normalized)
    }

    fn stride(&self) -> usize {
        self.model.total_stride()
    }

    fn min_input(&self) -> usize {
        self.model.min_input()
    }
}

/// One point of the plan's cross product. `multiplier` is the only
/// non-geometric axis; its prediction inverse is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtaVariant {
    pub hflip: bool,
    /// Clockwise rotation, one of {0, 90, 180, 270}.
    pub rotation_deg: u16,
    pub scale: f64,
    pub multiplier: f64,
}

impl TtaVariant {
    pub const IDENTITY: TtaVariant = TtaVariant {
        hflip: false,
        rotation_deg: 0,
        scale: 1.0,
        multiplier: 1.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// An ordered set of invertible transform variants plus the merge rule
/// (arithmetic mean of probabilities, threshold applied after merging).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TtaPlan {
    /// `false` = identity; `true` = horizontal flip.
    pub flip_options: Vec<bool>,
    pub rotation_degrees: Vec<u16>,
    pub scale_factors: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub threshold: f64,
}

impl TtaPlan {
    pub fn identity() -> Self {
        Self {
            flip_options: vec![false],
            rotation_degrees: vec![0],
            scale_factors: vec![1.0],
            multipliers: vec![1.0],
            threshold: 0.5,
        }
    }

    /// Multi-scale-only plan (identity flip/rotation/multiplier).
    pub fn multi_scale(scales: &[f64]) -> Self {
        let mut scale_factors = scales.to_vec();
        if !scale_factors.iter().any(|&s| s == 1.0) {
            scale_factors.push(1.0);
        }
        Self {
            scale_factors,
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.flip_options.contains(&false)
            || !self.rotation_degrees.contains(&0)
            || !self.scale_factors.iter().any(|&s| s == 1.0)
            || !self.multipliers.iter().any(|&m| m == 1.0)
        {
            return Err(Error::invalid(
                "tta plan",
                "the identity variant (no flip, 0 deg, scale 1, multiplier 1) must be present",
            ));
        }
        for &d in &self.rotation_degrees {
            if !matches!(d, 0 | 90 | 180 | 270) {
                return Err(Error::invalid("tta plan", format!("rotation {d} not in {{0,90,180,270}}")));
            }
        }
        if self.scale_factors.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("tta plan", "scale factors must be positive"));
        }
        if self.multipliers.iter().any(|&m| m <= 0.0) {
            return Err(Error::invalid("tta plan", "multipliers must be positive"));
        }
        Ok(())
    }

    /// Cross product of the four option sets, in a fixed order so the
    /// floating-point merge is reproducible.
    pub fn variants(&self) -> Vec<TtaVariant> {
        let mut out =
            Vec::with_capacity(self.flip_options.len() * self.rotation_degrees.len() * self.scale_factors.len() * self.multipliers.len());
        for &hflip in &self.flip_options {
            for &rotation_deg in &self.rotation_degrees {
                for &scale in &self.scale_factors {
                    for &multiplier in &self.multipliers {
                        out.push(TtaVariant {
                            hflip,
                            rotation_deg,
                            scale,
                            multiplier,
                        });
                    }
                }
            }
        }
        out
    }

    /// The published post-processing recipes. Identity members (no flip,
    /// 0 deg, scale 1, multiplier 1) are always included, and each row is
    /// read as the cross product of its option sets.
    pub fn preset(name: &str) -> Result<Self> {
        let base = |rot: &[u16], scales: &[f64], mults: &[f64]| TtaPlan {
            flip_options: vec![false, true],
            rotation_degrees: rot.to_vec(),
            scale_factors: scales.to_vec(),
            multipliers: mults.to_vec(),
            threshold: 0.5,
        };
        match name {
            "method1" => Ok(base(&[0, 180], &[1.0], &[0.9, 1.0, 1.1])),
            "method2" => Ok(base(&[0, 180], &[0.25, 0.5, 0.75, 1.0], &[0.9, 1.0, 1.1])),
            "method3" => Ok(base(&[0, 90], &[0.5, 0.75, 1.0], &[1.0])),
            other => Err(Error::UnknownPreset {
                name: other.into(),
                valid: "method1, method2, method3".into(),
            }),
        }
    }
}

fn quarter_turns(deg: u16) -> u8 {
    (deg / 90) as u8
}

/// Rounds `side * scale` to the nearest stride multiple; errors when the
/// result collapses below the encoder minimum.
pub fn rescaled_side(side: usize, scale: f64, stride: usize, min_input: usize) -> Result<usize> {
    let target = side as f64 * scale;
    let rounded = (target / stride as f64).round() as usize * stride;
    if rounded < min_input {
        return Err(Error::RescaleTooSmall {
            scale,
            size: side,
            min: min_input,
        });
    }
    Ok(rounded)
}

/// Applies one variant to a raw-intensity (3, H, W) image: flip and
/// quarter-turn rotation are exact pixel permutations, rescale is
/// bilinear, multiply scales intensities clamped to [0, 255].
pub fn apply_forward(
    image_raw: &Array3<f32>,
    variant: &TtaVariant,
    stride: usize,
    min_input: usize,
) -> Result<Array3<f32>> {
    let mut img = image_raw.clone();
    if variant.hflip {
        img = geom::hflip_chw(&img);
    }
    if variant.rotation_deg != 0 {
        img = geom::rot90k_chw(&img, quarter_turns(variant.rotation_deg));
    }
    if variant.scale != 1.0 {
        let (_, h, w) = img.dim();
        let oh = rescaled_side(h, variant.scale, stride, min_input)?;
        let ow = rescaled_side(w, variant.scale, stride, min_input)?;
        img = geom::resize_bilinear_chw(&img, oh, ow);
    }
    if variant.multiplier != 1.0 {
        let m = variant.multiplier as f32;
        img.mapv_inplace(|v| (v * m).clamp(0.0, 255.0));
    }
    Ok(img)
}

/// Inverts a variant's geometry on a probability map, returning it to
/// (orig_h, orig_w). Multiply is non-geometric: identity on predictions.
pub fn invert_prediction(
    prob: &Array2<f32>,
    variant: &TtaVariant,
    orig_h: usize,
    orig_w: usize,
) -> Array2<f32> {
    let mut map = prob.clone();
    if map.dim() != (orig_h, orig_w) {
        map = geom::resize_bilinear_plane(&map, orig_h, orig_w);
    }
    if variant.rotation_deg != 0 {
        map = geom::rot90k_plane(&map, 4 - quarter_turns(variant.rotation_deg));
    }
    if variant.hflip {
        map = geom::hflip_plane(&map);
    }
    map
}

/// Runs every variant, inverts each prediction, and merges by arithmetic
/// mean in the plan's fixed variant order. An identity-only plan yields
/// bit-exact plain inference.
pub fn tta_predict(
    model: &dyn TtaModel,
    image_raw: &Array3<f32>,
    plan: &TtaPlan,
) -> Result<Array2<f32>> {
    plan.validate()?;
    let (_, h, w) = image_raw.dim();
    let variants = plan.variants();
    let mut sum: Option<Array2<f32>> = None;
    for variant in &variants {
        let transformed = apply_forward(image_raw, variant, model.stride(), model.min_input())?;
        let pred = model.predict_raw(&transformed)?;
        let inverted = invert_prediction(&pred, variant, h, w);
        sum = Some(match sum {
            None => inverted,
            Some(acc) => acc + inverted,
        });
    }
    let sum = sum.expect("plan has at least the identity variant");
    let n = variants.len() as f32;
    if variants.len() == 1 {
        Ok(sum)
    } else {
        Ok(sum.mapv(|v| v / n))
    }
}
