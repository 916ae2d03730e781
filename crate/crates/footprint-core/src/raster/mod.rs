//! Raster ingestion: tiling large scenes into fixed-size samples with
//! binary building masks, channel normalization, and dataset manifests.

mod io;
mod stats;

pub use io::{ingest_scenes, load_scene, load_tile_image, load_tile_mask, write_tile, TileStore};
pub use stats::{compute_dataset_stats, ChannelAccumulator, DatasetStats};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One large raster scene with its per-pixel class labels.
#[derive(Debug, Clone)]
pub struct RasterScene {
    /// RGB image, shape (H, W, 3).
    pub image: Array3<u8>,
    /// Class ids, shape (H, W).
    pub labels: Array2<u8>,
    /// Ground resolution in meters per pixel, when known.
    pub resolution_m: Option<f64>,
    pub scene_id: String,
}

impl RasterScene {
    pub fn new(
        image: Array3<u8>,
        labels: Array2<u8>,
        resolution_m: Option<f64>,
        scene_id: impl Into<String>,
    ) -> Result<Self> {
        let (h, w, c) = image.dim();
        if c != 3 {
            return Err(Error::invalid("scene image", format!("expected 3 channels, got {c}")));
        }
        if labels.dim() != (h, w) {
            return Err(Error::ShapeMismatch {
                context: "scene image vs labels".into(),
                lhs: vec![h, w],
                rhs: labels.shape().to_vec(),
            });
        }
        if let Some(r) = resolution_m {
            if r <= 0.0 {
                return Err(Error::invalid("resolution_m", format!("{r} is not positive")));
            }
        }
        Ok(Self {
            image,
            labels,
            resolution_m,
            scene_id: scene_id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.image.dim().0
    }

    pub fn width(&self) -> usize {
        self.image.dim().1
    }
}

/// Which split a tile belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid("split", format!("unknown split `{other}`"))),
        }
    }
}

/// Where a tile was cut from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileOrigin {
    pub scene_id: String,
    pub row: usize,
    pub col: usize,
}

/// One image tile plus its binary building mask.
///
/// `image` is channel-first (3, T, T). Values are raw intensities in
/// [0, 255] as produced by [`tile_scene`]; [`NormalizationSpec::normalize`]
/// maps them to normalized floats for model input.
#[derive(Debug, Clone)]
pub struct TileSample {
    pub image: Array3<f32>,
    /// Binary mask, values in {0, 1}; 1 = building.
    pub mask: Array2<u8>,
    pub origin: TileOrigin,
    pub split: Split,
}

impl TileSample {
    pub fn tile_size(&self) -> usize {
        self.image.dim().1
    }

    /// Number of building pixels in the mask.
    pub fn building_pixels(&self) -> usize {
        self.mask.iter().filter(|&&v| v == 1).count()
    }
}

/// Per-channel normalization constants on the [0, 1] intensity scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        // Standard per-channel constants for models pretrained on large
        // natural-image corpora; configurable in the manifest.
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        for (c, &s) in self.std.iter().enumerate() {
            if s <= 0.0 {
                return Err(Error::invalid(
                    "normalization std",
                    format!("channel {c} std {s} must be positive"),
                ));
            }
        }
        Ok(())
    }

    /// `out_c = (in_c / 255 - mean_c) / std_c`, per channel.
    ///
    /// Input is a raw-intensity (3, H, W) array in [0, 255].
    pub fn normalize(&self, image: &Array3<f32>) -> Array3<f32> {
        let mut out = image.clone();
        for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
            let mean = self.mean[c] as f32;
            let std = self.std[c] as f32;
            plane.mapv_inplace(|v| (v / 255.0 - mean) / std);
        }
        out
    }

    /// Inverse of [`Self::normalize`], returning intensities on [0, 1].
    pub fn denormalize(&self, image: &Array3<f32>) -> Array3<f32> {
        let mut out = image.clone();
        for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
            let mean = self.mean[c] as f32;
            let std = self.std[c] as f32;
            plane.mapv_inplace(|v| v * std + mean);
        }
        out
    }
}

/// `output[i,j] = 1` iff `labels[i,j]` is one of `building_ids`.
/// Unknown ids map to 0.
pub fn binarize_labels(labels: &Array2<u8>, building_ids: &BTreeSet<u8>) -> Array2<u8> {
    labels.mapv(|id| u8::from(building_ids.contains(&id)))
}

/// Grid offsets along one axis: pure striding, with the last window
/// clamped to the edge so every pixel is covered (duplicate coverage
/// allowed when stride does not divide the extent).
pub fn clamped_offsets(extent: usize, tile_size: usize, stride: usize) -> Vec<usize> {
    debug_assert!(tile_size <= extent && stride >= 1);
    let last = extent - tile_size;
    let mut offsets: Vec<usize> = (0..=last).step_by(stride).collect();
    if *offsets.last().expect("at least offset 0") != last {
        offsets.push(last);
    }
    offsets
}

/// Cuts a scene into tiles on a stride grid, binarizing labels via
/// `building_ids`. Tile pixels are bit-identical to the source window.
pub fn tile_scene(
    scene: &RasterScene,
    tile_size: usize,
    stride: usize,
    building_ids: &BTreeSet<u8>,
) -> Result<Vec<TileSample>> {
    let (h, w) = (scene.height(), scene.width());
    if tile_size == 0 || stride == 0 {
        return Err(Error::invalid("tiling", "tile_size and stride must be >= 1"));
    }
    if tile_size > h || tile_size > w {
        return Err(Error::SceneTooSmall {
            scene_id: scene.scene_id.clone(),
            height: h,
            width: w,
            tile_size,
        });
    }

    let binary = binarize_labels(&scene.labels, building_ids);
    let rows = clamped_offsets(h, tile_size, stride);
    let cols = clamped_offsets(w, tile_size, stride);

    let mut tiles = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            let mut image = Array3::<f32>::zeros((3, tile_size, tile_size));
            for ch in 0..3 {
                for i in 0..tile_size {
                    for j in 0..tile_size {
                        image[(ch, i, j)] = scene.image[(r + i, c + j, ch)] as f32;
                    }
                }
            }
            let mask = binary.slice(ndarray::s![r..r + tile_size, c..c + tile_size]).to_owned();
            tiles.push(TileSample {
                image,
                mask,
                origin: TileOrigin {
                    scene_id: scene.scene_id.clone(),
                    row: r,
                    col: c,
                },
                split: Split::Train,
            });
        }
    }
    Ok(tiles)
}

/// One tile's entry in the dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileRecord {
    /// Image PNG path, relative to the manifest directory.
    pub image: PathBuf,
    /// Mask PNG path, relative to the manifest directory.
    pub mask: PathBuf,
    pub origin: TileOrigin,
    pub split: Split,
}

/// On-disk dataset description: tile records, tile size, normalization
/// constants, and the class-id collapse applied at ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tiles: Vec<TileRecord>,
    pub tile_size: usize,
    pub normalization: NormalizationSpec,
    /// class-id -> "building" | "not-building"
    pub class_map: BTreeMap<u8, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_m: Option<f64>,
}

impl DatasetManifest {
    pub fn new(tile_size: usize, normalization: NormalizationSpec, building_ids: &BTreeSet<u8>) -> Self {
        let mut class_map = BTreeMap::new();
        for &id in building_ids {
            class_map.insert(id, "building".to_string());
        }
        Self {
            tiles: Vec::new(),
            tile_size,
            normalization,
            class_map,
            resolution_m: None,
        }
    }

    pub fn building_ids(&self) -> BTreeSet<u8> {
        self.class_map
            .iter()
            .filter(|(_, v)| v.as_str() == "building")
            .map(|(&k, _)| k)
            .collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &TileRecord> {
        self.tiles.iter().filter(move |t| t.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Checks invariants: non-empty, referenced files exist relative to
    /// `root`, and no (origin, split) collision places a tile in two splits.
    pub fn validate(&self, root: &Path) -> Result<()> {
        if self.tiles.is_empty() {
            return Err(Error::Empty { what: "manifest".into() });
        }
        self.normalization.validate()?;
        let mut seen = std::collections::HashMap::new();
        for rec in &self.tiles {
            for p in [&rec.image, &rec.mask] {
                let full = root.join(p);
                if !full.exists() {
                    return Err(Error::invalid(
                        "manifest",
                        format!("missing tile file {}", full.display()),
                    ));
                }
            }
            if let Some(prev) = seen.insert(rec.image.clone(), rec.split) {
                if prev != rec.split {
                    return Err(Error::invalid(
                        "manifest",
                        format!("tile {} appears in two splits", rec.image.display()),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
