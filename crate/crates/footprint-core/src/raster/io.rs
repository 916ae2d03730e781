//! PNG/TIFF scene loading and content-addressed tile storage.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use ndarray::{Array2, Array3};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{RasterScene, Split, TileOrigin, TileRecord, TileSample};

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

/// Loads a scene from an RGB raster (PNG or TIFF) plus a sidecar label
/// image whose gray values are class ids.
pub fn load_scene(
    image_path: &Path,
    labels_path: &Path,
    resolution_m: Option<f64>,
    scene_id: &str,
) -> Result<RasterScene> {
    let rgb = open_image(image_path)?.to_rgb8();
    let labels = open_image(labels_path)?.to_luma8();
    let (w, h) = rgb.dimensions();
    let image = Array3::from_shape_fn((h as usize, w as usize, 3), |(i, j, c)| {
        rgb.get_pixel(j as u32, i as u32)[c]
    });
    let (lw, lh) = labels.dimensions();
    let label_arr = Array2::from_shape_fn((lh as usize, lw as usize), |(i, j)| {
        labels.get_pixel(j as u32, i as u32)[0]
    });
    RasterScene::new(image, label_arr, resolution_m, scene_id)
}

fn rgb_from_tile(image: &Array3<f32>) -> RgbImage {
    let (_, h, w) = image.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| image[(c, y as usize, x as usize)].round().clamp(0.0, 255.0) as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

fn gray_from_mask(mask: &Array2<u8>) -> GrayImage {
    let (h, w) = mask.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask[(y as usize, x as usize)] > 0 { 255 } else { 0 }])
    })
}

/// Loads a tile image PNG back into the raw-intensity (3, H, W) layout.
pub fn load_tile_image(path: &Path) -> Result<Array3<f32>> {
    let rgb = open_image(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(Array3::from_shape_fn((3, h as usize, w as usize), |(c, i, j)| {
        rgb.get_pixel(j as u32, i as u32)[c] as f32
    }))
}

/// Loads a mask PNG; any nonzero gray value counts as building.
pub fn load_tile_mask(path: &Path) -> Result<Array2<u8>> {
    let gray = open_image(path)?.to_luma8();
    let (w, h) = gray.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        u8::from(gray.get_pixel(j as u32, i as u32)[0] > 0)
    }))
}

/// Writes one tile as an image/mask PNG pair under a content-addressed
/// layout (`tiles/<hh>/<hash>.{img,mask}.png`) relative to `root`.
/// Returns the manifest record. Identical pixel content lands at the
/// same path, so re-tiling is idempotent.
pub fn write_tile(root: &Path, tile: &TileSample) -> Result<TileRecord> {
    let rgb = rgb_from_tile(&tile.image);
    let gray = gray_from_mask(&tile.mask);

    let mut hasher = Sha256::new();
    hasher.update(rgb.as_raw());
    hasher.update(gray.as_raw());
    hasher.update(tile.origin.scene_id.as_bytes());
    hasher.update(tile.origin.row.to_le_bytes());
    hasher.update(tile.origin.col.to_le_bytes());
    let hash = hex_prefix(&hasher.finalize(), 20);

    let dir = PathBuf::from("tiles").join(&hash[..2]);
    std::fs::create_dir_all(root.join(&dir)).map_err(|e| Error::io(root.join(&dir), e))?;
    let image_rel = dir.join(format!("{hash}.img.png"));
    let mask_rel = dir.join(format!("{hash}.mask.png"));

    rgb.save(root.join(&image_rel)).map_err(|e| Error::Image {
        path: root.join(&image_rel),
        source: e,
    })?;
    gray.save(root.join(&mask_rel)).map_err(|e| Error::Image {
        path: root.join(&mask_rel),
        source: e,
    })?;

    Ok(TileRecord {
        image: image_rel,
        mask: mask_rel,
        origin: tile.origin.clone(),
        split: tile.split,
    })
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

/// Read access to the tiles referenced by a manifest.
pub struct TileStore {
    root: PathBuf,
}

impl TileStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn load(&self, record: &TileRecord) -> Result<TileSample> {
        let image = load_tile_image(&self.root.join(&record.image))?;
        let mask = load_tile_mask(&self.root.join(&record.mask))?;
        Ok(TileSample {
            image,
            mask,
            origin: TileOrigin {
                scene_id: record.origin.scene_id.clone(),
                row: record.origin.row,
                col: record.origin.col,
            },
            split: record.split,
        })
    }
}

/// Tiles a set of scenes and writes them plus a manifest under `root`.
pub fn ingest_scenes(
    root: &Path,
    scenes: &[RasterScene],
    tile_size: usize,
    stride: usize,
    building_ids: &BTreeSet<u8>,
    normalization: super::NormalizationSpec,
    split: Split,
) -> Result<super::DatasetManifest> {
    let mut manifest = super::DatasetManifest::new(tile_size, normalization, building_ids);
    for scene in scenes {
        let mut tiles = super::tile_scene(scene, tile_size, stride, building_ids)?;
        for tile in &mut tiles {
            tile.split = split;
            manifest.tiles.push(write_tile(root, tile)?);
        }
        manifest.resolution_m = scene.resolution_m;
    }
    Ok(manifest)
}
