//! Synthetic desk-scale dataset: bright rectangles ("buildings") on a
//! textured background. Generation is fully seeded, so reruns produce
//! byte-identical tiles and manifests.
//!
//! Two test sets are emitted: a matched one drawn from the training
//! distribution, and a mismatch one where the same content is rendered at
//! twice the apparent object scale (upsample x2, center crop). The
//! mismatch set emulates evaluating on finer-resolution imagery.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::derive_rng;
use crate::error::{Error, Result};
use crate::geom;
use crate::raster::{
    write_tile, DatasetManifest, NormalizationSpec, Split, TileOrigin, TileSample,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyConfig {
    pub train_tiles: usize,
    pub test_tiles: usize,
    pub tile_size: usize,
    pub seed: u64,
    /// Every n-th training tile (per scene) moves to the val split.
    pub val_every: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            train_tiles: 200,
            test_tiles: 50,
            tile_size: 64,
            seed: 7,
            val_every: 10,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_tiles == 0 || self.test_tiles == 0 {
            return Err(Error::invalid("toy dataset", "tile counts must be >= 1"));
        }
        if self.tile_size < 32 {
            return Err(Error::invalid("toy dataset", "tile_size must be >= 32"));
        }
        if self.val_every < 2 {
            return Err(Error::invalid("toy dataset", "val_every must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ToyOutput {
    pub root: PathBuf,
    /// Manifest with train/val splits and the matched test set.
    pub manifest: PathBuf,
    /// Same train/val splits, test split rendered at mismatched scale.
    pub mismatch_manifest: PathBuf,
}

/// Worker-id namespaces for the per-tile random streams, so regenerating
/// one group never shifts another.
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;

fn render_tile(size: usize, rng: &mut impl Rng) -> (Array3<f32>, Array2<u8>) {
    let mut image = Array3::<f32>::zeros((3, size, size));
    let mut mask = Array2::<u8>::zeros((size, size));

    // low-frequency background: a coarse noise grid upsampled to size
    let base: [f32; 3] = [
        rng.gen_range(60.0..110.0),
        rng.gen_range(60.0..110.0),
        rng.gen_range(60.0..110.0),
    ];
    let grid = 5usize;
    let mut coarse = Array2::<f32>::zeros((grid, grid));
    coarse.mapv_inplace(|_| rng.gen_range(-25.0..25.0));
    let texture = geom::resize_bilinear_plane(&coarse, size, size);
    for c in 0..3 {
        for i in 0..size {
            for j in 0..size {
                let jitter = rng.gen_range(-8.0..8.0);
                image[(c, i, j)] = (base[c] + texture[(i, j)] + jitter).clamp(0.0, 255.0);
            }
        }
    }

    let n_rects = rng.gen_range(1..=3);
    for _ in 0..n_rects {
        let rh = rng.gen_range(size / 8..=size / 3);
        let rw = rng.gen_range(size / 8..=size / 3);
        let top = rng.gen_range(0..=size - rh);
        let left = rng.gen_range(0..=size - rw);
        let bright: [f32; 3] = [
            rng.gen_range(170.0..235.0),
            rng.gen_range(170.0..235.0),
            rng.gen_range(170.0..235.0),
        ];
        for i in top..top + rh {
            for j in left..left + rw {
                for c in 0..3 {
                    let jitter = rng.gen_range(-6.0..6.0);
                    image[(c, i, j)] = (bright[c] + jitter).clamp(0.0, 255.0);
                }
                mask[(i, j)] = 1;
            }
        }
    }
    (image, mask)
}

/// Doubles the apparent object scale: upsample x2 and center-crop back to
/// the original size. The mask uses nearest-neighbor so it stays binary.
fn rescale_mismatch(image: &Array3<f32>, mask: &Array2<u8>) -> (Array3<f32>, Array2<u8>) {
    let (_, size, _) = image.dim();
    let up = geom::resize_bilinear_chw(image, size * 2, size * 2);
    let off = size / 2;
    let mut out_img = Array3::<f32>::zeros(image.dim());
    for c in 0..3 {
        for i in 0..size {
            for j in 0..size {
                out_img[(c, i, j)] = up[(c, i + off, j + off)];
            }
        }
    }
    let out_mask = Array2::from_shape_fn((size, size), |(i, j)| mask[((i + off) / 2, (j + off) / 2)]);
    (out_img, out_mask)
}

/// Generates the dataset under `out_dir`, writing `manifest.json` and
/// `mismatch.json` next to the tile store.
pub fn generate(out_dir: &Path, cfg: &ToyConfig) -> Result<ToyOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let normalization = NormalizationSpec::default();
    let building_ids: std::collections::BTreeSet<u8> = [1].into();
    let mut manifest = DatasetManifest::new(cfg.tile_size, normalization.clone(), &building_ids);
    let mut mismatch = DatasetManifest::new(cfg.tile_size, normalization, &building_ids);

    // scenes group tiles so the val split can stay scene-stratified
    let scene_of = |idx: usize| format!("toy-{:03}", idx / 10);
    let mut per_scene: std::collections::BTreeMap<String, usize> = Default::default();
    for idx in 0..cfg.train_tiles {
        let mut rng = derive_rng(cfg.seed, STREAM_TRAIN, idx as u64);
        let (image, mask) = render_tile(cfg.tile_size, &mut rng);
        let scene_id = scene_of(idx);
        let counter = per_scene.entry(scene_id.clone()).or_insert(0);
        let split = if *counter % cfg.val_every == 0 { Split::Val } else { Split::Train };
        *counter += 1;
        let tile = TileSample {
            image,
            mask,
            origin: TileOrigin { scene_id, row: 0, col: (idx % 10) * cfg.tile_size },
            split,
        };
        let record = write_tile(out_dir, &tile)?;
        manifest.tiles.push(record.clone());
        mismatch.tiles.push(record);
    }

    for idx in 0..cfg.test_tiles {
        let mut rng = derive_rng(cfg.seed, STREAM_TEST, idx as u64);
        let (image, mask) = render_tile(cfg.tile_size, &mut rng);
        let scene_id = format!("toy-test-{:03}", idx / 10);
        let origin = TileOrigin { scene_id, row: 0, col: (idx % 10) * cfg.tile_size };
        let matched = TileSample {
            image: image.clone(),
            mask: mask.clone(),
            origin: origin.clone(),
            split: Split::Test,
        };
        manifest.tiles.push(write_tile(out_dir, &matched)?);

        let (m_image, m_mask) = rescale_mismatch(&image, &mask);
        let shifted = TileSample {
            image: m_image,
            mask: m_mask,
            origin: TileOrigin {
                scene_id: origin.scene_id.replace("toy-test", "toy-shift"),
                ..origin
            },
            split: Split::Test,
        };
        mismatch.tiles.push(write_tile(out_dir, &shifted)?);
    }

    let manifest_path = out_dir.join("manifest.json");
    let mismatch_path = out_dir.join("mismatch.json");
    manifest.save(&manifest_path)?;
    mismatch.save(&mismatch_path)?;
    manifest.validate(out_dir)?;
    mismatch.validate(out_dir)?;
    Ok(ToyOutput {
        root: out_dir.to_path_buf(),
        manifest: manifest_path,
        mismatch_manifest: mismatch_path,
    })
}
