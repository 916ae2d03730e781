//! Per-channel statistics over the normalized train tiles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DatasetManifest, Split, TileStore};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Mean of normalized intensities, per channel.
    pub mean: [f64; 3],
    /// Population std of normalized intensities, per channel.
    pub std: [f64; 3],
    pub pixels_per_channel: u64,
    /// Set when any channel has zero variance.
    pub degenerate: bool,
}

/// Accumulates count/sum/sum-of-squares per channel. Associative, so
/// partial accumulators from any tile partition merge to the same result.
#[derive(Debug, Clone, Copy, Default)]
pub struct ChannelAccumulator {
    pub count: u64,
    pub sum: [f64; 3],
    pub sum_sq: [f64; 3],
}

impl ChannelAccumulator {
    pub fn push(&mut self, channel_values: [f64; 3]) {
        self.count += 1;
        for c in 0..3 {
            self.sum[c] += channel_values[c];
            self.sum_sq[c] += channel_values[c] * channel_values[c];
        }
    }

    pub fn merge(&mut self, other: &ChannelAccumulator) {
        self.count += other.count;
        for c in 0..3 {
            self.sum[c] += other.sum[c];
            self.sum_sq[c] += other.sum_sq[c];
        }
    }

    pub fn finish(&self) -> DatasetStats {
        let n = self.count as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        let mut degenerate = false;
        for c in 0..3 {
            mean[c] = self.sum[c] / n;
            let var = (self.sum_sq[c] / n - mean[c] * mean[c]).max(0.0);
            std[c] = var.sqrt();
            if std[c] == 0.0 {
                degenerate = true;
            }
        }
        DatasetStats {
            mean,
            std,
            pixels_per_channel: self.count,
            degenerate,
        }
    }
}

/// Reports per-channel mean/std of the normalized train tiles.
///
/// A zero std marks the dataset degenerate (constant-valued channel);
/// callers should warn rather than train on such data.
pub fn compute_dataset_stats(manifest: &DatasetManifest, root: &Path) -> Result<DatasetStats> {
    if manifest.tiles.is_empty() {
        return Err(Error::Empty { what: "manifest".into() });
    }
    let store = TileStore::new(root);
    let mut acc = ChannelAccumulator::default();
    let mut any = false;
    for record in manifest.split(Split::Train) {
        any = true;
        let tile = store.load(record)?;
        let normalized = manifest.normalization.normalize(&tile.image);
        let (_, h, w) = normalized.dim();
        for i in 0..h {
            for j in 0..w {
                acc.push([
                    normalized[(0, i, j)] as f64,
                    normalized[(1, i, j)] as f64,
                    normalized[(2, i, j)] as f64,
                ]);
            }
        }
    }
    if !any {
        return Err(Error::Empty { what: "train split".into() });
    }
    Ok(acc.finish())
}
