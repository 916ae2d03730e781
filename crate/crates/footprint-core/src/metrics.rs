//! Confusion accumulation and IoU/mIoU computation.
//!
//! Counts are mergeable monoids: accumulation over any tile partition
//! merges to the whole-set counts exactly (integer arithmetic).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLASS_BUILDING: usize = 1;
pub const CLASS_BACKGROUND: usize = 0;

/// Per-class TP/FP/FN/TN pixel tallies for {background, building}.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub background: ClassCounts,
    pub building: ClassCounts,
}

impl ConfusionCounts {
    pub fn class(&self, class: usize) -> &ClassCounts {
        if class == CLASS_BUILDING {
            &self.building
        } else {
            &self.background
        }
    }

    pub fn total_pixels(&self) -> u64 {
        self.building.total()
    }

    /// Adds the per-pixel 2x2 confusion tally of one mask pair.
    pub fn accumulate(&mut self, pred: &Array2<u8>, gt: &Array2<u8>) -> Result<()> {
        if pred.dim() != gt.dim() {
            return Err(Error::ShapeMismatch {
                context: "confusion masks".into(),
                lhs: pred.shape().to_vec(),
                rhs: gt.shape().to_vec(),
            });
        }
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            let p = p > 0;
            let g = g > 0;
            match (p, g) {
                (true, true) => {
                    self.building.tp += 1;
                    self.background.tn += 1;
                }
                (true, false) => {
                    self.building.fp += 1;
                    self.background.fn_ += 1;
                }
                (false, true) => {
                    self.building.fn_ += 1;
                    self.background.fp += 1;
                }
                (false, false) => {
                    self.building.tn += 1;
                    self.background.tp += 1;
                }
            }
        }
        Ok(())
    }

    /// Monoid merge; order-independent.
    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (a, b) in [
            (&mut self.background, &other.background),
            (&mut self.building, &other.building),
        ] {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
            a.tn += b.tn;
        }
    }

    /// Jaccard index `tp / (tp + fp + fn)` for one class. An empty union
    /// (class absent from both prediction and truth) counts as perfect
    /// vacuous agreement: 1.0.
    pub fn iou(&self, class: usize) -> f64 {
        let c = self.class(class);
        let union = c.tp + c.fp + c.fn_;
        if union == 0 {
            1.0
        } else {
            c.tp as f64 / union as f64
        }
    }

    /// Arithmetic mean of the building and background IoU.
    pub fn miou(&self) -> f64 {
        (self.iou(CLASS_BUILDING) + self.iou(CLASS_BACKGROUND)) / 2.0
    }
}

/// How per-tile confusions are aggregated into the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Global pixel counts over the whole split.
    #[default]
    Micro,
    /// Per-image IoU averaged over tiles.
    Macro,
}

/// Evaluation result. `miou` is always the arithmetic mean of the two
/// per-class IoUs; [`validate_report`] enforces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou_building: f64,
    pub iou_background: f64,
    pub miou: f64,
    pub total_pixels: u64,
    pub tiles: usize,
    pub aggregation: Aggregation,
    pub counts: ConfusionCounts,
    /// Hash of the evaluation configuration (threshold, aggregation,
    /// selection policy, TTA plan).
    pub config_fingerprint: String,
}

impl MetricReport {
    pub fn from_counts(
        counts: ConfusionCounts,
        tiles: usize,
        fingerprint: impl Into<String>,
    ) -> Self {
        let iou_building = counts.iou(CLASS_BUILDING);
        let iou_background = counts.iou(CLASS_BACKGROUND);
        Self {
            iou_building,
            iou_background,
            miou: (iou_building + iou_background) / 2.0,
            total_pixels: counts.total_pixels(),
            tiles,
            aggregation: Aggregation::Micro,
            counts,
            config_fingerprint: fingerprint.into(),
        }
    }

    /// Macro aggregation: averages per-tile IoUs instead of pooling pixels.
    pub fn from_per_tile(
        per_tile: &[ConfusionCounts],
        fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if per_tile.is_empty() {
            return Err(Error::Empty { what: "per-tile counts".into() });
        }
        let n = per_tile.len() as f64;
        let iou_building = per_tile.iter().map(|c| c.iou(CLASS_BUILDING)).sum::<f64>() / n;
        let iou_background = per_tile.iter().map(|c| c.iou(CLASS_BACKGROUND)).sum::<f64>() / n;
        let mut pooled = ConfusionCounts::default();
        for c in per_tile {
            pooled.merge(c);
        }
        Ok(Self {
            iou_building,
            iou_background,
            miou: (iou_building + iou_background) / 2.0,
            total_pixels: pooled.total_pixels(),
            tiles: per_tile.len(),
            aggregation: Aggregation::Macro,
            counts: pooled,
            config_fingerprint: fingerprint.into(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One CSV row (with header constant [`MetricReport::CSV_HEADER`]).
    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{},{},{:?},{}",
            self.iou_building,
            self.iou_background,
            self.miou,
            self.total_pixels,
            self.tiles,
            self.aggregation,
            self.config_fingerprint
        )
    }

    pub const CSV_HEADER: &'static str =
        "iou_building,iou_background,miou,total_pixels,tiles,aggregation,config_fingerprint";
}

/// Checks internal consistency: mIoU must equal the mean of the per-class
/// IoUs to 1e-12, and all IoUs must lie in [0, 1].
pub fn validate_report(report: &MetricReport) -> Result<()> {
    for (name, v) in [
        ("iou_building", report.iou_building),
        ("iou_background", report.iou_background),
        ("miou", report.miou),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid("metric report", format!("{name} = {v} outside [0, 1]")));
        }
    }
    let mean = (report.iou_building + report.iou_background) / 2.0;
    if (report.miou - mean).abs() > 1e-12 {
        return Err(Error::invalid(
            "metric report",
            format!("miou {} != mean of class ious {}", report.miou, mean),
        ));
    }
    Ok(())
}

/// Binarizes a probability map at `threshold`.
pub fn threshold_map(prob: &Array2<f32>, threshold: f32) -> Array2<u8> {
    prob.mapv(|v| u8::from(v >= threshold))
}
