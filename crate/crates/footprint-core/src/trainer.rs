//! Training and evaluation loops: seeded batching, per-sample
//! augmentation, Adam updates, per-epoch history rows, and checkpoint
//! selection by validation mIoU.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_sample, derive_rng, ramp_at, AugmentationPolicy};
use crate::error::{Error, Result};
use crate::losses::{tensor as loss_tensor, LossConfig};
use crate::metrics::{threshold_map, Aggregation, ConfusionCounts, MetricReport};
use crate::models::{images_to_batch, masks_to_batch, SegmentationModel};
use crate::raster::{DatasetManifest, Split, TileRecord, TileStore};
use crate::tta::{tta_predict, ModelInference, TtaPlan};

fn default_batch_size() -> usize {
    8
}
fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_max_epochs() -> usize {
    20
}
fn default_threshold() -> f32 {
    0.5
}

/// Optimizer and loop settings. Defaults follow the reference recipe:
/// Adam at 1e-4, batch 8, up to 20 epochs, best model by validation mIoU.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_epsilon: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Probability cut for mask binarization during validation.
    #[serde(default = "default_threshold")]
    pub threshold: f32,
    /// Optional per-epoch multiplicative decay; off by default.
    #[serde(default)]
    pub lr_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_epsilon: default_adam_eps(),
            weight_decay: 0.0,
            max_epochs: default_max_epochs(),
            seed: 0,
            threshold: default_threshold(),
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("trainer", "batch_size and max_epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("trainer", format!("learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("trainer", "adam betas must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("trainer", format!("threshold {}", self.threshold)));
        }
        if let Some(d) = self.lr_decay {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::invalid("trainer", format!("lr_decay {d} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// One per-epoch history row. `wall_time_s` is the only
/// non-deterministic column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_iou_building: f64,
    pub val_miou: f64,
    pub ramp_scale: f64,
    pub learning_rate: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub rows: Vec<EpochRow>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str =
        "epoch,train_loss,val_loss,val_iou_building,val_miou,ramp_scale,learning_rate,wall_time_s";

    pub fn csv_row(row: &EpochRow) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.6},{:.8},{:.3}",
            row.epoch,
            row.train_loss,
            row.val_loss,
            row.val_iou_building,
            row.val_miou,
            row.ramp_scale,
            row.learning_rate,
            row.wall_time_s
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&Self::csv_row(row));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub best_val_miou: f64,
    pub checkpoint: PathBuf,
    pub history_csv: PathBuf,
}

/// Moves a deterministic fraction of each scene's training tiles into the
/// validation split. Stratifying by scene keeps near-duplicate neighbors
/// of a validation tile out of the training set where possible.
pub fn assign_val_split(manifest: &mut DatasetManifest, fraction: f64) -> Result<usize> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::invalid("val split", format!("fraction {fraction} not in (0, 1)")));
    }
    let every = (1.0 / fraction).round().max(2.0) as usize;
    let mut moved = 0;
    let mut per_scene: std::collections::BTreeMap<String, usize> = Default::default();
    for rec in manifest.tiles.iter_mut().filter(|r| r.split == Split::Train) {
        let counter = per_scene.entry(rec.origin.scene_id.clone()).or_insert(0);
        if *counter % every == 0 {
            rec.split = Split::Val;
            moved += 1;
        }
        *counter += 1;
    }
    if moved == 0 || manifest.split_len(Split::Train) == 0 {
        return Err(Error::invalid("val split", "split left train or val empty"));
    }
    Ok(moved)
}

fn scalar_loss(t: &candle_core::Tensor) -> Result<f64> {
    let v: f32 = t.flatten_all()?.mean(0)?.to_scalar()?;
    Ok(v as f64)
}

fn batch_origins(records: &[&TileRecord]) -> String {
    records
        .iter()
        .map(|r| format!("{}@({},{})", r.origin.scene_id, r.origin.row, r.origin.col))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Runs the full loop and writes `history.csv` plus `best.ckpt` under
/// `out_dir`. The history file is appended and flushed after every epoch
/// so a killed run keeps its completed rows.
pub fn train(
    model: &SegmentationModel,
    store: &TileStore,
    manifest: &DatasetManifest,
    loss_cfg: &LossConfig,
    policy: &AugmentationPolicy,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    policy.validate()?;
    let train_records: Vec<&TileRecord> = manifest.split(Split::Train).collect();
    let val_records: Vec<&TileRecord> = manifest.split(Split::Val).collect();
    if train_records.is_empty() {
        return Err(Error::Empty { what: "train split".into() });
    }
    if val_records.is_empty() {
        return Err(Error::Empty { what: "val split (run assign_val_split first)".into() });
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let history_path = out_dir.join("history.csv");
    let checkpoint_path = out_dir.join("best.ckpt");
    let mut history_file = File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
    writeln!(history_file, "{}", TrainHistory::CSV_HEADER).map_err(|e| Error::io(&history_path, e))?;

    let mut optimizer = AdamW::new(
        model.all_vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_epsilon,
            weight_decay: cfg.weight_decay,
        },
    )?;

    let mut history = TrainHistory::default();
    let mut best_epoch = 0usize;
    let mut best_val_miou = f64::NEG_INFINITY;
    let n_train = train_records.len();

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let lr = match cfg.lr_decay {
            Some(d) => cfg.learning_rate * d.powi(epoch as i32),
            None => cfg.learning_rate,
        };
        optimizer.set_learning_rate(lr);

        let mut order: Vec<usize> = (0..n_train).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(0x5455_4646 ^ (epoch as u64 + 1));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(chunk.len());
            let mut masks = Vec::with_capacity(chunk.len());
            let mut origins = Vec::with_capacity(chunk.len());
            for (pos, &idx) in chunk.iter().enumerate() {
                let record = train_records[idx];
                let sample = store.load(record)?;
                let global = (epoch * n_train + step * cfg.batch_size + pos) as u64;
                let mut rng = derive_rng(cfg.seed, 0, global);
                let augmented = augment_sample(policy, &sample, epoch, &mut rng)?;
                images.push(manifest.normalization.normalize(&augmented.image));
                masks.push(augmented.mask);
                origins.push(record);
            }
            let x = images_to_batch(&images, model.device())?;
            let g = masks_to_batch(&masks, model.device())?;
            let p = model.forward(&x)?;
            let loss = loss_tensor::loss(loss_cfg, &p, &g)?;
            let value = scalar_loss(&loss)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    origins: batch_origins(&origins),
                });
            }
            optimizer.backward_step(&loss)?;
            loss_sum += value;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;

        let (val_loss, val_counts) =
            validation_pass(model, store, manifest, &val_records, loss_cfg, cfg.threshold)?;
        let val_iou_building = val_counts.iou(crate::metrics::CLASS_BUILDING);
        let val_miou = val_counts.miou();

        if val_miou > best_val_miou {
            best_val_miou = val_miou;
            best_epoch = epoch;
            model.save_checkpoint(
                &checkpoint_path,
                serde_json::json!({
                    "epoch": epoch,
                    "val_miou": val_miou,
                    "threshold": cfg.threshold,
                    "normalization": manifest.normalization,
                    "selection": "max-val-miou",
                }),
            )?;
        }

        let row = EpochRow {
            epoch,
            train_loss,
            val_loss,
            val_iou_building,
            val_miou,
            ramp_scale: ramp_at(&policy.schedule, epoch),
            learning_rate: lr,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        writeln!(history_file, "{}", TrainHistory::csv_row(&row))
            .map_err(|e| Error::io(&history_path, e))?;
        history_file.flush().map_err(|e| Error::io(&history_path, e))?;
        history.rows.push(row);
    }

    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_miou,
        checkpoint: checkpoint_path,
        history_csv: history_path,
    })
}

fn validation_pass(
    model: &SegmentationModel,
    store: &TileStore,
    manifest: &DatasetManifest,
    records: &[&TileRecord],
    loss_cfg: &LossConfig,
    threshold: f32,
) -> Result<(f64, ConfusionCounts)> {
    let mut loss_sum = 0.0;
    let mut counts = ConfusionCounts::default();
    for record in records {
        let sample = store.load(record)?;
        let normalized = manifest.normalization.normalize(&sample.image);
        let x = images_to_batch(std::slice::from_ref(&normalized), model.device())?;
        let g = masks_to_batch(std::slice::from_ref(&sample.mask), model.device())?;
        let p = model.forward(&x)?;
        loss_sum += scalar_loss(&loss_tensor::loss(loss_cfg, &p, &g)?)?;
        let (_, _, h, w) = p.dims4()?;
        let flat: Vec<f32> = p.flatten_all()?.to_vec1()?;
        let prob = Array2::from_shape_vec((h, w), flat).expect("shape matches");
        counts.accumulate(&threshold_map(&prob, threshold), &sample.mask)?;
    }
    Ok((loss_sum / records.len() as f64, counts))
}

/// Evaluates one split, optionally through a TTA plan; micro pools pixel
/// counts over the split, macro averages per-tile IoUs.
pub fn evaluate(
    model: &SegmentationModel,
    store: &TileStore,
    manifest: &DatasetManifest,
    split: Split,
    threshold: f32,
    tta: Option<&TtaPlan>,
    aggregation: Aggregation,
    fingerprint: &str,
) -> Result<MetricReport> {
    let records: Vec<&TileRecord> = manifest.split(split).collect();
    if records.is_empty() {
        return Err(Error::Empty { what: format!("{split} split") });
    }
    let inference = ModelInference {
        model,
        normalization: manifest.normalization.clone(),
    };
    let mut pooled = ConfusionCounts::default();
    let mut per_tile = Vec::new();
    for record in &records {
        let sample = store.load(record)?;
        let prob = match tta {
            Some(plan) => tta_predict(&inference, &sample.image, plan)?,
            None => model.predict_map(&manifest.normalization.normalize(&sample.image))?,
        };
        let pred = threshold_map(&prob, threshold);
        match aggregation {
            Aggregation::Micro => pooled.accumulate(&pred, &sample.mask)?,
            Aggregation::Macro => {
                let mut c = ConfusionCounts::default();
                c.accumulate(&pred, &sample.mask)?;
                per_tile.push(c);
            }
        }
    }
    let report = match aggregation {
        Aggregation::Micro => MetricReport::from_counts(pooled, records.len(), fingerprint),
        Aggregation::Macro => MetricReport::from_per_tile(&per_tile, fingerprint)?,
    };
    crate::metrics::validate_report(&report)?;
    Ok(report)
}

/// Repeated Adam steps on one fixed batch; returns the loss value before
/// each step. Used to check that every model/loss pairing can fit a
/// handful of tiles.
pub fn overfit_steps(
    model: &SegmentationModel,
    images: &[Array3<f32>],
    masks: &[Array2<u8>],
    loss_cfg: &LossConfig,
    learning_rate: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    loss_cfg.validate()?;
    let x = images_to_batch(images, model.device())?;
    let g = masks_to_batch(masks, model.device())?;
    let mut optimizer = AdamW::new(
        model.all_vars(),
        ParamsAdamW {
            lr: learning_rate,
            ..Default::default()
        },
    )?;
    let mut curve = Vec::with_capacity(steps);
    for _ in 0..steps {
        let p = model.forward(&x)?;
        let loss = loss_tensor::loss(loss_cfg, &p, &g)?;
        curve.push(scalar_loss(&loss)?);
        optimizer.backward_step(&loss)?;
    }
    Ok(curve)
}
