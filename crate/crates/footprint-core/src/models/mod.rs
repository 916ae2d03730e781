//! Segmentation networks built from declarative encoder/decoder specs:
//! U-Net++ and DeepLabV3+ with pluggable encoder families, plus the
//! analytic receptive-field calculator.

pub mod bilinear;
mod deeplab;
mod encoder;
pub mod params;
mod receptive;
pub mod spec;
mod unetpp;

pub use deeplab::AsppInfo;
pub use encoder::Encoder;
pub use receptive::{receptive_field, receptive_field_table, LayerConfig, ReceptiveFieldRow};
pub use spec::{DecoderKind, DecoderSpec, EncBlock, EncoderFamily, EncoderSpec, StageSpec};
pub use unetpp::NodeDesc;

use std::path::Path;

use candle_core::{Device, Tensor};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use params::ParamStore;

enum Decoder {
    Unetpp(unetpp::UnetppDecoder),
    Deeplab(deeplab::DeeplabDecoder),
}

/// A built segmentation network. Forward maps a batch B x 3 x T x T to
/// building probabilities B x 1 x T x T via a logistic head.
pub struct SegmentationModel {
    pub encoder_spec: EncoderSpec,
    pub decoder_spec: DecoderSpec,
    encoder: Encoder,
    decoder: Decoder,
    store: ParamStore,
}

/// Spec pair embedded in checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub decoder: DecoderSpec,
}

pub fn build_model(
    enc_spec: &EncoderSpec,
    dec_spec: &DecoderSpec,
    seed: u64,
    device: &Device,
) -> Result<SegmentationModel> {
    let store = ParamStore::seeded(seed, device.clone());
    build_with_store(enc_spec, dec_spec, store)
}

fn build_with_store(
    enc_spec: &EncoderSpec,
    dec_spec: &DecoderSpec,
    store: ParamStore,
) -> Result<SegmentationModel> {
    enc_spec.validate()?;
    dec_spec.validate(enc_spec)?;
    let encoder = Encoder::build(enc_spec, &store)?;
    let decoder = match dec_spec.kind {
        DecoderKind::Unetpp => {
            Decoder::Unetpp(unetpp::UnetppDecoder::build(&store, encoder.channels())?)
        }
        DecoderKind::Deeplabv3plus => {
            Decoder::Deeplab(deeplab::DeeplabDecoder::build(&store, enc_spec, dec_spec)?)
        }
    };
    Ok(SegmentationModel {
        encoder_spec: enc_spec.clone(),
        decoder_spec: dec_spec.clone(),
        encoder,
        decoder,
        store,
    })
}

impl SegmentationModel {
    pub fn total_stride(&self) -> usize {
        self.encoder.total_stride()
    }

    /// Smallest legal input side.
    pub fn min_input(&self) -> usize {
        self.total_stride()
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn all_vars(&self) -> Vec<candle_core::Var> {
        self.store.all_vars()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// U-Net++ grid structure, when applicable.
    pub fn unetpp_graph(&self) -> Option<&[NodeDesc]> {
        match &self.decoder {
            Decoder::Unetpp(d) => Some(d.graph()),
            Decoder::Deeplab(_) => None,
        }
    }

    /// ASPP structure, when applicable.
    pub fn aspp_info(&self) -> Option<AsppInfo> {
        match &self.decoder {
            Decoder::Deeplab(d) => Some(d.aspp_info()),
            Decoder::Unetpp(_) => None,
        }
    }

    fn check_dims(&self, h: usize, w: usize) -> Result<()> {
        let stride = self.total_stride();
        if h % stride != 0 || w % stride != 0 || h == 0 || w == 0 {
            return Err(Error::Indivisible { dims: (h, w), stride });
        }
        Ok(())
    }

    /// Forward pass producing building probabilities in [0, 1].
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let (_b, c, h, w) = batch.dims4()?;
        if c != 3 {
            return Err(Error::invalid("forward", format!("expected 3 channels, got {c}")));
        }
        self.check_dims(h, w)?;
        let features = self.encoder.forward(batch)?;
        let logits = match &self.decoder {
            Decoder::Unetpp(d) => d.forward(&features)?,
            Decoder::Deeplab(d) => d.forward(&features)?,
        };
        Ok(candle_nn::ops::sigmoid(&logits)?)
    }

    /// Per-stage encoder activations for one (3, H, W) image.
    pub fn extract_stage_activations(&self, image: &Array3<f32>) -> Result<Vec<Array3<f32>>> {
        let batch = image_to_batch(image, self.device())?;
        let (_b, _c, h, w) = batch.dims4()?;
        self.check_dims(h, w)?;
        let features = self.encoder.forward(&batch)?;
        features
            .iter()
            .map(|f| {
                let (_b, c, fh, fw) = f.dims4()?;
                let flat: Vec<f32> = f.flatten_all()?.to_vec1()?;
                Ok(Array3::from_shape_vec((c, fh, fw), flat).expect("shape matches"))
            })
            .collect()
    }

    /// Convenience single-image inference: normalized (3, H, W) array in,
    /// (H, W) probability map out.
    pub fn predict_map(&self, image: &Array3<f32>) -> Result<Array2<f32>> {
        let batch = image_to_batch(image, self.device())?;
        let probs = self.forward(&batch)?;
        let (_, _, h, w) = probs.dims4()?;
        let flat: Vec<f32> = probs.flatten_all()?.to_vec1()?;
        Ok(Array2::from_shape_vec((h, w), flat).expect("shape matches"))
    }

    /// Saves spec + parameters (plus caller metadata) as one archive.
    pub fn save_checkpoint(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({
            "model": ModelSpec {
                encoder: self.encoder_spec.clone(),
                decoder: self.decoder_spec.clone(),
            },
            "extra": extra,
        });
        params::save_checkpoint(path, &meta, &self.store)
    }

    /// Loads a checkpoint, rebuilding the graph from the embedded spec and
    /// validating that spec and parameter set agree before use.
    pub fn load_checkpoint(path: &Path, device: &Device) -> Result<(Self, serde_json::Value)> {
        let (meta, store) = params::load_checkpoint(path, device.clone())?;
        let model_spec: ModelSpec = serde_json::from_value(
            meta.get("model")
                .ok_or_else(|| Error::Checkpoint {
                    path: path.into(),
                    why: "missing model spec".into(),
                })?
                .clone(),
        )?;
        let model = build_with_store(&model_spec.encoder, &model_spec.decoder, store)?;
        params::verify_consumed(path, &model.store)?;
        let extra = meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        Ok((model, extra))
    }
}

/// Stacks one (3, H, W) image into a 1 x 3 x H x W tensor.
pub fn image_to_batch(image: &Array3<f32>, device: &Device) -> Result<Tensor> {
    let (c, h, w) = image.dim();
    let data: Vec<f32> = image.iter().copied().collect();
    Ok(Tensor::from_vec(data, (1, c, h, w), device)?)
}

/// Stacks normalized (3, H, W) images into a B x 3 x H x W tensor.
pub fn images_to_batch(images: &[Array3<f32>], device: &Device) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::Empty { what: "batch".into() });
    }
    let (c, h, w) = images[0].dim();
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if img.dim() != (c, h, w) {
            return Err(Error::ShapeMismatch {
                context: "batch images".into(),
                lhs: vec![c, h, w],
                rhs: img.shape().to_vec(),
            });
        }
        data.extend(img.iter().copied());
    }
    Ok(Tensor::from_vec(data, (images.len(), c, h, w), device)?)
}

/// Stacks binary masks into a B x 1 x H x W float tensor.
pub fn masks_to_batch(masks: &[Array2<u8>], device: &Device) -> Result<Tensor> {
    if masks.is_empty() {
        return Err(Error::Empty { what: "mask batch".into() });
    }
    let (h, w) = masks[0].dim();
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        data.extend(m.iter().map(|&v| v as f32));
    }
    Ok(Tensor::from_vec(data, (masks.len(), 1, h, w), device)?)
}

/// Channel-mean rendering of one activation volume, for visualization.
pub fn channel_mean(activation: &Array3<f32>) -> Array2<f32> {
    let (c, h, w) = activation.dim();
    let mut out = Array2::<f32>::zeros((h, w));
    for k in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[(i, j)] += activation[(k, i, j)];
            }
        }
    }
    out.mapv(|v| v / c as f32)
}
