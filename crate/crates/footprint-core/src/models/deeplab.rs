//! DeepLabV3+ decoder: ASPP over the stride-16 stage plus a low-level
//! skip from the stride-4 stage.

use candle_core::Tensor;

use crate::error::Result;

use super::bilinear;
use super::encoder::Conv2d;
use super::params::ParamStore;
use super::spec::{DecoderSpec, EncoderSpec};

/// Structural summary of the ASPP block, for graph checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AsppInfo {
    pub branches: usize,
    pub concat_channels: usize,
    pub out_channels: usize,
}

pub struct DeeplabDecoder {
    aspp_branches: Vec<Conv2d>,
    aspp_pool: Conv2d,
    aspp_project: Conv2d,
    low_reduce: Conv2d,
    refine1: Conv2d,
    refine2: Conv2d,
    head_out: Conv2d,
    info: AsppInfo,
    /// Encoder stage indices used for the high- and low-level taps.
    high_stage: usize,
    low_stage: usize,
}

impl DeeplabDecoder {
    pub fn build(store: &ParamStore, enc: &EncoderSpec, dec: &DecoderSpec) -> Result<Self> {
        let channels = enc.stage_channels();
        let strides = enc.stage_strides();
        // high-level tap at stride 16, low-level skip at stride 4
        let high_stage = strides.iter().position(|&s| s == 16).expect("stride-16 stage");
        let low_stage = strides.iter().position(|&s| s == 4).expect("stride-4 stage");
        let high_c = channels[high_stage];
        let low_c = channels[low_stage];

        let branch_c = enc.scale(dec.aspp_channels);
        let low_out = enc.scale(dec.low_level_channels);
        let head_c = enc.scale(dec.head_channels);

        let mut aspp_branches = vec![Conv2d::simple(store, "aspp.b0", high_c, branch_c, 1, 1)?];
        for (i, &rate) in dec.atrous_rates.iter().enumerate() {
            aspp_branches.push(Conv2d::build(
                store,
                &format!("aspp.b{}", i + 1),
                high_c,
                branch_c,
                3,
                1,
                rate,
                rate,
                1,
            )?);
        }
        let aspp_pool = Conv2d::simple(store, "aspp.pool", high_c, branch_c, 1, 1)?;
        let branches = aspp_branches.len() + 1;
        let concat_channels = branches * branch_c;
        let aspp_project = Conv2d::simple(store, "aspp.project", concat_channels, branch_c, 1, 1)?;

        let low_reduce = Conv2d::simple(store, "dec.low", low_c, low_out, 1, 1)?;
        let refine1 = Conv2d::simple(store, "dec.refine1", branch_c + low_out, head_c, 3, 1)?;
        let refine2 = Conv2d::simple(store, "dec.refine2", head_c, head_c, 3, 1)?;
        let head_out = Conv2d::simple(store, "head.out", head_c, 1, 1, 1)?;

        Ok(Self {
            aspp_branches,
            aspp_pool,
            aspp_project,
            low_reduce,
            refine1,
            refine2,
            head_out,
            info: AsppInfo {
                branches,
                concat_channels,
                out_channels: branch_c,
            },
            high_stage,
            low_stage,
        })
    }

    pub fn aspp_info(&self) -> AsppInfo {
        self.info
    }

    pub fn forward(&self, features: &[Tensor]) -> Result<Tensor> {
        let high = &features[self.high_stage];
        let low = &features[self.low_stage];
        let (_b, _c, hh, hw) = high.dims4()?;

        let mut branches = Vec::with_capacity(self.info.branches);
        for conv in &self.aspp_branches {
            branches.push(conv.forward(high)?.relu()?);
        }
        // image pooling: global average -> 1x1 conv -> broadcast back
        let pooled = high.mean_keepdim(2)?.mean_keepdim(3)?;
        let pooled = self.aspp_pool.forward(&pooled)?.relu()?;
        branches.push(bilinear::resize(&pooled, hh, hw)?);

        let cat = Tensor::cat(&branches, 1)?;
        let aspp = self.aspp_project.forward(&cat)?.relu()?;

        let (_b, _c, lh, lw) = low.dims4()?;
        let up = bilinear::resize(&aspp, lh, lw)?;
        let low = self.low_reduce.forward(low)?.relu()?;
        let cat = Tensor::cat(&[up, low], 1)?;
        let refined = self.refine2.forward(&self.refine1.forward(&cat)?.relu()?)?.relu()?;

        let up = bilinear::resize(&refined, lh * 4, lw * 4)?;
        self.head_out.forward(&up)
    }
}
