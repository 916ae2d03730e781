//! Encoder construction from an `EncoderSpec` and staged forward pass.

use candle_core::Tensor;

use crate::error::Result;

use super::params::ParamStore;
use super::spec::{EncBlock, EncoderSpec};

/// Plain conv layer; parameters live in the store under `name`.
pub(crate) struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
    dilation: usize,
    groups: usize,
}

impl Conv2d {
    pub(crate) fn build(
        store: &ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        groups: usize,
    ) -> Result<Self> {
        let fan_in = (in_c / groups) * kernel * kernel;
        let weight = store.get(
            &format!("{name}.weight"),
            &[out_c, in_c / groups, kernel, kernel],
            fan_in,
        )?;
        let bias = store.get(&format!("{name}.bias"), &[out_c], 0)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            dilation,
            groups,
        })
    }

    pub(crate) fn simple(
        store: &ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        Self::build(store, name, in_c, out_c, kernel, stride, kernel / 2, 1, 1)
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, self.dilation, self.groups)?;
        let bias = self.bias.reshape((1, self.bias.dim(0)?, 1, 1))?;
        Ok(y.broadcast_add(&bias)?)
    }
}

enum EncLayer {
    Conv(Conv2d),
    /// Depthwise + pointwise, ReLU after each.
    Sep { dw: Conv2d, pw: Conv2d },
    /// Zero-padded max pool (inputs are post-ReLU, so zero padding is
    /// equivalent to -inf padding).
    Pool { kernel: usize, stride: usize },
    Res {
        path: Vec<Conv2d>,
        shortcut: Option<Conv2d>,
    },
}

impl EncLayer {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(match self {
            EncLayer::Conv(conv) => conv.forward(x)?.relu()?,
            EncLayer::Sep { dw, pw } => pw.forward(&dw.forward(x)?.relu()?)?.relu()?,
            EncLayer::Pool { kernel, stride } => {
                let pad = kernel / 2;
                let x = if pad > 0 {
                    x.pad_with_zeros(2, pad, pad)?.pad_with_zeros(3, pad, pad)?
                } else {
                    x.clone()
                };
                x.max_pool2d_with_stride(*kernel, *stride)?
            }
            EncLayer::Res { path, shortcut } => {
                let mut y = x.clone();
                for (i, conv) in path.iter().enumerate() {
                    y = conv.forward(&y)?;
                    if i + 1 < path.len() {
                        y = y.relu()?;
                    }
                }
                let skip = match shortcut {
                    Some(conv) => conv.forward(x)?,
                    None => x.clone(),
                };
                (y + skip)?.relu()?
            }
        })
    }
}

pub struct Encoder {
    stages: Vec<Vec<EncLayer>>,
    channels: Vec<usize>,
    strides: Vec<usize>,
}

impl Encoder {
    pub fn build(spec: &EncoderSpec, store: &ParamStore) -> Result<Self> {
        spec.validate()?;
        let mut stages = Vec::with_capacity(spec.stages.len());
        let mut in_c = 3usize;
        for (si, stage) in spec.stages.iter().enumerate() {
            let mut layers = Vec::new();
            for (bi, block) in stage.blocks.iter().enumerate() {
                let name = format!("enc.s{si}.b{bi}");
                let layer = match *block {
                    EncBlock::Conv { out, kernel, stride } => {
                        let out = spec.scale(out);
                        let conv = Conv2d::simple(store, &format!("{name}.conv"), in_c, out, kernel, stride)?;
                        in_c = out;
                        EncLayer::Conv(conv)
                    }
                    EncBlock::SepConv { out, kernel, stride } => {
                        let out = spec.scale(out);
                        let dw = Conv2d::build(
                            store,
                            &format!("{name}.dw"),
                            in_c,
                            in_c,
                            kernel,
                            stride,
                            kernel / 2,
                            1,
                            in_c,
                        )?;
                        let pw = Conv2d::simple(store, &format!("{name}.pw"), in_c, out, 1, 1)?;
                        in_c = out;
                        EncLayer::Sep { dw, pw }
                    }
                    EncBlock::MaxPool { kernel, stride } => EncLayer::Pool { kernel, stride },
                    EncBlock::Residual {
                        mid,
                        out,
                        stride,
                        bottleneck,
                    } => {
                        let mid = spec.scale(mid);
                        let out = spec.scale(out);
                        let path = if bottleneck {
                            vec![
                                Conv2d::simple(store, &format!("{name}.c0"), in_c, mid, 1, stride)?,
                                Conv2d::simple(store, &format!("{name}.c1"), mid, mid, 3, 1)?,
                                Conv2d::simple(store, &format!("{name}.c2"), mid, out, 1, 1)?,
                            ]
                        } else {
                            vec![
                                Conv2d::simple(store, &format!("{name}.c0"), in_c, mid, 3, stride)?,
                                Conv2d::simple(store, &format!("{name}.c1"), mid, out, 3, 1)?,
                            ]
                        };
                        let shortcut = if stride != 1 || in_c != out {
                            Some(Conv2d::simple(store, &format!("{name}.sc"), in_c, out, 1, stride)?)
                        } else {
                            None
                        };
                        in_c = out;
                        EncLayer::Res { path, shortcut }
                    }
                };
                layers.push(layer);
            }
            stages.push(layers);
        }
        Ok(Self {
            stages,
            channels: spec.stage_channels(),
            strides: spec.stage_strides(),
        })
    }

    /// Runs the encoder, returning one feature map per stage.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut features = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for stage in &self.stages {
            for layer in stage {
                cur = layer.forward(&cur)?;
            }
            features.push(cur.clone());
        }
        Ok(features)
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn total_stride(&self) -> usize {
        *self.strides.last().expect("non-empty encoder")
    }
}
