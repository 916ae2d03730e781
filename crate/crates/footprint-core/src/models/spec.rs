//! Declarative encoder/decoder descriptions. Models and receptive fields
//! are both computed from these, never from hard-coded graphs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::receptive::LayerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderFamily {
    Vgg,
    Resnet,
    Efficientnet,
    Mobilenet,
}

/// One building block inside an encoder stage. Channel counts are at
/// width multiplier 1.0; they scale at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "block")]
pub enum EncBlock {
    /// 2D convolution + ReLU.
    Conv { out: usize, kernel: usize, stride: usize },
    /// Depthwise (kernel, stride) + pointwise 1x1, each followed by ReLU.
    SepConv { out: usize, kernel: usize, stride: usize },
    /// Max pooling.
    MaxPool { kernel: usize, stride: usize },
    /// Residual block; `bottleneck` selects 1x1-3x3-1x1 (stride on the
    /// first 1x1) over 3x3-3x3. A projection shortcut appears whenever
    /// stride > 1 or channels change.
    Residual {
        mid: usize,
        out: usize,
        stride: usize,
        bottleneck: bool,
    },
}

impl EncBlock {
    fn stride(&self) -> usize {
        match *self {
            EncBlock::Conv { stride, .. }
            | EncBlock::SepConv { stride, .. }
            | EncBlock::MaxPool { stride, .. }
            | EncBlock::Residual { stride, .. } => stride,
        }
    }

    fn out_channels(&self, prev: usize) -> usize {
        match *self {
            EncBlock::Conv { out, .. } | EncBlock::SepConv { out, .. } => out,
            EncBlock::MaxPool { .. } => prev,
            EncBlock::Residual { out, .. } => out,
        }
    }

    /// Layers along the maximal path, for the receptive-field recurrence.
    /// Identity/projection shortcuts are ignored by convention.
    fn layer_stack(&self) -> Vec<LayerConfig> {
        match *self {
            EncBlock::Conv { kernel, stride, .. } => vec![LayerConfig::new(kernel, stride)],
            EncBlock::SepConv { kernel, stride, .. } => vec![
                LayerConfig::new(kernel, stride),
                LayerConfig::new(1, 1),
            ],
            EncBlock::MaxPool { kernel, stride } => vec![LayerConfig::new(kernel, stride)],
            EncBlock::Residual {
                stride, bottleneck, ..
            } => {
                if bottleneck {
                    vec![
                        LayerConfig::new(1, stride),
                        LayerConfig::new(3, 1),
                        LayerConfig::new(1, 1),
                    ]
                } else {
                    vec![LayerConfig::new(3, stride), LayerConfig::new(3, 1)]
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub blocks: Vec<EncBlock>,
}

impl StageSpec {
    fn stride(&self) -> usize {
        self.blocks.iter().map(EncBlock::stride).product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub family: EncoderFamily,
    pub variant: String,
    pub width_multiplier: f64,
    pub stages: Vec<StageSpec>,
}

impl EncoderSpec {
    /// Scales a width-1.0 channel count by the width multiplier.
    pub fn scale(&self, channels: usize) -> usize {
        ((channels as f64 * self.width_multiplier).round() as usize).max(1)
    }

    /// Scaled output channels of each stage.
    pub fn stage_channels(&self) -> Vec<usize> {
        let mut prev = 3usize;
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for block in &stage.blocks {
                prev = block.out_channels(prev);
            }
            out.push(self.scale(prev));
        }
        out
    }

    /// Cumulative stride at each stage output.
    pub fn stage_strides(&self) -> Vec<usize> {
        let mut s = 1usize;
        self.stages
            .iter()
            .map(|stage| {
                s *= stage.stride();
                s
            })
            .collect()
    }

    pub fn total_stride(&self) -> usize {
        self.stage_strides().last().copied().unwrap_or(1)
    }

    /// Full forward-ordered layer stack for the receptive-field calculator.
    pub fn layer_stack(&self) -> Vec<LayerConfig> {
        self.stages
            .iter()
            .flat_map(|s| s.blocks.iter().flat_map(EncBlock::layer_stack))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_multiplier <= 0.0 {
            return Err(Error::invalid("encoder", "width_multiplier must be > 0"));
        }
        if self.stages.len() < 4 {
            return Err(Error::invalid(
                "encoder",
                format!("needs >= 4 feature stages, got {}", self.stages.len()),
            ));
        }
        let strides = self.stage_strides();
        for (i, expect) in [2usize, 4, 8, 16, 32].iter().enumerate().take(strides.len()) {
            if strides[i] != *expect {
                return Err(Error::invalid(
                    "encoder",
                    format!("stage {i} stride {} != expected {expect}", strides[i]),
                ));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        format!("{:?}-{}", self.family, self.variant).to_lowercase()
    }

    // ---- presets -------------------------------------------------------

    /// VGG-style encoder: 3x3 conv stacks with pooling between stages.
    /// The 13-conv variant is the paper's VGG-16 feature extractor.
    pub fn vgg16(width_multiplier: f64) -> Self {
        let conv = |out| EncBlock::Conv { out, kernel: 3, stride: 1 };
        let pool = EncBlock::MaxPool { kernel: 2, stride: 2 };
        let stage = |out, n: usize| StageSpec {
            blocks: (0..n).map(|_| conv(out)).chain([pool]).collect(),
        };
        Self {
            family: EncoderFamily::Vgg,
            variant: "16".into(),
            width_multiplier,
            stages: vec![
                stage(64, 2),
                stage(128, 2),
                stage(256, 3),
                stage(512, 3),
                stage(512, 3),
            ],
        }
    }

    /// ResNet encoder; depth selects the block counts and block type.
    pub fn resnet(depth: usize, width_multiplier: f64) -> Result<Self> {
        let (counts, bottleneck): ([usize; 4], bool) = match depth {
            18 => ([2, 2, 2, 2], false),
            34 => ([3, 4, 6, 3], false),
            50 => ([3, 4, 6, 3], true),
            other => {
                return Err(Error::invalid("encoder", format!("unsupported resnet depth {other}")))
            }
        };
        let mut stages = vec![StageSpec {
            blocks: vec![EncBlock::Conv { out: 64, kernel: 7, stride: 2 }],
        }];
        for (i, &n) in counts.iter().enumerate() {
            let mid = 64 << i;
            let out = if bottleneck { mid * 4 } else { mid };
            let mut blocks = Vec::new();
            if i == 0 {
                blocks.push(EncBlock::MaxPool { kernel: 3, stride: 2 });
            }
            for b in 0..n {
                let stride = if i > 0 && b == 0 { 2 } else { 1 };
                blocks.push(EncBlock::Residual { mid, out, stride, bottleneck });
            }
            stages.push(StageSpec { blocks });
        }
        Ok(Self {
            family: EncoderFamily::Resnet,
            variant: depth.to_string(),
            width_multiplier,
            stages,
        })
    }

    /// Family-shaped depthwise-separable encoder with compound
    /// width/depth scaling; `index` selects B0..B5.
    pub fn efficientnet(index: usize, width_multiplier: f64) -> Result<Self> {
        if index > 5 {
            return Err(Error::invalid("encoder", format!("unsupported efficientnet b{index}")));
        }
        // width/depth compound coefficients per variant step
        let width = 1.1f64.powi(index as i32);
        let depth = 1.2f64.powi(index as i32);
        let ch = |base: usize| ((base as f64 * width).round() as usize).max(8);
        let reps = |base: usize| ((base as f64 * depth).ceil() as usize).max(1);
        let sep = |out, kernel, stride| EncBlock::SepConv { out, kernel, stride };
        let stage = |out, kernel, n: usize| StageSpec {
            blocks: (0..n)
                .map(|b| sep(out, kernel, if b == 0 { 2 } else { 1 }))
                .collect(),
        };
        Ok(Self {
            family: EncoderFamily::Efficientnet,
            variant: format!("b{index}"),
            width_multiplier,
            stages: vec![
                StageSpec {
                    blocks: vec![EncBlock::Conv { out: ch(32), kernel: 3, stride: 2 }],
                },
                stage(ch(24), 3, reps(2)),
                stage(ch(40), 5, reps(2)),
                stage(ch(112), 3, reps(3)),
                stage(ch(320), 5, reps(3)),
            ],
        })
    }

    /// Family-shaped MobileNet-like encoder (depthwise-separable blocks).
    pub fn mobilenet_v3(width_multiplier: f64) -> Self {
        let sep = |out, kernel, stride| EncBlock::SepConv { out, kernel, stride };
        Self {
            family: EncoderFamily::Mobilenet,
            variant: "v3".into(),
            width_multiplier,
            stages: vec![
                StageSpec {
                    blocks: vec![EncBlock::Conv { out: 16, kernel: 3, stride: 2 }],
                },
                StageSpec { blocks: vec![sep(24, 3, 2), sep(24, 3, 1)] },
                StageSpec { blocks: vec![sep(40, 5, 2), sep(40, 5, 1)] },
                StageSpec { blocks: vec![sep(112, 3, 2), sep(112, 3, 1)] },
                StageSpec { blocks: vec![sep(160, 5, 2), sep(160, 5, 1)] },
            ],
        }
    }

    /// Preset lookup by name, e.g. `vgg16`, `resnet50`, `efficientnet-b3`,
    /// `mobilenetv3`.
    pub fn preset(name: &str, width_multiplier: f64) -> Result<Self> {
        match name {
            "vgg16" => Ok(Self::vgg16(width_multiplier)),
            "resnet18" => Self::resnet(18, width_multiplier),
            "resnet34" => Self::resnet(34, width_multiplier),
            "resnet50" => Self::resnet(50, width_multiplier),
            "mobilenetv3" => Ok(Self::mobilenet_v3(width_multiplier)),
            other => {
                if let Some(idx) = other.strip_prefix("efficientnet-b") {
                    let idx: usize = idx
                        .parse()
                        .map_err(|_| Error::invalid("encoder", format!("bad variant `{other}`")))?;
                    Self::efficientnet(idx, width_multiplier)
                } else {
                    Err(Error::invalid(
                        "encoder",
                        format!(
                            "unknown encoder `{other}`; expected vgg16, resnet18/34/50, \
                             efficientnet-b0..b5, or mobilenetv3"
                        ),
                    ))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Unetpp,
    Deeplabv3plus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub kind: DecoderKind,
    /// U-Net++: size of the dense skip grid; must equal the encoder
    /// stage count.
    pub nested_depth: usize,
    /// DeepLabV3+: atrous rates of the ASPP branches.
    pub atrous_rates: Vec<usize>,
    /// DeepLabV3+: ASPP branch/projection channels (at width 1.0).
    pub aspp_channels: usize,
    /// DeepLabV3+: channels of the reduced low-level skip.
    pub low_level_channels: usize,
    /// DeepLabV3+: channels of the refinement convs.
    pub head_channels: usize,
}

impl DecoderSpec {
    pub fn unetpp(nested_depth: usize) -> Self {
        Self {
            kind: DecoderKind::Unetpp,
            nested_depth,
            atrous_rates: vec![],
            aspp_channels: 0,
            low_level_channels: 0,
            head_channels: 0,
        }
    }

    pub fn deeplabv3plus() -> Self {
        Self {
            kind: DecoderKind::Deeplabv3plus,
            nested_depth: 0,
            atrous_rates: vec![6, 12, 18],
            aspp_channels: 256,
            low_level_channels: 48,
            head_channels: 256,
        }
    }

    pub fn validate(&self, encoder: &EncoderSpec) -> Result<()> {
        match self.kind {
            DecoderKind::Unetpp => {
                if self.nested_depth != encoder.stages.len() {
                    return Err(Error::invalid(
                        "decoder",
                        format!(
                            "unetpp nested depth {} does not match encoder stage count {}",
                            self.nested_depth,
                            encoder.stages.len()
                        ),
                    ));
                }
            }
            DecoderKind::Deeplabv3plus => {
                if self.atrous_rates.is_empty() {
                    return Err(Error::Empty { what: "atrous rates".into() });
                }
                let mut seen = std::collections::BTreeSet::new();
                for &r in &self.atrous_rates {
                    if r == 0 {
                        return Err(Error::invalid("decoder", "atrous rates must be positive"));
                    }
                    if !seen.insert(r) {
                        return Err(Error::invalid("decoder", format!("duplicate atrous rate {r}")));
                    }
                }
                if self.aspp_channels == 0 || self.head_channels == 0 || self.low_level_channels == 0
                {
                    return Err(Error::invalid("decoder", "channel counts must be positive"));
                }
                if encoder.stages.len() < 4 {
                    return Err(Error::invalid(
                        "decoder",
                        "deeplabv3plus needs encoder stages at strides 4 and 16",
                    ));
                }
            }
        }
        Ok(())
    }
}
