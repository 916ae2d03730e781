//! U-Net++ decoder: a dense grid of skip nodes where X(i,j) consumes all
//! X(i,0..j-1) plus the upsampled X(i+1,j-1).

use candle_core::Tensor;

use crate::error::Result;

use super::bilinear;
use super::encoder::Conv2d;
use super::params::ParamStore;

/// Structural record of one grid node, for graph checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeDesc {
    pub level: usize,
    pub depth: usize,
    /// Same-level inputs (level, 0..depth-1).
    pub consumes: Vec<(usize, usize)>,
    /// The node whose upsampled output also feeds this one.
    pub upsampled_from: (usize, usize),
}

pub struct UnetppDecoder {
    /// levels = encoder stage count; node[(i, j)] for j >= 1.
    node_convs: Vec<((usize, usize), Conv2d)>,
    graph: Vec<NodeDesc>,
    head_conv: Conv2d,
    head_out: Conv2d,
    levels: usize,
}

impl UnetppDecoder {
    pub fn build(store: &ParamStore, enc_channels: &[usize]) -> Result<Self> {
        let levels = enc_channels.len();
        let mut node_convs = Vec::new();
        let mut graph = Vec::new();
        for i in 0..levels - 1 {
            for j in 1..levels - i {
                // inputs: j same-level maps of ch[i] each, plus the
                // upsampled (i+1, j-1) map of ch[i+1]
                let in_c = j * enc_channels[i] + enc_channels[i + 1];
                let conv = Conv2d::simple(
                    store,
                    &format!("dec.x{i}_{j}.conv"),
                    in_c,
                    enc_channels[i],
                    3,
                    1,
                )?;
                node_convs.push(((i, j), conv));
                graph.push(NodeDesc {
                    level: i,
                    depth: j,
                    consumes: (0..j).map(|d| (i, d)).collect(),
                    upsampled_from: (i + 1, j - 1),
                });
            }
        }
        let top = enc_channels[0];
        let head_conv = Conv2d::simple(store, "head.refine", top, top, 3, 1)?;
        let head_out = Conv2d::simple(store, "head.out", top, 1, 1, 1)?;
        Ok(Self {
            node_convs,
            graph,
            head_conv,
            head_out,
            levels,
        })
    }

    pub fn graph(&self) -> &[NodeDesc] {
        &self.graph
    }

    fn conv(&self, i: usize, j: usize) -> &Conv2d {
        &self
            .node_convs
            .iter()
            .find(|((a, b), _)| *a == i && *b == j)
            .expect("node conv exists")
            .1
    }

    /// Runs the dense grid; returns building logits at input resolution
    /// minus the final sigmoid (the model applies it).
    pub fn forward(&self, features: &[Tensor]) -> Result<Tensor> {
        let levels = self.levels;
        // grid[i][j] = X(i, j); X(i, 0) is the encoder feature
        let mut grid: Vec<Vec<Tensor>> = features.iter().map(|f| vec![f.clone()]).collect();
        for j in 1..levels {
            for i in 0..levels - j {
                let below = &grid[i + 1][j - 1];
                let (_b, _c, h, w) = grid[i][0].dims4()?;
                let up = bilinear::resize(below, h, w)?;
                let mut inputs: Vec<Tensor> = grid[i][..j].to_vec();
                inputs.push(up);
                let cat = Tensor::cat(&inputs, 1)?;
                let node = self.conv(i, j).forward(&cat)?.relu()?;
                grid[i].push(node);
            }
        }
        let top = grid[0].last().expect("top node");
        let (_b, _c, h, w) = top.dims4()?;
        let up = bilinear::resize(top, h * 2, w * 2)?;
        let refined = self.head_conv.forward(&up)?.relu()?;
        self.head_out.forward(&refined)
    }
}
