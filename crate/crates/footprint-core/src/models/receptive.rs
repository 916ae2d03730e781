//! Analytic receptive-field calculator over a forward-ordered layer stack.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial hyperparameters of one conv or pooling layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl LayerConfig {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            dilation: 1,
            padding: kernel / 2,
        }
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self.padding = self.effective_kernel() / 2;
        self
    }

    /// `k_eff = k + (k − 1)(d − 1)`
    pub fn effective_kernel(&self) -> usize {
        self.kernel + (self.kernel - 1) * (self.dilation - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel < 1 || self.stride < 1 || self.dilation < 1 {
            return Err(Error::invalid(
                "layer config",
                format!(
                    "kernel {}, stride {}, dilation {} must all be >= 1",
                    self.kernel, self.stride, self.dilation
                ),
            ));
        }
        Ok(())
    }
}

/// One row of the per-layer receptive-field table.
#[derive(Debug, Clone, Copy)]
pub struct ReceptiveFieldRow {
    pub layer: usize,
    pub config: LayerConfig,
    /// Receptive field after this layer, in input pixels.
    pub rf: usize,
    /// Cumulative stride (jump) after this layer.
    pub jump: usize,
}

/// Receptive field of the stack via the recurrence
/// `r <- r + (k_eff − 1)·j; j <- j·s`, starting from `r = j = 1`.
pub fn receptive_field(layers: &[LayerConfig]) -> Result<usize> {
    Ok(receptive_field_table(layers)?
        .last()
        .map(|row| row.rf)
        .expect("non-empty table"))
}

/// Per-layer breakdown of the same recurrence.
pub fn receptive_field_table(layers: &[LayerConfig]) -> Result<Vec<ReceptiveFieldRow>> {
    if layers.is_empty() {
        return Err(Error::Empty { what: "layer stack".into() });
    }
    let mut rf = 1usize;
    let mut jump = 1usize;
    let mut rows = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        layer.validate()?;
        rf += (layer.effective_kernel() - 1) * jump;
        jump *= layer.stride;
        rows.push(ReceptiveFieldRow {
            layer: i,
            config: *layer,
            rf,
            jump,
        });
    }
    Ok(rows)
}
