//! Dice, weighted Dice, Tversky, and focal Tversky losses on soft
//! probability maps, with analytic gradients verified against central
//! finite differences.
//!
//! Σ-terms are summed over the whole input (per batch, not per image);
//! the trainer exposes a per-image averaging flag on top of the tensor
//! variants in [`tensor`].

pub mod tensor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Dice,
    WeightedDice,
    Tversky,
    FocalTversky,
}

/// Parameters for all loss variants. For the Tversky family `alpha +
/// beta = 1` is enforced; `epsilon = 0` is permitted only when the
/// caller guarantees nonzero denominators.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// (w_background, w_building)
    pub class_weights: (f64, f64),
    /// Average per-image losses instead of summing Σ-terms over the batch.
    #[serde(default)]
    pub per_image: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::WeightedDice,
            alpha: 0.5,
            beta: 0.5,
            gamma: 4.0 / 3.0,
            epsilon: 1.0,
            class_weights: (0.3, 0.7),
            per_image: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid("loss", "alpha and beta must lie in [0, 1]"));
        }
        if matches!(self.kind, LossKind::Tversky | LossKind::FocalTversky)
            && (self.alpha + self.beta - 1.0).abs() > 1e-12
        {
            return Err(Error::invalid(
                "loss",
                format!("tversky requires alpha + beta = 1, got {} + {}", self.alpha, self.beta),
            ));
        }
        if self.kind == LossKind::FocalTversky && self.gamma < 1.0 {
            return Err(Error::invalid("loss", format!("gamma {} must be >= 1", self.gamma)));
        }
        if self.epsilon < 0.0 {
            return Err(Error::invalid("loss", "epsilon must be >= 0"));
        }
        let (wb, wf) = self.class_weights;
        if wb < 0.0 || wf < 0.0 || wb + wf == 0.0 {
            return Err(Error::invalid(
                "loss",
                "class weights must be non-negative and not both zero",
            ));
        }
        Ok(())
    }
}

fn check_shapes(p: &[f64], g: &[f64]) -> Result<()> {
    if p.len() != g.len() {
        return Err(Error::ShapeMismatch {
            context: "loss inputs".into(),
            lhs: vec![p.len()],
            rhs: vec![g.len()],
        });
    }
    if p.is_empty() {
        return Err(Error::Empty { what: "loss input".into() });
    }
    if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid("loss", format!("probability {v} outside [0, 1]")));
    }
    Ok(())
}

/// `L = 1 − (2Σpg + ε) / (Σp + Σg + ε)`
pub fn dice_loss(p: &[f64], g: &[f64], epsilon: f64) -> Result<f64> {
    check_shapes(p, g)?;
    let s_pg: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let s_p: f64 = p.iter().sum();
    let s_g: f64 = g.iter().sum();
    Ok(1.0 - (2.0 * s_pg + epsilon) / (s_p + s_g + epsilon))
}

/// Analytic `dL/dp` for [`dice_loss`].
pub fn dice_grad(p: &[f64], g: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    check_shapes(p, g)?;
    let s_pg: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let s_p: f64 = p.iter().sum();
    let s_g: f64 = g.iter().sum();
    let num = 2.0 * s_pg + epsilon;
    let den = s_p + s_g + epsilon;
    Ok(g.iter().map(|&gi| -(2.0 * gi * den - num) / (den * den)).collect())
}

/// `L = [w_building · d(p, g) + w_bg · d(1−p, 1−g)] / (w_building + w_bg)`
/// where `d` is the per-class dice loss.
pub fn weighted_dice_loss(p: &[f64], g: &[f64], weights: (f64, f64), epsilon: f64) -> Result<f64> {
    let (w_bg, w_b) = weights;
    if w_bg < 0.0 || w_b < 0.0 || w_bg + w_b == 0.0 {
        return Err(Error::invalid("weighted dice", "weights non-negative, not both zero"));
    }
    let pc: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
    let gc: Vec<f64> = g.iter().map(|v| 1.0 - v).collect();
    let building = dice_loss(p, g, epsilon)?;
    let background = dice_loss(&pc, &gc, epsilon)?;
    Ok((w_b * building + w_bg * background) / (w_b + w_bg))
}

pub fn weighted_dice_grad(
    p: &[f64],
    g: &[f64],
    weights: (f64, f64),
    epsilon: f64,
) -> Result<Vec<f64>> {
    let (w_bg, w_b) = weights;
    if w_bg < 0.0 || w_b < 0.0 || w_bg + w_b == 0.0 {
        return Err(Error::invalid("weighted dice", "weights non-negative, not both zero"));
    }
    let pc: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
    let gc: Vec<f64> = g.iter().map(|v| 1.0 - v).collect();
    let g_building = dice_grad(p, g, epsilon)?;
    // d/dp of dice(1−p, 1−g) flips sign through the inner derivative
    let g_background = dice_grad(&pc, &gc, epsilon)?;
    let wsum = w_b + w_bg;
    Ok(g_building
        .iter()
        .zip(&g_background)
        .map(|(&gb, &gbg)| (w_b * gb - w_bg * gbg) / wsum)
        .collect())
}

struct TverskyTerms {
    index: f64,
    /// dTI/dp per element
    grad: Vec<f64>,
}

fn tversky_terms(p: &[f64], g: &[f64], alpha: f64, beta: f64, epsilon: f64) -> Result<TverskyTerms> {
    check_shapes(p, g)?;
    if (alpha + beta - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(
            "tversky",
            format!("alpha + beta must equal 1, got {alpha} + {beta}"),
        ));
    }
    let s_pg: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let s_fp: f64 = p.iter().zip(g).map(|(a, b)| a * (1.0 - b)).sum();
    let s_fn: f64 = p.iter().zip(g).map(|(a, b)| (1.0 - a) * b).sum();
    let num = s_pg + epsilon;
    let den = s_pg + alpha * s_fp + beta * s_fn + epsilon;
    let index = num / den;
    let grad = g
        .iter()
        .map(|&gi| {
            let dden = gi + alpha * (1.0 - gi) - beta * gi;
            (gi * den - num * dden) / (den * den)
        })
        .collect();
    Ok(TverskyTerms { index, grad })
}

/// `L = 1 − (Σpg + ε) / (Σpg + α·Σp(1−g) + β·Σ(1−p)g + ε)`
pub fn tversky_loss(p: &[f64], g: &[f64], alpha: f64, beta: f64, epsilon: f64) -> Result<f64> {
    Ok(1.0 - tversky_terms(p, g, alpha, beta, epsilon)?.index)
}

pub fn tversky_grad(p: &[f64], g: &[f64], alpha: f64, beta: f64, epsilon: f64) -> Result<Vec<f64>> {
    Ok(tversky_terms(p, g, alpha, beta, epsilon)?
        .grad
        .into_iter()
        .map(|d| -d)
        .collect())
}

/// `L = (1 − TI)^(1/γ)` with TI the Tversky index.
pub fn focal_tversky_loss(
    p: &[f64],
    g: &[f64],
    alpha: f64,
    beta: f64,
    gamma: f64,
    epsilon: f64,
) -> Result<f64> {
    if gamma < 1.0 {
        return Err(Error::invalid("focal tversky", format!("gamma {gamma} must be >= 1")));
    }
    if gamma == 1.0 {
        // exponent identity: bit-for-bit equal to the plain Tversky loss
        return tversky_loss(p, g, alpha, beta, epsilon);
    }
    let ti = tversky_terms(p, g, alpha, beta, epsilon)?.index;
    Ok((1.0 - ti).max(0.0).powf(1.0 / gamma))
}

pub fn focal_tversky_grad(
    p: &[f64],
    g: &[f64],
    alpha: f64,
    beta: f64,
    gamma: f64,
    epsilon: f64,
) -> Result<Vec<f64>> {
    if gamma < 1.0 {
        return Err(Error::invalid("focal tversky", format!("gamma {gamma} must be >= 1")));
    }
    if gamma == 1.0 {
        return tversky_grad(p, g, alpha, beta, epsilon);
    }
    let terms = tversky_terms(p, g, alpha, beta, epsilon)?;
    let base = (1.0 - terms.index).max(0.0);
    // at TI = 1 the loss sits on its plateau; the one-sided derivative is 0
    let outer = if base == 0.0 {
        0.0
    } else {
        (1.0 / gamma) * base.powf(1.0 / gamma - 1.0)
    };
    Ok(terms.grad.into_iter().map(|d| -outer * d).collect())
}

/// Loss value for an arbitrary config.
pub fn loss_value(config: &LossConfig, p: &[f64], g: &[f64]) -> Result<f64> {
    config.validate()?;
    match config.kind {
        LossKind::Dice => dice_loss(p, g, config.epsilon),
        LossKind::WeightedDice => weighted_dice_loss(p, g, config.class_weights, config.epsilon),
        LossKind::Tversky => tversky_loss(p, g, config.alpha, config.beta, config.epsilon),
        LossKind::FocalTversky => {
            focal_tversky_loss(p, g, config.alpha, config.beta, config.gamma, config.epsilon)
        }
    }
}

/// Analytic `dL/dp` for an arbitrary config.
pub fn loss_grad(config: &LossConfig, p: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    config.validate()?;
    match config.kind {
        LossKind::Dice => dice_grad(p, g, config.epsilon),
        LossKind::WeightedDice => weighted_dice_grad(p, g, config.class_weights, config.epsilon),
        LossKind::Tversky => tversky_grad(p, g, config.alpha, config.beta, config.epsilon),
        LossKind::FocalTversky => {
            focal_tversky_grad(p, g, config.alpha, config.beta, config.gamma, config.epsilon)
        }
    }
}

/// Max relative error of the analytic gradient against central finite
/// differences with step 1e-5:
/// `max_i |analytic_i − numeric_i| / max(1, |numeric_i|)`.
///
/// `p` should sit strictly inside (0, 1) to stay clear of boundary kinks.
pub fn check_gradients(config: &LossConfig, p: &[f64], g: &[f64]) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let analytic = loss_grad(config, p, g)?;
    let mut max_rel = 0.0f64;
    let mut probe = p.to_vec();
    for i in 0..p.len() {
        let orig = probe[i];
        probe[i] = orig + STEP;
        let plus = loss_value(config, &probe, g)?;
        probe[i] = orig - STEP;
        let minus = loss_value(config, &probe, g)?;
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
