//! Tensor variants of the losses for training; gradients come from the
//! autodiff graph and are cross-checked against the analytic formulas in
//! the parent module.

use candle_core::{Result, Tensor};

use super::{LossConfig, LossKind};

struct Sums {
    s_pg: Tensor,
    s_p: Tensor,
    s_g: Tensor,
    s_fp: Tensor,
    s_fn: Tensor,
}

/// Per-batch sums by default; per-image sums (dims 1..) when `per_image`.
fn sums(p: &Tensor, g: &Tensor, per_image: bool) -> Result<Sums> {
    let reduce = |t: Tensor| -> Result<Tensor> {
        if per_image {
            t.flatten_from(1)?.sum(1)
        } else {
            t.sum_all()
        }
    };
    let pg = (p * g)?;
    let fp = (p * (1.0 - g)?)?;
    let fneg = ((1.0 - p)? * g)?;
    Ok(Sums {
        s_pg: reduce(pg)?,
        s_p: reduce(p.clone())?,
        s_g: reduce(g.clone())?,
        s_fp: reduce(fp)?,
        s_fn: reduce(fneg)?,
    })
}

fn dice_from(s_pg: &Tensor, s_p: &Tensor, s_g: &Tensor, eps: f64) -> Result<Tensor> {
    let num = ((s_pg * 2.0)? + eps)?;
    let den = ((s_p + s_g)? + eps)?;
    (1.0 - (num / den)?)?.broadcast_as(s_pg.shape())
}

fn tversky_index(s: &Sums, alpha: f64, beta: f64, eps: f64) -> Result<Tensor> {
    let num = (&s.s_pg + eps)?;
    let den = (((&s.s_pg + (&s.s_fp * alpha)?)? + (&s.s_fn * beta)?)? + eps)?;
    num / den
}

/// Scalar loss for the given config; differentiable through `p`.
pub fn loss(config: &LossConfig, p: &Tensor, g: &Tensor) -> Result<Tensor> {
    let s = sums(p, g, config.per_image)?;
    let eps = config.epsilon;
    let value = match config.kind {
        LossKind::Dice => dice_from(&s.s_pg, &s.s_p, &s.s_g, eps)?,
        LossKind::WeightedDice => {
            let (w_bg, w_b) = config.class_weights;
            let building = dice_from(&s.s_pg, &s.s_p, &s.s_g, eps)?;
            // complement-class sums follow from the originals:
            // Σ(1−p)(1−g) = N − Σp − Σg + Σpg, Σ(1−p) = N − Σp, Σ(1−g) = N − Σg
            let n = if config.per_image {
                (p.elem_count() / p.dim(0)?) as f64
            } else {
                p.elem_count() as f64
            };
            let s_pg_c = (((&s.s_pg - &s.s_p)? - &s.s_g)? + n)?;
            let s_p_c = ((&s.s_p * -1.0)? + n)?;
            let s_g_c = ((&s.s_g * -1.0)? + n)?;
            let background = dice_from(&s_pg_c, &s_p_c, &s_g_c, eps)?;
            (((building * w_b)? + (background * w_bg)?)? / (w_b + w_bg))?
        }
        LossKind::Tversky => (1.0 - tversky_index(&s, config.alpha, config.beta, eps)?)?,
        LossKind::FocalTversky => {
            let ti = tversky_index(&s, config.alpha, config.beta, eps)?;
            if config.gamma == 1.0 {
                (1.0 - ti)?
            } else {
                (1.0 - ti)?.relu()?.powf(1.0 / config.gamma)?
            }
        }
    };
    if config.per_image {
        value.mean_all()
    } else {
        value.reshape(())
    }
}
