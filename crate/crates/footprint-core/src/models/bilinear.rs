//! Differentiable bilinear resizing as a pair of matmuls, matching the
//! half-pixel-center convention of `geom::resize_bilinear_plane`.

use candle_core::{DType, Device, Result, Tensor};

/// Interpolation matrix [out, in]: row i holds the two bilinear weights
/// for output sample i, edge-clamped.
fn coeff_matrix(in_len: usize, out_len: usize, device: &Device) -> Result<Tensor> {
    let scale = in_len as f64 / out_len as f64;
    let mut data = vec![0f32; out_len * in_len];
    for i in 0..out_len {
        let f = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
        let lo = f.floor() as usize;
        let hi = (lo + 1).min(in_len - 1);
        let d = (f - lo as f64) as f32;
        data[i * in_len + lo] += 1.0 - d;
        data[i * in_len + hi] += d;
    }
    Tensor::from_vec(data, (out_len, in_len), device)
}

/// Bilinear resize of a (B, C, H, W) tensor; differentiable.
pub fn resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_b, _c, h, w) = x.dims4()?;
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    let device = x.device();
    let a_h = coeff_matrix(h, out_h, device)?
        .to_dtype(DType::F32)?
        .reshape((1, 1, out_h, h))?;
    let a_w_t = coeff_matrix(w, out_w, device)?.t()?.reshape((1, 1, w, out_w))?;
    // y = A_h · x · A_wᵀ, per batch and channel
    a_h.broadcast_matmul(x)?.broadcast_matmul(&a_w_t)
}

/// Upsample by an integer factor.
pub fn upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (_b, _c, h, w) = x.dims4()?;
    resize(x, h * factor, w * factor)
}
