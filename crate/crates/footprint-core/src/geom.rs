//! Shared raster geometry: exact flips/rotations, bilinear resampling,
//! and inverse-mapped affine warps.
//!
//! Bilinear resizing uses the half-pixel-center convention
//! (`src = (dst + 0.5) * in/out - 0.5`, edge-clamped) everywhere, so the
//! CPU path and the in-graph matmul path in `models::bilinear` agree.

use ndarray::{Array2, Array3, Axis};

/// Horizontal flip (mirror along the x axis) of a (H, W) plane.
pub fn hflip_plane<T: Copy>(plane: &Array2<T>) -> Array2<T> {
    let (h, w) = plane.dim();
    Array2::from_shape_fn((h, w), |(i, j)| plane[(i, w - 1 - j)])
}

/// Horizontal flip of a (C, H, W) array.
pub fn hflip_chw<T: Copy>(image: &Array3<T>) -> Array3<T> {
    let (c, h, w) = image.dim();
    Array3::from_shape_fn((c, h, w), |(k, i, j)| image[(k, i, w - 1 - j)])
}

/// Clockwise rotation by `k` quarter turns of a square (H, W) plane.
pub fn rot90k_plane<T: Copy>(plane: &Array2<T>, k: u8) -> Array2<T> {
    let (h, w) = plane.dim();
    assert_eq!(h, w, "quarter-turn rotation requires a square plane");
    let n = h;
    match k % 4 {
        0 => plane.clone(),
        1 => Array2::from_shape_fn((n, n), |(i, j)| plane[(n - 1 - j, i)]),
        2 => Array2::from_shape_fn((n, n), |(i, j)| plane[(n - 1 - i, n - 1 - j)]),
        _ => Array2::from_shape_fn((n, n), |(i, j)| plane[(j, n - 1 - i)]),
    }
}

/// Clockwise rotation by `k` quarter turns of a square (C, H, W) array.
pub fn rot90k_chw<T: Copy>(image: &Array3<T>, k: u8) -> Array3<T> {
    let planes: Vec<Array2<T>> = image
        .axis_iter(Axis(0))
        .map(|p| rot90k_plane(&p.to_owned(), k))
        .collect();
    stack_planes(&planes)
}

fn stack_planes<T: Copy>(planes: &[Array2<T>]) -> Array3<T> {
    let (h, w) = planes[0].dim();
    Array3::from_shape_fn((planes.len(), h, w), |(c, i, j)| planes[c][(i, j)])
}

/// Bilinear resize of one plane, half-pixel centers, edge clamp.
pub fn resize_bilinear_plane(plane: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (in_h, in_w) = plane.dim();
    let sy = in_h as f64 / out_h as f64;
    let sx = in_w as f64 / out_w as f64;
    Array2::from_shape_fn((out_h, out_w), |(i, j)| {
        let fy = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (in_h - 1) as f64);
        let fx = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (in_w - 1) as f64);
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let x1 = (x0 + 1).min(in_w - 1);
        let dy = (fy - y0 as f64) as f32;
        let dx = (fx - x0 as f64) as f32;
        let top = plane[(y0, x0)] * (1.0 - dx) + plane[(y0, x1)] * dx;
        let bot = plane[(y1, x0)] * (1.0 - dx) + plane[(y1, x1)] * dx;
        top * (1.0 - dy) + bot * dy
    })
}

/// Bilinear resize of a (C, H, W) array.
pub fn resize_bilinear_chw(image: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let planes: Vec<Array2<f32>> = image
        .axis_iter(Axis(0))
        .map(|p| resize_bilinear_plane(&p.to_owned(), out_h, out_w))
        .collect();
    stack_planes(&planes)
}

/// 2x3 affine transform mapping output pixel coords to input coords
/// (inverse mapping): `x_in = a*x + b*y + tx`, `y_in = c*x + d*y + ty`.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub c: f64,
    pub d: f64,
    pub ty: f64,
}

impl AffineMap {
    /// Rotation by `degrees` clockwise about the image center.
    /// The returned map is the inverse (output -> input) transform.
    pub fn rotation_about_center(degrees: f64, h: usize, w: usize) -> Self {
        let theta = degrees.to_radians();
        let (sin, cos) = theta.sin_cos();
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        // inverse of a clockwise rotation is the counter-clockwise one
        Self {
            a: cos,
            b: -sin,
            tx: cx - cos * cx + sin * cy,
            c: sin,
            d: cos,
            ty: cy - sin * cx - cos * cy,
        }
    }

    /// Translation by (dx, dy) pixels; inverse map shifts the other way.
    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            tx: -dx,
            c: 0.0,
            d: 1.0,
            ty: -dy,
        }
    }

    /// Horizontal shear by `factor` about the image center (inverse map).
    /// Forward: `x' = x + f*(y - cy)`; rows shift sideways, y is fixed.
    pub fn shear_about_center(factor: f64, h: usize, _w: usize) -> Self {
        let cy = (h as f64 - 1.0) / 2.0;
        Self {
            a: 1.0,
            b: -factor,
            tx: factor * cy,
            c: 0.0,
            d: 1.0,
            ty: 0.0,
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.tx,
            self.c * x + self.d * y + self.ty,
        )
    }

    pub fn is_identity(&self) -> bool {
        (self.a - 1.0).abs() < 1e-12
            && self.b.abs() < 1e-12
            && self.tx.abs() < 1e-12
            && self.c.abs() < 1e-12
            && (self.d - 1.0).abs() < 1e-12
            && self.ty.abs() < 1e-12
    }
}

/// Warps a (C, H, W) image through an inverse-mapped affine transform
/// with bilinear sampling; out-of-bounds pixels take `fill[c]`.
pub fn warp_image(image: &Array3<f32>, map: &AffineMap, fill: &[f32]) -> Array3<f32> {
    if map.is_identity() {
        return image.clone();
    }
    let (c, h, w) = image.dim();
    Array3::from_shape_fn((c, h, w), |(k, i, j)| {
        let (fx, fy) = map.apply(j as f64, i as f64);
        if fx < -0.5 || fy < -0.5 || fx > (w as f64 - 0.5) || fy > (h as f64 - 0.5) {
            return fill[k];
        }
        let fx = fx.clamp(0.0, (w - 1) as f64);
        let fy = fy.clamp(0.0, (h - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let dx = (fx - x0 as f64) as f32;
        let dy = (fy - y0 as f64) as f32;
        let top = image[(k, y0, x0)] * (1.0 - dx) + image[(k, y0, x1)] * dx;
        let bot = image[(k, y1, x0)] * (1.0 - dx) + image[(k, y1, x1)] * dx;
        top * (1.0 - dy) + bot * dy
    })
}

/// Warps a binary mask through the same transform with nearest-neighbor
/// sampling; out-of-bounds pixels fill with 0 (not-building).
pub fn warp_mask(mask: &Array2<u8>, map: &AffineMap) -> Array2<u8> {
    if map.is_identity() {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let (fx, fy) = map.apply(j as f64, i as f64);
        let xi = fx.round();
        let yi = fy.round();
        if xi < 0.0 || yi < 0.0 || xi > (w - 1) as f64 || yi > (h - 1) as f64 {
            0
        } else {
            mask[(yi as usize, xi as usize)]
        }
    })
}
