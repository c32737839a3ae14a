//! Grayscale conversion, Sobel derivatives, and gradient-magnitude maps.
//!
//! Derivatives are computed by cross-correlation (positive response for
//! values increasing with column index) with replicate borders, so flat
//! regions at tile edges stay gradient-free.

use crate::error::{Error, Result};
use crate::image::Image;

/// Classic luminance weights; swap via [`to_gray_weighted`] if needed.
pub const GRAY_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Signed per-pixel derivative response.
#[derive(Debug, Clone)]
pub struct DerivativeMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DerivativeMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Nonnegative gradient magnitude per pixel, same dimensions as the source.
#[derive(Debug, Clone)]
pub struct GradientMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GradientMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Luminance grayscale: `0.299 R + 0.587 G + 0.114 B`.
pub fn to_gray(img: &Image) -> Result<Image> {
    to_gray_weighted(img, GRAY_WEIGHTS)
}

/// Weighted grayscale; weights are normalized by their sum, so white maps
/// to exactly 1.0.
pub fn to_gray_weighted(img: &Image, weights: [f64; 3]) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::UnsupportedChannels(img.channels()));
    }
    let total = weights[0] + weights[1] + weights[2];
    if !(total > 0.0) {
        return Err(Error::InvalidParameter(
            "grayscale weights must have positive sum".into(),
        ));
    }
    let data: Vec<f64> = img
        .data()
        .chunks_exact(3)
        .map(|p| {
            ((weights[0] * p[0] + weights[1] * p[1] + weights[2] * p[2]) / total).clamp(0.0, 1.0)
        })
        .collect();
    Image::new(img.height(), img.width(), 1, data)
}

fn check_sobel_input(gray: &Image) -> Result<()> {
    if gray.channels() != 1 {
        return Err(Error::UnsupportedChannels(gray.channels()));
    }
    if gray.height() < 3 || gray.width() < 3 {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} smaller than the 3x3 Sobel kernel",
            gray.height(),
            gray.width()
        )));
    }
    Ok(())
}

/// Sobel responses `(gx, gy)` with replicate border padding.
///
/// Each response is evaluated as a difference of two identically computed
/// smoothing sums, so constant images produce exact zeros.
pub fn sobel(gray: &Image) -> Result<(DerivativeMap, DerivativeMap)> {
    check_sobel_input(gray)?;
    let (h, w) = (gray.height(), gray.width());
    let src = gray.data();
    let at = |y: isize, x: isize| -> f64 {
        let sy = y.clamp(0, h as isize - 1) as usize;
        let sx = x.clamp(0, w as isize - 1) as usize;
        src[sy * w + sx]
    };
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let col = |xc: isize| at(y - 1, xc) + 2.0 * at(y, xc) + at(y + 1, xc);
            let row = |yc: isize| at(yc, x - 1) + 2.0 * at(yc, x) + at(yc, x + 1);
            gx[y as usize * w + x as usize] = col(x + 1) - col(x - 1);
            gy[y as usize * w + x as usize] = row(y + 1) - row(y - 1);
        }
    }
    Ok((
        DerivativeMap { height: h, width: w, data: gx },
        DerivativeMap { height: h, width: w, data: gy },
    ))
}

/// Adjoint of [`sobel`]: scatters cotangents `(vx, vy)` back through the
/// clamped-index correlation. Needed for exact loss gradients, replicate
/// borders included.
pub(crate) fn sobel_adjoint(vx: &[f64], vy: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let cx = vx[y * w + x];
            let cy = vy[y * w + x];
            if cx == 0.0 && cy == 0.0 {
                continue;
            }
            for ky in 0..3 {
                for kx in 0..3 {
                    let sy = (y as isize + ky as isize - 1).clamp(0, h as isize - 1) as usize;
                    let sx = (x as isize + kx as isize - 1).clamp(0, w as isize - 1) as usize;
                    out[sy * w + sx] += SOBEL_X[ky][kx] * cx + SOBEL_Y[ky][kx] * cy;
                }
            }
        }
    }
    out
}

/// `D = sqrt(gx^2 + gy^2)` per pixel.
pub fn gradient_magnitude(gray: &Image) -> Result<GradientMap> {
    let (gx, gy) = sobel(gray)?;
    let data = gx
        .data()
        .iter()
        .zip(gy.data())
        .map(|(x, y)| (x * x + y * y).sqrt())
        .collect();
    Ok(GradientMap {
        height: gray.height(),
        width: gray.width(),
        data,
    })
}
