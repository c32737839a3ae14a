//! Optical-density conversion and Ruifrok-Johnston stain separation.
//!
//! Absorbances add linearly in OD space, so a pixel's color decomposes as
//! `OD = M^T * c` where the rows of `M` are unit-norm stain absorbance
//! vectors and `c` holds per-stain concentrations. Separation solves the
//! 3x3 system per pixel with a cached inverse.

use crate::error::{Error, Result};
use crate::image::Image;

/// Reference white intensity.
pub const DEFAULT_I0: f64 = 1.0;
/// Stabilizer added to intensities before the log.
pub const DEFAULT_EPS: f64 = 1e-6;

const LN10: f64 = std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stain {
    Hematoxylin,
    Eosin,
    Dab,
}

impl Stain {
    pub fn label(self) -> &'static str {
        match self {
            Stain::Hematoxylin => "hematoxylin",
            Stain::Eosin => "eosin",
            Stain::Dab => "dab",
        }
    }
}

/// 3x3 matrix of per-stain RGB absorbance rows (H, E, DAB).
///
/// Rows are normalized to unit Euclidean norm on construction and the
/// inverse of the transpose is cached for per-pixel solves.
#[derive(Debug, Clone, PartialEq)]
pub struct StainMatrix {
    rows: [[f64; 3]; 3],
    inv_t: [[f64; 3]; 3],
}

impl StainMatrix {
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        let mut normalized = [[0.0; 3]; 3];
        for (i, row) in rows.iter().enumerate() {
            let norm = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
            if norm < 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "stain row {i} has zero norm"
                )));
            }
            for k in 0..3 {
                normalized[i][k] = row[k] / norm;
            }
        }
        // The transpose shares the determinant with the matrix itself.
        let det = det3(&normalized);
        if det.abs() <= 1e-6 {
            return Err(Error::SingularMatrix(det.abs()));
        }
        let inv_t = invert3(&transpose3(&normalized), det);
        Ok(Self { rows: normalized, inv_t })
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.rows
    }

    pub fn row(&self, stain: Stain) -> [f64; 3] {
        match stain {
            Stain::Hematoxylin => self.rows[0],
            Stain::Eosin => self.rows[1],
            Stain::Dab => self.rows[2],
        }
    }

    /// Cached `(M^T)^{-1}`; row 2 maps OD to DAB concentration.
    pub fn inverse_transpose(&self) -> &[[f64; 3]; 3] {
        &self.inv_t
    }

    /// `M^T * c` for a single pixel's concentration triple.
    pub fn od_from_concentrations(&self, c: [f64; 3]) -> [f64; 3] {
        let mut od = [0.0; 3];
        for k in 0..3 {
            od[k] = self.rows[0][k] * c[0] + self.rows[1][k] * c[1] + self.rows[2][k] * c[2];
        }
        od
    }
}

impl Default for StainMatrix {
    /// Standard H-DAB absorbance rows; the rows are renormalized on
    /// construction.
    fn default() -> Self {
        Self::new([
            [0.650, 0.704, 0.286],
            [0.072, 0.990, 0.105],
            [0.268, 0.570, 0.776],
        ])
        .expect("default stain matrix is invertible")
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn transpose3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

fn invert3(m: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let mut inv = [[0.0; 3]; 3];
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    inv
}

/// Per-pixel optical densities, 3 values per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OdImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl OdImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch(format!(
                "od data length {} does not match {}x{}x3",
                data.len(),
                height,
                width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite optical density".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs_diff(&self, other: &OdImage) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-pixel scalar concentration of one stain. Deconvolution artifacts may
/// be slightly negative; values are preserved unclamped.
#[derive(Debug, Clone)]
pub struct ConcentrationMap {
    height: usize,
    width: usize,
    stain: Stain,
    data: Vec<f64>,
}

impl ConcentrationMap {
    pub fn new(height: usize, width: usize, stain: Stain, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self { height, width, stain, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stain(&self) -> Stain {
        self.stain
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-pixel soft weights in [0, 1].
#[derive(Debug, Clone)]
pub struct WeightMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl WeightMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// `OD = -log10((I + eps) / i0)` per channel; strictly decreasing in `I`.
pub fn rgb_to_od(img: &Image, i0: f64, eps: f64) -> Result<OdImage> {
    if img.channels() != 3 {
        return Err(Error::UnsupportedChannels(img.channels()));
    }
    check_od_params(i0, eps)?;
    let data = img
        .data()
        .iter()
        .map(|&v| -((v + eps) / i0).log10())
        .collect();
    OdImage::new(img.height(), img.width(), data)
}

/// Inverse of [`rgb_to_od`]: `I = clamp(i0 * 10^(-OD) - eps, 0, 1)`.
pub fn od_to_rgb(od: &OdImage, i0: f64, eps: f64) -> Result<Image> {
    check_od_params(i0, eps)?;
    let data: Vec<f64> = od
        .data()
        .iter()
        .map(|&v| (i0 * 10f64.powf(-v) - eps).clamp(0.0, 1.0))
        .collect();
    Image::new(od.height(), od.width(), 3, data)
}

fn check_od_params(i0: f64, eps: f64) -> Result<()> {
    if i0 <= 0.0 {
        return Err(Error::InvalidParameter(format!("i0 must be positive, got {i0}")));
    }
    if eps < 0.0 {
        return Err(Error::InvalidParameter(format!("eps must be nonnegative, got {eps}")));
    }
    Ok(())
}

/// Solves `OD = M^T * c` per pixel, returning the H, E, and DAB maps.
pub fn separate_stains(
    od: &OdImage,
    matrix: &StainMatrix,
) -> (ConcentrationMap, ConcentrationMap, ConcentrationMap) {
    let npix = od.height() * od.width();
    let inv = matrix.inverse_transpose();
    let mut c_h = vec![0.0; npix];
    let mut c_e = vec![0.0; npix];
    let mut c_dab = vec![0.0; npix];
    for p in 0..npix {
        let v = &od.data()[3 * p..3 * p + 3];
        c_h[p] = inv[0][0] * v[0] + inv[0][1] * v[1] + inv[0][2] * v[2];
        c_e[p] = inv[1][0] * v[0] + inv[1][1] * v[1] + inv[1][2] * v[2];
        c_dab[p] = inv[2][0] * v[0] + inv[2][1] * v[1] + inv[2][2] * v[2];
    }
    (
        ConcentrationMap::new(od.height(), od.width(), Stain::Hematoxylin, c_h),
        ConcentrationMap::new(od.height(), od.width(), Stain::Eosin, c_e),
        ConcentrationMap::new(od.height(), od.width(), Stain::Dab, c_dab),
    )
}

/// Rebuilds the OD image `M^T * c` from three concentration maps.
pub fn recompose_stains(
    c_h: &ConcentrationMap,
    c_e: &ConcentrationMap,
    c_dab: &ConcentrationMap,
    matrix: &StainMatrix,
) -> Result<OdImage> {
    if c_h.height() != c_e.height()
        || c_h.height() != c_dab.height()
        || c_h.width() != c_e.width()
        || c_h.width() != c_dab.width()
    {
        return Err(Error::DimensionMismatch(
            "concentration maps differ in shape".into(),
        ));
    }
    let npix = c_h.height() * c_h.width();
    let mut data = vec![0.0; npix * 3];
    for p in 0..npix {
        let od = matrix.od_from_concentrations([c_h.data()[p], c_e.data()[p], c_dab.data()[p]]);
        data[3 * p..3 * p + 3].copy_from_slice(&od);
    }
    OdImage::new(c_h.height(), c_h.width(), data)
}

/// Composes an RGB image directly from raw concentration fields. The inverse
/// path (`rgb_to_od` + `separate_stains`) recovers the fields exactly as long
/// as the composed intensities stay inside (0, 1).
pub fn compose_from_concentrations(
    height: usize,
    width: usize,
    c_h: &[f64],
    c_e: &[f64],
    c_dab: &[f64],
    matrix: &StainMatrix,
    i0: f64,
    eps: f64,
) -> Result<Image> {
    let npix = height * width;
    if c_h.len() != npix || c_e.len() != npix || c_dab.len() != npix {
        return Err(Error::DimensionMismatch(
            "concentration field length does not match dimensions".into(),
        ));
    }
    let mut od = vec![0.0; npix * 3];
    for p in 0..npix {
        let v = matrix.od_from_concentrations([c_h[p], c_e[p], c_dab[p]]);
        od[3 * p..3 * p + 3].copy_from_slice(&v);
    }
    od_to_rgb(&OdImage::new(height, width, od)?, i0, eps)
}

/// DAB concentration of an RGB image: `rgb_to_od` then `separate_stains`,
/// keeping the third map.
pub fn dab_concentration(
    img: &Image,
    matrix: &StainMatrix,
    i0: f64,
    eps: f64,
) -> Result<ConcentrationMap> {
    let od = rgb_to_od(img, i0, eps)?;
    let (_, _, dab) = separate_stains(&od, matrix);
    Ok(dab)
}

/// Min-max normalization into [0, 1]; a (near-)constant map degenerates to
/// all zeros so a stain-free image carries no weight anywhere.
pub fn normalize_weight(map: &ConcentrationMap) -> WeightMap {
    let min = map.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = map.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let data = if !(span.is_finite()) || span < 1e-12 {
        vec![0.0; map.data().len()]
    } else {
        map.data().iter().map(|&v| (v - min) / span).collect()
    };
    WeightMap {
        height: map.height(),
        width: map.width(),
        data,
    }
}

/// Derivative of the OD transform with respect to intensity:
/// `d OD / d I = -1 / (ln(10) * (I + eps))`.
#[inline]
pub(crate) fn od_intensity_derivative(intensity: f64, eps: f64) -> f64 {
    -1.0 / (LN10 * (intensity + eps))
}
