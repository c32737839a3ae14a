//! Image containers, raster file I/O, and synthetic fixtures with known
//! stain ground truth.
//!
//! Intensities are stored as `f64` in [0, 1]; quantization happens only at
//! file boundaries. Optical-density math amplifies error near zero, so the
//! in-memory representation never rounds.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::deconv::{self, ConcentrationMap, Stain, StainMatrix, DEFAULT_EPS, DEFAULT_I0};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// H×W×C raster of unit-interval intensities, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, validating the container invariants: 1 or 3 channels,
    /// `data.len() == height * width * channels`, and every value in [0, 1].
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedChannels(channels));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    /// Builds an image after clamping every value into [0, 1].
    pub fn from_clamped(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let clamped = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(height, width, channels, clamped)
    }

    /// Internal constructor that skips the range check. Used by the
    /// finite-difference harness, which probes loss values just outside the
    /// unit interval.
    pub(crate) fn from_raw_unchecked(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self { height, width, channels, data }
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Shape check shared by every paired operation.
    pub fn require_same_shape(&self, other: &Image) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Ground truth emitted alongside a synthetic fixture pair.
#[derive(Debug, Clone)]
pub struct FixtureTruth {
    pub dab_truth: ConcentrationMap,
    pub hema_truth: ConcentrationMap,
    /// Row-major mask of membrane-ring pixels; always a subset of
    /// `dab_truth > 0`.
    pub membrane_mask: Vec<bool>,
}

impl FixtureTruth {
    /// JSON sidecar with both concentration fields in row-major order.
    pub fn sidecar_json(&self) -> String {
        #[derive(serde::Serialize)]
        struct Sidecar<'a> {
            dab_truth: &'a [f64],
            hema_truth: &'a [f64],
        }
        serde_json::to_string(&Sidecar {
            dab_truth: self.dab_truth.data(),
            hema_truth: self.hema_truth.data(),
        })
        .expect("sidecar serialization cannot fail")
    }
}

// ---------------------------------------------------------------------------
// File I/O: PNG (8/16-bit) plus ASCII PPM/PGM.
// ---------------------------------------------------------------------------

/// Loads a PNG or plain-text PPM/PGM image, rescaling integer samples to
/// [0, 1]. The format is detected from the file's magic bytes.
pub fn load_image<P: AsRef<Path>>(path: P) -> Result<Image> {
    let mut file = BufReader::new(File::open(path.as_ref())?);
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes)
    } else if bytes.starts_with(b"P2") || bytes.starts_with(b"P3") {
        decode_pnm(&bytes)
    } else {
        Err(Error::Decode("unrecognized image format".into()))
    }
}

/// Saves an image as 8-bit PNG or ASCII PPM/PGM (16-bit samples) depending
/// on the path extension. Round trip error is bounded by one quantization
/// step of the chosen depth: 1/255 for PNG, 1/65535 for PPM/PGM.
pub fn save_image<P: AsRef<Path>>(img: &Image, path: P) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => save_png(img, path),
        "pgm" | "ppm" => save_pnm(img, path),
        other => Err(Error::InvalidParameter(format!(
            "unsupported output extension `{other}` (use png, ppm, or pgm)"
        ))),
    }
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    // Expand palettes and sub-byte grayscale to 8-bit samples.
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Decode(e.to_string()))?;
    let mut buf = vec![
        0u8;
        reader
            .output_buffer_size()
            .ok_or_else(|| Error::Decode("png output size overflow".into()))?
    ];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba | png::ColorType::GrayscaleAlpha => {
            return Err(Error::UnsupportedChannels(info.color_type.samples()));
        }
        png::ColorType::Indexed => {
            return Err(Error::Decode("indexed png not expanded".into()));
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let data = match info.bit_depth {
        png::BitDepth::Eight => buf[..info.buffer_size()]
            .iter()
            .map(|&v| v as f64 / 255.0)
            .collect(),
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65_535.0)
            .collect(),
        other => {
            return Err(Error::Decode(format!("unsupported png bit depth {other:?}")));
        }
    };
    Image::new(h, w, channels, data)
}

fn save_png(img: &Image, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let writer = BufWriter::new(file);
    let mut encoder = png::Encoder::new(writer, img.width as u32, img.height as u32);
    encoder.set_color(if img.channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Decode(e.to_string()))?;
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize_u8(v)).collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(())
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Decode("pnm file is not valid ascii".into()))?;
    let mut tokens = text
        .lines()
        .map(|line| line.split('#').next().unwrap_or(""))
        .flat_map(|line| line.split_whitespace())
        .map(str::to_owned)
        .collect::<Vec<_>>()
        .into_iter();
    let magic = tokens.next().ok_or_else(|| Error::Decode("empty pnm".into()))?;
    let channels = match magic.as_str() {
        "P2" => 1,
        "P3" => 3,
        m => return Err(Error::Decode(format!("unsupported pnm magic `{m}`"))),
    };
    let mut next_usize = |name: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::Decode(format!("pnm missing {name}")))?
            .parse::<usize>()
            .map_err(|_| Error::Decode(format!("pnm invalid {name}")))
    };
    let width = next_usize("width")?;
    let height = next_usize("height")?;
    let maxval = next_usize("maxval")?;
    if maxval == 0 || maxval > 65_535 {
        return Err(Error::Decode(format!("pnm maxval {maxval} out of range")));
    }
    let expected = width * height * channels;
    let mut data = Vec::with_capacity(expected);
    for _ in 0..expected {
        data.push(next_usize("sample")? as f64 / maxval as f64);
    }
    Image::new(height, width, channels, data)
}

fn save_pnm(img: &Image, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match (ext.as_str(), img.channels) {
        ("pgm", 1) | ("ppm", 3) => {}
        ("pgm", c) | ("ppm", c) => {
            return Err(Error::InvalidParameter(format!(
                "{ext} expects {} channels, image has {c}",
                if ext == "pgm" { 1 } else { 3 }
            )));
        }
        _ => unreachable!("save_pnm called with non-pnm extension"),
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", if img.channels == 1 { "P2" } else { "P3" })?;
    writeln!(out, "{} {}", img.width, img.height)?;
    writeln!(out, "65535")?;
    for row in 0..img.height {
        let start = row * img.width * img.channels;
        let line: Vec<String> = img.data[start..start + img.width * img.channels]
            .iter()
            .map(|&v| quantize_u16(v).to_string())
            .collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

#[inline]
fn quantize_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

#[inline]
fn quantize_u16(v: f64) -> u16 {
    (v * 65_535.0).round().clamp(0.0, 65_535.0) as u16
}

// ---------------------------------------------------------------------------
// Synthetic fixtures.
// ---------------------------------------------------------------------------

/// Generates a deterministic H&E-like / IHC-like image pair with known stain
/// concentrations.
///
/// Cells are filled disks (nuclei, hematoxylin 0.8) wrapped in 2-px annular
/// membrane rings carrying a per-cell DAB concentration drawn uniformly from
/// [0.3, 1.0). Both images are composed in OD space with the default stain
/// matrix, so `dab_concentration(ihc_like)` recovers `truth.dab_truth` up to
/// float rounding.
pub fn synth_fixture(
    seed: u64,
    height: usize,
    width: usize,
    n_cells: usize,
) -> Result<(Image, Image, FixtureTruth)> {
    if height < 32 || width < 32 {
        return Err(Error::InvalidParameter(format!(
            "dimensions {height}x{width} too small to place a cell (need at least 32x32)"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let npix = height * width;
    let mut c_h = vec![0.0; npix];
    let mut c_e = vec![0.0; npix];
    let mut c_dab = vec![0.0; npix];
    let mut membrane = vec![false; npix];

    for _ in 0..n_cells {
        let radius = rng.next_range(5.0, 9.0);
        let margin = radius.ceil() as usize + 3;
        let cy = margin + rng.next_below(height - 2 * margin);
        let cx = margin + rng.next_below(width - 2 * margin);
        let dab_level = rng.next_range(0.3, 1.0);
        let reach = (radius + 2.0).ceil() as isize;
        let cytoplasm = radius + 5.0;
        let cyto_reach = cytoplasm.ceil() as isize;
        for dy in -cyto_reach..=cyto_reach {
            for dx in -cyto_reach..=cyto_reach {
                let y = cy as isize + dy;
                let x = cx as isize + dx;
                if y < 0 || x < 0 || y >= height as isize || x >= width as isize {
                    continue;
                }
                let dist = ((dy * dy + dx * dx) as f64).sqrt();
                let idx = y as usize * width + x as usize;
                if dist <= cytoplasm {
                    c_e[idx] += 0.25;
                }
                if dy.abs() > reach || dx.abs() > reach {
                    continue;
                }
                if dist <= radius {
                    c_h[idx] += 0.8;
                } else if dist <= radius + 2.0 {
                    c_dab[idx] += dab_level;
                    membrane[idx] = true;
                }
            }
        }
    }

    let matrix = StainMatrix::default();
    let zeros = vec![0.0; npix];
    let he_like = deconv::compose_from_concentrations(
        height, width, &c_h, &c_e, &zeros, &matrix, DEFAULT_I0, DEFAULT_EPS,
    )?;
    let ihc_like = deconv::compose_from_concentrations(
        height, width, &c_h, &zeros, &c_dab, &matrix, DEFAULT_I0, DEFAULT_EPS,
    )?;
    let truth = FixtureTruth {
        dab_truth: ConcentrationMap::new(height, width, Stain::Dab, c_dab),
        hema_truth: ConcentrationMap::new(height, width, Stain::Hematoxylin, c_h),
        membrane_mask: membrane,
    };
    Ok((he_like, ihc_like, truth))
}

// ---------------------------------------------------------------------------
// Small spatial helpers used by fixtures, metrics, and the embedding pyramid.
// ---------------------------------------------------------------------------

/// Separable Gaussian blur with replicate borders; kernel radius is 3σ.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    let horiz = correlate_rows(img.data(), img.height, img.width, img.channels, &kernel);
    let vert = correlate_cols(&horiz, img.height, img.width, img.channels, &kernel);
    Image::from_clamped(img.height, img.width, img.channels, vert)
        .expect("blur of a valid image is valid")
}

fn correlate_rows(data: &[f64], h: usize, w: usize, c: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let sx = (x as isize + i as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += k * data[(y * w + sx) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    out
}

fn correlate_cols(data: &[f64], h: usize, w: usize, c: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let sy = (y as isize + i as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += k * data[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    out
}

/// Halves both dimensions by 2x2 box averaging (odd trailing row/column is
/// dropped).
pub fn box_downsample2(img: &Image) -> Result<Image> {
    let h = img.height / 2;
    let w = img.width / 2;
    if h == 0 || w == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} too small to downsample",
            img.height, img.width
        )));
    }
    let c = img.channels;
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let s = img.get(2 * y, 2 * x, ch)
                    + img.get(2 * y, 2 * x + 1, ch)
                    + img.get(2 * y + 1, 2 * x, ch)
                    + img.get(2 * y + 1, 2 * x + 1, ch);
                out[(y * w + x) * c + ch] = s / 4.0;
            }
        }
    }
    Image::new(h, w, c, out)
}
