//! Paired evaluation metrics: SSIM, PSNR, gradient MSE, and a multi-scale
//! DCT perceptual-hash distance.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradients;
use crate::image::Image;

/// SSIM window size and Gaussian sigma (the standard reference settings).
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
/// Stabilizers for dynamic range L = 1.
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Scales of the perceptual hash, largest first.
pub const PHASH_SCALES: [usize; 4] = [32, 16, 8, 4];

/// All paired metrics for one image pair.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub ssim: f64,
    pub psnr: f64,
    pub gradient_mse: f64,
    /// Normalized Hamming distances at scales 32, 16, 8, 4.
    pub phash: [f64; 4],
}

fn as_gray(img: &Image) -> Result<Image> {
    if img.channels() == 3 {
        gradients::to_gray(img)
    } else {
        Ok(img.clone())
    }
}

/// Mean local SSIM over all fully interior 11x11 Gaussian windows,
/// computed on grayscale.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.require_same_shape(b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} smaller than the {}x{} SSIM window",
            a.height(),
            a.width(),
            SSIM_WINDOW,
            SSIM_WINDOW
        )));
    }
    let ga = as_gray(a)?;
    let gb = as_gray(b)?;
    let kernel = gaussian_kernel_1d(SSIM_WINDOW, SSIM_SIGMA);

    let x = ga.data();
    let y = gb.data();
    let (h, w) = (ga.height(), ga.width());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();

    let mu_x = window_means(x, h, w, &kernel);
    let mu_y = window_means(y, h, w, &kernel);
    let m_xx = window_means(&xx, h, w, &kernel);
    let m_yy = window_means(&yy, h, w, &kernel);
    let m_xy = window_means(&xy, h, w, &kernel);

    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = m_xx[i] - mx * mx;
        let var_y = m_yy[i] - my * my;
        let cov = m_xy[i] - mx * my;
        total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2));
    }
    Ok(total / mu_x.len() as f64)
}

fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as isize;
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

/// Gaussian-weighted window means over all valid positions, via separable
/// correlation (horizontal pass then vertical pass).
fn window_means(data: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let out_w = w - k + 1;
    let out_h = h - k + 1;
    let mut horiz = vec![0.0; h * out_w];
    for y in 0..h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                acc += kv * data[y * w + x + i];
            }
            horiz[y * out_w + x] = acc;
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for y in 0..out_h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                acc += kv * horiz[(y + i) * out_w + x];
            }
            out[y * out_w + x] = acc;
        }
    }
    out
}

/// `10 log10(peak^2 / MSE)` with peak 1.0, capped at 100 dB for MSE below
/// 1e-10.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.require_same_shape(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        100.0
    } else {
        -10.0 * mse.log10()
    }
}

/// Unweighted MSE between the Sobel gradient-magnitude maps (grayscale).
/// Unlike the GCBR loss there is no DAB weighting.
pub fn gradient_mse(a: &Image, b: &Image) -> Result<f64> {
    a.require_same_shape(b)?;
    let da = gradients::gradient_magnitude(&as_gray(a)?)?;
    let db = gradients::gradient_magnitude(&as_gray(b)?)?;
    let n = da.data().len() as f64;
    Ok(da
        .data()
        .iter()
        .zip(db.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// DCT perceptual-hash bits of one image at one scale: box-resize to
/// `scale x scale`, 2D DCT, keep the top-left block (up to 8x8) minus the DC
/// term, threshold at the median.
fn phash_bits(gray: &Image, scale: usize) -> Vec<bool> {
    let small = box_resize(gray, scale);
    let dct = dct_2d(&small, scale);
    let block = scale.min(8);
    let mut coeffs = Vec::with_capacity(block * block - 1);
    for u in 0..block {
        for v in 0..block {
            if u == 0 && v == 0 {
                continue;
            }
            coeffs.push(dct[u * scale + v]);
        }
    }
    let mut sorted = coeffs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    coeffs.into_iter().map(|c| c > median).collect()
}

/// Area box average onto a `scale x scale` grid.
fn box_resize(gray: &Image, scale: usize) -> Vec<f64> {
    let (h, w) = (gray.height(), gray.width());
    let mut out = vec![0.0; scale * scale];
    for ty in 0..scale {
        let y0 = ty * h / scale;
        let y1 = ((ty + 1) * h / scale).max(y0 + 1);
        for tx in 0..scale {
            let x0 = tx * w / scale;
            let x1 = ((tx + 1) * w / scale).max(x0 + 1);
            let mut acc = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    acc += gray.get(y, x, 0);
                }
            }
            out[ty * scale + tx] = acc / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

/// Orthonormal 2D DCT-II, rows then columns.
fn dct_2d(data: &[f64], n: usize) -> Vec<f64> {
    let mut rows = vec![0.0; n * n];
    for y in 0..n {
        let row = &data[y * n..(y + 1) * n];
        let transformed = dct_1d(row);
        rows[y * n..(y + 1) * n].copy_from_slice(&transformed);
    }
    let mut out = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for x in 0..n {
        for y in 0..n {
            col[y] = rows[y * n + x];
        }
        let transformed = dct_1d(&col);
        for y in 0..n {
            out[y * n + x] = transformed[y];
        }
    }
    out
}

fn dct_1d(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    (0..n)
        .map(|u| {
            let sum: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    v * (std::f64::consts::PI * (2 * i + 1) as f64 * u as f64
                        / (2 * n) as f64)
                        .cos()
                })
                .sum();
            sum * if u == 0 { norm0 } else { norm }
        })
        .collect()
}

/// Normalized Hamming distances between the DCT hashes of the two images at
/// scales 32, 16, 8, and 4.
pub fn phash_distance(a: &Image, b: &Image) -> Result<[f64; 4]> {
    for img in [a, b] {
        if img.height() < 32 || img.width() < 32 {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} below the 32x32 minimum for the perceptual hash",
                img.height(),
                img.width()
            )));
        }
    }
    let ga = as_gray(a)?;
    let gb = as_gray(b)?;
    let mut distances = [0.0; 4];
    for (slot, &scale) in PHASH_SCALES.iter().enumerate() {
        let bits_a = phash_bits(&ga, scale);
        let bits_b = phash_bits(&gb, scale);
        let differing = bits_a
            .iter()
            .zip(&bits_b)
            .filter(|(x, y)| x != y)
            .count();
        distances[slot] = differing as f64 / bits_a.len() as f64;
    }
    Ok(distances)
}

/// Assembles all four paired metrics into one report.
pub fn evaluate_pair(real: &Image, gen: &Image) -> Result<MetricReport> {
    real.require_same_shape(gen)?;
    Ok(MetricReport {
        ssim: ssim(real, gen)?,
        psnr: psnr(real, gen)?,
        gradient_mse: gradient_mse(real, gen)?,
        phash: phash_distance(real, gen)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{gaussian_blur, synth_fixture};
    use crate::rng::SplitMix64;

    fn random_gray(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = SplitMix64::new(seed);
        let data: Vec<f64> = (0..h * w).map(|_| rng.next_f64()).collect();
        Image::new(h, w, 1, data).unwrap()
    }

    /// Brute-force SSIM oracle: the definition evaluated window by window
    /// with explicit loops, no separable filtering.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let kernel = gaussian_kernel_1d(SSIM_WINDOW, SSIM_SIGMA);
        let (h, w) = (a.height(), a.width());
        let mut total = 0.0;
        let mut count = 0usize;
        for wy in 0..=h - SSIM_WINDOW {
            for wx in 0..=w - SSIM_WINDOW {
                let mut mx = 0.0;
                let mut my = 0.0;
                let mut mxx = 0.0;
                let mut myy = 0.0;
                let mut mxy = 0.0;
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let weight = kernel[dy] * kernel[dx];
                        let p = a.get(wy + dy, wx + dx, 0);
                        let q = b.get(wy + dy, wx + dx, 0);
                        mx += weight * p;
                        my += weight * q;
                        mxx += weight * p * p;
                        myy += weight * q * q;
                        mxy += weight * p * q;
                    }
                }
                let var_x = mxx - mx * mx;
                let var_y = myy - my * my;
                let cov = mxy - mx * my;
                total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_identity_is_one() {
        let img = random_gray(1, 16, 16);
        assert_eq!(ssim(&img, &img).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constant_images_analytic() {
        let a = Image::constant(16, 16, 1, 0.2).unwrap();
        let b = Image::constant(16, 16, 1, 0.8).unwrap();
        let expected = (2.0 * 0.2 * 0.8 + SSIM_C1) / (0.2 * 0.2 + 0.8 * 0.8 + SSIM_C1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        // Headline value from the zero-variance reduction.
        assert!((got - 0.47075).abs() < 1e-4);
    }

    #[test]
    fn ssim_matches_bruteforce_oracle() {
        for seed in 0..4 {
            let a = random_gray(seed, 32, 32);
            let b = random_gray(seed + 50, 32, 32);
            let fast = ssim(&a, &b).unwrap();
            let slow = ssim_oracle(&a, &b);
            assert!((fast - slow).abs() < 1e-9, "seed {seed}: {fast} vs {slow}");
        }
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = random_gray(7, 20, 20);
        let b = random_gray(8, 20, 20);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_or_mismatched() {
        let a = random_gray(9, 8, 8);
        assert!(ssim(&a, &a).is_err());
        let b = random_gray(9, 16, 16);
        let c = random_gray(9, 16, 17);
        assert!(ssim(&b, &c).is_err());
    }

    #[test]
    fn psnr_analytic_cases() {
        assert_eq!(psnr_from_mse(1.0), 0.0);
        assert_eq!(psnr_from_mse(0.01), 20.0);
        let a = Image::constant(4, 4, 1, 0.0).unwrap();
        let b = Image::constant(4, 4, 1, 1.0).unwrap();
        assert_eq!(psnr(&a, &b).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    }

    #[test]
    fn psnr_decreasing_in_mse() {
        let mut last = f64::INFINITY;
        for mse in [1e-9, 1e-6, 1e-3, 0.1, 1.0] {
            let v = psnr_from_mse(mse);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn gradient_mse_zero_cases() {
        let a = random_gray(10, 12, 12);
        assert_eq!(gradient_mse(&a, &a).unwrap(), 0.0);
        let c1 = Image::constant(8, 8, 1, 0.2).unwrap();
        let c2 = Image::constant(8, 8, 1, 0.9).unwrap();
        assert_eq!(gradient_mse(&c1, &c2).unwrap(), 0.0);
    }

    #[test]
    fn gradient_mse_ramp_vs_constant_hand_value() {
        // Interior Sobel response on the ramp is 8/(w-1); border columns
        // see a halved column step. Computed by direct summation here.
        let (h, w) = (8, 8);
        let data: Vec<f64> = (0..h)
            .flat_map(|_| (0..w).map(move |x| x as f64 / (w - 1) as f64))
            .collect();
        let ramp = Image::new(h, w, 1, data).unwrap();
        let flat = Image::constant(h, w, 1, 0.5).unwrap();
        let step = 1.0 / (w - 1) as f64;
        let interior = 8.0 * step;
        let border = 4.0 * step;
        let expected = ((w - 2) as f64 * interior * interior
            + 2.0 * border * border)
            * h as f64
            / (h * w) as f64;
        let got = gradient_mse(&ramp, &flat).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn phash_identity_is_zero() {
        let img = random_gray(11, 40, 40);
        assert_eq!(phash_distance(&img, &img).unwrap(), [0.0; 4]);
    }

    #[test]
    fn phash_rejects_small_images() {
        let img = random_gray(12, 16, 16);
        assert!(phash_distance(&img, &img).is_err());
    }

    #[test]
    fn phash_flips_under_photometric_inversion() {
        for seed in [13u64, 14, 15] {
            let img = random_gray(seed, 48, 48);
            let inverted_data: Vec<f64> = img.data().iter().map(|v| 1.0 - v).collect();
            let inverted = Image::new(48, 48, 1, inverted_data).unwrap();
            let d = phash_distance(&img, &inverted).unwrap();
            for (i, dist) in d.iter().enumerate() {
                assert!(*dist >= 0.9, "seed {seed} scale {i}: {dist}");
            }
        }
    }

    #[test]
    fn phash_noise_distances_concentrate_near_half() {
        // Monte Carlo over seed pairs. The 63-bit hashes (scales 32/16/8)
        // land in [0.35, 0.65] on >= 95% of draws. The 4x4 scale has only
        // 15 bits with exactly 7 set (the median coefficient is excluded),
        // so its distance lives on {0, 2, 4, ...}/15 and the same window
        // captures only ~70% of mass; it gets its own bound.
        let n = 200u64;
        let mut in_window = [0usize; 4];
        let mut sums = [0.0f64; 4];
        for seed in 0..n {
            let mut rng = SplitMix64::new(90_000 + seed);
            let a: Vec<f64> = (0..48 * 48).map(|_| rng.next_f64()).collect();
            let b: Vec<f64> = (0..48 * 48).map(|_| rng.next_f64()).collect();
            let ia = Image::new(48, 48, 1, a).unwrap();
            let ib = Image::new(48, 48, 1, b).unwrap();
            let d = phash_distance(&ia, &ib).unwrap();
            for s in 0..4 {
                sums[s] += d[s];
                if (0.35..=0.65).contains(&d[s]) {
                    in_window[s] += 1;
                }
            }
        }
        for s in 0..3 {
            let freq = in_window[s] as f64 / n as f64;
            assert!(freq >= 0.95, "scale {}: frequency {freq}", PHASH_SCALES[s]);
        }
        let small_freq = in_window[3] as f64 / n as f64;
        assert!(small_freq >= 0.6, "scale 4: frequency {small_freq}");
        for s in 0..4 {
            let mean = sums[s] / n as f64;
            assert!((mean - 0.5).abs() < 0.08, "scale {}: mean {mean}", PHASH_SCALES[s]);
        }
    }

    #[test]
    fn phash_invariant_under_brightness_shift() {
        // Clamp-free dyadic shift: only the DC coefficient moves, and it is
        // excluded from the hash.
        let mut rng = SplitMix64::new(16);
        let data: Vec<f64> = (0..40 * 40).map(|_| (rng.next_below(192)) as f64 / 256.0).collect();
        let shifted: Vec<f64> = data.iter().map(|v| v + 0.125).collect();
        let a = Image::new(40, 40, 1, data).unwrap();
        let b = Image::new(40, 40, 1, shifted).unwrap();
        assert_eq!(phash_distance(&a, &b).unwrap(), [0.0; 4]);
    }

    #[test]
    fn gradient_mse_invariant_under_joint_shift() {
        let mut rng = SplitMix64::new(17);
        let da: Vec<f64> = (0..100).map(|_| (rng.next_below(192)) as f64 / 256.0).collect();
        let db: Vec<f64> = (0..100).map(|_| (rng.next_below(192)) as f64 / 256.0).collect();
        let shift = 0.25;
        let a = Image::new(10, 10, 1, da.clone()).unwrap();
        let b = Image::new(10, 10, 1, db.clone()).unwrap();
        let a2 = Image::new(10, 10, 1, da.iter().map(|v| v + shift).collect()).unwrap();
        let b2 = Image::new(10, 10, 1, db.iter().map(|v| v + shift).collect()).unwrap();
        assert_eq!(
            gradient_mse(&a, &b).unwrap(),
            gradient_mse(&a2, &b2).unwrap()
        );
    }

    #[test]
    fn evaluate_pair_identity_report() {
        let (_, ihc, _) = synth_fixture(3, 48, 48, 3).unwrap();
        let report = evaluate_pair(&ihc, &ihc).unwrap();
        assert_eq!(report.ssim, 1.0);
        assert_eq!(report.psnr, 100.0);
        assert_eq!(report.gradient_mse, 0.0);
        assert_eq!(report.phash, [0.0; 4]);
    }

    #[test]
    fn evaluate_pair_rejects_mismatched_inputs() {
        let a = random_gray(20, 32, 32);
        let b = random_gray(21, 32, 33);
        assert!(evaluate_pair(&a, &b).is_err());
    }

    #[test]
    fn blur_ordering_on_fixtures() {
        for seed in 0..3 {
            let (_, ihc, _) = synth_fixture(seed, 48, 48, 4).unwrap();
            let light = gaussian_blur(&ihc, 1.0);
            let heavy = gaussian_blur(&ihc, 2.5);
            let ssim_light = ssim(&ihc, &light).unwrap();
            let ssim_heavy = ssim(&ihc, &heavy).unwrap();
            assert!(ssim_light < 1.0);
            assert!(ssim_light > ssim_heavy, "seed {seed}");
            let gm_light = gradient_mse(&ihc, &light).unwrap();
            let gm_heavy = gradient_mse(&ihc, &heavy).unwrap();
            assert!(gm_light > 0.0);
            assert!(gm_light < gm_heavy, "seed {seed}");
        }
    }

    #[test]
    fn report_serializes_with_phash_array() {
        let (_, ihc, _) = synth_fixture(5, 48, 48, 2).unwrap();
        let blurred = gaussian_blur(&ihc, 1.0);
        let report = evaluate_pair(&ihc, &blurred).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(value["ssim"].as_f64().unwrap() < 1.0);
        assert_eq!(value["phash"].as_array().unwrap().len(), 4);
    }
}
