//! Paired quality metrics under increasing degradation: SSIM falls and
//! gradient MSE rises monotonically with blur radius, while the perceptual
//! hash distances grow from zero.
//!
//! ```bash
//! cargo run -p progstain --example quality_metrics
//! ```

use progstain::image::{gaussian_blur, synth_fixture};
use progstain::metrics::evaluate_pair;

fn main() -> progstain::Result<()> {
    let (_, real, _) = synth_fixture(31, 96, 96, 6)?;

    println!(
        "{:>6} {:>8} {:>8} {:>12} {:>28}",
        "sigma", "ssim", "psnr", "grad mse", "phash (32/16/8/4)"
    );
    for sigma in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let degraded = gaussian_blur(&real, sigma);
        let report = evaluate_pair(&real, &degraded)?;
        println!(
            "{sigma:>6.1} {:>8.4} {:>8.2} {:>12.4e} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
            report.ssim,
            report.psnr,
            report.gradient_mse,
            report.phash[0],
            report.phash[1],
            report.phash[2],
            report.phash[3],
        );
    }

    // Photometric inversion flips nearly every hash bit.
    let inverted_data: Vec<f64> = real.data().iter().map(|v| 1.0 - v).collect();
    let inverted = progstain::image::Image::new(real.height(), real.width(), 3, inverted_data)?;
    let report = evaluate_pair(&real, &inverted)?;
    println!(
        "inverted image phash distances: {:.3} {:.3} {:.3} {:.3}",
        report.phash[0], report.phash[1], report.phash[2], report.phash[3]
    );
    Ok(())
}
