//! # progstain
//!
//! Stain-aware losses, progressive pixel-space refinement, and paired
//! quality metrics for H&E-to-IHC translation experiments.
//!
//! The toolkit covers three concerns:
//!
//! - **Stain math** — optical-density conversion, Ruifrok-Johnston color
//!   deconvolution into hematoxylin / eosin / DAB concentration maps, and
//!   synthetic fixtures with known ground truth ([`deconv`], [`image`]).
//! - **Objectives** — InfoNCE/SP contrastive loss with adaptive patch
//!   weighting (ASP), PatchNCE, Gaussian-pyramid reconstruction, DAB color
//!   fidelity, and gradient-guided cell-boundary refinement, composed into
//!   a three-stage total ([`losses`], [`gradients`]).
//! - **Refinement and evaluation** — stage-wise gradient descent directly on
//!   pixels with analytic gradients verified against finite differences
//!   ([`refine`]), plus SSIM / PSNR / gradient-MSE / perceptual-hash
//!   reports ([`metrics`]).
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! - **`synth_fixtures`** — deterministic H&E/IHC pairs with exact stain
//!   ground truth
//! - **`stain_separation`** — OD conversion and H/E/DAB unmixing
//! - **`stage_losses`** — every loss term and the stage-wise totals
//! - **`contrastive_weighting`** — how the adaptive ASP weights evolve over
//!   the training schedule
//! - **`gradient_check`** — analytic gradients vs central finite differences
//! - **`progressive_refinement`** — stage-2 color + stage-3 boundary
//!   refinement end to end
//! - **`quality_metrics`** — metric behavior under increasing degradation
//!
//! ```bash
//! cargo run -p progstain --example synth_fixtures
//! cargo run -p progstain --example stain_separation
//! cargo run -p progstain --example stage_losses
//! cargo run -p progstain --example contrastive_weighting
//! cargo run -p progstain --example gradient_check
//! cargo run --release -p progstain --example progressive_refinement
//! cargo run -p progstain --example quality_metrics
//! ```
//!
//! ## Command line
//!
//! The `progstain` binary exposes the same functionality for batch
//! pipelines (`synth`, `deconvolve`, `loss`, `refine`, `metrics`,
//! `gradcheck`); machine-readable JSON goes to stdout, summaries to stderr.
//! See [`cli`] and the repository README.
//!
//! ## Quick start
//!
//! ```
//! use progstain::config::ToolkitConfig;
//! use progstain::image::{gaussian_blur, synth_fixture};
//! use progstain::refine::run_progressive;
//!
//! let config = ToolkitConfig::default();
//! let matrix = config.stain()?;
//!
//! // A degraded copy stands in for a stage-1 generator output.
//! let (_, real, _) = synth_fixture(7, 64, 64, 3)?;
//! let init = gaussian_blur(&real, 1.0);
//!
//! let result = run_progressive(
//!     &init, &real,
//!     &config.stage2, &config.stage3,
//!     &matrix, config.i0, config.eps,
//!     &config.loss_config(),
//! )?;
//! // Each stage descends on its own objective, never increasing it.
//! assert!(result.stage2.final_loss() <= result.stage2.initial_loss());
//! assert!(result.stage3.final_loss() <= result.stage3.initial_loss());
//! # Ok::<(), progstain::Error>(())
//! ```

pub mod cli;
pub mod config;
pub mod deconv;
pub mod error;
pub mod gradients;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod refine;
pub mod rng;

pub use error::{Error, Result};
