//! Progressive pixel-space refinement: stage-2 descent on the DAB
//! color-fidelity loss, then stage-3 descent on the gradient-guided boundary
//! loss, with analytic gradients checked against central finite differences.
//!
//! Stage 1 (neural structure generation) is supplied by the caller as the
//! initial image; each later stage starts from the previous stage's output
//! and optimizes only its own objective, which realizes the freezing scheme
//! in pixel space.

use serde::Serialize;

use crate::deconv::{self, StainMatrix};
use crate::error::{Error, Result};
use crate::gradients::{self, GRAY_WEIGHTS};
use crate::image::{box_downsample2, Image};
use crate::losses::{
    self, Embedding, EmbeddingPyramid, LossBreakdown, LossTerms, PatchPair, PyramidLayer,
};
use crate::rng::SplitMix64;

/// Optimizer used for the pixel updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    GradientDescent,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::GradientDescent => "gd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(OptimizerKind::GradientDescent),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Settings for one refinement stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub stage: u8,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub optimizer: OptimizerKind,
    pub adam: AdamParams,
    pub stop_tol: f64,
}

impl StageConfig {
    pub fn stage2_default() -> Self {
        Self {
            stage: 2,
            learning_rate: 2e-3,
            max_iters: 500,
            optimizer: OptimizerKind::Adam,
            adam: AdamParams::default(),
            stop_tol: 1e-8,
        }
    }

    pub fn stage3_default() -> Self {
        Self { stage: 3, ..Self::stage2_default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage != 2 && self.stage != 3 {
            return Err(Error::InvalidParameter(format!(
                "refinement stage must be 2 or 3, got {}",
                self.stage
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "stop_tol must be nonnegative, got {}",
                self.stop_tol
            )));
        }
        Ok(())
    }
}

/// Per-iteration record of one refinement run. `losses[0]` is the loss of
/// the initial image; each accepted step appends its post-step loss.
#[derive(Debug, Clone)]
pub struct RefineTrace {
    pub stage: u8,
    pub losses: Vec<f64>,
    pub initial_breakdown: LossBreakdown,
    pub final_breakdown: LossBreakdown,
    pub iterations: usize,
}

impl RefineTrace {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace is never empty")
    }

    /// One JSON object per recorded iteration.
    pub fn to_json_lines(&self) -> String {
        #[derive(Serialize)]
        struct Line {
            iter: usize,
            loss: f64,
        }
        let mut out = String::new();
        for (iter, &loss) in self.losses.iter().enumerate() {
            out.push_str(&serde_json::to_string(&Line { iter, loss }).unwrap());
            out.push('\n');
        }
        out
    }
}

/// Per-pixel, per-channel loss gradient with respect to image intensities.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GradientField {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Analytic gradient of [`losses::dab_cf_loss`] with respect to `gen`.
///
/// Chain rule per pixel and channel:
/// `dL/dc = (2/N)(c_gen - c_real)`, `dc/dOD_k` is row 2 of `(M^T)^{-1}`,
/// and `dOD_k/dI_k = -1/(ln 10 (I_k + eps))`.
pub fn grad_dab_cf(
    real: &Image,
    gen: &Image,
    matrix: &StainMatrix,
    i0: f64,
    eps: f64,
) -> Result<GradientField> {
    real.require_same_shape(gen)?;
    let c_real = deconv::dab_concentration(real, matrix, i0, eps)?;
    let c_gen = deconv::dab_concentration(gen, matrix, i0, eps)?;
    let dab_row = matrix.inverse_transpose()[2];
    let n = c_real.data().len() as f64;
    let mut data = vec![0.0; gen.data().len()];
    for p in 0..c_real.data().len() {
        let dl_dc = 2.0 / n * (c_gen.data()[p] - c_real.data()[p]);
        for k in 0..3 {
            let intensity = gen.data()[3 * p + k];
            data[3 * p + k] = dl_dc * dab_row[k] * deconv::od_intensity_derivative(intensity, eps);
        }
    }
    Ok(GradientField { height: gen.height(), width: gen.width(), data })
}

/// Analytic gradient of [`losses::gcbr_loss`] with respect to `gen`.
///
/// The weight map derives from `real` and is treated as constant. The
/// magnitude nondifferentiability at `D_gen = 0` uses subgradient zero.
pub fn grad_gcbr(
    real: &Image,
    gen: &Image,
    matrix: &StainMatrix,
    i0: f64,
    eps: f64,
) -> Result<GradientField> {
    real.require_same_shape(gen)?;
    let (h, w) = (gen.height(), gen.width());
    let zero = || GradientField { height: h, width: w, data: vec![0.0; gen.data().len()] };

    let eta = deconv::normalize_weight(&deconv::dab_concentration(real, matrix, i0, eps)?);
    let eta_sum = eta.sum();
    if eta_sum < 1e-12 {
        return Ok(zero());
    }
    let d_real = gradients::gradient_magnitude(&gradients::to_gray(real)?)?;
    let gray_gen = gradients::to_gray(gen)?;
    let (gx, gy) = gradients::sobel(&gray_gen)?;

    // Cotangents on the Sobel responses.
    let npix = h * w;
    let mut vx = vec![0.0; npix];
    let mut vy = vec![0.0; npix];
    for p in 0..npix {
        let mag = (gx.data()[p] * gx.data()[p] + gy.data()[p] * gy.data()[p]).sqrt();
        if mag == 0.0 {
            continue;
        }
        let upstream = 2.0 * eta.data()[p] / eta_sum * (mag - d_real.data()[p]);
        vx[p] = upstream * gx.data()[p] / mag;
        vy[p] = upstream * gy.data()[p] / mag;
    }
    let grad_gray = gradients::sobel_adjoint(&vx, &vy, h, w);

    let weight_total: f64 = GRAY_WEIGHTS.iter().sum();
    let mut data = vec![0.0; gen.data().len()];
    for p in 0..npix {
        for k in 0..3 {
            data[3 * p + k] = grad_gray[p] * GRAY_WEIGHTS[k] / weight_total;
        }
    }
    Ok(GradientField { height: h, width: w, data })
}

/// Which loss a gradient check targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    DabCf,
    Gcbr,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dab_cf" => Ok(LossKind::DabCf),
            "gcbr" => Ok(LossKind::Gcbr),
            other => Err(Error::InvalidParameter(format!(
                "unknown loss `{other}` (expected dab_cf or gcbr)"
            ))),
        }
    }
}

/// Central finite differences of an arbitrary scalar image functional.
/// Probes may step just outside [0, 1]; the functional must tolerate that.
pub fn finite_diff_field<F>(f: F, gen: &Image, h: f64) -> Result<GradientField>
where
    F: Fn(&Image) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    let mut data = vec![0.0; gen.data().len()];
    let mut probe = gen.data().to_vec();
    for i in 0..probe.len() {
        let original = probe[i];
        probe[i] = original + h;
        let plus = f(&Image::from_raw_unchecked(
            gen.height(),
            gen.width(),
            gen.channels(),
            probe.clone(),
        ))?;
        probe[i] = original - h;
        let minus = f(&Image::from_raw_unchecked(
            gen.height(),
            gen.width(),
            gen.channels(),
            probe.clone(),
        ))?;
        probe[i] = original;
        data[i] = (plus - minus) / (2.0 * h);
    }
    Ok(GradientField { height: gen.height(), width: gen.width(), data })
}

/// Finite-difference gradient of one of the refinement losses. This is the
/// verification oracle for [`grad_dab_cf`] and [`grad_gcbr`].
pub fn finite_diff_grad(
    kind: LossKind,
    real: &Image,
    gen: &Image,
    matrix: &StainMatrix,
    i0: f64,
    eps: f64,
    h: f64,
) -> Result<GradientField> {
    match kind {
        LossKind::DabCf => finite_diff_field(
            |img| losses::dab_cf_loss(real, img, matrix, i0, eps),
            gen,
            h,
        ),
        LossKind::Gcbr => finite_diff_field(
            |img| losses::gcbr_loss(real, img, matrix, i0, eps),
            gen,
            h,
        ),
    }
}

/// Pointwise relative disagreement between an analytic gradient and its
/// finite-difference oracle: `|a - fd| / max(|a|, |fd|, floor)`. For the
/// GCBR loss, pixels with `D_gen` below `exclude_below` are skipped per the
/// subgradient convention.
pub fn gradient_check_error(
    kind: LossKind,
    real: &Image,
    gen: &Image,
    matrix: &StainMatrix,
    i0: f64,
    eps: f64,
) -> Result<f64> {
    let analytic = match kind {
        LossKind::DabCf => grad_dab_cf(real, gen, matrix, i0, eps)?,
        LossKind::Gcbr => grad_gcbr(real, gen, matrix, i0, eps)?,
    };
    let numeric = finite_diff_grad(kind, real, gen, matrix, i0, eps, 1e-5)?;
    let include = match kind {
        LossKind::DabCf => vec![true; gen.pixel_count()],
        LossKind::Gcbr => {
            let mag = gradients::gradient_magnitude(&gradients::to_gray(gen)?)?;
            mag.data().iter().map(|&d| d > 1e-3).collect()
        }
    };
    let floor = 1e-8;
    let mut worst = 0.0f64;
    for p in 0..gen.pixel_count() {
        if !include[p] {
            continue;
        }
        for k in 0..gen.channels() {
            let a = analytic.data[p * gen.channels() + k];
            let f = numeric.data[p * gen.channels() + k];
            let rel = (a - f).abs() / a.abs().max(f.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    fn apply(&mut self, params: &AdamParams, lr: f64, grad: &[f64], data: &mut [f64]) {
        self.step += 1;
        let bc1 = 1.0 - params.beta1.powi(self.step as i32);
        let bc2 = 1.0 - params.beta2.powi(self.step as i32);
        for i in 0..data.len() {
            self.m[i] = params.beta1 * self.m[i] + (1.0 - params.beta1) * grad[i];
            self.v[i] = params.beta2 * self.v[i] + (1.0 - params.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + params.epsilon);
        }
    }
}

fn stage_raw_loss(
    stage: u8,
    real: &Image,
    gen: &Image,
    matrix: &StainMatrix,
    i0: f64,
    eps: f64,
) -> Result<f64> {
    match stage {
        2 => losses::dab_cf_loss(real, gen, matrix, i0, eps),
        3 => losses::gcbr_loss(real, gen, matrix, i0, eps),
        other => Err(Error::InvalidParameter(format!(
            "refinement stage must be 2 or 3, got {other}"
        ))),
    }
}

fn stage_breakdown(
    stage: u8,
    raw: f64,
    loss_cfg: &losses::LossConfig,
) -> Result<LossBreakdown> {
    let terms = match stage {
        2 => LossTerms { dab_cf: raw, ..Default::default() },
        _ => LossTerms { gcbr: raw, ..Default::default() },
    };
    losses::total_loss(stage, &terms, loss_cfg)
}

/// Runs one refinement stage from `init`, descending on the stage's weighted
/// loss with pixel values clamped to [0, 1] after every step.
///
/// A step that fails to decrease the loss is rejected and ends the run, so
/// the recorded loss sequence is nonincreasing. A step that blows the loss
/// past 10x its initial value aborts with a divergence diagnostic.
pub fn refine_stage(
    init: &Image,
    real: &Image,
    cfg: &StageConfig,
    matrix: &StainMatrix,
    i0: f64,
    eps: f64,
    loss_cfg: &losses::LossConfig,
) -> Result<(Image, RefineTrace)> {
    cfg.validate()?;
    init.require_same_shape(real)?;
    if init.channels() != 3 {
        return Err(Error::UnsupportedChannels(init.channels()));
    }
    let lambda = match cfg.stage {
        2 => loss_cfg.lambda_dab,
        _ => loss_cfg.lambda_grad,
    };

    let raw0 = stage_raw_loss(cfg.stage, real, init, matrix, i0, eps)?;
    let initial_breakdown = stage_breakdown(cfg.stage, raw0, loss_cfg)?;
    let l0 = initial_breakdown.total;
    let mut trace_losses = vec![l0];

    // Nothing measurable to optimize: return the image untouched rather
    // than letting Adam chase floating-point noise.
    if l0 <= 1e-20 {
        return Ok((
            init.clone(),
            RefineTrace {
                stage: cfg.stage,
                losses: trace_losses,
                final_breakdown: stage_breakdown(cfg.stage, raw0, loss_cfg)?,
                initial_breakdown,
                iterations: 0,
            },
        ));
    }

    let mut current = init.clone();
    let mut data = init.data().to_vec();
    let mut adam = AdamState::new(data.len());
    let mut prev_loss = l0;
    // Halved whenever a step fails to decrease the loss; never regrown.
    let mut step_scale = 1.0f64;
    const MAX_BACKTRACKS: usize = 40;

    'outer: for _ in 0..cfg.max_iters {
        let grad = match cfg.stage {
            2 => grad_dab_cf(real, &current, matrix, i0, eps)?,
            _ => grad_gcbr(real, &current, matrix, i0, eps)?,
        };
        let scaled: Vec<f64> = grad.data.iter().map(|g| lambda * g).collect();

        let mut accepted = false;
        for _ in 0..=MAX_BACKTRACKS {
            let snapshot_data = data.clone();
            let lr = cfg.learning_rate * step_scale;
            match cfg.optimizer {
                OptimizerKind::GradientDescent => {
                    for (d, g) in data.iter_mut().zip(&scaled) {
                        *d -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    adam.apply(&cfg.adam, lr, &scaled, &mut data);
                }
            }
            for d in &mut data {
                *d = d.clamp(0.0, 1.0);
            }
            let candidate = Image::new(init.height(), init.width(), 3, data.clone())
                .expect("clamped pixel data is a valid image");
            let raw = stage_raw_loss(cfg.stage, real, &candidate, matrix, i0, eps)?;
            let new_loss = lambda * raw;

            if new_loss > 10.0 * l0 && step_scale == 1.0 {
                return Err(Error::Divergence(format!(
                    "stage {} loss grew from {l0:.6e} to {new_loss:.6e}; lower the learning rate",
                    cfg.stage
                )));
            }
            if new_loss > prev_loss {
                // Rejected: restore the pixels, drop the stale momentum, and
                // damp the step. A fresh Adam step aligns with the gradient,
                // so a small enough scale always descends.
                data = snapshot_data;
                adam = AdamState::new(data.len());
                step_scale *= 0.5;
                continue;
            }
            current = candidate;
            trace_losses.push(new_loss);
            let rel_decrease = (prev_loss - new_loss) / prev_loss;
            prev_loss = new_loss;
            accepted = true;
            if rel_decrease < cfg.stop_tol {
                break 'outer;
            }
            break;
        }
        if !accepted {
            // No decrease even with a vanishing step: converged.
            break;
        }
    }

    let raw_final = stage_raw_loss(cfg.stage, real, &current, matrix, i0, eps)?;
    let final_breakdown = stage_breakdown(cfg.stage, raw_final, loss_cfg)?;
    let iterations = trace_losses.len() - 1;
    Ok((
        current,
        RefineTrace {
            stage: cfg.stage,
            losses: trace_losses,
            initial_breakdown,
            final_breakdown,
            iterations,
        },
    ))
}

/// Output of the full progressive run.
#[derive(Debug, Clone)]
pub struct ProgressiveResult {
    pub image: Image,
    /// Stage-2 output, fed bitwise into stage 3.
    pub stage2_image: Image,
    pub stage2: RefineTrace,
    pub stage3: RefineTrace,
    /// Change in the DAB color-fidelity term across stage 3, which does not
    /// constrain it.
    pub dab_cf_drift: f64,
}

/// Stage 2 then stage 3, the second stage starting from exactly the first
/// stage's output image.
pub fn run_progressive(
    init: &Image,
    real: &Image,
    stage2_cfg: &StageConfig,
    stage3_cfg: &StageConfig,
    matrix: &StainMatrix,
    i0: f64,
    eps: f64,
    loss_cfg: &losses::LossConfig,
) -> Result<ProgressiveResult> {
    let (stage2_image, stage2) = refine_stage(init, real, stage2_cfg, matrix, i0, eps, loss_cfg)?;
    let (image, stage3) = refine_stage(&stage2_image, real, stage3_cfg, matrix, i0, eps, loss_cfg)?;
    let dab_before = losses::dab_cf_loss(real, &stage2_image, matrix, i0, eps)?;
    let dab_after = losses::dab_cf_loss(real, &image, matrix, i0, eps)?;
    Ok(ProgressiveResult {
        image,
        stage2_image,
        stage2,
        stage3,
        dab_cf_drift: dab_after - dab_before,
    })
}

/// Patch-embedding parameters for the fixed random projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingParams {
    pub seed: u64,
    pub patch: usize,
    pub dim: usize,
    pub stride: usize,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        Self { seed: 0, patch: 8, dim: 64, stride: 8 }
    }
}

/// Embeds every patch of one image with a seeded Gaussian random projection
/// followed by L2 normalization. Same seed, same projection, so embeddings
/// of different images are directly comparable. Each flattened patch is
/// centered before projection; otherwise the shared brightness component
/// dominates every similarity.
pub fn patch_embed(
    img: &Image,
    seed: u64,
    patch: usize,
    dim: usize,
    stride: usize,
) -> Result<Vec<Embedding>> {
    if patch == 0 || dim == 0 || stride == 0 {
        return Err(Error::InvalidParameter(
            "patch, dim, and stride must all be >= 1".into(),
        ));
    }
    if patch > img.height().min(img.width()) {
        return Err(Error::InvalidParameter(format!(
            "patch {} exceeds image {}x{}: empty patch grid",
            patch,
            img.height(),
            img.width()
        )));
    }
    let input_len = patch * patch * img.channels();
    let mut rng = SplitMix64::new(seed);
    let projection: Vec<f64> = (0..dim * input_len).map(|_| rng.next_gaussian()).collect();

    let rows = (img.height() - patch) / stride + 1;
    let cols = (img.width() - patch) / stride + 1;
    let mut embeddings = Vec::with_capacity(rows * cols);
    let mut flat = vec![0.0; input_len];
    for gy in 0..rows {
        for gx in 0..cols {
            let mut i = 0;
            for py in 0..patch {
                for px in 0..patch {
                    for ch in 0..img.channels() {
                        flat[i] = img.get(gy * stride + py, gx * stride + px, ch);
                        i += 1;
                    }
                }
            }
            let mean = flat.iter().sum::<f64>() / input_len as f64;
            for v in &mut flat {
                *v -= mean;
            }
            let projected: Vec<f64> = (0..dim)
                .map(|d| {
                    projection[d * input_len..(d + 1) * input_len]
                        .iter()
                        .zip(&flat)
                        .map(|(r, x)| r * x)
                        .sum()
                })
                .collect();
            embeddings.push(Embedding::normalized(projected));
        }
    }
    Ok(embeddings)
}

/// Builds the multi-level embedding pyramid for a generated/real image pair.
/// Level `l` embeds both images after `l` rounds of 2x box downsampling;
/// negatives for a location are the real-image embeddings at every other
/// location of the same level.
pub fn build_embedding_pyramid(
    gen: &Image,
    real: &Image,
    params: &EmbeddingParams,
    levels: usize,
) -> Result<EmbeddingPyramid> {
    gen.require_same_shape(real)?;
    if levels == 0 {
        return Err(Error::InvalidParameter("levels must be >= 1".into()));
    }
    let mut layers = Vec::with_capacity(levels);
    let mut gen_level = gen.clone();
    let mut real_level = real.clone();
    for level in 0..levels {
        if level > 0 {
            gen_level = box_downsample2(&gen_level)?;
            real_level = box_downsample2(&real_level)?;
        }
        let seed = params.seed.wrapping_add(level as u64);
        let gen_embs = patch_embed(&gen_level, seed, params.patch, params.dim, params.stride)?;
        let real_embs = patch_embed(&real_level, seed, params.patch, params.dim, params.stride)?;
        let locations = (0..gen_embs.len())
            .map(|s| PatchPair {
                generated: gen_embs[s].clone(),
                real: real_embs[s].clone(),
                negatives: real_embs
                    .iter()
                    .enumerate()
                    .filter(|(t, _)| *t != s)
                    .map(|(_, e)| e.clone())
                    .collect(),
            })
            .collect();
        layers.push(PyramidLayer { locations });
    }
    Ok(EmbeddingPyramid { layers })
}
