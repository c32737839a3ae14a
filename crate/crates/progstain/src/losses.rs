//! Loss kernels: InfoNCE/SP, adaptive patch weighting, aggregated ASP,
//! PatchNCE, Gaussian-pyramid reconstruction, DAB color fidelity, GCBR
//! boundary refinement, and the stage-wise total objective.

use serde::Serialize;

use crate::deconv::{self, StainMatrix};
use crate::error::{Error, Result};
use crate::gradients;
use crate::image::Image;

/// Feature vector for one patch location.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    unit_norm: bool,
}

impl Embedding {
    /// Wraps raw values without normalizing.
    pub fn raw(values: Vec<f64>) -> Self {
        Self { values, unit_norm: false }
    }

    /// L2-normalizes the vector. A (near-)zero vector is left untouched and
    /// keeps `unit_norm == false`.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Self { values, unit_norm: false };
        }
        for v in &mut values {
            *v /= norm;
        }
        Self { values, unit_norm: true }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "embedding dims {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }
}

/// Generated/real embedding pair plus negatives at one spatial location.
#[derive(Debug, Clone)]
pub struct PatchPair {
    pub generated: Embedding,
    pub real: Embedding,
    pub negatives: Vec<Embedding>,
}

/// All locations of one feature layer.
#[derive(Debug, Clone)]
pub struct PyramidLayer {
    pub locations: Vec<PatchPair>,
}

/// Per-layer, per-location embeddings across feature scales.
#[derive(Debug, Clone)]
pub struct EmbeddingPyramid {
    pub layers: Vec<PyramidLayer>,
}

/// Ramp applied to the adaptive weight over training progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSchedule {
    /// g(u) = u
    Linear,
    /// g(u) = u^2
    Quadratic,
}

impl WeightSchedule {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            WeightSchedule::Linear => u,
            WeightSchedule::Quadratic => u * u,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightSchedule::Linear => "linear",
            WeightSchedule::Quadratic => "quadratic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(WeightSchedule::Linear),
            "quadratic" => Ok(WeightSchedule::Quadratic),
            other => Err(Error::Config(format!("unknown schedule `{other}`"))),
        }
    }
}

/// Monotone map from cosine similarity to a patch weight in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityWeight {
    /// h(s) = clamp((1 + s) / 2, 0, 1)
    Affine,
    /// h(s) = clamp(s, 0, 1)
    Relu,
}

impl SimilarityWeight {
    pub fn eval(self, sim: f64) -> f64 {
        match self {
            SimilarityWeight::Affine => ((1.0 + sim) / 2.0).clamp(0.0, 1.0),
            SimilarityWeight::Relu => sim.clamp(0.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SimilarityWeight::Affine => "affine",
            SimilarityWeight::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(SimilarityWeight::Affine),
            "relu" => Ok(SimilarityWeight::Relu),
            other => Err(Error::Config(format!("unknown similarity weight `{other}`"))),
        }
    }
}

/// Hyperparameters shared by the loss kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub step: u64,
    pub total_steps: u64,
    pub lambda_patchnce: f64,
    pub lambda_asp: f64,
    pub lambda_gp: f64,
    pub lambda_dab: f64,
    pub lambda_grad: f64,
    pub pyramid_levels: usize,
    pub schedule: WeightSchedule,
    pub similarity: SimilarityWeight,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            step: 0,
            total_steps: 1000,
            lambda_patchnce: 10.0,
            lambda_asp: 10.0,
            lambda_gp: 10.0,
            lambda_dab: 0.5,
            lambda_grad: 1.0,
            pyramid_levels: 3,
            schedule: WeightSchedule::Linear,
            similarity: SimilarityWeight::Affine,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::InvalidParameter("total_steps must be >= 1".into()));
        }
        if self.step > self.total_steps {
            return Err(Error::InvalidParameter(format!(
                "step {} exceeds total_steps {}",
                self.step, self.total_steps
            )));
        }
        for (name, v) in [
            ("lambda_patchnce", self.lambda_patchnce),
            ("lambda_asp", self.lambda_asp),
            ("lambda_gp", self.lambda_gp),
            ("lambda_dab", self.lambda_dab),
            ("lambda_grad", self.lambda_grad),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if self.pyramid_levels == 0 {
            return Err(Error::InvalidParameter("pyramid_levels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Raw (unweighted) term values fed to [`total_loss`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub adv: f64,
    pub patchnce: f64,
    pub asp: f64,
    pub gp: f64,
    pub dab_cf: f64,
    pub gcbr: f64,
}

/// Named loss terms plus the weighted stage total. Terms that do not belong
/// to the active stage are omitted.
#[derive(Debug, Clone, Serialize)]
pub struct LossBreakdown {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patchnce: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dab_cf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gcbr: Option<f64>,
    pub total: f64,
}

/// InfoNCE-style contrastive loss for one positive pair against a set of
/// negatives. Evaluated as `logsumexp(all sims / tau) - pos_sim / tau`, which
/// is exact for the empty-negatives and uniform-similarity identities.
pub fn info_nce(
    pos_gen: &Embedding,
    pos_real: &Embedding,
    negatives: &[Embedding],
    tau: f64,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let pos = pos_gen.dot(pos_real)? / tau;
    let mut scaled = Vec::with_capacity(negatives.len() + 1);
    scaled.push(pos);
    for n in negatives {
        scaled.push(pos_gen.dot(n)? / tau);
    }
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scaled.iter().map(|s| (s - max).exp()).sum();
    Ok(max + sum.ln() - pos)
}

/// Similarity-aware patch weight `w_t = (1 - g(t/T)) + g(t/T) * h(sim)` with
/// the default linear ramp and affine similarity map.
pub fn adaptive_weight(sim: f64, step: u64, total_steps: u64) -> Result<f64> {
    adaptive_weight_with(
        sim,
        step,
        total_steps,
        WeightSchedule::Linear,
        SimilarityWeight::Affine,
    )
}

pub fn adaptive_weight_with(
    sim: f64,
    step: u64,
    total_steps: u64,
    schedule: WeightSchedule,
    similarity: SimilarityWeight,
) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidParameter("total_steps must be >= 1".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidParameter(format!(
            "step {step} exceeds total_steps {total_steps}"
        )));
    }
    let g = schedule.eval(step as f64 / total_steps as f64);
    Ok((1.0 - g) * 1.0 + g * similarity.eval(sim))
}

/// Normalized adaptive weights for one layer; they sum to 1. When the
/// schedule drives every raw weight to zero the layer falls back to uniform
/// weighting so the loss stays finite.
pub fn normalized_layer_weights(layer: &PyramidLayer, cfg: &LossConfig) -> Result<Vec<f64>> {
    if layer.locations.is_empty() {
        return Err(Error::InvalidParameter(
            "pyramid layer has zero locations".into(),
        ));
    }
    let mut weights = Vec::with_capacity(layer.locations.len());
    for loc in &layer.locations {
        let sim = loc.generated.dot(&loc.real)?;
        weights.push(adaptive_weight_with(
            sim,
            cfg.step,
            cfg.total_steps,
            cfg.schedule,
            cfg.similarity,
        )?);
    }
    let total: f64 = weights.iter().sum();
    if total < 1e-12 {
        let uniform = 1.0 / weights.len() as f64;
        weights.iter_mut().for_each(|w| *w = uniform);
    } else {
        weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(weights)
}

fn weighted_pyramid_nce<F>(pyr: &EmbeddingPyramid, tau: f64, mut layer_weights: F) -> Result<f64>
where
    F: FnMut(&PyramidLayer) -> Result<Vec<f64>>,
{
    if pyr.layers.is_empty() {
        return Err(Error::InvalidParameter("pyramid has no layers".into()));
    }
    let mut total = 0.0;
    for layer in &pyr.layers {
        let weights = layer_weights(layer)?;
        for (loc, w) in layer.locations.iter().zip(weights) {
            total += w * info_nce(&loc.generated, &loc.real, &loc.negatives, tau)?;
        }
    }
    Ok(total)
}

/// Aggregated ASP loss: per-layer adaptive-weighted InfoNCE, weights summing
/// to one inside each layer. At `step == 0` this reduces to the per-layer
/// mean and matches [`patchnce_loss`] bit for bit.
pub fn asp_loss(pyr: &EmbeddingPyramid, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    weighted_pyramid_nce(pyr, cfg.tau, |layer| normalized_layer_weights(layer, cfg))
}

/// PatchNCE: the same aggregation with every weight fixed at 1 (uniform mean
/// per layer).
pub fn patchnce_loss(pyr: &EmbeddingPyramid, tau: f64) -> Result<f64> {
    weighted_pyramid_nce(pyr, tau, |layer| {
        if layer.locations.is_empty() {
            return Err(Error::InvalidParameter(
                "pyramid layer has zero locations".into(),
            ));
        }
        let uniform = 1.0 / layer.locations.len() as f64;
        Ok(vec![uniform; layer.locations.len()])
    })
}

/// Gaussian-pyramid reconstruction loss: sum over levels of the mean
/// absolute difference, each level built with a (1,4,6,4,1)/16 blur and 2x
/// decimation. Replicate borders keep constants constant.
pub fn gaussian_pyramid_loss(a: &Image, b: &Image, levels: usize) -> Result<f64> {
    a.require_same_shape(b)?;
    if levels == 0 {
        return Err(Error::InvalidParameter("levels must be >= 1".into()));
    }
    let min_dim = a.height().min(a.width());
    if min_dim < (1usize << (levels - 1)) {
        return Err(Error::InvalidParameter(format!(
            "{} levels need dimensions >= {}, got {}x{}",
            levels,
            1usize << (levels - 1),
            a.height(),
            a.width()
        )));
    }
    let mut cur_a = a.clone();
    let mut cur_b = b.clone();
    let mut total = mean_abs_diff(&cur_a, &cur_b);
    for _ in 1..levels {
        cur_a = pyramid_reduce(&cur_a);
        cur_b = pyramid_reduce(&cur_b);
        total += mean_abs_diff(&cur_a, &cur_b);
    }
    Ok(total)
}

fn mean_abs_diff(a: &Image, b: &Image) -> f64 {
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum();
    sum / a.data().len() as f64
}

/// One pyramid level: separable 5-tap binomial blur, then keep even indices.
fn pyramid_reduce(img: &Image) -> Image {
    const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let src = img.data();
    let mut horiz = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, k) in K.iter().enumerate() {
                    let sx = (x as isize + i as isize - 2).clamp(0, w as isize - 1) as usize;
                    acc += k * src[(y * w + sx) * c + ch];
                }
                horiz[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let nh = h.div_ceil(2);
    let nw = w.div_ceil(2);
    let mut out = vec![0.0; nh * nw * c];
    for y in 0..nh {
        for x in 0..nw {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, k) in K.iter().enumerate() {
                    let sy = (2 * y as isize + i as isize - 2).clamp(0, h as isize - 1) as usize;
                    acc += k * horiz[(sy * w + 2 * x) * c + ch];
                }
                out[(y * nw + x) * c + ch] = acc;
            }
        }
    }
    Image::from_clamped(nh, nw, c, out).expect("reduced level of a valid image is valid")
}

/// DAB color-fidelity loss: MSE between the deconvolved DAB concentration
/// maps of the two images.
pub fn dab_cf_loss(
    real: &Image,
    gen: &Image,
    matrix: &StainMatrix,
    i0: f64,
    eps: f64,
) -> Result<f64> {
    real.require_same_shape(gen)?;
    let c_real = deconv::dab_concentration(real, matrix, i0, eps)?;
    let c_gen = deconv::dab_concentration(gen, matrix, i0, eps)?;
    let n = c_real.data().len() as f64;
    Ok(c_real
        .data()
        .iter()
        .zip(c_gen.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Gradient-guided cell boundary refinement loss: DAB-weighted MSE between
/// the Sobel gradient-magnitude maps. The weight map derives from `real`
/// only; an image with no DAB signal yields zero loss.
pub fn gcbr_loss(
    real: &Image,
    gen: &Image,
    matrix: &StainMatrix,
    i0: f64,
    eps: f64,
) -> Result<f64> {
    real.require_same_shape(gen)?;
    let eta = deconv::normalize_weight(&deconv::dab_concentration(real, matrix, i0, eps)?);
    let eta_sum = eta.sum();
    if eta_sum < 1e-12 {
        return Ok(0.0);
    }
    let d_real = gradients::gradient_magnitude(&gradients::to_gray(real)?)?;
    let d_gen = gradients::gradient_magnitude(&gradients::to_gray(gen)?)?;
    let weighted: f64 = eta
        .data()
        .iter()
        .zip(d_gen.data().iter().zip(d_real.data()))
        .map(|(w, (dg, dr))| w * (dg - dr) * (dg - dr))
        .sum();
    Ok(weighted / eta_sum)
}

/// Stage-wise total objective:
/// stage 1 = adv + λ_PatchNCE·patchnce + λ_ASP·asp + λ_GP·gp,
/// stage 2 = λ_DAB·dab_cf, stage 3 = λ_grad·gcbr.
pub fn total_loss(stage: u8, terms: &LossTerms, cfg: &LossConfig) -> Result<LossBreakdown> {
    match stage {
        1 => Ok(LossBreakdown {
            adv: Some(terms.adv),
            patchnce: Some(terms.patchnce),
            asp: Some(terms.asp),
            gp: Some(terms.gp),
            dab_cf: None,
            gcbr: None,
            total: terms.adv
                + cfg.lambda_patchnce * terms.patchnce
                + cfg.lambda_asp * terms.asp
                + cfg.lambda_gp * terms.gp,
        }),
        2 => Ok(LossBreakdown {
            adv: None,
            patchnce: None,
            asp: None,
            gp: None,
            dab_cf: Some(terms.dab_cf),
            gcbr: None,
            total: cfg.lambda_dab * terms.dab_cf,
        }),
        3 => Ok(LossBreakdown {
            adv: None,
            patchnce: None,
            asp: None,
            gp: None,
            dab_cf: None,
            gcbr: Some(terms.gcbr),
            total: cfg.lambda_grad * terms.gcbr,
        }),
        other => Err(Error::InvalidParameter(format!(
            "invalid stage index {other} (expected 1, 2, or 3)"
        ))),
    }
}
