//! Single source of defaults and overrides for hyperparameters and stain
//! constants.
//!
//! The on-disk format is a flat `key = value` text file with `#` comments.
//! Missing keys take the published defaults; unknown keys are rejected so a
//! misspelled lambda cannot silently skew an experiment.

use std::fmt::Write as _;
use std::path::Path;

use crate::deconv::StainMatrix;
use crate::error::{Error, Result};
use crate::losses::{LossConfig, SimilarityWeight, WeightSchedule};
use crate::refine::{EmbeddingParams, OptimizerKind, StageConfig};

/// Environment variable holding the default config path.
pub const CONFIG_ENV_VAR: &str = "PROGSTAIN_CONFIG";

/// Every tunable of the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolkitConfig {
    /// Row-major H, E, DAB absorbance rows; normalized when used.
    pub stain_matrix: [[f64; 3]; 3],
    pub i0: f64,
    pub eps: f64,
    pub tau: f64,
    pub step: u64,
    pub total_steps: u64,
    pub lambda_patchnce: f64,
    pub lambda_asp: f64,
    pub lambda_gp: f64,
    pub lambda_dab: f64,
    pub lambda_grad: f64,
    pub pyramid_levels: usize,
    pub schedule_g: WeightSchedule,
    pub weight_h: SimilarityWeight,
    pub stage2: StageConfig,
    pub stage3: StageConfig,
    pub embed: EmbeddingParams,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            stain_matrix: [
                [0.650, 0.704, 0.286],
                [0.072, 0.990, 0.105],
                [0.268, 0.570, 0.776],
            ],
            i0: 1.0,
            eps: 1e-6,
            tau: 0.07,
            step: 0,
            total_steps: 1000,
            lambda_patchnce: 10.0,
            lambda_asp: 10.0,
            lambda_gp: 10.0,
            lambda_dab: 0.5,
            lambda_grad: 1.0,
            pyramid_levels: 3,
            schedule_g: WeightSchedule::Linear,
            weight_h: SimilarityWeight::Affine,
            stage2: StageConfig::stage2_default(),
            stage3: StageConfig::stage3_default(),
            embed: EmbeddingParams::default(),
        }
    }
}

impl ToolkitConfig {
    /// Loads from an explicit path, from `$PROGSTAIN_CONFIG` when no path is
    /// given, or falls back to pure defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(CONFIG_ENV_VAR) {
                Some(env_path) => Self::from_file(Path::new(&env_path)),
                None => Ok(Self::default()),
            },
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim(), lineno + 1)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str, lineno: usize) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("line {lineno}: invalid {what}: `{value}`"));
        let parse_f64 = || value.parse::<f64>().map_err(|_| bad("number"));
        let parse_u64 = || value.parse::<u64>().map_err(|_| bad("integer"));
        let parse_usize = || value.parse::<usize>().map_err(|_| bad("integer"));
        match key {
            "stain_matrix" => {
                let nums: Vec<f64> = value
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("stain matrix"))?;
                if nums.len() != 9 {
                    return Err(Error::Config(format!(
                        "line {lineno}: stain_matrix needs 9 numbers, got {}",
                        nums.len()
                    )));
                }
                for r in 0..3 {
                    for c in 0..3 {
                        self.stain_matrix[r][c] = nums[3 * r + c];
                    }
                }
            }
            "i0" => self.i0 = parse_f64()?,
            "eps" => self.eps = parse_f64()?,
            "tau" => self.tau = parse_f64()?,
            "step" => self.step = parse_u64()?,
            "total_steps" => self.total_steps = parse_u64()?,
            "lambda_patchnce" => self.lambda_patchnce = parse_f64()?,
            "lambda_asp" => self.lambda_asp = parse_f64()?,
            "lambda_gp" => self.lambda_gp = parse_f64()?,
            "lambda_dab" => self.lambda_dab = parse_f64()?,
            "lambda_grad" => self.lambda_grad = parse_f64()?,
            "pyramid_levels" => self.pyramid_levels = parse_usize()?,
            "schedule_g" => self.schedule_g = WeightSchedule::parse(value)?,
            "weight_h" => self.weight_h = SimilarityWeight::parse(value)?,
            "stage2_learning_rate" => self.stage2.learning_rate = parse_f64()?,
            "stage2_max_iters" => self.stage2.max_iters = parse_usize()?,
            "stage2_optimizer" => self.stage2.optimizer = OptimizerKind::parse(value)?,
            "stage2_stop_tol" => self.stage2.stop_tol = parse_f64()?,
            "stage3_learning_rate" => self.stage3.learning_rate = parse_f64()?,
            "stage3_max_iters" => self.stage3.max_iters = parse_usize()?,
            "stage3_optimizer" => self.stage3.optimizer = OptimizerKind::parse(value)?,
            "stage3_stop_tol" => self.stage3.stop_tol = parse_f64()?,
            "adam_beta1" => {
                let v = parse_f64()?;
                self.stage2.adam.beta1 = v;
                self.stage3.adam.beta1 = v;
            }
            "adam_beta2" => {
                let v = parse_f64()?;
                self.stage2.adam.beta2 = v;
                self.stage3.adam.beta2 = v;
            }
            "adam_epsilon" => {
                let v = parse_f64()?;
                self.stage2.adam.epsilon = v;
                self.stage3.adam.epsilon = v;
            }
            "embed_seed" => self.embed.seed = parse_u64()?,
            "embed_patch" => self.embed.patch = parse_usize()?,
            "embed_dim" => self.embed.dim = parse_usize()?,
            "embed_stride" => self.embed.stride = parse_usize()?,
            other => {
                return Err(Error::Config(format!("line {lineno}: unknown key `{other}`")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if !(self.i0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "i0 must be positive, got {}",
                self.i0
            )));
        }
        // Rejects singular matrices and zero rows.
        self.stain()?;
        self.loss_config().validate()?;
        self.stage2.validate()?;
        self.stage3.validate()?;
        if self.embed.patch == 0 || self.embed.dim == 0 || self.embed.stride == 0 {
            return Err(Error::InvalidParameter(
                "embed_patch, embed_dim, and embed_stride must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Row-normalized stain matrix built from the configured absorbances.
    pub fn stain(&self) -> Result<StainMatrix> {
        StainMatrix::new(self.stain_matrix)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            step: self.step,
            total_steps: self.total_steps,
            lambda_patchnce: self.lambda_patchnce,
            lambda_asp: self.lambda_asp,
            lambda_gp: self.lambda_gp,
            lambda_dab: self.lambda_dab,
            lambda_grad: self.lambda_grad,
            pyramid_levels: self.pyramid_levels,
            schedule: self.schedule_g,
            similarity: self.weight_h,
        }
    }

    /// Serializes every key; parsing the result reproduces the config.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "stain_matrix = {} {} {} {} {} {} {} {} {}",
            self.stain_matrix[0][0],
            self.stain_matrix[0][1],
            self.stain_matrix[0][2],
            self.stain_matrix[1][0],
            self.stain_matrix[1][1],
            self.stain_matrix[1][2],
            self.stain_matrix[2][0],
            self.stain_matrix[2][1],
            self.stain_matrix[2][2],
        );
        let _ = writeln!(out, "i0 = {}", self.i0);
        let _ = writeln!(out, "eps = {}", self.eps);
        let _ = writeln!(out, "tau = {}", self.tau);
        let _ = writeln!(out, "step = {}", self.step);
        let _ = writeln!(out, "total_steps = {}", self.total_steps);
        let _ = writeln!(out, "lambda_patchnce = {}", self.lambda_patchnce);
        let _ = writeln!(out, "lambda_asp = {}", self.lambda_asp);
        let _ = writeln!(out, "lambda_gp = {}", self.lambda_gp);
        let _ = writeln!(out, "lambda_dab = {}", self.lambda_dab);
        let _ = writeln!(out, "lambda_grad = {}", self.lambda_grad);
        let _ = writeln!(out, "pyramid_levels = {}", self.pyramid_levels);
        let _ = writeln!(out, "schedule_g = {}", self.schedule_g.name());
        let _ = writeln!(out, "weight_h = {}", self.weight_h.name());
        let _ = writeln!(out, "stage2_learning_rate = {}", self.stage2.learning_rate);
        let _ = writeln!(out, "stage2_max_iters = {}", self.stage2.max_iters);
        let _ = writeln!(out, "stage2_optimizer = {}", self.stage2.optimizer.name());
        let _ = writeln!(out, "stage2_stop_tol = {}", self.stage2.stop_tol);
        let _ = writeln!(out, "stage3_learning_rate = {}", self.stage3.learning_rate);
        let _ = writeln!(out, "stage3_max_iters = {}", self.stage3.max_iters);
        let _ = writeln!(out, "stage3_optimizer = {}", self.stage3.optimizer.name());
        let _ = writeln!(out, "stage3_stop_tol = {}", self.stage3.stop_tol);
        let _ = writeln!(out, "adam_beta1 = {}", self.stage2.adam.beta1);
        let _ = writeln!(out, "adam_beta2 = {}", self.stage2.adam.beta2);
        let _ = writeln!(out, "adam_epsilon = {}", self.stage2.adam.epsilon);
        let _ = writeln!(out, "embed_seed = {}", self.embed.seed);
        let _ = writeln!(out, "embed_patch = {}", self.embed.patch);
        let _ = writeln!(out, "embed_dim = {}", self.embed.dim);
        let _ = writeln!(out, "embed_stride = {}", self.embed.stride);
        out
    }
}
