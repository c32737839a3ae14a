//! Command-line entry point: `deconvolve`, `loss`, `refine`, `metrics`,
//! `gradcheck`, and `synth` subcommands.
//!
//! Machine-readable output is JSON on stdout; human-readable summaries go to
//! stderr. Exit codes: 0 success, 1 usage error (bad arguments or inputs),
//! 2 computation error (failed writes, divergence, tolerance exceeded).

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ToolkitConfig;
use crate::deconv;
use crate::error::Error;
use crate::image::{load_image, save_image, synth_fixture, Image};
use crate::losses::{self, LossTerms};
use crate::metrics;
use crate::refine::{self, LossKind};
use crate::rng::SplitMix64;

const USAGE: &str = "\
usage: progstain <command> [args]

commands:
  synth      --seed N --size N[xM] --cells N --out PREFIX [--config PATH]
             generate a synthetic H&E/IHC fixture pair with ground truth
  deconvolve INPUT --out PREFIX [--config PATH]
             separate an image into H/E/DAB concentration images
  loss       REAL GEN --stage 1|2|3 [--config PATH]
             print the stage loss breakdown for an image pair
  refine     INIT REAL --out PATH --trace PREFIX [--config PATH]
             run progressive stage-2 + stage-3 pixel refinement
  metrics    REAL GEN
             print SSIM / PSNR / gradient-MSE / perceptual-hash distances
  gradcheck  --seed N --size N --loss dab_cf|gcbr [--config PATH]
             compare analytic gradients against finite differences
  help       print this message";

enum CliError {
    Usage(String),
    Computation(String),
}

type CliResult = Result<(), CliError>;

fn usage_err<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

/// Input-side failures (unreadable/undecodable files, bad config) are usage
/// errors; failures while computing or writing artifacts are computation
/// errors.
fn input_err(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn compute_err(e: Error) -> CliError {
    CliError::Computation(e.to_string())
}

/// Runs the CLI on the given arguments (without the program name) and
/// returns the process exit code.
pub fn run<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let argv: Vec<String> = args.into_iter().collect();
    let Some(command) = argv.first() else {
        eprintln!("{USAGE}");
        return 1;
    };
    let rest = &argv[1..];
    let outcome = match command.as_str() {
        "synth" => cmd_synth(rest),
        "deconvolve" => cmd_deconvolve(rest),
        "loss" => cmd_loss(rest),
        "refine" => cmd_refine(rest),
        "metrics" => cmd_metrics(rest),
        "gradcheck" => cmd_gradcheck(rest),
        "help" | "--help" | "-h" => {
            eprintln!("{USAGE}");
            return 0;
        }
        other => {
            eprintln!("error: unknown command `{other}`\n{USAGE}");
            return 1;
        }
    };
    match outcome {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Computation(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

/// Positional arguments plus `--flag value` pairs.
struct ParsedArgs {
    positional: Vec<String>,
    flags: Vec<(String, String)>,
}

impl ParsedArgs {
    fn parse(args: &[String]) -> Result<Self, CliError> {
        let mut positional = Vec::new();
        let mut flags = Vec::new();
        let mut iter = args.iter();
        while let Some(arg) = iter.next() {
            if let Some(name) = arg.strip_prefix("--") {
                let value = iter
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("flag --{name} needs a value")))?;
                flags.push((name.to_string(), value.clone()));
            } else {
                positional.push(arg.clone());
            }
        }
        Ok(Self { positional, flags })
    }

    fn flag(&self, name: &str) -> Option<&str> {
        self.flags
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    fn require_flag(&self, name: &str) -> Result<&str, CliError> {
        self.flag(name)
            .ok_or_else(|| CliError::Usage(format!("missing required flag --{name}")))
    }

    fn check_known_flags(&self, known: &[&str]) -> CliResult {
        for (name, _) in &self.flags {
            if !known.contains(&name.as_str()) {
                return usage_err(format!("unknown flag --{name}"));
            }
        }
        Ok(())
    }

    fn expect_positional(&self, count: usize, what: &str) -> CliResult {
        if self.positional.len() != count {
            return usage_err(format!(
                "expected {count} positional argument(s) ({what}), got {}",
                self.positional.len()
            ));
        }
        Ok(())
    }
}

fn load_config_arg(parsed: &ParsedArgs) -> Result<ToolkitConfig, CliError> {
    ToolkitConfig::load(parsed.flag("config").map(Path::new)).map_err(input_err)
}

fn load_input_image(path: &str) -> Result<Image, CliError> {
    load_image(path).map_err(|e| CliError::Usage(format!("cannot load `{path}`: {e}")))
}

fn parse_u64_flag(parsed: &ParsedArgs, name: &str, default: u64) -> Result<u64, CliError> {
    match parsed.flag(name) {
        None => Ok(default),
        Some(v) => v
            .parse::<u64>()
            .map_err(|_| CliError::Usage(format!("--{name} expects an integer, got `{v}`"))),
    }
}

/// `N` (square) or `HxW`.
fn parse_size(value: &str) -> Result<(usize, usize), CliError> {
    let parse_one = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| CliError::Usage(format!("--size expects N or HxW, got `{value}`")))
    };
    match value.split_once('x') {
        Some((h, w)) => Ok((parse_one(h)?, parse_one(w)?)),
        None => {
            let n = parse_one(value)?;
            Ok((n, n))
        }
    }
}

fn write_image(img: &Image, path: &Path) -> CliResult {
    save_image(img, path).map_err(|e| {
        CliError::Computation(format!("cannot write `{}`: {e}", path.display()))
    })
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("json serialization"));
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(args: &[String]) -> CliResult {
    let parsed = ParsedArgs::parse(args)?;
    parsed.check_known_flags(&["seed", "size", "cells", "out", "config"])?;
    parsed.expect_positional(0, "none")?;
    let _config = load_config_arg(&parsed)?;
    let seed = parse_u64_flag(&parsed, "seed", 0)?;
    let (height, width) = parse_size(parsed.flag("size").unwrap_or("64"))?;
    let cells = parse_u64_flag(&parsed, "cells", 3)? as usize;
    let prefix = parsed.require_flag("out")?;

    let (he, ihc, truth) =
        synth_fixture(seed, height, width, cells).map_err(input_err)?;
    let he_path = PathBuf::from(format!("{prefix}_he.png"));
    let ihc_path = PathBuf::from(format!("{prefix}_ihc.png"));
    let truth_path = PathBuf::from(format!("{prefix}_truth.json"));
    write_image(&he, &he_path)?;
    write_image(&ihc, &ihc_path)?;
    std::fs::write(&truth_path, truth.sidecar_json()).map_err(|e| {
        CliError::Computation(format!("cannot write `{}`: {e}", truth_path.display()))
    })?;

    #[derive(Serialize)]
    struct SynthOutput {
        he: String,
        ihc: String,
        truth: String,
        height: usize,
        width: usize,
        cells: usize,
        seed: u64,
    }
    print_json(&SynthOutput {
        he: he_path.display().to_string(),
        ihc: ihc_path.display().to_string(),
        truth: truth_path.display().to_string(),
        height,
        width,
        cells,
        seed,
    });
    eprintln!("wrote fixture pair ({height}x{width}, {cells} cells, seed {seed})");
    Ok(())
}

// ---------------------------------------------------------------------------
// deconvolve
// ---------------------------------------------------------------------------

fn cmd_deconvolve(args: &[String]) -> CliResult {
    let parsed = ParsedArgs::parse(args)?;
    parsed.check_known_flags(&["out", "config"])?;
    parsed.expect_positional(1, "input image")?;
    let config = load_config_arg(&parsed)?;
    let prefix = parsed.require_flag("out")?;
    let img = load_input_image(&parsed.positional[0])?;
    let matrix = config.stain().map_err(input_err)?;

    let od = deconv::rgb_to_od(&img, config.i0, config.eps).map_err(input_err)?;
    let (c_h, c_e, c_d) = deconv::separate_stains(&od, &matrix);

    #[derive(Serialize)]
    struct StainSummary {
        mean: f64,
        max: f64,
    }
    #[derive(Serialize)]
    struct DeconvOutput {
        hematoxylin: StainSummary,
        eosin: StainSummary,
        dab: StainSummary,
    }
    let mut summaries = Vec::new();
    for map in [&c_h, &c_e, &c_d] {
        let n = map.data().len() as f64;
        let mean = map.data().iter().sum::<f64>() / n;
        let max = map.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        summaries.push(StainSummary { mean, max });
        // Min-max scaled grayscale rendering for viewing.
        let weights = deconv::normalize_weight(map);
        let view = Image::new(map.height(), map.width(), 1, weights.data().to_vec())
            .map_err(compute_err)?;
        let path = PathBuf::from(format!("{prefix}_{}.png", map.stain().label()));
        write_image(&view, &path)?;
    }
    let dab = summaries.pop().unwrap();
    let eosin = summaries.pop().unwrap();
    let hematoxylin = summaries.pop().unwrap();
    print_json(&DeconvOutput { hematoxylin, eosin, dab });
    eprintln!("wrote {prefix}_hematoxylin.png, {prefix}_eosin.png, {prefix}_dab.png");
    Ok(())
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

fn cmd_loss(args: &[String]) -> CliResult {
    let parsed = ParsedArgs::parse(args)?;
    parsed.check_known_flags(&["stage", "config"])?;
    parsed.expect_positional(2, "real image, generated image")?;
    let config = load_config_arg(&parsed)?;
    let stage: u8 = parsed
        .require_flag("stage")?
        .parse()
        .map_err(|_| CliError::Usage("--stage expects 1, 2, or 3".into()))?;
    if !(1..=3).contains(&stage) {
        return usage_err(format!("invalid stage {stage} (expected 1, 2, or 3)"));
    }
    let real = load_input_image(&parsed.positional[0])?;
    let gen = load_input_image(&parsed.positional[1])?;
    real.require_same_shape(&gen).map_err(input_err)?;
    if stage >= 2 && real.channels() != 3 {
        return usage_err("stain-based stages need 3-channel images");
    }

    let matrix = config.stain().map_err(input_err)?;
    let loss_cfg = config.loss_config();
    let terms = match stage {
        1 => {
            let pyr = refine::build_embedding_pyramid(
                &gen,
                &real,
                &config.embed,
                config.pyramid_levels,
            )
            .map_err(input_err)?;
            LossTerms {
                adv: 0.0,
                patchnce: losses::patchnce_loss(&pyr, loss_cfg.tau).map_err(compute_err)?,
                asp: losses::asp_loss(&pyr, &loss_cfg).map_err(compute_err)?,
                gp: losses::gaussian_pyramid_loss(&real, &gen, config.pyramid_levels)
                    .map_err(input_err)?,
                ..Default::default()
            }
        }
        2 => LossTerms {
            dab_cf: losses::dab_cf_loss(&real, &gen, &matrix, config.i0, config.eps)
                .map_err(compute_err)?,
            ..Default::default()
        },
        _ => LossTerms {
            gcbr: losses::gcbr_loss(&real, &gen, &matrix, config.i0, config.eps)
                .map_err(compute_err)?,
            ..Default::default()
        },
    };
    let breakdown = losses::total_loss(stage, &terms, &loss_cfg).map_err(compute_err)?;
    print_json(&breakdown);
    eprintln!("stage {stage} total = {:.6e}", breakdown.total);
    Ok(())
}

// ---------------------------------------------------------------------------
// refine
// ---------------------------------------------------------------------------

fn cmd_refine(args: &[String]) -> CliResult {
    let parsed = ParsedArgs::parse(args)?;
    parsed.check_known_flags(&["out", "trace", "config"])?;
    parsed.expect_positional(2, "initial image, real image")?;
    let config = load_config_arg(&parsed)?;
    let out_path = PathBuf::from(parsed.require_flag("out")?);
    let trace_prefix = parsed.require_flag("trace")?.to_string();
    let init = load_input_image(&parsed.positional[0])?;
    let real = load_input_image(&parsed.positional[1])?;
    init.require_same_shape(&real).map_err(input_err)?;
    if init.channels() != 3 {
        return usage_err("refinement needs 3-channel images");
    }
    let matrix = config.stain().map_err(input_err)?;
    let loss_cfg = config.loss_config();

    let result = refine::run_progressive(
        &init,
        &real,
        &config.stage2,
        &config.stage3,
        &matrix,
        config.i0,
        config.eps,
        &loss_cfg,
    )
    .map_err(compute_err)?;

    write_image(&result.image, &out_path)?;
    for (trace, label) in [(&result.stage2, "stage2"), (&result.stage3, "stage3")] {
        let path = PathBuf::from(format!("{trace_prefix}.{label}.jsonl"));
        std::fs::write(&path, trace.to_json_lines()).map_err(|e| {
            CliError::Computation(format!("cannot write `{}`: {e}", path.display()))
        })?;
    }

    #[derive(Serialize)]
    struct StageSummary {
        initial_loss: f64,
        final_loss: f64,
        iterations: usize,
    }
    #[derive(Serialize)]
    struct RefineOutput {
        stage2: StageSummary,
        stage3: StageSummary,
        dab_cf_drift: f64,
        output: String,
    }
    let summary = RefineOutput {
        stage2: StageSummary {
            initial_loss: result.stage2.initial_loss(),
            final_loss: result.stage2.final_loss(),
            iterations: result.stage2.iterations,
        },
        stage3: StageSummary {
            initial_loss: result.stage3.initial_loss(),
            final_loss: result.stage3.final_loss(),
            iterations: result.stage3.iterations,
        },
        dab_cf_drift: result.dab_cf_drift,
        output: out_path.display().to_string(),
    };
    print_json(&summary);
    eprintln!(
        "stage 2: {:.6e} -> {:.6e} in {} iters; stage 3: {:.6e} -> {:.6e} in {} iters",
        summary.stage2.initial_loss,
        summary.stage2.final_loss,
        summary.stage2.iterations,
        summary.stage3.initial_loss,
        summary.stage3.final_loss,
        summary.stage3.iterations,
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

fn cmd_metrics(args: &[String]) -> CliResult {
    let parsed = ParsedArgs::parse(args)?;
    parsed.check_known_flags(&[])?;
    parsed.expect_positional(2, "real image, generated image")?;
    let real = load_input_image(&parsed.positional[0])?;
    let gen = load_input_image(&parsed.positional[1])?;
    real.require_same_shape(&gen).map_err(input_err)?;
    let report = metrics::evaluate_pair(&real, &gen).map_err(input_err)?;
    print_json(&report);
    eprintln!(
        "ssim {:.4}, psnr {:.2} dB, gradient mse {:.6e}",
        report.ssim, report.psnr, report.gradient_mse
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

fn cmd_gradcheck(args: &[String]) -> CliResult {
    let parsed = ParsedArgs::parse(args)?;
    parsed.check_known_flags(&["seed", "size", "loss", "config"])?;
    parsed.expect_positional(0, "none")?;
    let config = load_config_arg(&parsed)?;
    let seed = parse_u64_flag(&parsed, "seed", 1)?;
    let (height, width) = parse_size(parsed.flag("size").unwrap_or("8"))?;
    if height < 8 || width < 8 {
        return usage_err(format!("--size must be at least 8, got {height}x{width}"));
    }
    let kind = LossKind::parse(parsed.flag("loss").unwrap_or("dab_cf")).map_err(input_err)?;
    let tolerance = match kind {
        LossKind::DabCf => 1e-4,
        LossKind::Gcbr => 1e-3,
    };
    let matrix = config.stain().map_err(input_err)?;

    let mut rng = SplitMix64::new(seed);
    let mut random_image = || {
        let data: Vec<f64> = (0..height * width * 3)
            .map(|_| rng.next_range(0.05, 0.95))
            .collect();
        Image::new(height, width, 3, data).expect("in-range data")
    };
    let real = random_image();
    let gen = random_image();
    let max_rel_error =
        refine::gradient_check_error(kind, &real, &gen, &matrix, config.i0, config.eps)
            .map_err(compute_err)?;

    #[derive(Serialize)]
    struct GradcheckOutput {
        loss: &'static str,
        max_rel_error: f64,
        tolerance: f64,
        passed: bool,
    }
    let passed = max_rel_error < tolerance;
    print_json(&GradcheckOutput {
        loss: match kind {
            LossKind::DabCf => "dab_cf",
            LossKind::Gcbr => "gcbr",
        },
        max_rel_error,
        tolerance,
        passed,
    });
    if passed {
        eprintln!("gradient check passed: {max_rel_error:.3e} < {tolerance:.0e}");
        Ok(())
    } else {
        Err(CliError::Computation(format!(
            "gradient check failed: {max_rel_error:.3e} >= {tolerance:.0e}"
        )))
    }
}
