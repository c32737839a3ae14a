//! The adaptive patch weighting behind the ASP loss: early in training every
//! patch counts equally; as the schedule ramps, weight concentrates on
//! patches whose generated embedding already agrees with the ground truth.
//!
//! ```bash
//! cargo run -p progstain --example contrastive_weighting
//! ```

use progstain::losses::{
    adaptive_weight, asp_loss, info_nce, normalized_layer_weights, patchnce_loss, Embedding,
    EmbeddingPyramid, LossConfig, PatchPair, PyramidLayer,
};

fn main() -> progstain::Result<()> {
    // Weight trajectory for a well-matched and a mismatched patch.
    println!("{:>8} {:>12} {:>12}", "t/T", "w(sim=0.9)", "w(sim=-0.5)");
    let total = 1000;
    for step in [0, 250, 500, 750, 1000] {
        println!(
            "{:>8.2} {:>12.4} {:>12.4}",
            step as f64 / total as f64,
            adaptive_weight(0.9, step, total)?,
            adaptive_weight(-0.5, step, total)?,
        );
    }

    // A two-location layer: one aligned pair, one mismatched pair.
    let aligned = Embedding::normalized(vec![1.0, 0.0, 0.0]);
    let opposed = Embedding::normalized(vec![-1.0, 0.0, 0.0]);
    let off_axis = Embedding::normalized(vec![0.0, 1.0, 0.0]);
    let layer = PyramidLayer {
        locations: vec![
            PatchPair {
                generated: aligned.clone(),
                real: aligned.clone(),
                negatives: vec![off_axis.clone()],
            },
            PatchPair {
                generated: aligned.clone(),
                real: opposed,
                negatives: vec![off_axis],
            },
        ],
    };
    let pyr = EmbeddingPyramid { layers: vec![layer] };

    println!("\nper-location InfoNCE at tau = 0.07:");
    for (i, loc) in pyr.layers[0].locations.iter().enumerate() {
        let nce = info_nce(&loc.generated, &loc.real, &loc.negatives, 0.07)?;
        println!("  location {i}: {nce:.4}");
    }

    println!("\n{:>8} {:>14} {:>14} {:>20}", "t/T", "asp", "patchnce", "layer weights");
    for step in [0, 500, 1000] {
        let cfg = LossConfig { step, total_steps: total, ..LossConfig::default() };
        let weights = normalized_layer_weights(&pyr.layers[0], &cfg)?;
        println!(
            "{:>8.2} {:>14.4} {:>14.4}       [{:.3}, {:.3}]",
            step as f64 / total as f64,
            asp_loss(&pyr, &cfg)?,
            patchnce_loss(&pyr, cfg.tau)?,
            weights[0],
            weights[1],
        );
    }
    println!("\nat t = 0 the ASP loss reduces exactly to PatchNCE; at t = T the");
    println!("mismatched location is weighted out entirely.");
    Ok(())
}
