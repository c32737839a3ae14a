//! Evaluate the stage-wise objectives on a fixture pair: the contrastive
//! structure losses (PatchNCE, ASP, Gaussian pyramid) for stage 1, DAB
//! color fidelity for stage 2, and gradient-guided boundary refinement for
//! stage 3.
//!
//! ```bash
//! cargo run -p progstain --example stage_losses
//! ```

use progstain::config::ToolkitConfig;
use progstain::image::{gaussian_blur, synth_fixture};
use progstain::losses::{
    asp_loss, dab_cf_loss, gaussian_pyramid_loss, gcbr_loss, patchnce_loss, total_loss, LossTerms,
};
use progstain::refine::build_embedding_pyramid;

fn main() -> progstain::Result<()> {
    let config = ToolkitConfig::default();
    let matrix = config.stain()?;
    let loss_cfg = config.loss_config();

    // The blurred IHC image stands in for a stage-1 generator output.
    let (_, real, _) = synth_fixture(21, 96, 96, 5)?;
    let gen = gaussian_blur(&real, 1.5);

    let pyr = build_embedding_pyramid(&gen, &real, &config.embed, config.pyramid_levels)?;
    let sizes: Vec<usize> = pyr.layers.iter().map(|l| l.locations.len()).collect();
    println!("embedding pyramid layers (locations per level): {sizes:?}");

    let terms = LossTerms {
        adv: 0.0,
        patchnce: patchnce_loss(&pyr, loss_cfg.tau)?,
        asp: asp_loss(&pyr, &loss_cfg)?,
        gp: gaussian_pyramid_loss(&real, &gen, config.pyramid_levels)?,
        dab_cf: dab_cf_loss(&real, &gen, &matrix, config.i0, config.eps)?,
        gcbr: gcbr_loss(&real, &gen, &matrix, config.i0, config.eps)?,
    };

    for stage in 1..=3u8 {
        let breakdown = total_loss(stage, &terms, &loss_cfg)?;
        println!(
            "stage {stage}: {}",
            serde_json::to_string_pretty(&breakdown).unwrap()
        );
    }

    // At step 0 the adaptive weights are uniform, so ASP and PatchNCE agree.
    println!(
        "step 0 identity: asp == patchnce ? {}",
        terms.asp == terms.patchnce
    );
    Ok(())
}
