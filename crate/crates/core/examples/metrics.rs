//! PSNR, SSIM and the rain-streak precision/recall curve of a rainy frame
//! against its clean source.
//!
//!     cargo run --release --example metrics

use spac_derain::eval::{default_thresholds, psnr, rain_edge_pr, ssim, write_pr_csv};
use spac_derain::synth::{render_scene, synthesize_rain, RainParams, SceneParams};

fn main() -> spac_derain::Result<()> {
    let clean = render_scene(&SceneParams { frames: 1, ..Default::default() })?.remove(0);
    let rainy = synthesize_rain(&clean, &RainParams::default(), 0)?;
    println!("PSNR {:.3} dB", psnr(&rainy.frame.y, &clean.y)?);
    println!("SSIM {:.4}", ssim(&rainy.frame.y, &clean.y)?);
    let curve = rain_edge_pr(&rainy.frame.y, &clean.y, &rainy.gt_mask, &default_thresholds(10))?;
    println!("F-measure {:.4}", curve.f_measure());
    write_pr_csv("rainy", &curve, std::io::stdout())?;
    Ok(())
}
