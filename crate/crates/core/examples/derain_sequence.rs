//! Derains a synthetic rainy sequence with the temporal-average mode (or a
//! checkpoint given as the first argument) and reports PSNR/SSIM.
//!
//!     cargo run --release --example derain_sequence -- [model.json]

use spac_derain::cnn::load_checkpoint;
use spac_derain::eval::mean_metrics;
use spac_derain::frame_io::save_frame;
use spac_derain::pipeline::{run_derain_with, sequence_metrics, PipelineConfig};
use spac_derain::synth::{render_scene, synthesize_sequence, RainParams, SceneParams};

fn main() -> spac_derain::Result<()> {
    let model_path = std::env::args().nth(1);
    let mut cfg = PipelineConfig { n_x: 28, n_s: 20, ..Default::default() };
    let model = match &model_path {
        Some(p) => {
            let m = load_checkpoint(p.as_ref(), None)?.model;
            cfg.n_st = m.layout.sorted;
            cfg.features = m.layout.groups;
            Some(m)
        }
        None => None,
    };
    let clean = render_scene(&SceneParams { frames: 12, seed: 31, ..Default::default() })?;
    let rainy: Vec<_> = synthesize_sequence(&clean, &RainParams { seed: 4, ..Default::default() })?
        .into_iter()
        .map(|r| r.frame)
        .collect();
    std::fs::create_dir_all("derained")?;
    let (out, _) = run_derain_with(rainy.clone(), &cfg, model.as_ref(), |i, f| {
        save_frame(format!("derained/{i:04}.png").as_ref(), f)
    })?;
    let (p_in, s_in) = mean_metrics(&sequence_metrics(&rainy, &clean)?);
    let (p_out, s_out) = mean_metrics(&sequence_metrics(&out, &clean)?);
    println!("rainy    {p_in:.2} dB  SSIM {s_in:.4}");
    println!("derained {p_out:.2} dB  SSIM {s_out:.4}");
    Ok(())
}
