//! Detects rain over a static synthetic scene and scores the frame mask
//! against the renderer's ground truth.
//!
//!     cargo run --release --example rain_mask

use spac_derain::frame_io::{save_mask, FrameSequence};
use spac_derain::pipeline::{detect_rain_frame, PipelineConfig};
use spac_derain::synth::{render_scene, synthesize_sequence, RainParams, SceneParams};

fn main() -> spac_derain::Result<()> {
    let scene = SceneParams { width: 160, height: 120, frames: 5, velocity: (0.0, 0.0), shake: 0.0, seed: 5 };
    let clean = render_scene(&scene)?;
    let rain = RainParams { opacity: (0.05, 0.3), seed: 8, ..Default::default() };
    let rainy = synthesize_sequence(&clean, &rain)?;
    let gt = rainy[2].gt_mask.clone();
    let mut seq = FrameSequence::new(rainy.into_iter().map(|r| r.frame).collect())?;
    seq.current = 2;
    let cfg = PipelineConfig { n_x: 24, n_s: 10, sp_count: 150, ..Default::default() };
    let m = detect_rain_frame(&seq.window(cfg.n_t), &cfg)?;
    let hit = m.iter().zip(&gt).filter(|(&a, &b)| a && b).count();
    let rain_px = gt.iter().filter(|&&b| b).count();
    let false_pos = m.iter().zip(&gt).filter(|(&a, &b)| a && !b).count();
    println!("recall {:.3}, false positives {false_pos} of {}", hit as f64 / rain_px as f64, gt.len() - rain_px);
    save_mask("rain_mask.png".as_ref(), &m)?;
    Ok(())
}
