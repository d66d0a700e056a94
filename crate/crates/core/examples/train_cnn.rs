//! Builds a small training archive from procedural rain and trains the
//! detail network for a few epochs, checkpointing each one.
//!
//!     cargo run --release --example train_cnn -- /tmp/train_demo

use std::path::PathBuf;

use spac_derain::pipeline::{run_train, PipelineConfig, TrainRequest};
use spac_derain::synth::{generate_dataset, render_scene, ArchiveWriter, DatasetSpec, RainParams, SceneParams};

fn main() -> spac_derain::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "train_demo".into()));
    let mut cfg = PipelineConfig { n_x: 28, n_s: 20, cnn_widths: vec![16, 8, 4], ..Default::default() };
    cfg.train.epochs = 3;
    cfg.train.adam.learning_rate = 1e-3;

    let scene = render_scene(&SceneParams { frames: 12, seed: 21, ..Default::default() })?;
    let mut writer = ArchiveWriter::create(&dir.join("archive"), cfg.layout(), cfg.n_x)?;
    let spec = DatasetSpec { frames_per_scene: 2, seed: 0 };
    generate_dataset(&[scene], &[RainParams::default()], &spec, &cfg, |s| writer.push(&s))?;
    println!("{} samples, channels {}", writer.count(), cfg.layout().tag());
    writer.finish(serde_json::json!({ "example": "train_cnn" }))?;

    let request = TrainRequest { archive: dir.join("archive"), checkpoint: dir.join("model.json"), resume: None };
    let outcome = run_train(&cfg, &request)?;
    for (e, loss) in outcome.history.iter().enumerate() {
        println!("epoch {}: loss {loss:.4e}", e + 1);
    }
    Ok(())
}
