//! Retrains on one archive with each feature group removed and scores the
//! models on a held-out archive.
//!
//!     cargo run --release --example ablation -- /tmp/ablation_demo

use std::path::PathBuf;

use spac_derain::features::FeatureSet;
use spac_derain::pipeline::{run_ablation, PipelineConfig};
use spac_derain::synth::{generate_dataset, render_scene, ArchiveWriter, DatasetSpec, RainParams, SceneParams};

fn main() -> spac_derain::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "ablation_demo".into()));
    let mut cfg = PipelineConfig { n_x: 24, n_s: 16, sp_count: 150, cnn_widths: vec![8, 4, 4], ..Default::default() };
    cfg.train.epochs = 2;
    cfg.train.adam.learning_rate = 1e-3;
    for (name, seed) in [("train", 40), ("heldout", 41)] {
        let scene = render_scene(&SceneParams { width: 160, height: 120, frames: 9, seed, ..Default::default() })?;
        let mut w = ArchiveWriter::create(&dir.join(name), cfg.layout(), cfg.n_x)?;
        let spec = DatasetSpec { frames_per_scene: 2, seed };
        generate_dataset(&[scene], &[RainParams::default()], &spec, &cfg, |s| w.push(&s))?;
        w.finish(serde_json::json!({ "seed": seed }))?;
    }
    let subsets = [FeatureSet::ALL, FeatureSet::without(1), FeatureSet::without(2), FeatureSet::without(3)];
    for row in run_ablation(&cfg, &dir.join("train"), &dir.join("heldout"), &subsets)? {
        println!("{:<9} {:>3} channels  held-out {:.3} dB", row.features, row.channels, row.heldout_psnr);
    }
    Ok(())
}
