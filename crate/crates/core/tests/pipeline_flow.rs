use spac_derain::cnn::load_checkpoint;
use spac_derain::eval::mean_metrics;
use spac_derain::pipeline::{run_derain, run_train, sequence_metrics, PipelineConfig, TrainRequest};
use spac_derain::synth::{generate_dataset, read_archive, render_scene, synthesize_sequence, ArchiveWriter, DatasetSpec, RainParams, SceneParams};

fn config() -> PipelineConfig {
    let mut c = PipelineConfig {
        n_x: 20,
        n_s: 8,
        n_st: 4,
        sp_count: 20,
        cnn_widths: vec![4, 4, 2],
        ..Default::default()
    };
    c.train.epochs = 2;
    c.train.batch_size = 8;
    c
}

fn scene(seed: u64) -> Vec<spac_derain::frame_io::Frame> {
    render_scene(&SceneParams {
        width: 64,
        height: 48,
        frames: 7,
        velocity: (0.5, 1.0),
        shake: 0.3,
        seed,
    })
    .unwrap()
}

#[test]
fn synth_train_derain_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let archive = dir.path().join("archive");
    let mut writer = ArchiveWriter::create(&archive, cfg.layout(), cfg.n_x).unwrap();
    let spec = DatasetSpec { frames_per_scene: 2, seed: 1 };
    let rain = RainParams { density: 3000.0, ..Default::default() };
    let n = generate_dataset(&[scene(1), scene(2)[..3].to_vec()], &[rain], &spec, &cfg, |s| writer.push(&s)).unwrap();
    writer.finish(serde_json::json!({ "seed": 1 })).unwrap();
    // the short scene is skipped; ~20 superpixels per sampled frame
    assert!((20..=60).contains(&n), "{n} samples");
    let (manifest, samples) = read_archive(&archive).unwrap();
    assert_eq!(manifest.count, n);
    assert_eq!(samples.len(), n);
    assert_eq!(manifest.channel_order, cfg.layout().tag());

    let ckpt = dir.path().join("model.json");
    let out = run_train(&cfg, &TrainRequest { archive, checkpoint: ckpt.clone(), resume: None }).unwrap();
    assert_eq!(out.history.len(), 2);
    let model = load_checkpoint(&ckpt, Some(&cfg.layout())).unwrap().model;
    assert_eq!(model, out.model);

    let clean = scene(9);
    let rainy: Vec<_> = synthesize_sequence(&clean, &rain).unwrap().into_iter().map(|r| r.frame).collect();
    let (a, _) = run_derain(rainy.clone(), &cfg, Some(&model)).unwrap();
    let (b, _) = run_derain(rainy.clone(), &cfg, Some(&model)).unwrap();
    assert_eq!(a, b);
    for (o, i) in a.iter().zip(&rainy) {
        assert_eq!(o.cb, i.cb);
        assert_eq!(o.cr, i.cr);
    }
    let (avg, _) = run_derain(rainy.clone(), &cfg, None).unwrap();
    let (p_rain, _) = mean_metrics(&sequence_metrics(&rainy, &clean).unwrap());
    let (p_avg, _) = mean_metrics(&sequence_metrics(&avg, &clean).unwrap());
    assert!(p_avg > p_rain, "avg {p_avg} vs rainy {p_rain}");
}

#[test]
fn generation_is_deterministic() {
    let cfg = config();
    let spec = DatasetSpec { frames_per_scene: 1, seed: 4 };
    let collect = || {
        let mut v = Vec::new();
        generate_dataset(&[scene(3)], &[RainParams::default()], &spec, &cfg, |s| {
            v.push(s);
            Ok(())
        })
        .unwrap();
        v
    };
    assert_eq!(collect(), collect());
}
