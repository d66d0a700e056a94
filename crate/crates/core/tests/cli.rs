use std::path::Path;
use std::process::Command;

fn spac(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_spac"))
        .args(args)
        .env("SPAC_WORKERS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn commands_chain_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    let cfg = d("cfg.toml");
    std::fs::write(&cfg, "n_x = 16\nn_s = 6\nn_st = 3\nsp_count = 12\ncnn_widths = [4, 3, 2]\n[train]\nepochs = 1\nbatch_size = 8\n").unwrap();

    spac(&["synth", "--out", &d("syn"), "--procedural", "1", "--frames", "5", "--width", "48", "--height", "40",
           "--frames-per-scene", "1", "--density", "4000", "--config", &cfg]);
    assert!(Path::new(&d("syn/archive/manifest.json")).exists());
    assert!(Path::new(&d("syn/scene_00/mask/0004.png")).exists());
    assert!(Path::new(&d("syn/run.json")).exists());

    spac(&["train", "--dataset", &d("syn/archive"), "--out", &d("model.json"), "--config", &cfg]);
    spac(&["train", "--dataset", &d("syn/archive"), "--out", &d("model2.json"), "--resume", &d("model.json"), "--config", &cfg]);
    assert!(Path::new(&d("model2_loss.csv")).exists());

    spac(&["derain", "--input", &d("syn/scene_00/rainy/%04d.png"), "--out", &d("out"), "--model", &d("model2.json"),
           "--clean", &d("syn/scene_00/clean/%04d.png"), "--mask", &d("syn/scene_00/mask/%04d.png"), "--config", &cfg]);
    for f in ["out/frame_0004.png", "out/metrics.csv", "out/pr.csv", "out/run.json"] {
        assert!(Path::new(&d(f)).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(d("out/run.json")).unwrap()).unwrap();
    assert_eq!(manifest["run"]["config"]["n_x"], 16);
    assert_eq!(manifest["workers"], 1);

    spac(&["eval", "--result", &d("out/frame_%04d.png"), "--clean", &d("syn/scene_00/clean/%04d.png"), "--out", &d("ev")]);
    let csv = std::fs::read_to_string(d("ev/metrics.csv")).unwrap();
    assert!(csv.starts_with("frame,psnr,ssim") && csv.contains("mean,"));
}

#[test]
fn bad_config_is_reported() {
    let out = Command::new(env!("CARGO_BIN_EXE_spac"))
        .args(["derain", "--input", "x_%d.png", "--out", "/tmp/never", "--n-t", "4"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_t"));
}
