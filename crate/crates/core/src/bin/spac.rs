use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use spac_derain::cnn::load_checkpoint;
use spac_derain::eval::{default_thresholds, rain_edge_pr, write_metrics_csv, write_pr_csv, BORDER_MARGIN};
use spac_derain::eval::crop_border;
use spac_derain::features::FeatureSet;
use spac_derain::frame_io::{load_mask, load_sequence, save_frame, save_mask, expand_pattern, Frame};
use spac_derain::pipeline::{run_ablation, run_derain_with, run_train, sequence_metrics, PipelineConfig, TrainRequest};
use spac_derain::synth::{generate_dataset, render_scene, synthesize_sequence, ArchiveWriter, DatasetSpec, RainParams, SceneParams};

/// Worker-thread override for the per-frame superpixel pool.
const WORKERS_ENV: &str = "SPAC_WORKERS";

#[derive(Parser)]
#[command(name = "spac", version, about = "Video rain removal by superpixel alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render rainy sequences and optionally a training archive.
    Synth(SynthArgs),
    /// Train the detail network on an archive.
    Train(TrainArgs),
    /// Derain a PNG sequence.
    Derain(DerainArgs),
    /// Score a derained sequence against ground truth.
    Eval(EvalArgs),
    /// Retrain with each feature group removed and compare.
    Ablate(AblateArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML file with pipeline settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_t: Option<usize>,
    #[arg(long)]
    n_x: Option<usize>,
    #[arg(long)]
    n_s: Option<usize>,
    #[arg(long)]
    n_st: Option<usize>,
    #[arg(long)]
    sp_count: Option<usize>,
    #[arg(long)]
    eps_rain: Option<f64>,
    #[arg(long)]
    eps_e: Option<f64>,
    #[arg(long)]
    t1_exclude_current_frame: bool,
    /// Feature groups, e.g. `F1+F2+F3`.
    #[arg(long)]
    features: Option<FeatureSet>,
    /// Hidden layer widths, e.g. `64,32,16`.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::from_toml_file(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$( if let Some(v) = self.$field.clone() { c.$field = v; } )*};
        }
        set!(n_t, n_x, n_s, n_st, sp_count, eps_rain, eps_e, features, seed);
        if let Some(w) = &self.widths {
            c.cnn_widths = w.clone();
        }
        if self.t1_exclude_current_frame {
            c.t1_exclude_current_frame = true;
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            c.train.adam.learning_rate = v;
        }
        c.train.seed = c.seed;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct RainArgs {
    /// Streaks per frame per megapixel.
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    opacity_min: Option<f64>,
    #[arg(long)]
    opacity_max: Option<f64>,
    #[arg(long)]
    angle: Option<f64>,
    #[arg(long)]
    rain_seed: Option<u64>,
    /// Animate streaks downward instead of redrawing them per frame.
    #[arg(long)]
    streak_fall: bool,
}

impl RainArgs {
    fn resolve(&self) -> anyhow::Result<RainParams> {
        let mut p = RainParams::default();
        if let Some(v) = self.density {
            p.density = v;
        }
        if let Some(v) = self.opacity_min {
            p.opacity.0 = v;
        }
        if let Some(v) = self.opacity_max {
            p.opacity.1 = v;
        }
        if let Some(v) = self.angle {
            p.angle_mean = v;
        }
        if let Some(v) = self.rain_seed {
            p.seed = v;
        }
        p.streak_fall = self.streak_fall;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Clean input sequences as printf patterns; repeatable.
    #[arg(long)]
    clean: Vec<String>,
    /// Number of procedural scenes to render instead of (or besides) `--clean`.
    #[arg(long, default_value_t = 0)]
    procedural: usize,
    #[arg(long, default_value_t = 50)]
    frames: usize,
    #[arg(long, default_value_t = 240)]
    width: usize,
    #[arg(long, default_value_t = 180)]
    height: usize,
    /// Frames sampled per scene for the training archive; 0 skips it.
    #[arg(long, default_value_t = 0)]
    frames_per_scene: usize,
    #[command(flatten)]
    rain: RainArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint written after every epoch.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct DerainArgs {
    /// Rainy input frames, e.g. `rainy/%04d.png`.
    #[arg(long)]
    input: String,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint; without one the temporal-average output is produced.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Ground-truth frames for metrics.
    #[arg(long)]
    clean: Option<String>,
    /// Ground-truth rain masks for PR curves.
    #[arg(long)]
    mask: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    result: String,
    #[arg(long)]
    clean: String,
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    heldout: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

fn write_manifest(dir: &Path, command: &str, body: serde_json::Value) -> anyhow::Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "workers": rayon::current_num_threads(),
        "run": body,
    });
    fs::write(dir.join("run.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

fn load_all(pattern: &str) -> anyhow::Result<Vec<Frame>> {
    Ok(load_sequence(pattern, 0..)
        .with_context(|| format!("loading {pattern}"))?
        .frames)
}

fn write_pr(dir: &Path, result: &[Frame], clean: &[Frame], mask_pattern: &str) -> anyhow::Result<()> {
    let mut out = BufWriter::new(fs::File::create(dir.join("pr.csv"))?);
    use std::io::Write;
    writeln!(out, "frame,threshold,precision,recall")?;
    for (i, (r, c)) in result.iter().zip(clean).enumerate() {
        let gt = load_mask(Path::new(&expand_pattern(mask_pattern, i)))?;
        let gt = crop_border(&gt.mapv(|m| if m { 1.0 } else { 0.0 }), BORDER_MARGIN).mapv(|v| v > 0.5);
        if !gt.iter().any(|&m| m) {
            continue;
        }
        let curve = rain_edge_pr(
            &crop_border(&r.y, BORDER_MARGIN),
            &crop_border(&c.y, BORDER_MARGIN),
            &gt,
            &default_thresholds(20),
        )?;
        write_pr_csv(&i.to_string(), &curve, &mut out)?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = a.config.resolve()?;
    let rain = a.rain.resolve()?;
    fs::create_dir_all(&a.out)?;
    let mut scenes = Vec::new();
    for p in &a.clean {
        scenes.push(load_all(p)?);
    }
    let mut scene_params = Vec::new();
    for i in 0..a.procedural {
        let p = SceneParams {
            width: a.width,
            height: a.height,
            frames: a.frames,
            velocity: (1.2 * ((i as f64) * 1.7).sin(), 1.8 * ((i as f64) * 0.9 + 0.5).cos()),
            seed: cfg.seed.wrapping_add(i as u64),
            ..Default::default()
        };
        scenes.push(render_scene(&p)?);
        scene_params.push(p);
    }
    if scenes.is_empty() {
        bail!("no input: give --clean patterns or --procedural N");
    }
    for (si, clean) in scenes.iter().enumerate() {
        let dir = a.out.join(format!("scene_{si:02}"));
        for sub in ["clean", "rainy", "mask"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        let rainy = synthesize_sequence(clean, &RainParams { seed: rain.seed.wrapping_add(si as u64), ..rain })?;
        for (i, (c, r)) in clean.iter().zip(&rainy).enumerate() {
            save_frame(&dir.join(format!("clean/{i:04}.png")), c)?;
            save_frame(&dir.join(format!("rainy/{i:04}.png")), &r.frame)?;
            save_mask(&dir.join(format!("mask/{i:04}.png")), &r.gt_mask)?;
        }
        log::info!("scene {si}: {} frames written", clean.len());
    }
    let mut samples = 0;
    if a.frames_per_scene > 0 {
        let spec = DatasetSpec {
            frames_per_scene: a.frames_per_scene,
            seed: cfg.seed,
        };
        let mut writer = ArchiveWriter::create(&a.out.join("archive"), cfg.layout(), cfg.n_x)?;
        generate_dataset(&scenes, &[rain], &spec, &cfg, |s| writer.push(&s))?;
        samples = writer.count();
        writer.finish(json!({ "rain": rain, "scenes": scene_params, "inputs": a.clean, "dataset": spec, "config": cfg }))?;
    }
    write_manifest(
        &a.out,
        "synth",
        json!({ "config": cfg, "rain": rain, "scenes": scene_params, "inputs": a.clean, "samples": samples }),
    )
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = a.config.resolve()?;
    let request = TrainRequest {
        archive: a.dataset.clone(),
        checkpoint: a.out.clone(),
        resume: a.resume.clone(),
    };
    let outcome = run_train(&cfg, &request)?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let mut csv = String::from("epoch,loss\n");
    let first = outcome.state.epoch - outcome.history.len();
    for (i, l) in outcome.history.iter().enumerate() {
        csv.push_str(&format!("{},{l:.8e}\n", first + i + 1));
    }
    fs::write(dir.join(format!("{stem}_loss.csv")), csv)?;
    let manifest_dir = dir.join(format!("{stem}_run"));
    fs::create_dir_all(&manifest_dir)?;
    write_manifest(
        &manifest_dir,
        "train",
        json!({ "config": cfg, "dataset": a.dataset, "checkpoint": a.out, "resume": a.resume,
                "steps": outcome.state.step, "epochs": outcome.state.epoch, "history": outcome.history }),
    )
}

fn derain(a: DerainArgs) -> anyhow::Result<()> {
    let mut cfg = a.config.resolve()?;
    if a.model.is_some() {
        cfg.model_path = a.model.clone();
    }
    let model = match &cfg.model_path {
        Some(p) => Some(load_checkpoint(p, Some(&cfg.layout()))?.model),
        None => None,
    };
    fs::create_dir_all(&a.out)?;
    let frames = load_all(&a.input)?;
    let out_dir = a.out.clone();
    let (result, diags) = run_derain_with(frames, &cfg, model.as_ref(), |i, f| {
        save_frame(&out_dir.join(format!("frame_{i:04}.png")), f)
    })?;
    let mut csv = String::from("frame,superpixels,rain_pixels,rain_fallbacks,dropped_pixels\n");
    for d in &diags {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            d.index, d.superpixels, d.rain_pixels, d.rain_fallbacks, d.dropped_pixels
        ));
    }
    fs::write(a.out.join("diagnostics.csv"), csv)?;
    let mut mean = None;
    if let Some(pattern) = &a.clean {
        let clean = load_all(pattern)?;
        let metrics = sequence_metrics(&result, &clean)?;
        write_metrics_csv(&metrics, BufWriter::new(fs::File::create(a.out.join("metrics.csv"))?))?;
        mean = Some(spac_derain::eval::mean_metrics(&metrics));
        if let Some(m) = &a.mask {
            write_pr(&a.out, &result, &clean, m)?;
        }
    }
    write_manifest(
        &a.out,
        "derain",
        json!({ "config": cfg, "input": a.input, "mode": if model.is_some() { "cnn" } else { "avg" },
                "frames": result.len(), "mean_psnr_ssim": mean }),
    )
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    fs::create_dir_all(&a.out)?;
    let result = load_all(&a.result)?;
    let clean = load_all(&a.clean)?;
    let metrics = sequence_metrics(&result, &clean)?;
    write_metrics_csv(&metrics, BufWriter::new(fs::File::create(a.out.join("metrics.csv"))?))?;
    if let Some(m) = &a.mask {
        write_pr(&a.out, &result, &clean, m)?;
    }
    let (p, s) = spac_derain::eval::mean_metrics(&metrics);
    println!("mean PSNR {p:.3} dB, SSIM {s:.4} over {} frames", metrics.len());
    write_manifest(&a.out, "eval", json!({ "result": a.result, "clean": a.clean, "mask": a.mask, "psnr": p, "ssim": s }))
}

fn ablate(a: AblateArgs) -> anyhow::Result<()> {
    let cfg = a.config.resolve()?;
    fs::create_dir_all(&a.out)?;
    let subsets = [FeatureSet::ALL, FeatureSet::without(1), FeatureSet::without(2), FeatureSet::without(3)];
    let rows = run_ablation(&cfg, &a.train, &a.heldout, &subsets)?;
    let mut csv = String::from("features,channels,final_loss,heldout_psnr\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{:.8e},{:.4}\n", r.features, r.channels, r.final_loss, r.heldout_psnr));
        println!("{:<10} {:>7.3} dB", r.features, r.heldout_psnr);
    }
    fs::write(a.out.join("ablation.csv"), csv)?;
    write_manifest(&a.out, "ablate", json!({ "config": cfg, "train": a.train, "heldout": a.heldout, "rows": rows }))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{WORKERS_ENV}={v:?} is not a number"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Derain(a) => derain(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
    }
}
