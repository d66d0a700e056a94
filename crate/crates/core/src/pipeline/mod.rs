//! Per-superpixel deraining, frame stitching and the sliding-window driver
//! with history update.

mod config;
mod train;

pub use config::PipelineConfig;
pub use train::{evaluate_heldout, run_ablation, run_train, AblationRow, TrainRequest};

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::alignment::{build_buffer, build_t0, build_t1, slice_average, MatchTensor};
use crate::cnn::{forward, CnnModel};
use crate::error::{Error, Result};
use crate::eval::{frame_metrics, FrameMetrics};
use crate::features::{detail_feature, normalize_stack, occluded_background, temporal_feature, FeatureSet, FeatureStack};
use crate::frame_io::{Frame, FrameSequence, Plane};
use crate::rainmask::{detect, scaled_min_votes, RainMask};
use crate::superpixel::{extract_patch, slic_segment, SpPatch, SuperPixelSet};

/// The `n`-square crop of `plane` at `origin`.
pub fn crop_box(plane: &Plane, origin: (usize, usize), n: usize) -> Plane {
    plane.slice(s![origin.0..origin.0 + n, origin.1..origin.1 + n]).to_owned()
}

/// Everything the front end computes for one superpixel.
#[derive(Debug, Clone)]
pub struct SpAnalysis {
    pub t0: MatchTensor,
    pub rain: RainMask,
    pub t1: MatchTensor,
    pub x_avg: Plane,
    /// Occluded-background composite, the SPAC-Avg output.
    pub f1: Plane,
    /// Features restricted to the configured groups.
    pub stack: FeatureStack,
    /// The rain mask covered the whole superpixel, so `T1` was matched on
    /// the full superpixel mask instead.
    pub rain_fallback: bool,
}

fn centre_frame<'a>(window: &[Option<&'a Frame>]) -> Result<&'a Frame> {
    window
        .get(window.len() / 2)
        .copied()
        .flatten()
        .ok_or(Error::MissingWindowFrame(0))
}

/// Alignment, rain detection and features for one superpixel patch.
pub fn analyze_patch(window: &[Option<&Frame>], patch: &SpPatch, config: &PipelineConfig) -> Result<SpAnalysis> {
    let target = centre_frame(window)?;
    let buffer = build_buffer(window, patch, config.n_s)?;
    let t0 = build_t0(patch, &buffer)?;
    let available = window.iter().filter(|f| f.is_some()).count();
    let votes = scaled_min_votes(available, config.n_t);
    let rain = detect(patch, &t0, target, config.eps_rain, config.eps_e, votes);

    let m_rsp = ndarray::Zip::from(&patch.mask)
        .and(&rain.m_rain)
        .map_collect(|&m, &r| m && !r);
    let rain_fallback = !m_rsp.iter().any(|&m| m);
    if rain_fallback {
        log::debug!("superpixel {}: rain mask covers it, matching on the full mask", patch.index);
    }
    let template = if rain_fallback { &patch.mask } else { &m_rsp };
    let t1 = build_t1(patch, &buffer, template, config.n_st, config.t1_exclude_current_frame)?;
    let x_avg = slice_average(&t1)?;
    let f1 = occluded_background(&patch.luma, &x_avg, &rain.m_rain);
    let f2 = temporal_feature(&t0, config.n_t, &x_avg);
    let f3 = detail_feature(&t1);
    let mut stack = normalize_stack(&f1, &f2, &f3, &x_avg, &patch.mask)?;
    if config.features != FeatureSet::ALL {
        stack = stack.select(config.features)?;
    }
    Ok(SpAnalysis {
        t0,
        rain,
        t1,
        x_avg,
        f1,
        stack,
        rain_fallback,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PatchDiagnostics {
    pub index: usize,
    pub mask_pixels: usize,
    pub rain_pixels: usize,
    pub rain_fallback: bool,
    /// Superpixel pixels outside the box, passed through unchanged.
    pub dropped: usize,
}

/// A derained `n_x` box; only its mask pixels are used.
#[derive(Debug, Clone, PartialEq)]
pub struct DerainedPatch {
    pub index: usize,
    pub origin: (usize, usize),
    pub luma: Plane,
    pub mask: Array2<bool>,
    pub dropped: usize,
}

/// Derains one patch. With a model the output is `X_avg + X_detail`
/// clamped to `[0, 1]`; without one it is the occluded-background composite
/// (SPAC-Avg).
pub fn derain_patch(
    window: &[Option<&Frame>],
    patch: &SpPatch,
    model: Option<&CnnModel>,
    config: &PipelineConfig,
) -> Result<(DerainedPatch, PatchDiagnostics)> {
    let a = analyze_patch(window, patch, config)?;
    let luma = match model {
        None => a.f1.clone(),
        Some(m) => {
            if m.layout != a.stack.layout {
                return Err(Error::ChannelMismatch {
                    expected: a.stack.layout.tag(),
                    found: m.layout.tag(),
                });
            }
            let detail = forward(m, &a.stack)?;
            ndarray::Zip::from(&a.x_avg)
                .and(&detail)
                .and(&patch.mask)
                .and(&patch.luma)
                .map_collect(|&avg, &d, &m, &x| if m { (avg + d).clamp(0.0, 1.0) } else { x })
        }
    };
    let diag = PatchDiagnostics {
        index: patch.index,
        mask_pixels: patch.mask.iter().filter(|&&m| m).count(),
        rain_pixels: a.rain.m_rain.iter().zip(&patch.mask).filter(|(&r, &m)| r && m).count(),
        rain_fallback: a.rain_fallback,
        dropped: patch.dropped,
    };
    Ok((
        DerainedPatch {
            index: patch.index,
            origin: patch.origin,
            luma,
            mask: patch.mask.clone(),
            dropped: patch.dropped,
        },
        diag,
    ))
}

/// Assembles the output frame and the per-pixel write counts.
///
/// Each superpixel contributes exactly its mask pixels; pixels that fell
/// outside an oversized superpixel's box keep the input value. Chroma is
/// copied from `input`.
pub fn stitch_with_counts(sps: &SuperPixelSet, patches: &[DerainedPatch], input: &Frame) -> Result<(Frame, Array2<u32>)> {
    let (h, w) = input.y.dim();
    if sps.labels.dim() != (h, w) {
        return Err(Error::ShapeMismatch("label map differs from frame".into()));
    }
    if patches.len() != sps.count() {
        return Err(Error::ShapeMismatch(format!(
            "{} patches for {} superpixels",
            patches.len(),
            sps.count()
        )));
    }
    let mut y = input.y.clone();
    let mut counts = Array2::<u32>::zeros((h, w));
    let mut dropped = vec![false; sps.count()];
    for p in patches {
        if p.index >= sps.count() || p.mask.dim() != p.luma.dim() {
            return Err(Error::ShapeMismatch(format!("patch {} is malformed", p.index)));
        }
        dropped[p.index] |= p.dropped > 0;
        for ((i, j), &m) in p.mask.indexed_iter() {
            if !m {
                continue;
            }
            let (r, c) = (p.origin.0 + i, p.origin.1 + j);
            if r >= h || c >= w || sps.labels[[r, c]] as usize != p.index {
                return Err(Error::ShapeMismatch(format!(
                    "patch {} writes outside its superpixel at ({r}, {c})",
                    p.index
                )));
            }
            y[[r, c]] = p.luma[[i, j]];
            counts[[r, c]] += 1;
        }
    }
    for ((r, c), n) in counts.indexed_iter_mut() {
        if *n == 0 && dropped[sps.labels[[r, c]] as usize] {
            *n = 1;
        }
        match *n {
            0 => return Err(Error::UncoveredPixel { row: r, col: c }),
            1 => {}
            _ => return Err(Error::ShapeMismatch(format!("pixel ({r}, {c}) written {n} times"))),
        }
    }
    Ok((input.with_luma(y)?, counts))
}

pub fn stitch(sps: &SuperPixelSet, patches: &[DerainedPatch], input: &Frame) -> Result<Frame> {
    stitch_with_counts(sps, patches, input).map(|(f, _)| f)
}

/// Derains the centre frame of `window`.
pub fn derain_frame(
    window: &[Option<&Frame>],
    model: Option<&CnnModel>,
    config: &PipelineConfig,
) -> Result<(Frame, Vec<PatchDiagnostics>)> {
    let target = centre_frame(window)?;
    let sps = slic_segment(target, config.sp_count, config.compactness)?;
    let results = (0..sps.count())
        .into_par_iter()
        .map(|k| {
            let patch = extract_patch(&sps, target, k, config.n_x)?;
            derain_patch(window, &patch, model, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let (patches, diags): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((stitch(&sps, &patches, target)?, diags))
}

/// Frame-level rain mask of the centre frame: the union over superpixels of
/// `M_rain` restricted to each superpixel's own pixels.
pub fn detect_rain_frame(window: &[Option<&Frame>], config: &PipelineConfig) -> Result<Array2<bool>> {
    let target = centre_frame(window)?;
    let sps = slic_segment(target, config.sp_count, config.compactness)?;
    let parts = (0..sps.count())
        .into_par_iter()
        .map(|k| {
            let patch = extract_patch(&sps, target, k, config.n_x)?;
            let a = analyze_patch(window, &patch, config)?;
            Ok((patch, a.rain.m_rain))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array2::from_elem(target.y.dim(), false);
    for (patch, m_rain) in parts {
        for ((i, j), &r) in m_rain.indexed_iter() {
            if r && patch.mask[[i, j]] {
                out[[patch.origin.0 + i, patch.origin.1 + j]] = true;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameDiagnostics {
    pub index: usize,
    pub superpixels: usize,
    pub rain_pixels: usize,
    pub rain_fallbacks: usize,
    pub dropped_pixels: usize,
}

impl FrameDiagnostics {
    fn summarize(index: usize, d: &[PatchDiagnostics]) -> Self {
        Self {
            index,
            superpixels: d.len(),
            rain_pixels: d.iter().map(|p| p.rain_pixels).sum(),
            rain_fallbacks: d.iter().filter(|p| p.rain_fallback).count(),
            dropped_pixels: d.iter().map(|p| p.dropped).sum(),
        }
    }
}

/// Derains a sequence frame by frame.
///
/// Past window slots hold frames already derained, future slots raw input.
/// `on_frame` sees each output frame as soon as it is final.
pub fn run_derain_with<F>(
    frames: Vec<Frame>,
    config: &PipelineConfig,
    model: Option<&CnnModel>,
    mut on_frame: F,
) -> Result<(Vec<Frame>, Vec<FrameDiagnostics>)>
where
    F: FnMut(usize, &Frame) -> Result<()>,
{
    config.validate()?;
    let mut seq = FrameSequence::new(frames)?;
    if seq.len() < config.n_t.div_ceil(2) {
        return Err(Error::InvalidParameter(format!(
            "sequence of {} frames is shorter than half the window {}",
            seq.len(),
            config.n_t
        )));
    }
    let mut diagnostics = Vec::with_capacity(seq.len());
    for i in 0..seq.len() {
        seq.current = i;
        let (out, diags) = derain_frame(&seq.window(config.n_t), model, config)?;
        let d = FrameDiagnostics::summarize(i, &diags);
        log::info!(
            "frame {i}: {} superpixels, {} rain pixels, {} fallbacks",
            d.superpixels,
            d.rain_pixels,
            d.rain_fallbacks
        );
        diagnostics.push(d);
        on_frame(i, &out)?;
        seq.commit_derained(i, out)?;
    }
    Ok((seq.frames, diagnostics))
}

pub fn run_derain(frames: Vec<Frame>, config: &PipelineConfig, model: Option<&CnnModel>) -> Result<(Vec<Frame>, Vec<FrameDiagnostics>)> {
    run_derain_with(frames, config, model, |_, _| Ok(()))
}

/// Luma PSNR/SSIM of every frame against its ground truth.
pub fn sequence_metrics(result: &[Frame], clean: &[Frame]) -> Result<Vec<FrameMetrics>> {
    if result.len() != clean.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} result frames vs {} ground-truth frames",
            result.len(),
            clean.len()
        )));
    }
    result
        .par_iter()
        .zip(clean)
        .enumerate()
        .map(|(i, (a, b))| frame_metrics(i, &a.y, &b.y))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{xavier_init, ModelShape};
    use crate::superpixel::SuperPixelSet;

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            n_x: 24,
            n_s: 6,
            n_st: 4,
            sp_count: 12,
            ..Default::default()
        }
    }

    fn textured(h: usize, w: usize) -> Frame {
        Frame::from_luma(Plane::from_shape_fn((h, w), |(r, c)| {
            0.3 + 0.05 * ((r as f64 * 0.7).sin() * (c as f64 * 0.45).cos())
        }))
        .unwrap()
    }

    fn untouched(sps: &SuperPixelSet, frame: &Frame, n_x: usize) -> Vec<DerainedPatch> {
        (0..sps.count())
            .map(|k| {
                let p = extract_patch(sps, frame, k, n_x).unwrap();
                DerainedPatch {
                    index: k,
                    origin: p.origin,
                    luma: p.luma,
                    mask: p.mask,
                    dropped: p.dropped,
                }
            })
            .collect()
    }

    #[test]
    fn stitch_identity_and_locality() {
        let f = textured(32, 40);
        let sps = slic_segment(&f, 10, 10.0).unwrap();
        let mut patches = untouched(&sps, &f, 20);
        let (out, counts) = stitch_with_counts(&sps, &patches, &f).unwrap();
        assert_eq!(out, f);
        assert!(counts.iter().all(|&n| n == 1));

        patches[3].luma.fill(0.0);
        let out = stitch(&sps, &patches, &f).unwrap();
        for ((r, c), &v) in out.y.indexed_iter() {
            if sps.labels[[r, c]] == 3 {
                assert_eq!(v, 0.0);
            } else {
                assert_eq!(v, f.y[[r, c]]);
            }
        }
    }

    #[test]
    fn stitch_detects_gaps() {
        let f = textured(32, 40);
        let sps = slic_segment(&f, 10, 10.0).unwrap();
        let mut patches = untouched(&sps, &f, 20);
        let (i, j) = patches[0].mask.indexed_iter().find(|(_, &m)| m).unwrap().0;
        patches[0].mask[[i, j]] = false;
        assert!(matches!(stitch(&sps, &patches, &f), Err(Error::UncoveredPixel { .. })));
        patches.pop();
        assert!(stitch(&sps, &patches, &f).is_err());
    }

    #[test]
    fn static_clean_sequence_is_fixed_point() {
        let cfg = small_config();
        let frames = vec![textured(40, 48); 5];
        let (avg, _) = run_derain(frames.clone(), &cfg, None).unwrap();
        // X_avg equals X_k only while every sorted match is an exact copy,
        // i.e. n_st does not exceed the other frames of the shortest window
        let cfg = PipelineConfig { n_st: 2, ..cfg };
        let zero = CnnModel::zeros(&ModelShape::with_widths(cfg.layout().channels(), &[4, 3, 2]), cfg.layout()).unwrap();
        let (cnn, _) = run_derain(frames.clone(), &cfg, Some(&zero)).unwrap();
        for ((a, b), x) in avg.iter().zip(&cnn).zip(&frames) {
            for ((p, q), r) in a.y.iter().zip(&b.y).zip(&x.y) {
                assert!((p - r).abs() <= 1e-6 && (q - r).abs() <= 1e-6, "{p} {q} {r}");
            }
            assert_eq!(a.cb, x.cb);
            assert_eq!(b.cr, x.cr);
        }
    }

    #[test]
    fn streak_is_removed_by_average() {
        let cfg = small_config();
        let clean = textured(40, 48);
        let mut frames = vec![clean.clone(); 5];
        let mut y = clean.y.clone();
        for r in 10..22 {
            y[[r, 20]] = (y[[r, 20]] + 0.3).min(1.0);
        }
        frames[2] = clean.with_luma(y).unwrap();
        let rainy_psnr = crate::eval::psnr(&frames[2].y, &clean.y).unwrap();
        let mut seq = FrameSequence::new(frames).unwrap();
        seq.current = 2;
        let (out, diags) = derain_frame(&seq.window(5), None, &cfg).unwrap();
        assert!(diags.iter().map(|d| d.rain_pixels).sum::<usize>() >= 12);
        let out_psnr = crate::eval::psnr(&out.y, &clean.y).unwrap();
        assert!(out_psnr > rainy_psnr, "{out_psnr} vs {rainy_psnr}");
    }

    #[test]
    fn frame_rain_mask_marks_the_streak() {
        let cfg = small_config();
        let clean = textured(40, 48);
        let mut frames = vec![clean.clone(); 5];
        let mut y = clean.y.clone();
        // faint enough that the streak does not pull the alignment off zero
        for r in 10..22 {
            y[[r, 20]] += 0.1;
        }
        frames[2] = clean.with_luma(y).unwrap();
        let mut seq = FrameSequence::new(frames).unwrap();
        seq.current = 2;
        let m = detect_rain_frame(&seq.window(5), &cfg).unwrap();
        let hits: Vec<_> = m.indexed_iter().filter(|(_, &v)| v).map(|(p, _)| p).collect();
        assert_eq!(hits, (10..22).map(|r| (r, 20)).collect::<Vec<_>>());
        seq.current = 0;
        assert!(detect_rain_frame(&seq.window(5), &cfg).unwrap().iter().all(|&v| !v));
    }

    #[test]
    fn history_update_feeds_later_frames() {
        let cfg = small_config();
        let frames: Vec<Frame> = (0..4).map(|_| textured(40, 48)).collect();
        let mut seen = Vec::new();
        run_derain_with(frames, &cfg, None, |i, _| {
            seen.push(i);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn model_layout_must_match() {
        let cfg = small_config();
        let frames = vec![textured(40, 48); 5];
        let other = crate::features::ChannelLayout::new(5, 3);
        let m = xavier_init(&ModelShape::with_widths(other.channels(), &[2, 2, 2]), other, 0).unwrap();
        assert!(matches!(run_derain(frames, &cfg, Some(&m)), Err(Error::ChannelMismatch { .. })));
    }

    #[test]
    fn short_sequence_rejected() {
        let cfg = small_config();
        assert!(run_derain(vec![textured(40, 48); 2], &cfg, None).is_err());
    }
}
