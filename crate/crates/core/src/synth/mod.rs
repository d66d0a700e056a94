//! Procedural rain: additive luma streaks over clean video, with exact
//! ground-truth masks, plus the training-set generator.

mod archive;
mod scene;

pub use archive::{read_archive, read_manifest, ArchiveManifest, ArchiveWriter};
pub use scene::{render_scene, SceneParams};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::TrainingSample;
use crate::error::{Error, Result};
use crate::frame_io::{Frame, FrameSequence, Plane};
use crate::pipeline::{self, PipelineConfig};
use crate::superpixel::{extract_patch, slic_segment};

/// Luma boost at or above which a pixel counts as rain in the ground truth.
pub const EPS_GT: f64 = 0.005;

/// Rain appearance. Ranges are sampled uniformly per streak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RainParams {
    /// Expected streaks per frame per megapixel.
    pub density: f64,
    pub length: (f64, f64),
    /// Full width at half maximum of the cross profile, pixels.
    pub width: (f64, f64),
    /// Degrees from vertical.
    pub angle_mean: f64,
    pub angle_jitter: f64,
    /// Peak additive luma.
    pub opacity: (f64, f64),
    /// Subsamples along the streak axis.
    pub blur_samples: usize,
    pub seed: u64,
    /// Animate one fixed streak field downward instead of redrawing it
    /// every frame.
    pub streak_fall: bool,
    /// Pixels per frame when `streak_fall` is set.
    pub fall_speed: f64,
}

impl Default for RainParams {
    fn default() -> Self {
        Self {
            density: 1500.0,
            length: (10.0, 28.0),
            width: (1.0, 2.2),
            angle_mean: 8.0,
            angle_jitter: 6.0,
            opacity: (0.08, 0.3),
            blur_samples: 4,
            seed: 0,
            streak_fall: false,
            fall_speed: 12.0,
        }
    }
}

impl RainParams {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        let bad = |m: &str| Err(Error::InvalidParameter(format!("rain params: {m}")));
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return bad("density must be >= 0");
        }
        if !range_ok(self.length) || !range_ok(self.width) {
            return bad("length and width ranges must be positive with lo <= hi");
        }
        if !range_ok(self.opacity) || self.opacity.1 > 1.0 {
            return bad("opacity range must lie in (0, 1]");
        }
        if self.blur_samples == 0 {
            return bad("blur_samples must be >= 1");
        }
        if !self.angle_jitter.is_finite() || self.angle_jitter < 0.0 || !self.angle_mean.is_finite() {
            return bad("angles must be finite, jitter >= 0");
        }
        Ok(())
    }
}

/// One oriented segment in pixel-index coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Streak {
    pub row: f64,
    pub col: f64,
    pub length: f64,
    pub width: f64,
    /// Radians from vertical, positive leaning right.
    pub angle: f64,
    pub opacity: f64,
}

/// A clean frame with rain composited into luma.
#[derive(Debug, Clone, PartialEq)]
pub struct RainyFrame {
    pub frame: Frame,
    pub gt_mask: Array2<bool>,
    pub gt_boost: Plane,
}

/// Adds one streak's luma boost into `boost`.
///
/// The cross profile is Gaussian; along the axis each of the blur subsamples
/// contributes the box coverage of the pixel by the segment, which gives
/// anti-aliased ends.
pub fn render_streak(boost: &mut Plane, s: &Streak, blur_samples: usize) {
    let (h, w) = boost.dim();
    let sigma = s.width / (8.0 * 2f64.ln()).sqrt();
    let half = s.length / 2.0;
    let (dr, dc) = (s.angle.cos(), s.angle.sin());
    let reach = half + 3.0 * sigma + 1.0;
    let r0 = (s.row - reach).floor().max(0.0) as usize;
    let c0 = (s.col - reach).floor().max(0.0) as usize;
    let r1 = ((s.row + reach).ceil() as isize).min(h as isize - 1);
    let c1 = ((s.col + reach).ceil() as isize).min(w as isize - 1);
    if r1 < 0 || c1 < 0 {
        return;
    }
    let n = blur_samples.max(1);
    for r in r0..=r1 as usize {
        for c in c0..=c1 as usize {
            let (pr, pc) = (r as f64 - s.row, c as f64 - s.col);
            let along = pr * dr + pc * dc;
            let across = pr * dc - pc * dr;
            let profile = (-(across * across) / (2.0 * sigma * sigma)).exp();
            if profile < 1e-4 {
                continue;
            }
            let mut cover = 0.0;
            for j in 0..n {
                let a = along + (j as f64 + 0.5) / n as f64 - 0.5;
                cover += (half + 0.5 - a.abs()).clamp(0.0, 1.0);
            }
            boost[[r, c]] += s.opacity * profile * cover / n as f64;
        }
    }
}

fn draw_streaks(rng: &mut ChaCha8Rng, params: &RainParams, h: usize, w: usize) -> Vec<Streak> {
    let mp = (h * w) as f64 / 1e6;
    let lambda = params.density * mp;
    let count = if lambda > 0.0 {
        Poisson::new(lambda).map(|p| p.sample(rng) as usize).unwrap_or(0)
    } else {
        0
    };
    let uni = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
    (0..count)
        .map(|_| {
            let jitter = if params.angle_jitter > 0.0 {
                rng.random_range(-params.angle_jitter..params.angle_jitter)
            } else {
                0.0
            };
            Streak {
                row: rng.random_range(0.0..h as f64),
                col: rng.random_range(0.0..w as f64),
                length: uni(rng, params.length),
                width: uni(rng, params.width),
                angle: (params.angle_mean + jitter).to_radians(),
                opacity: uni(rng, params.opacity),
            }
        })
        .collect()
}

/// The streaks of frame `frame_index`.
///
/// Each frame draws from its own stream of the seeded generator, so streak
/// positions are independent across frames. With `streak_fall` a single
/// field is drawn and shifted along the rain direction, wrapping around.
pub fn streaks_for_frame(params: &RainParams, frame_index: usize, h: usize, w: usize) -> Vec<Streak> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    if !params.streak_fall {
        rng.set_stream(frame_index as u64);
        return draw_streaks(&mut rng, params, h, w);
    }
    let shift = params.fall_speed * frame_index as f64;
    draw_streaks(&mut rng, params, h, w)
        .into_iter()
        .map(|mut s| {
            s.row = (s.row + shift * s.angle.cos()).rem_euclid(h as f64);
            s.col = (s.col + shift * s.angle.sin()).rem_euclid(w as f64);
            s
        })
        .collect()
}

/// Composites rain into the luma of `clean`; chroma is copied untouched.
pub fn synthesize_rain(clean: &Frame, params: &RainParams, frame_index: usize) -> Result<RainyFrame> {
    params.validate()?;
    let (h, w) = clean.y.dim();
    let mut raw = Plane::zeros((h, w));
    for s in streaks_for_frame(params, frame_index, h, w) {
        render_streak(&mut raw, &s, params.blur_samples);
    }
    let y = ndarray::Zip::from(&clean.y).and(&raw).map_collect(|&c, &b| (c + b).clamp(0.0, 1.0));
    // the boost actually applied after clamping
    let gt_boost = &y - &clean.y;
    let gt_mask = gt_boost.mapv(|b| b >= EPS_GT);
    Ok(RainyFrame {
        frame: clean.with_luma(y)?,
        gt_mask,
        gt_boost,
    })
}

/// Rain over every frame of a clean sequence, rendered in parallel.
pub fn synthesize_sequence(clean: &[Frame], params: &RainParams) -> Result<Vec<RainyFrame>> {
    clean
        .par_iter()
        .enumerate()
        .map(|(i, f)| synthesize_rain(f, params, i))
        .collect()
}

/// How [`generate_dataset`] samples frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub frames_per_scene: usize,
    pub seed: u64,
}

/// Builds training samples: every clean scene is rendered with every rain
/// parameter set, `frames_per_scene` frames with a full buffer window are
/// drawn, and each superpixel of each drawn frame becomes one sample.
///
/// `on_sample` receives samples in a deterministic order; returns the count.
/// Scenes shorter than `n_t` are skipped with a warning.
pub fn generate_dataset<F>(
    scenes: &[Vec<Frame>],
    rain_grid: &[RainParams],
    spec: &DatasetSpec,
    config: &PipelineConfig,
    mut on_sample: F,
) -> Result<usize>
where
    F: FnMut(TrainingSample) -> Result<()>,
{
    if scenes.is_empty() || rain_grid.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    let half = config.n_t / 2;
    let mut total = 0;
    for (si, clean) in scenes.iter().enumerate() {
        if clean.len() < config.n_t {
            log::warn!("scene {si}: {} frames is shorter than the window {}, skipped", clean.len(), config.n_t);
            continue;
        }
        for (pi, params) in rain_grid.iter().enumerate() {
            let params = RainParams {
                seed: params.seed ^ spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((si as u64) << 32 | pi as u64),
                ..*params
            };
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            let mut candidates: Vec<usize> = (half..clean.len() - half).collect();
            rand::seq::SliceRandom::shuffle(candidates.as_mut_slice(), &mut rng);
            candidates.truncate(spec.frames_per_scene);
            candidates.sort_unstable();
            for idx in candidates {
                let window_clean = &clean[idx - half..=idx + half];
                let rainy = window_clean
                    .par_iter()
                    .enumerate()
                    .map(|(j, f)| synthesize_rain(f, &params, idx - half + j).map(|r| r.frame))
                    .collect::<Result<Vec<_>>>()?;
                let mut seq = FrameSequence::new(rainy)?;
                seq.current = half;
                let window = seq.window(config.n_t);
                let target = &seq.frames[half];
                let sps = slic_segment(target, config.sp_count, config.compactness)?;
                let samples = (0..sps.count())
                    .into_par_iter()
                    .map(|k| -> Result<TrainingSample> {
                        let patch = extract_patch(&sps, target, k, config.n_x)?;
                        let a = pipeline::analyze_patch(&window, &patch, config)?;
                        let target = pipeline::crop_box(&clean[idx].y, patch.origin, config.n_x);
                        Ok(TrainingSample { stack: a.stack, target })
                    })
                    .collect::<Result<Vec<_>>>()?;
                total += samples.len();
                for s in samples {
                    on_sample(s)?;
                }
                log::info!("scene {si} rain {pi} frame {idx}: {} samples", sps.count());
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, v: f64) -> Frame {
        Frame::from_luma(Plane::from_elem((h, w), v)).unwrap()
    }

    #[test]
    fn zero_density_is_identity() {
        let clean = gray(40, 50, 0.4);
        let p = RainParams {
            density: 0.0,
            ..Default::default()
        };
        let r = synthesize_rain(&clean, &p, 3).unwrap();
        assert_eq!(r.frame, clean);
        assert!(r.gt_mask.iter().all(|&m| !m));
    }

    #[test]
    fn single_streak_core_value() {
        let mut boost = Plane::zeros((40, 40));
        let s = Streak {
            row: 20.0,
            col: 20.0,
            length: 12.0,
            width: 1.5,
            angle: 0.0,
            opacity: 0.3,
        };
        render_streak(&mut boost, &s, 4);
        let clean = gray(40, 40, 0.5);
        let y = (&clean.y + &boost).mapv(|v| v.clamp(0.0, 1.0));
        assert!((y[[20, 20]] - 0.8).abs() < 1e-12);
        // the core column is the brightest; ends fall off
        let max = y.iter().cloned().fold(0.0, f64::max);
        assert!((max - 0.8).abs() < 1e-12);
        assert!(y[[20 + 7, 20]] < 0.8 && y[[20 + 7, 20]] >= 0.5);
        assert!(y[[20, 22]] < 0.6);
    }

    #[test]
    fn chroma_untouched_and_boost_nonnegative() {
        let y = Plane::from_shape_fn((48, 64), |(r, c)| ((r + c) % 9) as f64 / 9.0);
        let cb = Plane::from_elem((48, 64), 0.3);
        let cr = Plane::from_elem((48, 64), 0.7);
        let clean = Frame::new(y, cb, cr).unwrap();
        let p = RainParams {
            density: 20000.0,
            seed: 5,
            ..Default::default()
        };
        let r = synthesize_rain(&clean, &p, 0).unwrap();
        assert_eq!(r.frame.cb, clean.cb);
        assert_eq!(r.frame.cr, clean.cr);
        assert!(r.gt_boost.iter().all(|&b| b >= 0.0));
        assert!(r.gt_mask.iter().any(|&m| m));
        let recomposed = (&clean.y + &r.gt_boost).mapv(|v| v.clamp(0.0, 1.0));
        for (a, b) in recomposed.iter().zip(&r.frame.y) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_and_frame_independent() {
        let clean = gray(60, 60, 0.3);
        let p = RainParams {
            density: 5000.0,
            seed: 9,
            ..Default::default()
        };
        let a = synthesize_rain(&clean, &p, 2).unwrap();
        assert_eq!(a, synthesize_rain(&clean, &p, 2).unwrap());
        assert_ne!(a.gt_boost, synthesize_rain(&clean, &p, 3).unwrap().gt_boost);
    }

    #[test]
    fn falling_streaks_move() {
        let p = RainParams {
            density: 3000.0,
            streak_fall: true,
            fall_speed: 5.0,
            angle_mean: 0.0,
            angle_jitter: 0.0,
            ..Default::default()
        };
        let s0 = streaks_for_frame(&p, 0, 100, 100);
        let s1 = streaks_for_frame(&p, 1, 100, 100);
        assert_eq!(s0.len(), s1.len());
        for (a, b) in s0.iter().zip(&s1) {
            assert!(((b.row - a.row).rem_euclid(100.0) - 5.0).abs() < 1e-9);
            assert_eq!(a.col, b.col);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        for p in [
            RainParams {
                density: -1.0,
                ..Default::default()
            },
            RainParams {
                opacity: (0.5, 1.5),
                ..Default::default()
            },
            RainParams {
                length: (5.0, 2.0),
                ..Default::default()
            },
        ] {
            assert!(p.validate().is_err());
        }
    }

    #[test]
    fn dataset_requires_scenes() {
        let cfg = PipelineConfig::default();
        let spec = DatasetSpec {
            frames_per_scene: 1,
            seed: 0,
        };
        assert!(matches!(
            generate_dataset(&[], &[RainParams::default()], &spec, &cfg, |_| Ok(())),
            Err(Error::EmptyDataset)
        ));
    }
}
