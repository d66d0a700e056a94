//! Reconstruction and rain-detection metrics: PSNR, SSIM, and rain-streak
//! precision/recall curves with their F-measure.

use std::io::Write;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::frame_io::Plane;

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Frame margin excluded from whole-frame metrics.
pub const BORDER_MARGIN: usize = 8;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Plane, b: &Plane) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Drops `margin` pixels on every side (or nothing if the plane is too small).
pub fn crop_border(plane: &Plane, margin: usize) -> Plane {
    let (h, w) = plane.dim();
    if h <= 2 * margin || w <= 2 * margin {
        return plane.clone();
    }
    plane.slice(s![margin..h - margin, margin..w - margin]).to_owned()
}

pub fn mse(a: &Plane, b: &Plane) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio for unit dynamic range, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(a: &Plane, b: &Plane) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// PSNR restricted to the pixels where `mask` is set.
pub fn masked_psnr(a: &Plane, b: &Plane, mask: &Array2<bool>) -> Result<f64> {
    same_shape(a, b)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for ((x, y), &m) in a.iter().zip(b).zip(mask) {
        if m {
            sum += (x - y) * (x - y);
            n += 1;
        }
    }
    if n == 0 || sum == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (n as f64 / sum).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - half;
            (-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering: output is `(h - 10) x (w - 10)`.
fn filter_valid(p: &Plane, k: &[f64]) -> Plane {
    let (h, w) = p.dim();
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut horiz = Plane::zeros((h, ow));
    for r in 0..h {
        for c in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * p[[r, c + i]];
            }
            horiz[[r, c]] = acc;
        }
    }
    let mut out = Plane::zeros((oh, ow));
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * horiz[[r + i, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Mean structural similarity over all 11x11 Gaussian windows (sigma 1.5)
/// that fit inside the image, unit dynamic range.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let k = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_a = filter_valid(a, &k);
    let mu_b = filter_valid(b, &k);
    let e_aa = filter_valid(&(a * a), &k);
    let e_bb = filter_valid(&(b * b), &k);
    let e_ab = filter_valid(&(a * b), &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a.as_slice().unwrap()[i], mu_b.as_slice().unwrap()[i]);
        let va = e_aa.as_slice().unwrap()[i] - ma * ma;
        let vb = e_bb.as_slice().unwrap()[i] - mb * mb;
        let cov = e_ab.as_slice().unwrap()[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall of residual-based rain detection over a threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn f_measure(&self) -> f64 {
        f_measure(self)
    }
}

/// Evenly spaced thresholds in `(0, 1)`.
pub fn default_thresholds(count: usize) -> Vec<f64> {
    (1..=count).map(|i| i as f64 / (count + 1) as f64 * 0.5).collect()
}

/// Thresholds the absolute residual `|derained - clean|` at each `tau` and
/// scores the detections against the ground-truth rain map.
///
/// A threshold with no detections has precision 1.
pub fn rain_edge_pr(derained: &Plane, clean: &Plane, rain_gt: &Array2<bool>, thresholds: &[f64]) -> Result<PrCurve> {
    same_shape(derained, clean)?;
    if rain_gt.dim() != derained.dim() {
        return Err(Error::ShapeMismatch("rain mask differs from image".into()));
    }
    let gt_count = rain_gt.iter().filter(|&&m| m).count();
    if gt_count == 0 {
        return Err(Error::EmptyRainMask);
    }
    let mut taus = thresholds.to_vec();
    if taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::InvalidParameter("PR thresholds must lie in (0, 1)".into()));
    }
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    let residual: Vec<(f64, bool)> = derained
        .iter()
        .zip(clean)
        .zip(rain_gt)
        .map(|((d, c), &g)| ((d - c).abs(), g))
        .collect();
    let points = taus
        .into_iter()
        .map(|tau| {
            let (mut detected, mut hits) = (0usize, 0usize);
            for &(r, g) in &residual {
                if r >= tau {
                    detected += 1;
                    hits += usize::from(g);
                }
            }
            PrPoint {
                threshold: tau,
                precision: if detected == 0 { 1.0 } else { hits as f64 / detected as f64 },
                recall: hits as f64 / gt_count as f64,
            }
        })
        .collect();
    Ok(PrCurve { points })
}

/// Largest harmonic mean of precision and recall along the curve.
pub fn f_measure(curve: &PrCurve) -> f64 {
    curve
        .points
        .iter()
        .map(|p| {
            let s = p.precision + p.recall;
            if s == 0.0 {
                0.0
            } else {
                2.0 * p.precision * p.recall / s
            }
        })
        .fold(0.0, f64::max)
}

/// Per-frame reconstruction quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR/SSIM of `result` against `clean` on the luma plane, border excluded.
pub fn frame_metrics(index: usize, result: &Plane, clean: &Plane) -> Result<FrameMetrics> {
    let a = crop_border(result, BORDER_MARGIN);
    let b = crop_border(clean, BORDER_MARGIN);
    Ok(FrameMetrics {
        index,
        psnr: psnr(&a, &b)?,
        ssim: ssim(&a, &b)?,
    })
}

pub fn mean_metrics(rows: &[FrameMetrics]) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    (
        rows.iter().map(|m| m.psnr).sum::<f64>() / n,
        rows.iter().map(|m| m.ssim).sum::<f64>() / n,
    )
}

/// `frame,psnr,ssim` rows followed by a `mean` row.
pub fn write_metrics_csv<W: Write>(rows: &[FrameMetrics], mut out: W) -> std::io::Result<()> {
    writeln!(out, "frame,psnr,ssim")?;
    for m in rows {
        writeln!(out, "{},{:.6},{:.6}", m.index, m.psnr, m.ssim)?;
    }
    let (p, s) = mean_metrics(rows);
    writeln!(out, "mean,{p:.6},{s:.6}")
}

/// `sequence,threshold,precision,recall` rows.
pub fn write_pr_csv<W: Write>(sequence: &str, curve: &PrCurve, mut out: W) -> std::io::Result<()> {
    for p in &curve.points {
        writeln!(out, "{sequence},{:.6},{:.6},{:.6}", p.threshold, p.precision, p.recall)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_reference_values() {
        let a = Plane::from_elem((4, 4), 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = Plane::from_elem((4, 4), 0.25);
        assert!((psnr(&a, &b).unwrap() - 10.0 * 16f64.log10()).abs() < 1e-12);
        assert!((psnr(&a, &b).unwrap() - 12.0412).abs() < 1e-4);
        let c = Plane::from_elem((4, 4), 0.4);
        assert!((psnr(&a, &c).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Plane::zeros((3, 4))).is_err());
    }

    #[test]
    fn ssim_identity_and_negative() {
        let a = Plane::from_shape_fn((16, 16), |(r, c)| ((r * 3 + c * 5) % 11) as f64 / 10.0);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let neg = a.mapv(|v| 1.0 - v);
        assert!(ssim(&a, &neg).unwrap() < 1.0);
        assert!(ssim(&Plane::zeros((10, 20)), &Plane::zeros((10, 20))).is_err());
    }

    #[test]
    fn pr_perfect_derain() {
        let clean = Plane::from_elem((4, 4), 0.3);
        let mut gt = Array2::from_elem((4, 4), false);
        gt[[1, 1]] = true;
        let curve = rain_edge_pr(&clean, &clean, &gt, &[0.01, 0.1, 0.5]).unwrap();
        for p in &curve.points {
            assert_eq!((p.precision, p.recall), (1.0, 0.0));
        }
        assert_eq!(f_measure(&curve), 0.0);
    }

    #[test]
    fn pr_four_pixel_toy() {
        // gt = {p1, p2}; residual above tau at {p1, p3}
        let clean = Plane::zeros((1, 4));
        let derained = ndarray::arr2(&[[0.5, 0.0, 0.5, 0.0]]);
        let gt = ndarray::arr2(&[[true, true, false, false]]);
        let curve = rain_edge_pr(&derained, &clean, &gt, &[0.2]).unwrap();
        assert_eq!(curve.points[0].precision, 0.5);
        assert_eq!(curve.points[0].recall, 0.5);
    }

    #[test]
    fn pr_on_untouched_rain() {
        let clean = Plane::from_elem((3, 3), 0.2);
        let mut rainy = clean.clone();
        let mut gt = Array2::from_elem((3, 3), false);
        for (i, p) in [(0, 0), (1, 2), (2, 1)].into_iter().enumerate() {
            rainy[p] += 0.1 + 0.05 * i as f64;
            gt[p] = true;
        }
        // one extra non-rain residual
        rainy[[2, 2]] += 0.3;
        let curve = rain_edge_pr(&rainy, &clean, &gt, &[0.05]).unwrap();
        assert_eq!(curve.points[0].recall, 1.0);
        assert_eq!(curve.points[0].precision, 3.0 / 4.0);
        assert!(matches!(
            rain_edge_pr(&rainy, &clean, &Array2::from_elem((3, 3), false), &[0.1]),
            Err(Error::EmptyRainMask)
        ));
    }

    #[test]
    fn f_measure_cases() {
        let pt = |p, r| PrPoint {
            threshold: 0.1,
            precision: p,
            recall: r,
        };
        assert_eq!(f_measure(&PrCurve { points: vec![pt(1.0, 1.0)] }), 1.0);
        assert_eq!(f_measure(&PrCurve { points: vec![pt(1.0, 0.0), pt(0.5, 0.5)] }), 0.5);
        assert_eq!(f_measure(&PrCurve { points: vec![pt(0.0, 0.0)] }), 0.0);
    }

    #[test]
    fn border_crop() {
        let p = Plane::zeros((30, 40));
        assert_eq!(crop_border(&p, 8).dim(), (14, 24));
    }
}
