//! SLIC superpixel segmentation and per-superpixel patch extraction.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::frame_io::{ycbcr_to_rgb, Frame, Plane};

/// Number of k-means refinement passes.
pub const SLIC_ITERATIONS: usize = 10;

/// Default compactness weight on CIELAB in `[0, 100]`.
pub const DEFAULT_COMPACTNESS: f64 = 10.0;

/// A segmentation of one frame into connected superpixels.
#[derive(Debug, Clone)]
pub struct SuperPixelSet {
    /// Superpixel index per pixel, `[row, col]`.
    pub labels: Array2<u32>,
    /// Pixel coordinates `(row, col)` of each superpixel, in raster order.
    pub pixels: Vec<Vec<(usize, usize)>>,
    /// Centroid `(row, col)` of each superpixel.
    pub centroids: Vec<(f64, f64)>,
    /// Mean CIELAB colour of each superpixel.
    pub mean_lab: Vec<[f64; 3]>,
    /// Seed grid step used for this segmentation.
    pub grid_step: f64,
}

impl SuperPixelSet {
    pub fn count(&self) -> usize {
        self.pixels.len()
    }

    pub fn height(&self) -> usize {
        self.labels.nrows()
    }

    pub fn width(&self) -> usize {
        self.labels.ncols()
    }

    /// Builds the per-superpixel tables from a dense label map whose labels
    /// are already contiguous in `[0, count)`.
    pub fn from_labels(labels: Array2<u32>, lab: Option<&[Plane; 3]>, grid_step: f64) -> Self {
        let count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let mut pixels = vec![Vec::new(); count];
        for ((r, c), &l) in labels.indexed_iter() {
            pixels[l as usize].push((r, c));
        }
        let centroids = pixels
            .iter()
            .map(|px| {
                let n = px.len().max(1) as f64;
                let (sr, sc) = px
                    .iter()
                    .fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64, b + c as f64));
                (sr / n, sc / n)
            })
            .collect();
        let mean_lab = pixels
            .iter()
            .map(|px| {
                let mut acc = [0.0; 3];
                if let Some(lab) = lab {
                    for &(r, c) in px {
                        for ch in 0..3 {
                            acc[ch] += lab[ch][[r, c]];
                        }
                    }
                    let n = px.len().max(1) as f64;
                    acc.iter_mut().for_each(|v| *v /= n);
                }
                acc
            })
            .collect();
        Self {
            labels,
            pixels,
            centroids,
            mean_lab,
            grid_step,
        }
    }
}

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts a non-linear sRGB sample to CIELAB (D65 white), `L` in `[0, 100]`.
pub fn rgb_to_lab(r: f64, g: f64, b: f64) -> [f64; 3] {
    let (r, g, b) = (srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b));
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let fx = lab_f(x / 0.950_47);
    let fy = lab_f(y);
    let fz = lab_f(z / 1.088_83);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn frame_to_lab(frame: &Frame) -> [Plane; 3] {
    let dim = frame.y.dim();
    let mut out = [Plane::zeros(dim), Plane::zeros(dim), Plane::zeros(dim)];
    for ((r, c), &y) in frame.y.indexed_iter() {
        let (rv, gv, bv) = ycbcr_to_rgb(y, frame.cb[[r, c]], frame.cr[[r, c]]);
        let lab = rgb_to_lab(rv, gv, bv);
        for ch in 0..3 {
            out[ch][[r, c]] = lab[ch];
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Cluster {
    lab: [f64; 3],
    row: f64,
    col: f64,
}

fn lab_at(lab: &[Plane; 3], r: usize, c: usize) -> [f64; 3] {
    [lab[0][[r, c]], lab[1][[r, c]], lab[2][[r, c]]]
}

fn lab_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Segments `frame` into roughly `target_count` SLIC superpixels.
///
/// The distance between a pixel and a cluster centre is
/// `d_lab + (compactness / S) * d_xy` with grid step
/// `S = sqrt(W * H / target_count)`. After a fixed number of k-means passes,
/// every superpixel is made 4-connected: small fragments are absorbed into
/// the adjacent superpixel they share the longest boundary with, and large
/// fragments become superpixels of their own.
pub fn slic_segment(frame: &Frame, target_count: usize, compactness: f64) -> Result<SuperPixelSet> {
    let (h, w) = frame.y.dim();
    if target_count == 0 {
        return Err(Error::InvalidParameter("target superpixel count must be >= 1".into()));
    }
    if target_count > w * h {
        return Err(Error::InvalidParameter(format!(
            "target superpixel count {target_count} exceeds pixel count {}",
            w * h
        )));
    }
    let lab = frame_to_lab(frame);
    let step = ((w * h) as f64 / target_count as f64).sqrt();
    let mut clusters = seed_clusters(&lab, step);

    let radius = step.ceil() as isize;
    let spatial_weight = compactness / step;
    let mut labels = Array2::<u32>::from_elem((h, w), u32::MAX);
    let mut dist = Plane::from_elem((h, w), f64::INFINITY);

    for _ in 0..SLIC_ITERATIONS {
        dist.fill(f64::INFINITY);
        for (k, cl) in clusters.iter().enumerate() {
            let (cr, cc) = (cl.row.round() as isize, cl.col.round() as isize);
            let r0 = (cr - radius).max(0) as usize;
            let r1 = ((cr + radius) as usize).min(h - 1);
            let c0 = (cc - radius).max(0) as usize;
            let c1 = ((cc + radius) as usize).min(w - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let dl = lab_dist(&cl.lab, &lab_at(&lab, r, c));
                    let dxy = ((r as f64 - cl.row).powi(2) + (c as f64 - cl.col).powi(2)).sqrt();
                    let d = dl + spatial_weight * dxy;
                    if d < dist[[r, c]] {
                        dist[[r, c]] = d;
                        labels[[r, c]] = k as u32;
                    }
                }
            }
        }

        let mut sums = vec![([0.0f64; 3], 0.0f64, 0.0f64, 0usize); clusters.len()];
        for ((r, c), &l) in labels.indexed_iter() {
            if l == u32::MAX {
                continue;
            }
            let s = &mut sums[l as usize];
            let px = lab_at(&lab, r, c);
            for ch in 0..3 {
                s.0[ch] += px[ch];
            }
            s.1 += r as f64;
            s.2 += c as f64;
            s.3 += 1;
        }
        for (cl, (sl, sr, sc, n)) in clusters.iter_mut().zip(sums) {
            if n > 0 {
                let n = n as f64;
                cl.lab = [sl[0] / n, sl[1] / n, sl[2] / n];
                cl.row = sr / n;
                cl.col = sc / n;
            }
        }
    }

    let min_size = ((step * step) / 4.0).round().max(1.0) as usize;
    let labels = enforce_connectivity(&labels, min_size);
    let sps = SuperPixelSet::from_labels(labels, Some(&lab), step);
    log::debug!(
        "slic: requested {target_count}, produced {} superpixels (step {step:.2})",
        sps.count()
    );
    Ok(sps)
}

fn seed_clusters(lab: &[Plane; 3], step: f64) -> Vec<Cluster> {
    let (h, w) = lab[0].dim();
    let nx = ((w as f64 / step).round() as usize).max(1);
    let ny = ((h as f64 / step).round() as usize).max(1);
    let sx = w as f64 / nx as f64;
    let sy = h as f64 / ny as f64;

    let grad = |r: usize, c: usize| -> f64 {
        if r == 0 || c == 0 || r + 1 >= h || c + 1 >= w {
            return f64::INFINITY;
        }
        let dx = lab_dist(&lab_at(lab, r, c + 1), &lab_at(lab, r, c - 1));
        let dy = lab_dist(&lab_at(lab, r + 1, c), &lab_at(lab, r - 1, c));
        dx * dx + dy * dy
    };

    let mut clusters = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            // grid point in pixel-index coordinates
            let gr = (j as f64 + 0.5) * sy - 0.5;
            let gc = (i as f64 + 0.5) * sx - 0.5;
            let r = (gr.round() as usize).min(h - 1);
            let c = (gc.round() as usize).min(w - 1);
            // move the seed to the lowest-gradient position of its 3x3 neighbourhood
            let (mut best_r, mut best_c, mut best_g) = (r, c, grad(r, c));
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let rr = r as isize + dr;
                    let cc = c as isize + dc;
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let g = grad(rr as usize, cc as usize);
                    if g < best_g {
                        best_g = g;
                        best_r = rr as usize;
                        best_c = cc as usize;
                    }
                }
            }
            clusters.push(Cluster {
                lab: lab_at(lab, best_r, best_c),
                row: gr + best_r as f64 - r as f64,
                col: gc + best_c as f64 - c as f64,
            });
        }
    }
    clusters
}

const NEIGHBOURS_4: [(isize, isize); 4] = [(-1, 0), (0, -1), (1, 0), (0, 1)];

fn enforce_connectivity(labels: &Array2<u32>, min_size: usize) -> Array2<u32> {
    let (h, w) = labels.dim();
    let mut out = Array2::<u32>::from_elem((h, w), u32::MAX);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    let mut component = Vec::new();

    for r0 in 0..h {
        for c0 in 0..w {
            if out[[r0, c0]] != u32::MAX {
                continue;
            }
            let old = labels[[r0, c0]];
            component.clear();
            queue.push_back((r0, c0));
            out[[r0, c0]] = next;
            // boundary contacts with already-relabelled neighbours: (label, count)
            let mut contacts: Vec<(u32, usize)> = Vec::new();
            while let Some((r, c)) = queue.pop_front() {
                component.push((r, c));
                for (dr, dc) in NEIGHBOURS_4 {
                    let rr = r as isize + dr;
                    let cc = c as isize + dc;
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let (rr, cc) = (rr as usize, cc as usize);
                    if labels[[rr, cc]] == old && out[[rr, cc]] == u32::MAX {
                        out[[rr, cc]] = next;
                        queue.push_back((rr, cc));
                    } else if labels[[rr, cc]] != old && out[[rr, cc]] != u32::MAX {
                        let l = out[[rr, cc]];
                        match contacts.iter_mut().find(|(cl, _)| *cl == l) {
                            Some(e) => e.1 += 1,
                            None => contacts.push((l, 1)),
                        }
                    }
                }
            }
            let absorb = (component.len() < min_size || old == u32::MAX)
                .then(|| {
                    // longest shared boundary; ties go to the smaller label
                    contacts
                        .iter()
                        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                        .map(|&(l, _)| l)
                })
                .flatten();
            match absorb {
                Some(l) => component.iter().for_each(|&p| out[p] = l),
                None => next += 1,
            }
        }
    }
    out
}

/// Writes a colour-coded label map, for inspection.
pub fn label_map_image(sps: &SuperPixelSet) -> image::RgbImage {
    let (h, w) = sps.labels.dim();
    image::ImageBuffer::from_fn(w as u32, h as u32, |c, r| {
        let l = sps.labels[[r as usize, c as usize]];
        // cheap integer hash for distinct hues
        let x = l.wrapping_mul(2_654_435_761);
        image::Rgb([(x >> 24) as u8, (x >> 16) as u8, (x >> 8) as u8])
    })
}

/// The `n_x` x `n_x` bounding box of one superpixel in the target frame.
#[derive(Debug, Clone)]
pub struct SpPatch {
    /// Superpixel index.
    pub index: usize,
    /// `(row, col)` of the box's top-left corner in frame coordinates.
    pub origin: (usize, usize),
    /// Luma of the target frame inside the box.
    pub luma: Plane,
    /// `true` where the box pixel belongs to the superpixel.
    pub mask: Array2<bool>,
    /// Superpixel pixels that fall outside the box.
    pub dropped: usize,
}

impl SpPatch {
    pub fn size(&self) -> usize {
        self.luma.nrows()
    }

    /// In-box coordinates of superpixel pixels, row-major.
    pub fn mask_pixels(&self) -> Vec<(usize, usize)> {
        mask_pixels(&self.mask)
    }

    /// The mask as a 0/1 plane.
    pub fn mask_plane(&self) -> Plane {
        self.mask.mapv(|m| if m { 1.0 } else { 0.0 })
    }
}

/// Row-major coordinates of the set entries of a mask.
pub fn mask_pixels(mask: &Array2<bool>) -> Vec<(usize, usize)> {
    mask.indexed_iter()
        .filter_map(|(p, &m)| m.then_some(p))
        .collect()
}

fn box_origin(center: f64, n_x: usize, extent: usize) -> usize {
    let start = center.round() as isize - (n_x / 2) as isize;
    start.clamp(0, (extent - n_x) as isize) as usize
}

/// Cuts the `n_x` x `n_x` box of superpixel `k` out of `frame`.
///
/// The box is centred on the superpixel centroid and shifted the minimum
/// amount needed to lie inside the frame. When the superpixel does not fit,
/// the box is re-centred on its tight bounding box and the pixels left
/// outside are not part of the mask.
pub fn extract_patch(sps: &SuperPixelSet, frame: &Frame, k: usize, n_x: usize) -> Result<SpPatch> {
    let (h, w) = frame.y.dim();
    if k >= sps.count() {
        return Err(Error::InvalidParameter(format!(
            "superpixel {k} out of range (count {})",
            sps.count()
        )));
    }
    if n_x == 0 || n_x > h.min(w) {
        return Err(Error::InvalidParameter(format!(
            "box size {n_x} does not fit a {w}x{h} frame"
        )));
    }
    let pixels = &sps.pixels[k];
    let (cr, cc) = sps.centroids[k];
    let mut origin = (box_origin(cr, n_x, h), box_origin(cc, n_x, w));
    let inside = |o: (usize, usize), &(r, c): &(usize, usize)| {
        r >= o.0 && r < o.0 + n_x && c >= o.1 && c < o.1 + n_x
    };
    if !pixels.iter().all(|p| inside(origin, p)) {
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for &(r, c) in pixels {
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
        origin = (
            box_origin((r0 + r1) as f64 / 2.0, n_x, h),
            box_origin((c0 + c1) as f64 / 2.0, n_x, w),
        );
    }

    let mut mask = Array2::from_elem((n_x, n_x), false);
    let mut dropped = 0;
    for p in pixels {
        if inside(origin, p) {
            mask[[p.0 - origin.0, p.1 - origin.1]] = true;
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::debug!("superpixel {k}: {dropped} pixels fall outside the {n_x}x{n_x} box");
    }
    let luma = frame
        .y
        .slice(ndarray::s![origin.0..origin.0 + n_x, origin.1..origin.1 + n_x])
        .to_owned();
    Ok(SpPatch {
        index: k,
        origin,
        luma,
        mask,
        dropped,
    })
}
