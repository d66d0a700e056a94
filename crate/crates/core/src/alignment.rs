//! Superpixel template matching across the sliding window.
//!
//! For every superpixel a [`SearchBuffer`] holds, per window frame, the
//! `(n_x + n_s)`-square neighbourhood of its bounding box. Two masked
//! template-matching passes run over it: one optimal match per frame
//! ([`build_t0`]) and a global ranking of all candidates with the rain-free
//! template ([`build_t1`]).

use std::cmp::Ordering;
use std::io::Write;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::frame_io::{Frame, Plane};
use crate::superpixel::{mask_pixels, SpPatch};

/// One matched candidate: window time offset, spatial offset and its cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub t: i32,
    pub u: i32,
    pub v: i32,
    pub cost: f64,
}

impl Match {
    fn radius2(&self) -> i32 {
        self.u * self.u + self.v * self.v
    }

    /// Total candidate order: cost, then distance from the zero offset,
    /// then row-major offset, then time.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.radius2().cmp(&other.radius2()))
            .then(self.u.cmp(&other.u))
            .then(self.v.cmp(&other.v))
            .then(self.t.cmp(&other.t))
    }
}

/// Spatial-temporal neighbourhood of one superpixel box.
#[derive(Debug, Clone)]
pub struct SearchBuffer {
    pub n_x: usize,
    pub n_s: usize,
    /// Box origin in frame coordinates.
    pub origin: (usize, usize),
    /// One `(n_x + n_s)`-square volume per window slot; `None` where the
    /// window runs past the sequence.
    pub slots: Vec<Option<Plane>>,
    /// Frame `(height, width)`; decides which offsets are valid.
    frame_dim: (usize, usize),
}

impl SearchBuffer {
    pub fn n_t(&self) -> usize {
        self.slots.len()
    }

    fn half_t(&self) -> i32 {
        (self.slots.len() / 2) as i32
    }

    /// Window time offsets of the slots that hold a frame, ascending.
    pub fn present_times(&self) -> Vec<i32> {
        let half = self.half_t();
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_some())
            .map(|(i, _)| i as i32 - half)
            .collect()
    }

    pub fn slot(&self, t: i32) -> Result<&Plane> {
        let idx = t + self.half_t();
        if idx < 0 {
            return Err(Error::MissingWindowFrame(t));
        }
        self.slots
            .get(idx as usize)
            .and_then(Option::as_ref)
            .ok_or(Error::MissingWindowFrame(t))
    }

    /// Spatial offset range along one axis, `[-n_s/2, n_s/2)`.
    pub fn offset_range(&self) -> std::ops::Range<i32> {
        let hs = (self.n_s / 2) as i32;
        -hs..hs
    }

    /// Whether the box shifted by `(u, v)` lies fully inside the frame.
    pub fn is_valid_offset(&self, u: i32, v: i32) -> bool {
        let (h, w) = self.frame_dim;
        let r = self.origin.0 as i64 + i64::from(u);
        let c = self.origin.1 as i64 + i64::from(v);
        r >= 0 && c >= 0 && r + self.n_x as i64 <= h as i64 && c + self.n_x as i64 <= w as i64
    }

    pub fn valid_offsets(&self) -> Vec<(i32, i32)> {
        let range = self.offset_range();
        range
            .clone()
            .flat_map(|u| range.clone().map(move |v| (u, v)))
            .filter(|&(u, v)| self.is_valid_offset(u, v))
            .collect()
    }

    /// The `n_x`-square patch at offset `(u, v)` in slot `t`.
    pub fn patch_at(&self, t: i32, u: i32, v: i32) -> Result<Plane> {
        let vol = self.slot(t)?;
        let hs = (self.n_s / 2) as i32;
        let r = (u + hs) as usize;
        let c = (v + hs) as usize;
        Ok(vol.slice(s![r..r + self.n_x, c..c + self.n_x]).to_owned())
    }

    /// Masked squared-difference cost of `template` against the candidate at
    /// `(u, v)` in slot `t`. `coords` are the row-major mask pixels.
    pub fn cost(&self, vol: &Plane, template: &Plane, coords: &[(usize, usize)], u: i32, v: i32) -> f64 {
        let hs = (self.n_s / 2) as i32;
        let dr = (u + hs) as usize;
        let dc = (v + hs) as usize;
        let mut acc = 0.0;
        for &(x, y) in coords {
            let d = vol[[x + dr, y + dc]] - template[[x, y]];
            acc += d * d;
        }
        acc
    }
}

/// Gathers the search neighbourhood of `patch` from every window frame.
///
/// `window` is the slot list produced by
/// [`FrameSequence::window`](crate::frame_io::FrameSequence::window). Pixels
/// beyond the frame border are edge-replicated; offsets that would need them
/// are reported invalid by [`SearchBuffer::is_valid_offset`].
pub fn build_buffer(window: &[Option<&Frame>], patch: &SpPatch, n_s: usize) -> Result<SearchBuffer> {
    if n_s % 2 != 0 {
        return Err(Error::InvalidParameter(format!("search range {n_s} must be even")));
    }
    if window.len() % 2 == 0 {
        return Err(Error::InvalidParameter("window length must be odd".into()));
    }
    let centre = window[window.len() / 2].ok_or(Error::MissingWindowFrame(0))?;
    let frame_dim = centre.y.dim();
    let n_x = patch.size();
    let ext = n_x + n_s;
    let hs = (n_s / 2) as isize;
    let (h, w) = frame_dim;
    let slots = window
        .iter()
        .map(|f| {
            f.map(|frame| {
                Plane::from_shape_fn((ext, ext), |(i, j)| {
                    let r = (patch.origin.0 as isize + i as isize - hs).clamp(0, h as isize - 1);
                    let c = (patch.origin.1 as isize + j as isize - hs).clamp(0, w as isize - 1);
                    frame.y[[r as usize, c as usize]]
                })
            })
        })
        .collect();
    Ok(SearchBuffer {
        n_x,
        n_s,
        origin: patch.origin,
        slots,
        frame_dim,
    })
}

/// Stack of aligned `n_x`-square patches with their match provenance.
#[derive(Debug, Clone)]
pub struct MatchTensor {
    pub slices: Vec<Plane>,
    pub provenance: Vec<Match>,
}

impl MatchTensor {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Writes `sp,t,u,v,cost` rows for debugging.
    pub fn write_provenance_csv<W: Write>(&self, sp: usize, mut out: W) -> std::io::Result<()> {
        for m in &self.provenance {
            writeln!(out, "{sp},{},{},{},{:e}", m.t, m.u, m.v, m.cost)?;
        }
        Ok(())
    }
}

fn best_offset(buffer: &SearchBuffer, vol: &Plane, template: &Plane, coords: &[(usize, usize)], t: i32) -> Option<Match> {
    let mut best: Option<Match> = None;
    for u in buffer.offset_range() {
        for v in buffer.offset_range() {
            if !buffer.is_valid_offset(u, v) {
                continue;
            }
            let cand = Match {
                t,
                u,
                v,
                cost: buffer.cost(vol, template, coords, u, v),
            };
            let better = match &best {
                None => true,
                Some(b) => cand.cost < b.cost || (cand.cost == b.cost && cand.radius2() < b.radius2()),
            };
            if better {
                best = Some(cand);
            }
        }
    }
    best
}

/// Best offset of the superpixel template in window slot `t` under the
/// superpixel mask. Ties prefer the offset closest to zero, then row-major
/// order.
pub fn match_optimal(patch: &SpPatch, buffer: &SearchBuffer, t: i32) -> Result<Match> {
    let vol = buffer.slot(t)?;
    let coords = patch.mask_pixels();
    if coords.is_empty() {
        return Err(Error::InvalidParameter("superpixel mask is empty".into()));
    }
    best_offset(buffer, vol, &patch.luma, &coords, t).ok_or(Error::NoValidOffsets(t))
}

/// One optimal match per available window frame, time-ascending. The
/// centre slice is the superpixel box itself.
pub fn build_t0(patch: &SpPatch, buffer: &SearchBuffer) -> Result<MatchTensor> {
    let coords = patch.mask_pixels();
    if coords.is_empty() {
        return Err(Error::InvalidParameter("superpixel mask is empty".into()));
    }
    let mut slices = Vec::with_capacity(buffer.n_t());
    let mut provenance = Vec::with_capacity(buffer.n_t());
    for t in buffer.present_times() {
        if t == 0 {
            slices.push(patch.luma.clone());
            provenance.push(Match {
                t,
                u: 0,
                v: 0,
                cost: 0.0,
            });
            continue;
        }
        let vol = buffer.slot(t)?;
        let m = best_offset(buffer, vol, &patch.luma, &coords, t).ok_or(Error::NoValidOffsets(t))?;
        slices.push(buffer.patch_at(t, m.u, m.v)?);
        provenance.push(m);
    }
    Ok(MatchTensor { slices, provenance })
}

/// Costs of every candidate under `template_mask`, sorted by
/// [`Match::rank_cmp`].
///
/// The zero-offset self match in the centre frame is never a candidate; with
/// `exclude_current_frame` the whole centre frame is skipped.
pub fn rank_candidates(
    patch: &SpPatch,
    buffer: &SearchBuffer,
    template_mask: &Array2<bool>,
    exclude_current_frame: bool,
) -> Result<Vec<Match>> {
    let mut all = candidate_costs(patch, buffer, template_mask, exclude_current_frame)?;
    all.sort_by(Match::rank_cmp);
    Ok(all)
}

fn candidate_costs(
    patch: &SpPatch,
    buffer: &SearchBuffer,
    template_mask: &Array2<bool>,
    exclude_current_frame: bool,
) -> Result<Vec<Match>> {
    let coords = mask_pixels(template_mask);
    if coords.is_empty() {
        return Err(Error::RainMaskCoversSp);
    }
    let offsets = buffer.valid_offsets();
    let mut out = Vec::with_capacity(offsets.len() * buffer.n_t());
    for t in buffer.present_times() {
        if t == 0 && exclude_current_frame {
            continue;
        }
        let vol = buffer.slot(t)?;
        for &(u, v) in &offsets {
            if t == 0 && u == 0 && v == 0 {
                continue;
            }
            out.push(Match {
                t,
                u,
                v,
                cost: buffer.cost(vol, &patch.luma, &coords, u, v),
            });
        }
    }
    Ok(out)
}

/// The `n_st` lowest-cost candidates under the rain-free template
/// `m_rsp`, ascending by cost.
pub fn build_t1(
    patch: &SpPatch,
    buffer: &SearchBuffer,
    m_rsp: &Array2<bool>,
    n_st: usize,
    exclude_current_frame: bool,
) -> Result<MatchTensor> {
    if n_st == 0 {
        return Err(Error::InvalidParameter("n_st must be >= 1".into()));
    }
    let mut all = candidate_costs(patch, buffer, m_rsp, exclude_current_frame)?;
    if n_st > all.len() {
        return Err(Error::NotEnoughCandidates {
            requested: n_st,
            available: all.len(),
        });
    }
    if n_st < all.len() {
        all.select_nth_unstable_by(n_st - 1, Match::rank_cmp);
        all.truncate(n_st);
    }
    all.sort_by(Match::rank_cmp);
    let slices = all
        .iter()
        .map(|m| buffer.patch_at(m.t, m.u, m.v))
        .collect::<Result<Vec<_>>>()?;
    Ok(MatchTensor {
        slices,
        provenance: all,
    })
}

/// Elementwise mean of the slices.
pub fn slice_average(t1: &MatchTensor) -> Result<Plane> {
    let first = t1
        .slices
        .first()
        .ok_or_else(|| Error::InvalidParameter("cannot average an empty tensor".into()))?;
    let mut acc = Plane::zeros(first.dim());
    for s in &t1.slices {
        acc += s;
    }
    acc /= t1.slices.len() as f64;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame_io::Frame;
    use crate::superpixel::{extract_patch, SuperPixelSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(h: usize, w: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0))
    }

    fn shifted(base: &Plane, du: i32, dv: i32) -> Plane {
        // content at (r, c) moves to (r + du, c + dv)
        let (h, w) = base.dim();
        Plane::from_shape_fn((h, w), |(r, c)| {
            let rr = (r as i32 - du).clamp(0, h as i32 - 1) as usize;
            let cc = (c as i32 - dv).clamp(0, w as i32 - 1) as usize;
            base[[rr, cc]]
        })
    }

    fn block_patch(frame: &Frame, n_x: usize) -> SpPatch {
        let (h, w) = frame.y.dim();
        let labels = Array2::from_shape_fn((h, w), |(r, c)| {
            u32::from((h / 2 - 4..h / 2 + 4).contains(&r) && (w / 2 - 4..w / 2 + 4).contains(&c))
        });
        let sps = SuperPixelSet::from_labels(labels, None, 8.0);
        extract_patch(&sps, frame, 1, n_x).unwrap()
    }

    #[test]
    fn buffer_geometry() {
        let f = Frame::from_luma(textured(200, 200, 1)).unwrap();
        let window = vec![Some(&f); 5];
        let patch = block_patch(&f, 80);
        let buf = build_buffer(&window, &patch, 30).unwrap();
        assert_eq!(buf.slots.len(), 5);
        assert_eq!(buf.slots[0].as_ref().unwrap().dim(), (110, 110));
        assert_eq!(buf.valid_offsets().len(), 900);
        assert_eq!(buf.patch_at(0, 0, 0).unwrap(), patch.luma);
    }

    #[test]
    fn corner_patch_invalidates_outward_offsets() {
        let f = Frame::from_luma(textured(100, 100, 2)).unwrap();
        let labels = Array2::from_shape_fn((100, 100), |(r, c)| u32::from(r < 6 && c < 6));
        let sps = SuperPixelSet::from_labels(labels, None, 8.0);
        let patch = extract_patch(&sps, &f, 1, 20).unwrap();
        assert_eq!(patch.origin, (0, 0));
        let buf = build_buffer(&[Some(&f), Some(&f), Some(&f)], &patch, 10).unwrap();
        assert!(!buf.is_valid_offset(-1, 0));
        assert!(!buf.is_valid_offset(0, -5));
        assert!(buf.is_valid_offset(4, 4));
        assert_eq!(buf.valid_offsets().len(), 25);
    }

    #[test]
    fn static_scene_matches_at_zero() {
        let f = Frame::from_luma(textured(120, 120, 3)).unwrap();
        let window = vec![Some(&f); 5];
        let patch = block_patch(&f, 40);
        let buf = build_buffer(&window, &patch, 10).unwrap();
        for t in -2..=2 {
            let m = match_optimal(&patch, &buf, t).unwrap();
            assert_eq!((m.u, m.v, m.cost), (0, 0, 0.0));
        }
        let t0 = build_t0(&patch, &buf).unwrap();
        assert_eq!(t0.len(), 5);
        assert!(t0.slices.iter().all(|s| *s == patch.luma));
    }

    #[test]
    fn translated_frames_are_recovered() {
        let base = textured(120, 120, 4);
        let shifts = [(-4, 1), (3, -2), (0, 0), (-1, -3), (2, 4)];
        let frames: Vec<Frame> = shifts
            .iter()
            .map(|&(du, dv)| Frame::from_luma(shifted(&base, du, dv)).unwrap())
            .collect();
        let window: Vec<Option<&Frame>> = frames.iter().map(Some).collect();
        let patch = block_patch(&frames[2], 40);
        let buf = build_buffer(&window, &patch, 12).unwrap();
        let t0 = build_t0(&patch, &buf).unwrap();
        for (i, &(du, dv)) in shifts.iter().enumerate() {
            let m = t0.provenance[i];
            assert_eq!((m.u, m.v), (du, dv));
            assert_eq!(m.cost, 0.0);
            let direct = match_optimal(&patch, &buf, i as i32 - 2).unwrap();
            assert_eq!(direct, m);
            for &(r, c) in &patch.mask_pixels() {
                assert_eq!(t0.slices[i][[r, c]], patch.luma[[r, c]]);
            }
        }
    }

    #[test]
    fn t1_on_static_scene() {
        let f = Frame::from_luma(textured(120, 120, 5)).unwrap();
        let window = vec![Some(&f); 5];
        let patch = block_patch(&f, 40);
        let buf = build_buffer(&window, &patch, 10).unwrap();
        let t1 = build_t1(&patch, &buf, &patch.mask, 4, false).unwrap();
        assert_eq!(t1.len(), 4);
        let times: Vec<i32> = t1.provenance.iter().map(|m| m.t).collect();
        assert_eq!(times, vec![-2, -1, 1, 2]);
        assert!(t1.provenance.iter().all(|m| m.cost == 0.0 && m.u == 0 && m.v == 0));
        assert!(t1.slices.iter().all(|s| *s == patch.luma));
        assert_eq!(slice_average(&t1).unwrap(), patch.luma);

        let err = build_t1(&patch, &buf, &patch.mask, 100_000, false).unwrap_err();
        assert!(matches!(err, Error::NotEnoughCandidates { .. }));
        let empty = Array2::from_elem(patch.mask.dim(), false);
        assert!(matches!(build_t1(&patch, &buf, &empty, 4, false), Err(Error::RainMaskCoversSp)));
    }

    #[test]
    fn t1_current_frame_exclusion() {
        let f = Frame::from_luma(textured(120, 120, 6)).unwrap();
        let window = vec![Some(&f); 3];
        let patch = block_patch(&f, 40);
        let buf = build_buffer(&window, &patch, 10).unwrap();
        let with = rank_candidates(&patch, &buf, &patch.mask, false).unwrap();
        let without = rank_candidates(&patch, &buf, &patch.mask, true).unwrap();
        assert_eq!(with.len(), 3 * 100 - 1);
        assert_eq!(without.len(), 2 * 100);
        assert!(without.iter().all(|m| m.t != 0));
        assert!(!with.iter().any(|m| m.t == 0 && m.u == 0 && m.v == 0));
    }

    #[test]
    fn masked_streak_is_ignored() {
        let base = textured(120, 120, 7);
        let mut frames: Vec<Frame> = (0..5).map(|_| Frame::from_luma(base.clone()).unwrap()).collect();
        let patch0 = block_patch(&frames[2], 40);
        // bright vertical streak through the superpixel of the current frame
        let mut y = frames[2].y.clone();
        let col = patch0.origin.1 + 20;
        for r in patch0.origin.0..patch0.origin.0 + 40 {
            y[[r, col]] = (y[[r, col]] + 0.5).min(1.0);
        }
        frames[2] = Frame::from_luma(y).unwrap();
        let window: Vec<Option<&Frame>> = frames.iter().map(Some).collect();
        let patch = block_patch(&frames[2], 40);
        let mut m_rsp = patch.mask.clone();
        m_rsp.column_mut(20).fill(false);
        let buf = build_buffer(&window, &patch, 10).unwrap();
        let t1 = build_t1(&patch, &buf, &m_rsp, 4, false).unwrap();
        for m in &t1.provenance {
            assert_eq!((m.u, m.v, m.cost), (0, 0, 0.0));
        }
    }

    #[test]
    fn slice_average_of_two_constants() {
        let t = MatchTensor {
            slices: vec![Plane::from_elem((3, 3), 0.2), Plane::from_elem((3, 3), 0.6)],
            provenance: vec![],
        };
        let avg = slice_average(&t).unwrap();
        assert!(avg.iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn slice_average_matches_independent_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let slices: Vec<Plane> = (0..7)
            .map(|_| Plane::from_shape_fn((5, 6), |_| rng.random_range(0.0..1.0)))
            .collect();
        let avg = slice_average(&MatchTensor {
            slices: slices.clone(),
            provenance: vec![],
        })
        .unwrap();
        for r in 0..5 {
            for c in 0..6 {
                let mut s = 0.0;
                for sl in slices.iter().rev() {
                    s += sl[[r, c]];
                }
                assert!((avg[[r, c]] - s / 7.0).abs() < 1e-12);
            }
        }
    }
}
