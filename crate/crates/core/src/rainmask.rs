//! Rain pixel detection inside a superpixel box.
//!
//! Rain only ever brightens the pixels it covers, so a pixel of the target
//! box that is clearly brighter than its temporally aligned counterparts in
//! several frames is flagged as rain. Chroma edges veto the flag, since
//! misaligned background edges produce the same luma fluctuation but rain
//! leaves the chroma planes untouched.

use ndarray::{s, Array2, Array3};

use crate::alignment::MatchTensor;
use crate::frame_io::{Frame, Plane};
use crate::superpixel::SpPatch;

pub const DEFAULT_EPS_RAIN: f64 = 0.012;
pub const DEFAULT_EPS_EDGE: f64 = 0.2;
/// Positive fluctuations needed before a pixel counts as rain.
pub const DEFAULT_MIN_VOTES: usize = 3;

/// The masks of one superpixel box.
#[derive(Debug, Clone, PartialEq)]
pub struct RainMask {
    /// Initial mask from temporal voting.
    pub m_hat: Array2<bool>,
    /// Chroma edge map.
    pub m_e: Array2<bool>,
    /// Final rain mask, `m_hat` with chroma edges removed.
    pub m_rain: Array2<bool>,
}

impl RainMask {
    pub fn new(m_hat: Array2<bool>, m_e: Array2<bool>) -> Self {
        let m_rain = final_rain_mask(&m_hat, &m_e);
        Self { m_hat, m_e, m_rain }
    }
}

/// `M_0(x, y, t) = 1` iff `X_k(x, y) - T0(x, y, t) >= eps_rain`.
///
/// Returned with shape `(slices, n_x, n_x)`.
pub fn fluctuation_tensor(patch: &SpPatch, t0: &MatchTensor, eps_rain: f64) -> Array3<bool> {
    let n = patch.size();
    let mut out = Array3::from_elem((t0.len(), n, n), false);
    for (t, slice) in t0.slices.iter().enumerate() {
        ndarray::Zip::from(out.slice_mut(s![t, .., ..]))
            .and(&patch.luma)
            .and(slice)
            .for_each(|o, &x, &y| *o = x - y >= eps_rain);
    }
    out
}

/// Pixels with at least `min_votes` positive fluctuations.
pub fn initial_rain_mask(m0: &Array3<bool>, min_votes: usize) -> Array2<bool> {
    let (_, h, w) = m0.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        m0.slice(s![.., r, c]).iter().filter(|&&b| b).count() >= min_votes
    })
}

/// Gradient magnitude by central differences, forward/backward at borders.
pub fn gradient_magnitude(plane: &Plane) -> Plane {
    let (h, w) = plane.dim();
    let diff = |lo: f64, hi: f64, span: usize| (hi - lo) / span as f64;
    Plane::from_shape_fn((h, w), |(r, c)| {
        let gx = if w < 2 {
            0.0
        } else if c == 0 {
            diff(plane[[r, 0]], plane[[r, 1]], 1)
        } else if c == w - 1 {
            diff(plane[[r, c - 1]], plane[[r, c]], 1)
        } else {
            diff(plane[[r, c - 1]], plane[[r, c + 1]], 2)
        };
        let gy = if h < 2 {
            0.0
        } else if r == 0 {
            diff(plane[[0, c]], plane[[1, c]], 1)
        } else if r == h - 1 {
            diff(plane[[r - 1, c]], plane[[r, c]], 1)
        } else {
            diff(plane[[r - 1, c]], plane[[r + 1, c]], 2)
        };
        (gx * gx + gy * gy).sqrt()
    })
}

/// `M_e = 1` where `|grad Cb| + |grad Cr| >= eps_e` on the box crop of the
/// chroma planes.
pub fn chroma_edge_map(frame: &Frame, origin: (usize, usize), n_x: usize, eps_e: f64) -> Array2<bool> {
    let region = s![origin.0..origin.0 + n_x, origin.1..origin.1 + n_x];
    let gcb = gradient_magnitude(&frame.cb.slice(region).to_owned());
    let gcr = gradient_magnitude(&frame.cr.slice(region).to_owned());
    ndarray::Zip::from(&gcb)
        .and(&gcr)
        .map_collect(|&a, &b| a + b >= eps_e)
}

/// `M_rain = M_hat * (1 - M_e)`.
pub fn final_rain_mask(m_hat: &Array2<bool>, m_e: &Array2<bool>) -> Array2<bool> {
    ndarray::Zip::from(m_hat).and(m_e).map_collect(|&h, &e| h && !e)
}

/// Vote threshold for a window holding only `available` of `n_t` frames.
pub fn scaled_min_votes(available: usize, n_t: usize) -> usize {
    if available >= n_t || n_t < 2 {
        return DEFAULT_MIN_VOTES;
    }
    let scaled = (DEFAULT_MIN_VOTES as f64 * (available as f64 - 1.0) / (n_t as f64 - 1.0)).round() as usize;
    scaled.max(2)
}

/// Runs the three detection steps for one superpixel.
pub fn detect(
    patch: &SpPatch,
    t0: &MatchTensor,
    frame: &Frame,
    eps_rain: f64,
    eps_e: f64,
    min_votes: usize,
) -> RainMask {
    let m0 = fluctuation_tensor(patch, t0, eps_rain);
    let m_hat = initial_rain_mask(&m0, min_votes);
    let m_e = chroma_edge_map(frame, patch.origin, patch.size(), eps_e);
    RainMask::new(m_hat, m_e)
}
