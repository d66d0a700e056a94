//! Independent brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spac_derain::alignment::Match;
use spac_derain::frame_io::{Frame, Plane};
use spac_derain::superpixel::SpPatch;

/// A random alignment problem: a window of frames and one patch.
pub struct Instance {
    pub frames: Vec<Option<Frame>>,
    pub patch: SpPatch,
    pub template: Array2<bool>,
    pub n_s: usize,
    pub n_st: usize,
    pub exclude_current: bool,
}

impl Instance {
    pub fn window(&self) -> Vec<Option<&Frame>> {
        self.frames.iter().map(|f| f.as_ref()).collect()
    }
}

pub fn random_instance(seed: u64, n_x: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(n_x + 2..n_x + 20);
    let w = rng.random_range(n_x + 2..n_x + 20);
    // coarse levels make equal costs (and so tie-breaking) common
    let levels: f64 = if rng.random_bool(0.5) { 4.0 } else { 1e6 };
    let frames: Vec<Option<Frame>> = (0..5)
        .map(|t| {
            let missing = t != 2 && rng.random_bool(0.15);
            let y = Plane::from_shape_fn((h, w), |_| (rng.random_range(0.0..1.0) * levels).floor() / levels);
            (!missing).then(|| Frame::from_luma(y).unwrap())
        })
        .collect();
    let origin = (rng.random_range(0..=h - n_x), rng.random_range(0..=w - n_x));
    let centre = frames[2].as_ref().unwrap();
    let luma = Plane::from_shape_fn((n_x, n_x), |(i, j)| centre.y[[origin.0 + i, origin.1 + j]]);
    let mut mask = Array2::from_shape_fn((n_x, n_x), |_| rng.random_bool(0.6));
    mask[[n_x / 2, n_x / 2]] = true;
    let mut template = mask.mapv(|m| m && rng.random_bool(0.8));
    template[[n_x / 2, n_x / 2]] = true;
    Instance {
        frames,
        patch: SpPatch {
            index: 0,
            origin,
            luma,
            mask,
            dropped: 0,
        },
        template,
        n_s: if rng.random_bool(0.5) { 4 } else { 6 },
        n_st: rng.random_range(1..=10),
        exclude_current: rng.random_bool(0.3),
    }
}

/// Every candidate of the window with its masked cost, unsorted. Costs use a
/// full triple loop over the box with the mask as a 0/1 weight.
pub fn brute_force_candidates(inst: &Instance, mask: &Array2<bool>, skip: impl Fn(i32, i32, i32) -> bool) -> Vec<Match> {
    let n_x = inst.patch.luma.nrows();
    let hs = (inst.n_s / 2) as i32;
    let mut out = Vec::new();
    for (slot, f) in inst.frames.iter().enumerate() {
        let Some(f) = f else { continue };
        let t = slot as i32 - 2;
        let (fh, fw) = f.y.dim();
        for u in -hs..hs {
            for v in -hs..hs {
                let r0 = inst.patch.origin.0 as i32 + u;
                let c0 = inst.patch.origin.1 as i32 + v;
                if r0 < 0 || c0 < 0 || r0 as usize + n_x > fh || c0 as usize + n_x > fw || skip(t, u, v) {
                    continue;
                }
                let mut cost = 0.0;
                for i in 0..n_x {
                    for j in 0..n_x {
                        let weight = if mask[[i, j]] { 1.0 } else { 0.0 };
                        let d = f.y[[r0 as usize + i, c0 as usize + j]] - inst.patch.luma[[i, j]];
                        cost += weight * (d * d);
                    }
                }
                out.push(Match { t, u, v, cost });
            }
        }
    }
    out
}

/// Cost, then squared offset length, then `u`, `v`, `t`.
pub fn oracle_order(a: &Match, b: &Match) -> Ordering {
    let key = |m: &Match| (m.u * m.u + m.v * m.v, m.u, m.v, m.t);
    match a.cost.partial_cmp(&b.cost).unwrap() {
        Ordering::Equal => key(a).cmp(&key(b)),
        o => o,
    }
}

/// Linear-scan argmin for one time offset.
pub fn brute_force_optimal(inst: &Instance, t: i32) -> Option<Match> {
    let mut best: Option<Match> = None;
    for m in brute_force_candidates(inst, &inst.patch.mask, |tt, _, _| tt != t) {
        if best.map_or(true, |b| oracle_order(&m, &b) == Ordering::Less) {
            best = Some(m);
        }
    }
    best
}

pub fn crop(f: &Frame, r: usize, c: usize, n: usize) -> Plane {
    Plane::from_shape_fn((n, n), |(i, j)| f.y[[r + i, c + j]])
}
