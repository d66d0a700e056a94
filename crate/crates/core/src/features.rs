//! CNN input features for one superpixel.
//!
//! Channel order is fixed: the occluded-background residual, then the
//! temporal residuals (time-ascending, centre frame skipped), then the
//! sorted-match residuals (cost-ascending). Every channel has `X_avg`
//! subtracted and is zero outside the superpixel mask.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::alignment::MatchTensor;
use crate::error::{Error, Result};
use crate::frame_io::Plane;

/// `F1 = X_k * (1 - M_rain) + X_avg * M_rain`.
pub fn occluded_background(x_k: &Plane, x_avg: &Plane, m_rain: &Array2<bool>) -> Plane {
    let mut out = x_k.clone();
    ndarray::Zip::from(&mut out)
        .and(x_avg)
        .and(m_rain)
        .for_each(|o, &a, &m| {
            if m {
                *o = a;
            }
        });
    out
}

/// `T0` slices for every non-zero time offset of an `n_t` window,
/// time-ascending. Offsets missing from `t0` (a shortened window at the
/// sequence ends) are filled with `fill`.
pub fn temporal_feature(t0: &MatchTensor, n_t: usize, fill: &Plane) -> Vec<Plane> {
    let half = (n_t / 2) as i32;
    (-half..=half)
        .filter(|&t| t != 0)
        .map(|t| {
            t0.provenance
                .iter()
                .position(|m| m.t == t)
                .map_or_else(|| fill.clone(), |i| t0.slices[i].clone())
        })
        .collect()
}

/// `T1` slices in their sorted order.
pub fn detail_feature(t1: &MatchTensor) -> Vec<Plane> {
    t1.slices.clone()
}

/// Which feature groups feed the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub f1: bool,
    pub f2: bool,
    pub f3: bool,
}

impl Default for FeatureSet {
    fn default() -> Self {
        Self::ALL
    }
}

impl FeatureSet {
    pub const ALL: Self = Self {
        f1: true,
        f2: true,
        f3: true,
    };

    pub fn without(group: usize) -> Self {
        Self {
            f1: group != 1,
            f2: group != 2,
            f3: group != 3,
        }
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.f1 {
            parts.push("F1");
        }
        if self.f2 {
            parts.push("F2");
        }
        if self.f3 {
            parts.push("F3");
        }
        parts.join("+")
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    /// Parses labels such as `F1+F3` (case-insensitive, `all` accepted).
    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Self::ALL);
        }
        let mut set = Self {
            f1: false,
            f2: false,
            f3: false,
        };
        for part in s.split(['+', ',']) {
            match part.trim().to_ascii_uppercase().as_str() {
                "F1" => set.f1 = true,
                "F2" => set.f2 = true,
                "F3" => set.f3 = true,
                other => return Err(Error::InvalidParameter(format!("unknown feature group {other:?}"))),
            }
        }
        Ok(set)
    }
}

/// Channel arrangement of a [`FeatureStack`]; training and inference must
/// agree on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    /// Temporal channels, `n_t - 1`.
    pub temporal: usize,
    /// Sorted-match channels, `n_st`.
    pub sorted: usize,
    pub groups: FeatureSet,
}

impl ChannelLayout {
    pub fn new(n_t: usize, n_st: usize) -> Self {
        Self {
            temporal: n_t.saturating_sub(1),
            sorted: n_st,
            groups: FeatureSet::ALL,
        }
    }

    pub fn with_groups(mut self, groups: FeatureSet) -> Self {
        self.groups = groups;
        self
    }

    pub fn channels(&self) -> usize {
        usize::from(self.groups.f1)
            + if self.groups.f2 { self.temporal } else { 0 }
            + if self.groups.f3 { self.sorted } else { 0 }
    }

    /// Channel names in stack order, e.g. `F1, F2[t=-2], ..., F3[0], ...`.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.channels());
        if self.groups.f1 {
            out.push("F1".to_string());
        }
        if self.groups.f2 {
            let half = (self.temporal / 2) as i32;
            out.extend((-half..=half).filter(|&t| t != 0).map(|t| format!("F2[t={t}]")));
        }
        if self.groups.f3 {
            out.extend((0..self.sorted).map(|i| format!("F3[{i}]")));
        }
        out
    }

    /// Compact tag stored with checkpoints and dataset archives.
    pub fn tag(&self) -> String {
        format!(
            "{}|F2x{}|F3x{}",
            self.groups.label(),
            self.temporal,
            self.sorted
        )
    }
}

/// Normalised CNN input for one superpixel box.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    /// `(channels, n_x, n_x)`.
    pub channels: Array3<f64>,
    pub x_avg: Plane,
    pub m_sp: Plane,
    pub layout: ChannelLayout,
}

impl FeatureStack {
    pub fn size(&self) -> usize {
        self.x_avg.nrows()
    }

    /// Keeps only the channel groups in `groups`. Groups absent from this
    /// stack cannot be requested.
    pub fn select(&self, groups: FeatureSet) -> Result<Self> {
        let have = self.layout.groups;
        if (groups.f1 && !have.f1) || (groups.f2 && !have.f2) || (groups.f3 && !have.f3) {
            return Err(Error::ChannelMismatch {
                expected: ChannelLayout { groups, ..self.layout }.tag(),
                found: self.layout.tag(),
            });
        }
        let mut keep = Vec::new();
        let mut idx = 0;
        for (present, wanted, n) in [
            (have.f1, groups.f1, 1),
            (have.f2, groups.f2, self.layout.temporal),
            (have.f3, groups.f3, self.layout.sorted),
        ] {
            if present {
                if wanted {
                    keep.extend(idx..idx + n);
                }
                idx += n;
            }
        }
        let n = self.size();
        let mut channels = Array3::zeros((keep.len(), n, n));
        for (dst, &src) in keep.iter().enumerate() {
            channels
                .slice_mut(s![dst, .., ..])
                .assign(&self.channels.slice(s![src, .., ..]));
        }
        Ok(Self {
            channels,
            x_avg: self.x_avg.clone(),
            m_sp: self.m_sp.clone(),
            layout: self.layout.with_groups(groups),
        })
    }
}

/// Subtracts `X_avg` from every feature and masks with `M_SP`.
pub fn normalize_stack(f1: &Plane, f2: &[Plane], f3: &[Plane], x_avg: &Plane, m_sp: &Array2<bool>) -> Result<FeatureStack> {
    let dim = x_avg.dim();
    if f1.dim() != dim || m_sp.dim() != dim || f2.iter().chain(f3).any(|p| p.dim() != dim) {
        return Err(Error::ShapeMismatch("feature planes differ in shape".into()));
    }
    let n_ch = 1 + f2.len() + f3.len();
    let mut channels = Array3::zeros((n_ch, dim.0, dim.1));
    for (i, plane) in std::iter::once(f1).chain(f2).chain(f3).enumerate() {
        ndarray::Zip::from(channels.slice_mut(s![i, .., ..]))
            .and(plane)
            .and(x_avg)
            .and(m_sp)
            .for_each(|o, &f, &a, &m| *o = if m { f - a } else { 0.0 });
    }
    Ok(FeatureStack {
        channels,
        x_avg: x_avg.clone(),
        m_sp: m_sp.mapv(|m| if m { 1.0 } else { 0.0 }),
        layout: ChannelLayout {
            temporal: f2.len(),
            sorted: f3.len(),
            groups: FeatureSet::ALL,
        },
    })
}
