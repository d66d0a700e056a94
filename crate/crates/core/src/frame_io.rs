//! Frame and sequence types, PNG sequence I/O and the RGB <-> YCbCr transform.
//!
//! Samples are `f64` in `[0, 1]` everywhere; quantization to 8 bits only
//! happens when a frame is written back to disk.

use std::ops::{Bound, RangeBounds};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};

/// A single image plane, indexed `[row, col]`.
pub type Plane = Array2<f64>;

// BT.601 full-range chroma scale factors.
const CB_SCALE: f64 = 0.564;
const CR_SCALE: f64 = 0.713;

/// Converts one RGB sample to full-range BT.601 YCbCr.
pub fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 0.5 + (b - y) * CB_SCALE;
    let cr = 0.5 + (r - y) * CR_SCALE;
    (y.clamp(0.0, 1.0), cb.clamp(0.0, 1.0), cr.clamp(0.0, 1.0))
}

/// Algebraic inverse of [`rgb_to_ycbcr`], clamped to `[0, 1]`.
pub fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> (f64, f64, f64) {
    let r = y + (cr - 0.5) / CR_SCALE;
    let b = y + (cb - 0.5) / CB_SCALE;
    let g = (y - 0.299 * r - 0.114 * b) / 0.587;
    (r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0))
}

/// A YCbCr frame. All three planes share the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub y: Plane,
    pub cb: Plane,
    pub cr: Plane,
}

impl Frame {
    /// Builds a frame, checking that the planes agree in shape and hold
    /// finite samples in `[0, 1]`.
    pub fn new(y: Plane, cb: Plane, cr: Plane) -> Result<Self> {
        if y.dim() != cb.dim() || y.dim() != cr.dim() {
            return Err(Error::InvalidFrame(format!(
                "plane shapes differ: y {:?}, cb {:?}, cr {:?}",
                y.dim(),
                cb.dim(),
                cr.dim()
            )));
        }
        if y.is_empty() {
            return Err(Error::InvalidFrame("frame has no pixels".into()));
        }
        for plane in [&y, &cb, &cr] {
            if let Some(v) = plane.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
                return Err(Error::InvalidFrame(format!("sample {v} outside [0, 1]")));
            }
        }
        Ok(Self { y, cb, cr })
    }

    /// A frame with neutral chroma.
    pub fn from_luma(y: Plane) -> Result<Self> {
        let cb = Plane::from_elem(y.dim(), 0.5);
        let cr = cb.clone();
        Self::new(y, cb, cr)
    }

    pub fn from_rgb_planes(r: &Plane, g: &Plane, b: &Plane) -> Result<Self> {
        let dim = r.dim();
        if g.dim() != dim || b.dim() != dim {
            return Err(Error::InvalidFrame("RGB plane shapes differ".into()));
        }
        let mut y = Plane::zeros(dim);
        let mut cb = Plane::zeros(dim);
        let mut cr = Plane::zeros(dim);
        for ((row, col), &rv) in r.indexed_iter() {
            let (yv, cbv, crv) = rgb_to_ycbcr(rv, g[[row, col]], b[[row, col]]);
            y[[row, col]] = yv;
            cb[[row, col]] = cbv;
            cr[[row, col]] = crv;
        }
        Self::new(y, cb, cr)
    }

    pub fn width(&self) -> usize {
        self.y.ncols()
    }

    pub fn height(&self) -> usize {
        self.y.nrows()
    }

    /// Returns a copy with the luma plane replaced.
    pub fn with_luma(&self, y: Plane) -> Result<Self> {
        Self::new(y, self.cb.clone(), self.cr.clone())
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = self.y.dim();
        ImageBuffer::from_fn(w as u32, h as u32, |col, row| {
            let idx = [row as usize, col as usize];
            let (r, g, b) = ycbcr_to_rgb(self.y[idx], self.cb[idx], self.cr[idx]);
            Rgb([quantize8(r), quantize8(g), quantize8(b)])
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut r = Plane::zeros((h, w));
        let mut g = Plane::zeros((h, w));
        let mut b = Plane::zeros((h, w));
        for (col, row, px) in img.enumerate_pixels() {
            let idx = [row as usize, col as usize];
            r[idx] = f64::from(px[0]) / 255.0;
            g[idx] = f64::from(px[1]) / 255.0;
            b[idx] = f64::from(px[2]) / 255.0;
        }
        Self::from_rgb_planes(&r, &g, &b)
    }
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// An ordered run of frames with one designated target frame.
///
/// `derained` records which frames have already been replaced by derained
/// output (the history part of the sliding window).
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    pub current: usize,
    pub derained: Vec<bool>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptySequence)?;
        let (h, w) = first.y.dim();
        for f in &frames[1..] {
            check_dims(w, h, f.width(), f.height())?;
        }
        let derained = vec![false; frames.len()];
        Ok(Self {
            frames,
            current: 0,
            derained,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    /// The sliding window of length `n_t` centred on the current frame.
    ///
    /// Slot `i` holds time offset `i - (n_t - 1) / 2`; slots that fall outside
    /// the sequence are `None`.
    pub fn window(&self, n_t: usize) -> Vec<Option<&Frame>> {
        let half = (n_t / 2) as isize;
        (-half..=half)
            .map(|dt| {
                let idx = self.current as isize + dt;
                (0..self.frames.len() as isize)
                    .contains(&idx)
                    .then(|| &self.frames[idx as usize])
            })
            .collect()
    }

    /// Replaces frame `index` with its derained version.
    pub fn commit_derained(&mut self, index: usize, frame: Frame) -> Result<()> {
        check_dims(self.width(), self.height(), frame.width(), frame.height())?;
        self.frames[index] = frame;
        self.derained[index] = true;
        Ok(())
    }
}

fn check_dims(w: usize, h: usize, fw: usize, fh: usize) -> Result<()> {
    if (w, h) != (fw, fh) {
        return Err(Error::DimensionMismatch {
            expected_w: w,
            expected_h: h,
            found_w: fw,
            found_h: fh,
        });
    }
    Ok(())
}

/// Expands a printf-style pattern such as `frame_%04d.png` for one index.
///
/// Only a single `%d` / `%0Nd` conversion is recognised; `%%` is a literal
/// percent sign.
pub fn expand_pattern(pattern: &str, index: usize) -> String {
    let mut out = String::with_capacity(pattern.len() + 8);
    let mut chars = pattern.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '%' {
            out.push(c);
            continue;
        }
        let mut spec = String::new();
        while let Some(&d) = chars.peek() {
            if d.is_ascii_digit() {
                spec.push(d);
                chars.next();
            } else {
                break;
            }
        }
        match chars.next() {
            Some('d') => {
                let width: usize = spec.parse().unwrap_or(0);
                if spec.starts_with('0') {
                    out.push_str(&format!("{index:0width$}"));
                } else {
                    out.push_str(&format!("{index:width$}"));
                }
            }
            Some('%') if spec.is_empty() => out.push('%'),
            Some(other) => {
                out.push('%');
                out.push_str(&spec);
                out.push(other);
            }
            None => {
                out.push('%');
                out.push_str(&spec);
            }
        }
    }
    out
}

/// Loads a numbered PNG sequence.
///
/// With a bounded range every index must exist. With an open-ended range
/// (`start..`) frames are read until the first missing index.
pub fn load_sequence(pattern: &str, range: impl RangeBounds<usize>) -> Result<FrameSequence> {
    let start = match range.start_bound() {
        Bound::Included(&s) => s,
        Bound::Excluded(&s) => s + 1,
        Bound::Unbounded => 0,
    };
    let end = match range.end_bound() {
        Bound::Included(&e) => Some(e + 1),
        Bound::Excluded(&e) => Some(e),
        Bound::Unbounded => None,
    };

    let mut frames: Vec<Frame> = Vec::new();
    let mut index = start;
    loop {
        if end.is_some_and(|e| index >= e) {
            break;
        }
        let path = PathBuf::from(expand_pattern(pattern, index));
        if !path.is_file() {
            if end.is_some() {
                return Err(Error::MissingFile(path));
            }
            break;
        }
        let frame = load_frame(&path)?;
        if let Some(first) = frames.first() {
            check_dims(first.width(), first.height(), frame.width(), frame.height())?;
        }
        frames.push(frame);
        index += 1;
    }
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    log::debug!("loaded {} frames from {pattern}", frames.len());
    FrameSequence::new(frames)
}

/// Loads one PNG (8- or 16-bit) into YCbCr.
pub fn load_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    match img {
        image::DynamicImage::ImageRgb16(_)
        | image::DynamicImage::ImageRgba16(_)
        | image::DynamicImage::ImageLuma16(_)
        | image::DynamicImage::ImageLumaA16(_) => {
            let img = img.to_rgb16();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut r = Plane::zeros((h, w));
            let mut g = Plane::zeros((h, w));
            let mut b = Plane::zeros((h, w));
            for (col, row, px) in img.enumerate_pixels() {
                let idx = [row as usize, col as usize];
                r[idx] = f64::from(px[0]) / 65535.0;
                g[idx] = f64::from(px[1]) / 65535.0;
                b[idx] = f64::from(px[2]) / 65535.0;
            }
            Frame::from_rgb_planes(&r, &g, &b)
        }
        other => Frame::from_rgb8(&other.to_rgb8()),
    }
}

/// Writes a frame as an 8-bit RGB PNG.
pub fn save_frame(path: &Path, frame: &Frame) -> Result<()> {
    frame.to_rgb8().save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a single plane as an 8-bit grayscale PNG.
pub fn save_plane(path: &Path, plane: &Plane) -> Result<()> {
    let (h, w) = plane.dim();
    let img: image::GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |col, row| {
        image::Luma([quantize8(plane[[row as usize, col as usize]])])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a binary map as a black/white PNG.
pub fn save_mask(path: &Path, mask: &Array2<bool>) -> Result<()> {
    save_plane(path, &mask.mapv(|m| if m { 1.0 } else { 0.0 }))
}

/// Reads a binary map written by [`save_mask`]; pixels of luma >= 0.5 are set.
pub fn load_mask(path: &Path) -> Result<Array2<bool>> {
    Ok(load_frame(path)?.y.mapv(|v| v >= 0.5))
}

/// Writes every frame of `frames` using `pattern`, starting at index 0.
pub fn save_sequence(pattern: &str, frames: &[Frame]) -> Result<()> {
    for (i, f) in frames.iter().enumerate() {
        save_frame(Path::new(&expand_pattern(pattern, i)), f)?;
    }
    Ok(())
}
