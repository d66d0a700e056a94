//! Detail-compensation network: four same-padded convolutions that map a
//! [`FeatureStack`] to the high-frequency residual `X_detail`.
//!
//! Forward and backward passes are written out by hand on top of
//! `im2col` + GEMM. Activations are stored channel-major as `(C, H * W)`.

mod adam;
mod checkpoint;
mod train;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use train::{train, train_with, TrainConfig, TrainOutcome, TrainingSample};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ChannelLayout, FeatureStack};
use crate::frame_io::Plane;

/// Kernel sizes of the four layers.
pub const KERNELS: [usize; 4] = [11, 5, 3, 1];
/// Default output widths of the four layers.
pub const DEFAULT_WIDTHS: [usize; 4] = [64, 32, 16, 1];

/// Layer geometry of a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub in_channels: usize,
    /// Output channels per layer; the last must be 1.
    pub widths: Vec<usize>,
    /// Odd kernel size per layer.
    pub kernels: Vec<usize>,
}

impl ModelShape {
    pub fn standard(in_channels: usize) -> Self {
        Self::with_widths(in_channels, &DEFAULT_WIDTHS[..3])
    }

    /// Standard kernels with custom hidden widths (the output width is 1).
    pub fn with_widths(in_channels: usize, hidden: &[usize]) -> Self {
        let mut widths = hidden.to_vec();
        widths.push(1);
        Self {
            in_channels,
            widths,
            kernels: KERNELS.to_vec(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.widths.len() != self.kernels.len() || self.widths.is_empty() {
            return Err(Error::InvalidParameter("widths and kernels must have equal, non-zero length".into()));
        }
        if self.widths.last() != Some(&1) {
            return Err(Error::InvalidParameter("last layer must have one output channel".into()));
        }
        if self.kernels.iter().any(|k| k % 2 == 0) || self.widths.contains(&0) || self.in_channels == 0 {
            return Err(Error::InvalidParameter("kernels must be odd and widths non-zero".into()));
        }
        Ok(())
    }
}

/// One same-padded, stride-1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    /// `(out_ch, in_ch * kernel * kernel)`, input-channel-major.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub relu: bool,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize, relu: bool) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            weights: Array2::zeros((out_ch, in_ch * kernel * kernel)),
            bias: Array1::zeros(out_ch),
            relu,
        }
    }

    /// Weight of output `o`, input `i`, kernel tap `(ki, kj)`.
    pub fn weight_mut(&mut self, o: usize, i: usize, ki: usize, kj: usize) -> &mut f64 {
        let k = self.kernel;
        &mut self.weights[[o, i * k * k + ki * k + kj]]
    }
}

/// The network plus the channel layout it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub layers: Vec<ConvLayer>,
    pub layout: ChannelLayout,
}

impl CnnModel {
    /// All-zero parameters; ReLU after every layer except the last.
    pub fn zeros(shape: &ModelShape, layout: ChannelLayout) -> Result<Self> {
        shape.validate()?;
        let mut in_ch = shape.in_channels;
        let n = shape.widths.len();
        let layers = shape
            .widths
            .iter()
            .zip(&shape.kernels)
            .enumerate()
            .map(|(i, (&out, &k))| {
                let l = ConvLayer::zeros(in_ch, out, k, i + 1 < n);
                in_ch = out;
                l
            })
            .collect();
        Ok(Self { layers, layout })
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            in_channels: self.layers[0].in_ch,
            widths: self.layers.iter().map(|l| l.out_ch).collect(),
            kernels: self.layers.iter().map(|l| l.kernel).collect(),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_ch
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

/// Xavier-uniform weights, zero biases, deterministic in `seed`.
pub fn xavier_init(shape: &ModelShape, layout: ChannelLayout, seed: u64) -> Result<CnnModel> {
    let mut model = CnnModel::zeros(shape, layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut model.layers {
        let a = xavier_bound(layer.in_ch, layer.out_ch, layer.kernel);
        layer.weights.mapv_inplace(|_| rng.random_range(-a..a));
    }
    Ok(model)
}

/// `sqrt(6 / (fan_in + fan_out))` with fans counted over the kernel taps.
pub fn xavier_bound(in_ch: usize, out_ch: usize, kernel: usize) -> f64 {
    let taps = (kernel * kernel) as f64;
    (6.0 / (in_ch as f64 * taps + out_ch as f64 * taps)).sqrt()
}

/// Parameter-shaped buffers (gradients, optimizer moments).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &CnnModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            bias: model.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| *w *= s);
        self.bias.iter_mut().for_each(|b| *b *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.bias.iter().flat_map(|b| b.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn im2col(input: ArrayView2<f64>, h: usize, w: usize, k: usize) -> Array2<f64> {
    let c = input.nrows();
    let pad = (k / 2) as isize;
    let mut col = Array2::zeros((c * k * k, h * w));
    for ch in 0..c {
        let src = input.row(ch);
        for ki in 0..k {
            for kj in 0..k {
                let mut dst = col.row_mut(ch * k * k + ki * k + kj);
                let dst = dst.as_slice_mut().expect("standard layout");
                let dr = ki as isize - pad;
                let dc = kj as isize - pad;
                for r in 0..h {
                    let sr = r as isize + dr;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let c0 = (-dc).max(0) as usize;
                    let c1 = (w as isize - dc).min(w as isize).max(0) as usize;
                    let row_base = sr as usize * w;
                    for q in c0..c1 {
                        dst[r * w + q] = src[(row_base as isize + q as isize + dc) as usize];
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &Array2<f64>, c: usize, h: usize, w: usize, k: usize) -> Array2<f64> {
    let pad = (k / 2) as isize;
    let mut out = Array2::zeros((c, h * w));
    for ch in 0..c {
        let mut dst = out.row_mut(ch);
        let dst = dst.as_slice_mut().expect("standard layout");
        for ki in 0..k {
            for kj in 0..k {
                let src = col.row(ch * k * k + ki * k + kj);
                let dr = ki as isize - pad;
                let dc = kj as isize - pad;
                for r in 0..h {
                    let sr = r as isize + dr;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let c0 = (-dc).max(0) as usize;
                    let c1 = (w as isize - dc).min(w as isize).max(0) as usize;
                    let row_base = sr as usize * w;
                    for q in c0..c1 {
                        dst[(row_base as isize + q as isize + dc) as usize] += src[r * w + q];
                    }
                }
            }
        }
    }
    out
}

struct LayerCache {
    /// im2col of the layer input (or the input itself for 1x1 kernels).
    col: Array2<f64>,
    /// Post-activation output.
    out: Array2<f64>,
}

fn layer_forward(layer: &ConvLayer, input: &Array2<f64>, h: usize, w: usize) -> LayerCache {
    let col = if layer.kernel == 1 {
        input.clone()
    } else {
        im2col(input.view(), h, w, layer.kernel)
    };
    let mut out = Array2::zeros((layer.out_ch, h * w));
    general_mat_mul(1.0, &layer.weights, &col, 0.0, &mut out);
    for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(&layer.bias) {
        if layer.relu {
            row.mapv_inplace(|v| (v + b).max(0.0));
        } else {
            row.mapv_inplace(|v| v + b);
        }
    }
    LayerCache { col, out }
}

fn check_input(model: &CnnModel, stack: &FeatureStack) -> Result<(usize, usize)> {
    let (c, h, w) = stack.channels.dim();
    if c != model.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "stack has {c} channels, network expects {}",
            model.in_channels()
        )));
    }
    if stack.m_sp.dim() != (h, w) || stack.x_avg.dim() != (h, w) {
        return Err(Error::ShapeMismatch("mask or average differs from stack size".into()));
    }
    Ok((h, w))
}

fn run_forward(model: &CnnModel, stack: &FeatureStack, h: usize, w: usize) -> Vec<LayerCache> {
    let input = stack
        .channels
        .view()
        .into_shape_with_order((stack.channels.dim().0, h * w))
        .expect("contiguous feature stack")
        .to_owned();
    let mut caches: Vec<LayerCache> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let cache = {
            let x = caches.last().map_or(&input, |c| &c.out);
            layer_forward(layer, x, h, w)
        };
        caches.push(cache);
    }
    caches
}

/// Predicts `X_detail`, zeroed outside the superpixel mask.
pub fn forward(model: &CnnModel, stack: &FeatureStack) -> Result<Plane> {
    let (h, w) = check_input(model, stack)?;
    let caches = run_forward(model, stack, h, w);
    let out = &caches.last().expect("non-empty network").out;
    let mut detail = Plane::from_shape_vec((h, w), out.row(0).to_vec()).expect("output shape");
    detail *= &stack.m_sp;
    Ok(detail)
}

/// Hidden activations of every layer (post-ReLU), for inspection.
pub fn activations(model: &CnnModel, stack: &FeatureStack) -> Result<Vec<Array2<f64>>> {
    let (h, w) = check_input(model, stack)?;
    Ok(run_forward(model, stack, h, w).into_iter().map(|c| c.out).collect())
}

/// Mean squared residual `X_hat - X_avg - X_detail` over the mask pixels, and
/// its gradient with respect to every parameter.
pub fn loss_and_grad(model: &CnnModel, sample: &TrainingSample) -> Result<(f64, Gradients)> {
    let stack = &sample.stack;
    let (h, w) = check_input(model, stack)?;
    if sample.target.dim() != (h, w) {
        return Err(Error::ShapeMismatch("target differs from stack size".into()));
    }
    let caches = run_forward(model, stack, h, w);
    let out = &caches.last().expect("non-empty network").out;

    let n_mask: f64 = stack.m_sp.sum();
    let mut grads = Gradients::zeros_like(model);
    if n_mask == 0.0 {
        return Ok((0.0, grads));
    }

    let mut loss = 0.0;
    let mut d_out = Array2::zeros((1, h * w));
    for (i, ((&m, &target), &avg)) in stack
        .m_sp
        .iter()
        .zip(sample.target.iter())
        .zip(stack.x_avg.iter())
        .enumerate()
    {
        if m != 0.0 {
            let r = target - avg - out[[0, i]];
            loss += r * r;
            d_out[[0, i]] = -2.0 * r / n_mask;
        }
    }
    loss /= n_mask;

    let mut delta = d_out;
    for (li, layer) in model.layers.iter().enumerate().rev() {
        let cache = &caches[li];
        if layer.relu {
            ndarray::Zip::from(&mut delta)
                .and(&cache.out)
                .for_each(|d, &o| {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                });
        }
        general_mat_mul(1.0, &delta, &cache.col.t(), 0.0, &mut grads.weights[li]);
        grads.bias[li] = delta.sum_axis(Axis(1));
        if li == 0 {
            break;
        }
        let mut d_col = Array2::zeros(cache.col.dim());
        general_mat_mul(1.0, &layer.weights.t(), &delta, 0.0, &mut d_col);
        delta = if layer.kernel == 1 {
            d_col
        } else {
            col2im(&d_col, layer.in_ch, h, w, layer.kernel)
        };
    }
    Ok((loss, grads))
}
