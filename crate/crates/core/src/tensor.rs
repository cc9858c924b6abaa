//! Dense row-major `f32` arrays and the layer kernels the classifier needs:
//! 2-D convolution, fully connected, ReLU and softmax cross-entropy, each
//! with a backward pass.
//!
//! The `*_into` kernels work on raw slices and are what the model uses on its
//! hot path. The `Tensor`-level functions validate shapes and allocate.
//!
//! Convolution accumulates every output in a fixed order (input channel, then
//! kernel row, then kernel column, starting from zero) and adds the bias last,
//! so results are bit-reproducible against a naive nested loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "Tensor::new",
                format!("shape {:?} holds {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// A rank-1 tensor over `data`.
    pub fn from_vec(data: Vec<f32>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Output extent of a convolution along one axis.
///
/// Returns `None` when the padded input is smaller than the kernel or the
/// stride is zero.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// Static description of one square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::arg("convolution stride must be at least 1"));
        }
        if self.kernel == 0 || self.c_in == 0 || self.c_out == 0 {
            return Err(Error::arg("convolution extents must be nonzero"));
        }
        if self.height + 2 * self.pad < self.kernel || self.width + 2 * self.pad < self.kernel {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "padded input {}x{} smaller than kernel {}",
                    self.height + 2 * self.pad,
                    self.width + 2 * self.pad,
                    self.kernel
                ),
            ));
        }
        Ok(())
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn input_len(&self) -> usize {
        self.c_in * self.height * self.width
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel * self.kernel
    }

    pub fn output_len(&self) -> usize {
        self.c_out * self.out_height() * self.out_width()
    }

    /// Output indices `lo..hi` whose input coordinate `o*stride + tap - pad`
    /// falls inside `0..extent`.
    #[inline]
    fn valid_range(&self, tap: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let shift = tap as isize - self.pad as isize;
        // o*s + shift >= 0
        let lo = if shift >= 0 {
            0
        } else {
            ((-shift) + s - 1) / s
        };
        // o*s + shift <= extent - 1
        let top = extent as isize - 1 - shift;
        let hi = if top < 0 { 0 } else { top / s + 1 };
        let lo = lo.max(0) as usize;
        let hi = (hi as usize).min(out_extent);
        (lo, hi.max(lo))
    }
}

/// Output columns accumulated together in registers.
const LANES: usize = 8;

/// Zero-padded input split into `stride × stride` phase planes so that every
/// kernel tap reads a contiguous run of the input for consecutive outputs.
///
/// Phase `(a, b)` of channel `ci` holds `padded[r*stride + a][c*stride + b]`.
struct Phases {
    data: Vec<f32>,
    rows: usize,
    cols: usize,
    stride: usize,
}

impl Phases {
    fn new(g: &ConvGeometry, input: &[f32]) -> Self {
        let (h, w, s, p) = (g.height, g.width, g.stride, g.pad);
        let extra = (g.kernel - 1) / s;
        let rows = g.out_height() + extra;
        let cols = g.out_width() + extra;
        let mut data = vec![0.0f32; g.c_in * s * s * rows * cols];
        for ci in 0..g.c_in {
            let plane = &input[ci * h * w..(ci + 1) * h * w];
            for a in 0..s {
                for b in 0..s {
                    let base = ((ci * s + a) * s + b) * rows * cols;
                    for r in 0..rows {
                        let py = r * s + a;
                        if py < p || py - p >= h {
                            continue;
                        }
                        let src = &plane[(py - p) * w..(py - p + 1) * w];
                        let dst = &mut data[base + r * cols..base + (r + 1) * cols];
                        for (c, d) in dst.iter_mut().enumerate() {
                            let px = c * s + b;
                            if px >= p && px - p < w {
                                *d = src[px - p];
                            }
                        }
                    }
                }
            }
        }
        Phases {
            data,
            rows,
            cols,
            stride: s,
        }
    }

    /// Offset of tap `(ci, kh, kw)` at output `(0, 0)`, in weight order.
    fn tap_offsets(&self, c_in: usize, k: usize) -> Vec<usize> {
        let s = self.stride;
        let mut offs = Vec::with_capacity(c_in * k * k);
        for ci in 0..c_in {
            for kh in 0..k {
                for kw in 0..k {
                    let base = ((ci * s + kh % s) * s + kw % s) * self.rows * self.cols;
                    offs.push(base + (kh / s) * self.cols + kw / s);
                }
            }
        }
        offs
    }
}

/// Output channels computed together so each input load is reused.
const CO_BLOCK: usize = 4;

/// Convolution forward pass on raw slices. `out` is overwritten.
///
/// Padding taps contribute an exact zero, which leaves every partial sum
/// unchanged, so the result equals a loop that skips them.
pub fn conv2d_forward_into(
    g: &ConvGeometry,
    input: &[f32],
    weights: &[f32],
    bias: &[f32],
    out: &mut [f32],
) {
    let k = g.kernel;
    let (oh, ow) = (g.out_height(), g.out_width());
    debug_assert_eq!(input.len(), g.input_len());
    debug_assert_eq!(weights.len(), g.weight_len());
    debug_assert_eq!(bias.len(), g.c_out);
    debug_assert_eq!(out.len(), g.output_len());

    let phases = Phases::new(g, input);
    let taps = phases.tap_offsets(g.c_in, k);
    let n_taps = taps.len();
    let data = &phases.data[..];
    let cols = phases.cols;

    if ow < LANES || n_taps >= 64 {
        conv_narrow(g, &taps, data, cols, weights, bias, out);
        return;
    }

    let mut co = 0;
    while co < g.c_out {
        let block = CO_BLOCK.min(g.c_out - co);
        let wblk = &weights[co * n_taps..(co + block) * n_taps];
        for oy in 0..oh {
            let mut ox = 0;
            while ox + LANES <= ow {
                let at = oy * cols + ox;
                if block == CO_BLOCK {
                    let mut acc = [[0.0f32; LANES]; CO_BLOCK];
                    for (t, &off) in taps.iter().enumerate() {
                        let row: &[f32; LANES] =
                            data[off + at..off + at + LANES].try_into().unwrap();
                        for (j, a) in acc.iter_mut().enumerate() {
                            let wv = wblk[j * n_taps + t];
                            for l in 0..LANES {
                                a[l] += wv * row[l];
                            }
                        }
                    }
                    for (j, a) in acc.iter().enumerate() {
                        let c = co + j;
                        let orow =
                            &mut out[(c * oh + oy) * ow + ox..(c * oh + oy) * ow + ox + LANES];
                        for l in 0..LANES {
                            orow[l] = a[l] + bias[c];
                        }
                    }
                } else {
                    for j in 0..block {
                        let mut a = [0.0f32; LANES];
                        for (t, &off) in taps.iter().enumerate() {
                            let wv = wblk[j * n_taps + t];
                            let row = &data[off + at..off + at + LANES];
                            for l in 0..LANES {
                                a[l] += wv * row[l];
                            }
                        }
                        let c = co + j;
                        let orow =
                            &mut out[(c * oh + oy) * ow + ox..(c * oh + oy) * ow + ox + LANES];
                        for l in 0..LANES {
                            orow[l] = a[l] + bias[c];
                        }
                    }
                }
                ox += LANES;
            }
            for x in ox..ow {
                let at = oy * cols + x;
                for j in 0..block {
                    let mut a = 0.0f32;
                    for (t, &off) in taps.iter().enumerate() {
                        a += wblk[j * n_taps + t] * data[off + at];
                    }
                    let c = co + j;
                    out[(c * oh + oy) * ow + x] = a + bias[c];
                }
            }
        }
        co += block;
    }
}

/// Output channels per register block in the narrow-output kernel.
const CH_BLOCK: usize = 16;
/// Output pixels per register block in the narrow-output kernel.
const PX_BLOCK: usize = 4;

/// Forward pass for feature maps narrower than [`LANES`]: vectorizes over
/// output channels instead of output columns. Each output still sums its
/// taps in weight order from zero and adds the bias last.
fn conv_narrow(
    g: &ConvGeometry,
    taps: &[usize],
    data: &[f32],
    cols: usize,
    weights: &[f32],
    bias: &[f32],
    out: &mut [f32],
) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let n_taps = taps.len();
    let plane = oh * ow;
    let pixels: Vec<usize> = (0..plane).map(|p| (p / ow) * cols + p % ow).collect();
    let mut wt = vec![0.0f32; n_taps * CH_BLOCK];
    let mut co = 0;
    while co < g.c_out {
        let block = CH_BLOCK.min(g.c_out - co);
        // taps-major copy of this channel block, zero-padded to CH_BLOCK
        wt.fill(0.0);
        for j in 0..block {
            for t in 0..n_taps {
                wt[t * CH_BLOCK + j] = weights[(co + j) * n_taps + t];
            }
        }
        let mut p = 0;
        while p < plane {
            let np = PX_BLOCK.min(plane - p);
            let mut at = [0usize; PX_BLOCK];
            at[..np].copy_from_slice(&pixels[p..p + np]);
            let mut acc = [[0.0f32; CH_BLOCK]; PX_BLOCK];
            for (t, &off) in taps.iter().enumerate() {
                let w: &[f32; CH_BLOCK] = wt[t * CH_BLOCK..(t + 1) * CH_BLOCK].try_into().unwrap();
                for (a, &pos) in acc.iter_mut().zip(&at) {
                    let x = data[off + pos];
                    for l in 0..CH_BLOCK {
                        a[l] += w[l] * x;
                    }
                }
            }
            for (i, a) in acc.iter().take(np).enumerate() {
                for j in 0..block {
                    out[(co + j) * plane + p + i] = a[j] + bias[co + j];
                }
            }
            p += np;
        }
        co += block;
    }
}

/// Convolution backward pass on raw slices.
///
/// Gradients are *accumulated* into `grad_weights`, `grad_bias` and, when
/// given, `grad_input`.
pub fn conv2d_backward_into(
    g: &ConvGeometry,
    grad_out: &[f32],
    input: &[f32],
    weights: &[f32],
    mut grad_input: Option<&mut [f32]>,
    grad_weights: &mut [f32],
    grad_bias: &mut [f32],
) {
    let (h, w, k, s) = (g.height, g.width, g.kernel, g.stride);
    let (oh, ow) = (g.out_height(), g.out_width());
    for co in 0..g.c_out {
        let gplane = &grad_out[co * oh * ow..(co + 1) * oh * ow];
        let mut bsum = 0.0f32;
        for &v in gplane {
            bsum += v;
        }
        grad_bias[co] += bsum;
        for ci in 0..g.c_in {
            let inp = &input[ci * h * w..(ci + 1) * h * w];
            let wbase = (co * g.c_in + ci) * k * k;
            for kh in 0..k {
                let (oy_lo, oy_hi) = g.valid_range(kh, h, oh);
                for kw in 0..k {
                    let (ox_lo, ox_hi) = g.valid_range(kw, w, ow);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let wv = weights[wbase + kh * k + kw];
                    let mut acc = 0.0f32;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + kh - g.pad;
                        let grow = &gplane[oy * ow + ox_lo..oy * ow + ox_hi];
                        let ix0 = ox_lo * s + kw - g.pad;
                        let row = &inp[iy * w..(iy + 1) * w];
                        for (j, &gv) in grow.iter().enumerate() {
                            acc += gv * row[ix0 + j * s];
                        }
                        if let Some(gi) = grad_input.as_deref_mut() {
                            let girow = &mut gi[ci * h * w + iy * w..ci * h * w + (iy + 1) * w];
                            for (j, &gv) in grow.iter().enumerate() {
                                girow[ix0 + j * s] += wv * gv;
                            }
                        }
                    }
                    grad_weights[wbase + kh * k + kw] += acc;
                }
            }
        }
    }
}

/// Dot product with eight interleaved accumulators, reduced pairwise.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y = W·x + b` with `W` stored `[out, in]` row-major.
pub fn dense_forward_into(x: &[f32], weights: &[f32], bias: &[f32], y: &mut [f32]) {
    let n_in = x.len();
    debug_assert_eq!(weights.len(), y.len() * n_in);
    for (o, yo) in y.iter_mut().enumerate() {
        *yo = dot(&weights[o * n_in..(o + 1) * n_in], x) + bias[o];
    }
}

/// Four dot products against one shared row; each result is bit-identical
/// to [`dot`] of the row with that input.
#[inline]
fn dot4(w: &[f32], x: [&[f32]; 4]) -> [f32; 4] {
    let n = w.len();
    let body = n - n % 8;
    let mut acc = [[0.0f32; 8]; 4];
    let mut i = 0;
    while i < body {
        let wv: &[f32; 8] = w[i..i + 8].try_into().unwrap();
        for (a, xs) in acc.iter_mut().zip(&x) {
            let xv: &[f32; 8] = xs[i..i + 8].try_into().unwrap();
            for l in 0..8 {
                a[l] += wv[l] * xv[l];
            }
        }
        i += 8;
    }
    let mut out = [0.0f32; 4];
    for ((o, a), xs) in out.iter_mut().zip(&acc).zip(&x) {
        let mut tail = 0.0f32;
        for j in body..n {
            tail += w[j] * xs[j];
        }
        *o = ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7])) + tail;
    }
    out
}

/// [`dense_forward_into`] applied to each row of `xs` (`rows × n_in`),
/// writing `ys` (`rows × n_out`). Results match the single-row version
/// exactly; rows are processed four at a time so weight rows are reused.
pub fn dense_forward_rows(xs: &[f32], n_in: usize, weights: &[f32], bias: &[f32], ys: &mut [f32]) {
    let n_out = bias.len();
    let rows = xs.len() / n_in;
    debug_assert_eq!(weights.len(), n_out * n_in);
    debug_assert_eq!(ys.len(), rows * n_out);
    let mut r = 0;
    while r + 4 <= rows {
        let x = [
            &xs[r * n_in..(r + 1) * n_in],
            &xs[(r + 1) * n_in..(r + 2) * n_in],
            &xs[(r + 2) * n_in..(r + 3) * n_in],
            &xs[(r + 3) * n_in..(r + 4) * n_in],
        ];
        for o in 0..n_out {
            let d = dot4(&weights[o * n_in..(o + 1) * n_in], x);
            for (j, v) in d.iter().enumerate() {
                ys[(r + j) * n_out + o] = v + bias[o];
            }
        }
        r += 4;
    }
    for r in r..rows {
        dense_forward_into(
            &xs[r * n_in..(r + 1) * n_in],
            weights,
            bias,
            &mut ys[r * n_out..(r + 1) * n_out],
        );
    }
}

/// Dense backward pass; accumulates into every gradient buffer given.
pub fn dense_backward_into(
    grad_out: &[f32],
    x: &[f32],
    weights: &[f32],
    grad_x: Option<&mut [f32]>,
    grad_weights: &mut [f32],
    grad_bias: &mut [f32],
) {
    let n_in = x.len();
    for (o, &g) in grad_out.iter().enumerate() {
        grad_bias[o] += g;
        if g == 0.0 {
            continue;
        }
        for (gw, &xi) in grad_weights[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
            *gw += g * xi;
        }
    }
    if let Some(gx) = grad_x {
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (gi, &wv) in gx.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                *gi += g * wv;
            }
        }
    }
}

pub fn relu_in_place(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the forward input (or output) was not positive.
pub fn relu_backward_in_place(grad: &mut [f32], x: &[f32]) {
    for (g, &v) in grad.iter_mut().zip(x) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out: Vec<f32> = logits.iter().map(|&l| libm::expf(l - m)).collect();
    let sum: f32 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Cross-entropy of `softmax(logits)` against `label` and its logit gradient.
pub fn softmax_cross_entropy_slice(logits: &[f32], label: usize) -> Result<(f32, Vec<f32>)> {
    if logits.len() < 2 {
        return Err(Error::arg(
            "softmax cross-entropy needs at least two classes",
        ));
    }
    if label >= logits.len() {
        return Err(Error::arg(format!(
            "label {} out of range for {} classes",
            label,
            logits.len()
        )));
    }
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let sum: f32 = logits.iter().map(|&l| libm::expf(l - m)).sum();
    let log_z = libm::logf(sum);
    let loss = log_z - (logits[label] - m);
    let mut grad: Vec<f32> = logits.iter().map(|&l| libm::expf(l - m) / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// Tensor-level API
// ---------------------------------------------------------------------------

fn conv_geometry(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGeometry> {
    let [c_in, h, w] = match input.shape() {
        &[c, h, w] => [c, h, w],
        s => {
            return Err(Error::dim(
                "conv2d",
                format!("input must be [C,H,W], got {:?}", s),
            ))
        }
    };
    let [c_out, wc_in, kh, kw] = match weights.shape() {
        &[a, b, c, d] => [a, b, c, d],
        s => {
            return Err(Error::dim(
                "conv2d",
                format!("weights must be [C_out,C_in,K,K], got {:?}", s),
            ))
        }
    };
    if wc_in != c_in {
        return Err(Error::dim(
            "conv2d",
            format!("input has {} channels, weights expect {}", c_in, wc_in),
        ));
    }
    if kh != kw {
        return Err(Error::dim(
            "conv2d",
            format!("non-square kernel {}x{}", kh, kw),
        ));
    }
    let g = ConvGeometry {
        c_in,
        height: h,
        width: w,
        c_out,
        kernel: kh,
        stride,
        pad,
    };
    g.validate()?;
    Ok(g)
}

pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = conv_geometry(input, weights, stride, pad)?;
    if bias.len() != g.c_out {
        return Err(Error::dim(
            "conv2d",
            format!("bias has {} elements, expected {}", bias.len(), g.c_out),
        ));
    }
    let mut out = vec![0.0; g.output_len()];
    conv2d_forward_into(&g, input.data(), weights.data(), bias.data(), &mut out);
    Tensor::new(vec![g.c_out, g.out_height(), g.out_width()], out)
}

/// Gradients of a convolution with respect to its input, weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    let g = conv_geometry(input, weights, stride, pad)?;
    if grad_out.shape() != [g.c_out, g.out_height(), g.out_width()] {
        return Err(Error::dim(
            "conv2d_backward",
            format!(
                "grad_out {:?} does not match forward output {:?}",
                grad_out.shape(),
                [g.c_out, g.out_height(), g.out_width()]
            ),
        ));
    }
    let mut gi = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[g.c_out]);
    conv2d_backward_into(
        &g,
        grad_out.data(),
        input.data(),
        weights.data(),
        Some(gi.data_mut()),
        gw.data_mut(),
        gb.data_mut(),
    );
    Ok(ConvGrads {
        input: gi,
        weights: gw,
        bias: gb,
    })
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    relu_in_place(y.data_mut());
    y
}

pub fn relu_backward(grad_out: &Tensor, x: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != x.shape() {
        return Err(Error::dim(
            "relu_backward",
            format!("grad {:?} vs input {:?}", grad_out.shape(), x.shape()),
        ));
    }
    let mut g = grad_out.clone();
    relu_backward_in_place(g.data_mut(), x.data());
    Ok(g)
}

fn dense_dims(x: &Tensor, weights: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    let (n_out, n_in) = match weights.shape() {
        &[o, i] => (o, i),
        s => {
            return Err(Error::dim(
                op,
                format!("weights must be [out,in], got {:?}", s),
            ))
        }
    };
    if x.len() != n_in {
        return Err(Error::dim(
            op,
            format!(
                "input length {} does not match weight columns {}",
                x.len(),
                n_in
            ),
        ));
    }
    Ok((n_out, n_in))
}

pub fn dense_forward(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n_out, _) = dense_dims(x, weights, "dense")?;
    if bias.len() != n_out {
        return Err(Error::dim(
            "dense",
            format!("bias has {} elements, expected {}", bias.len(), n_out),
        ));
    }
    let mut y = vec![0.0; n_out];
    dense_forward_into(x.data(), weights.data(), bias.data(), &mut y);
    Ok(Tensor::from_vec(y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(grad_out: &Tensor, x: &Tensor, weights: &Tensor) -> Result<DenseGrads> {
    let (n_out, _) = dense_dims(x, weights, "dense_backward")?;
    if grad_out.len() != n_out {
        return Err(Error::dim(
            "dense_backward",
            format!("grad_out length {} != {}", grad_out.len(), n_out),
        ));
    }
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[n_out]);
    dense_backward_into(
        grad_out.data(),
        x.data(),
        weights.data(),
        Some(gx.data_mut()),
        gw.data_mut(),
        gb.data_mut(),
    );
    Ok(DenseGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f32, Tensor)> {
    let (loss, grad) = softmax_cross_entropy_slice(logits.data(), label)?;
    Ok((loss, Tensor::from_vec(grad)))
}
