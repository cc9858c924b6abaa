//! Plain nested-loop network in `f32` and `f64`, written without any of the
//! library's kernels.

use evc_core::model::{ArchitectureConfig, LayerKind};

/// Convolution with the accumulation order input channel, kernel row,
/// kernel column, skipping taps that land in the padding, bias added last.
pub fn conv_f32(
    input: &[f32],
    (c_in, h, w): (usize, usize, usize),
    weights: &[f32],
    bias: &[f32],
    (c_out, k, stride, pad): (usize, usize, usize, usize),
) -> Vec<f32> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f32; c_out * oh * ow];
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for ci in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let x = input[ci * h * w + iy as usize * w + ix as usize];
                            acc += weights[((co * c_in + ci) * k + ky) * k + kx] * x;
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc + bias[co];
            }
        }
    }
    out
}

pub fn conv_f64(
    input: &[f64],
    (c_in, h, w): (usize, usize, usize),
    weights: &[f64],
    bias: &[f64],
    (c_out, k, stride, pad): (usize, usize, usize, usize),
) -> Vec<f64> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f64; c_out * oh * ow];
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[co];
                for ci in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += weights[((co * c_in + ci) * k + ky) * k + kx]
                                * input[ci * h * w + iy as usize * w + ix as usize];
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

pub fn dense_f64(x: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            b + x
                .iter()
                .enumerate()
                .map(|(i, &v)| weights[o * x.len() + i] * v)
                .sum::<f64>()
        })
        .collect()
}

/// `-log softmax(logits)[label]`, computed stably.
pub fn cross_entropy_f64(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Logits of the whole network, plus the sign pattern of every hidden
/// pre-activation (used to detect finite-difference steps across a kink).
pub fn network_f64(
    arch: &ArchitectureConfig,
    flat: &[f64],
    image: &[f64],
) -> (Vec<f64>, Vec<bool>) {
    let specs = arch.layer_specs();
    let mut x = image.to_vec();
    let mut pattern = Vec::new();
    let mut at = 0;
    let last = specs.len() - 1;
    for (i, spec) in specs.iter().enumerate() {
        let wl = spec.weight_len();
        let bl = spec.bias_len();
        let (wts, b) = (&flat[at..at + wl], &flat[at + wl..at + wl + bl]);
        at += wl + bl;
        let mut y = match spec.kind {
            LayerKind::Conv(g) => conv_f64(
                &x,
                (g.c_in, g.height, g.width),
                wts,
                b,
                (g.c_out, g.kernel, g.stride, g.pad),
            ),
            LayerKind::Dense { .. } => dense_f64(&x, wts, b),
        };
        if i != last {
            for v in y.iter_mut() {
                pattern.push(*v > 0.0);
                *v = v.max(0.0);
            }
        }
        x = y;
    }
    (x, pattern)
}
