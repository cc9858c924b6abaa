//! The classifier: a stack of stride-2 3×3 convolutions with ReLU, flattened
//! into fully connected ReLU layers and a two-node output.
//!
//! Parameters live in one contiguous `Vec<f32>` (the flat view) laid out
//! layer by layer, weights before bias. Mutation, optimizers and the model
//! file all operate on that vector; structured per-layer tensors are views
//! or copies of it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};
use crate::tensor::{
    conv2d_backward_into, conv2d_forward_into, dense_backward_into, dense_forward_into,
    dense_forward_rows, relu_backward_in_place, relu_in_place, softmax,
    softmax_cross_entropy_slice, ConvGeometry, Tensor,
};
use crate::Label;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureConfig {
    /// Pixels per side of the square single-channel input.
    pub input_size: usize,
    pub conv_layers: usize,
    pub channels_per_layer: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub fc_sizes: Vec<usize>,
    pub num_classes: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            input_size: 128,
            conv_layers: 4,
            channels_per_layer: 32,
            kernel: 3,
            stride: 2,
            pad: 1,
            fc_sizes: vec![512, 256, 128],
            num_classes: 2,
        }
    }
}

impl ArchitectureConfig {
    /// A reduced network used for whole-model gradient checks.
    pub fn shrunken() -> Self {
        ArchitectureConfig {
            input_size: 16,
            conv_layers: 2,
            channels_per_layer: 4,
            fc_sizes: vec![16, 8],
            ..Default::default()
        }
    }

    pub fn with_input_size(mut self, input_size: usize) -> Self {
        self.input_size = input_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < 16 {
            return Err(Error::arg(format!(
                "input_size must be at least 16, got {}",
                self.input_size
            )));
        }
        if self.num_classes != 2 {
            return Err(Error::arg(format!(
                "num_classes must be 2, got {}",
                self.num_classes
            )));
        }
        if self.conv_layers == 0 || self.channels_per_layer == 0 || self.kernel == 0 {
            return Err(Error::arg(
                "conv_layers, channels_per_layer and kernel must be nonzero",
            ));
        }
        if self.stride == 0 {
            return Err(Error::arg("stride must be at least 1"));
        }
        if self.fc_sizes.contains(&0) {
            return Err(Error::arg("fully connected sizes must be nonzero"));
        }
        let mut side = self.input_size;
        for layer in 0..self.conv_layers {
            side = crate::tensor::conv_out_extent(side, self.kernel, self.stride, self.pad)
                .filter(|&s| s >= 1)
                .ok_or_else(|| {
                    Error::arg(format!(
                        "spatial size collapses before conv{} (input {})",
                        layer + 1,
                        self.input_size
                    ))
                })?;
        }
        Ok(())
    }

    /// Geometry of each convolution, in order. Assumes a valid config.
    pub fn conv_geometries(&self) -> Vec<ConvGeometry> {
        let mut out = Vec::with_capacity(self.conv_layers);
        let (mut c, mut side) = (1, self.input_size);
        for _ in 0..self.conv_layers {
            let g = ConvGeometry {
                c_in: c,
                height: side,
                width: side,
                c_out: self.channels_per_layer,
                kernel: self.kernel,
                stride: self.stride,
                pad: self.pad,
            };
            side = g.out_height();
            c = g.c_out;
            out.push(g);
        }
        out
    }

    /// Spatial side of each convolution's output.
    pub fn conv_output_sides(&self) -> Vec<usize> {
        self.conv_geometries()
            .iter()
            .map(|g| g.out_height())
            .collect()
    }

    pub fn flatten_len(&self) -> usize {
        let last = self.conv_geometries().last().copied();
        last.map(|g| g.output_len())
            .unwrap_or(self.input_size * self.input_size)
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        for (i, g) in self.conv_geometries().into_iter().enumerate() {
            specs.push(LayerSpec {
                id: format!("conv{}", i + 1),
                kind: LayerKind::Conv(g),
            });
        }
        let mut n_in = self.flatten_len();
        for (i, &n_out) in self.fc_sizes.iter().enumerate() {
            specs.push(LayerSpec {
                id: format!("fc{}", i + 1),
                kind: LayerKind::Dense { n_in, n_out },
            });
            n_in = n_out;
        }
        specs.push(LayerSpec {
            id: String::from("out"),
            kind: LayerKind::Dense {
                n_in,
                n_out: self.num_classes,
            },
        });
        specs
    }

    pub fn param_count(&self) -> usize {
        self.layer_specs()
            .iter()
            .map(|s| s.weight_len() + s.bias_len())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv(ConvGeometry),
    Dense { n_in: usize, n_out: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv(g) => vec![g.c_out, g.c_in, g.kernel, g.kernel],
            LayerKind::Dense { n_in, n_out } => vec![n_out, n_in],
        }
    }

    pub fn weight_len(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn bias_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv(g) => g.c_out,
            LayerKind::Dense { n_out, .. } => n_out,
        }
    }

    pub fn output_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv(g) => g.output_len(),
            LayerKind::Dense { n_out, .. } => n_out,
        }
    }

    /// Glorot fan-in and fan-out (receptive field counted for convolutions).
    pub fn fans(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Conv(g) => {
                let rf = g.kernel * g.kernel;
                (g.c_in * rf, g.c_out * rf)
            }
            LayerKind::Dense { n_in, n_out } => (n_in, n_out),
        }
    }

    /// Glorot uniform bound `sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot_limit(&self) -> f32 {
        let (fi, fo) = self.fans();
        libm::sqrtf(6.0 / (fi + fo) as f32)
    }
}

/// A validated architecture with precomputed parameter offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    config: ArchitectureConfig,
    specs: Vec<LayerSpec>,
    /// `(weight_offset, bias_offset)` into the flat vector, per layer.
    offsets: Vec<(usize, usize)>,
    total: usize,
}

impl Layout {
    pub fn new(config: &ArchitectureConfig) -> Result<Self> {
        config.validate()?;
        let specs = config.layer_specs();
        let mut offsets = Vec::with_capacity(specs.len());
        let mut at = 0;
        for s in &specs {
            let w = at;
            at += s.weight_len();
            offsets.push((w, at));
            at += s.bias_len();
        }
        Ok(Layout {
            config: config.clone(),
            specs,
            offsets,
            total: at,
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    pub fn image_len(&self) -> usize {
        self.config.input_size * self.config.input_size
    }

    fn weights<'a>(&self, flat: &'a [f32], layer: usize) -> &'a [f32] {
        let (w, b) = self.offsets[layer];
        &flat[w..b]
    }

    fn bias<'a>(&self, flat: &'a [f32], layer: usize) -> &'a [f32] {
        let (_, b) = self.offsets[layer];
        &flat[b..b + self.specs[layer].bias_len()]
    }

    pub fn check_image(&self, image: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        if image.shape() != [1, s, s] {
            return Err(Error::dim(
                "forward",
                format!("expected image [1,{},{}], got {:?}", s, s, image.shape()),
            ));
        }
        Ok(())
    }

    /// Runs the network over `flat` parameters and returns the logits.
    ///
    /// `image` must hold `input_size²` pixels; this is not re-checked here.
    pub fn logits<'s>(&self, flat: &[f32], image: &[f32], scratch: &'s mut Scratch) -> &'s [f32] {
        debug_assert_eq!(flat.len(), self.total);
        scratch.ensure(self);
        let last = self.specs.len() - 1;
        for (i, spec) in self.specs.iter().enumerate() {
            let (done, rest) = scratch.acts.split_at_mut(i);
            let input: &[f32] = if i == 0 { image } else { &done[i - 1] };
            let out = &mut rest[0];
            match spec.kind {
                LayerKind::Conv(g) => {
                    conv2d_forward_into(&g, input, self.weights(flat, i), self.bias(flat, i), out)
                }
                LayerKind::Dense { .. } => {
                    dense_forward_into(input, self.weights(flat, i), self.bias(flat, i), out)
                }
            }
            if i != last {
                relu_in_place(out);
            }
        }
        &scratch.acts[last]
    }

    /// Logits of many images at once, `images.len() × num_classes`
    /// row-major. Bit-identical to calling [`Layout::logits`] per image.
    pub fn logits_batch(&self, flat: &[f32], images: &[&[f32]], scratch: &mut Scratch) -> Vec<f32> {
        debug_assert_eq!(flat.len(), self.total);
        let first_dense = self
            .specs
            .iter()
            .position(|s| matches!(s.kind, LayerKind::Dense { .. }))
            .unwrap_or(self.specs.len());
        let last = self.specs.len() - 1;
        scratch.ensure(self);
        let width = if first_dense == 0 {
            self.config.input_size * self.config.input_size
        } else {
            self.specs[first_dense - 1].output_len()
        };
        let mut rows = Vec::with_capacity(images.len() * width);
        for image in images {
            if first_dense == 0 {
                rows.extend_from_slice(image);
                continue;
            }
            for i in 0..first_dense {
                let (done, rest) = scratch.acts.split_at_mut(i);
                let input: &[f32] = if i == 0 { image } else { &done[i - 1] };
                let out = &mut rest[0];
                if let LayerKind::Conv(g) = self.specs[i].kind {
                    conv2d_forward_into(&g, input, self.weights(flat, i), self.bias(flat, i), out);
                }
                if i != last {
                    relu_in_place(out);
                }
            }
            rows.extend_from_slice(&scratch.acts[first_dense - 1]);
        }
        let mut width = width;
        for i in first_dense..self.specs.len() {
            let n_out = self.specs[i].output_len();
            let mut next = vec![0.0f32; images.len() * n_out];
            dense_forward_rows(
                &rows,
                width,
                self.weights(flat, i),
                self.bias(flat, i),
                &mut next,
            );
            if i != last {
                relu_in_place(&mut next);
            }
            rows = next;
            width = n_out;
        }
        rows
    }

    /// Class prediction: argmax of the softmax output, ties to class 0.
    pub fn predict_flat(&self, flat: &[f32], image: &[f32], scratch: &mut Scratch) -> Label {
        let probs = softmax(self.logits(flat, image, scratch));
        argmax_first(&probs)
    }

    /// Cross-entropy loss of one sample; its parameter gradient is *added*
    /// into `grad`.
    pub fn loss_and_grad(
        &self,
        flat: &[f32],
        image: &[f32],
        label: Label,
        scratch: &mut Scratch,
        grad: &mut [f32],
    ) -> Result<f32> {
        debug_assert_eq!(grad.len(), self.total);
        self.logits(flat, image, scratch);
        let last = self.specs.len() - 1;
        let (loss, mut upstream) = softmax_cross_entropy_slice(&scratch.acts[last], label.index())?;
        for i in (0..self.specs.len()).rev() {
            if i != last {
                relu_backward_in_place(&mut upstream, &scratch.acts[i]);
            }
            let input: &[f32] = if i == 0 { image } else { &scratch.acts[i - 1] };
            let (w_off, b_off) = self.offsets[i];
            let spec = &self.specs[i];
            let (gw, gb) = grad[w_off..b_off + spec.bias_len()].split_at_mut(b_off - w_off);
            let mut down = if i == 0 {
                Vec::new()
            } else {
                vec![0.0; input.len()]
            };
            let down_ref = if i == 0 { None } else { Some(&mut down[..]) };
            match spec.kind {
                LayerKind::Conv(g) => conv2d_backward_into(
                    &g,
                    &upstream,
                    input,
                    self.weights(flat, i),
                    down_ref,
                    gw,
                    gb,
                ),
                LayerKind::Dense { .. } => {
                    dense_backward_into(&upstream, input, self.weights(flat, i), down_ref, gw, gb)
                }
            }
            upstream = down;
        }
        Ok(loss)
    }
}

/// Reusable activation buffers for forward and backward passes.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    acts: Vec<Vec<f32>>,
}

impl Scratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, layout: &Layout) {
        let ok = self.acts.len() == layout.specs.len()
            && self
                .acts
                .iter()
                .zip(&layout.specs)
                .all(|(a, s)| a.len() == s.output_len());
        if !ok {
            self.acts = layout
                .specs
                .iter()
                .map(|s| vec![0.0; s.output_len()])
                .collect();
        }
    }
}

pub(crate) fn argmax_first(values: &[f32]) -> Label {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    Label::from_index(best).unwrap_or(Label::Normal)
}

/// Parameters of one network: a layout plus its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layout: Layout,
    flat: Vec<f32>,
}

impl ModelParams {
    pub fn zeros(config: &ArchitectureConfig) -> Result<Self> {
        let layout = Layout::new(config)?;
        let flat = vec![0.0; layout.total];
        Ok(ModelParams { layout, flat })
    }

    pub fn from_flat(config: &ArchitectureConfig, flat: Vec<f32>) -> Result<Self> {
        let layout = Layout::new(config)?;
        Self::with_layout(layout, flat)
    }

    pub fn with_layout(layout: Layout, flat: Vec<f32>) -> Result<Self> {
        if flat.len() != layout.total {
            return Err(Error::dim(
                "ModelParams::from_flat",
                format!("expected {} parameters, got {}", layout.total, flat.len()),
            ));
        }
        Ok(ModelParams { layout, flat })
    }

    /// Builds parameters from `(layer id, weights, bias)` triples in layer order.
    pub fn from_layers(
        config: &ArchitectureConfig,
        layers: &[(String, Tensor, Tensor)],
    ) -> Result<Self> {
        let layout = Layout::new(config)?;
        if layers.len() != layout.specs.len() {
            let idx = layers.len().min(layout.specs.len());
            let name = layout
                .specs
                .get(idx)
                .map(|s| s.id.clone())
                .unwrap_or_else(|| layers[idx].0.clone());
            return Err(Error::LayerShape {
                layer: name,
                expected: vec![layout.specs.len()],
                found: vec![layers.len()],
            });
        }
        let mut flat = Vec::with_capacity(layout.total);
        for (spec, (_, w, b)) in layout.specs.iter().zip(layers) {
            if w.shape() != spec.weight_shape().as_slice() {
                return Err(Error::LayerShape {
                    layer: spec.id.clone(),
                    expected: spec.weight_shape(),
                    found: w.shape().to_vec(),
                });
            }
            if b.shape() != [spec.bias_len()] {
                return Err(Error::LayerShape {
                    layer: spec.id.clone(),
                    expected: vec![spec.bias_len()],
                    found: b.shape().to_vec(),
                });
            }
            flat.extend_from_slice(w.data());
            flat.extend_from_slice(b.data());
        }
        Ok(ModelParams { layout, flat })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.layout.config
    }

    pub fn flat(&self) -> &[f32] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f32] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f32> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Structured copy: `(layer id, weights, bias)` per layer.
    pub fn layers(&self) -> Vec<(String, Tensor, Tensor)> {
        self.layout
            .specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let w = Tensor::new(
                    s.weight_shape(),
                    self.layout.weights(&self.flat, i).to_vec(),
                )
                .expect("layout shapes are consistent");
                let b = Tensor::from_vec(self.layout.bias(&self.flat, i).to_vec());
                (s.id.clone(), w, b)
            })
            .collect()
    }

    pub fn layer_weights(&self, layer: usize) -> &[f32] {
        self.layout.weights(&self.flat, layer)
    }

    pub fn layer_bias(&self, layer: usize) -> &[f32] {
        self.layout.bias(&self.flat, layer)
    }

    /// Class probabilities for one `[1,S,S]` image.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        self.layout.check_image(image)?;
        let mut scratch = Scratch::new();
        let logits = self.layout.logits(&self.flat, image.data(), &mut scratch);
        Ok(Tensor::from_vec(softmax(logits)))
    }

    /// Raw output-layer logits for one image.
    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        self.layout.check_image(image)?;
        let mut scratch = Scratch::new();
        Ok(Tensor::from_vec(
            self.layout
                .logits(&self.flat, image.data(), &mut scratch)
                .to_vec(),
        ))
    }

    pub fn predict(&self, image: &Tensor) -> Result<Label> {
        let probs = self.forward(image)?;
        Ok(argmax_first(probs.data()))
    }

    /// Cross-entropy loss and full parameter gradient for one sample.
    pub fn loss_and_grad(&self, image: &Tensor, label: Label) -> Result<(f32, Vec<f32>)> {
        self.layout.check_image(image)?;
        let mut grad = vec![0.0; self.flat.len()];
        let mut scratch = Scratch::new();
        let loss =
            self.layout
                .loss_and_grad(&self.flat, image.data(), label, &mut scratch, &mut grad)?;
        Ok((loss, grad))
    }

    /// Serializes to the `EVC1` model format.
    pub fn encode(&self) -> Vec<u8> {
        let specs = &self.layout.specs;
        let mut out = Vec::with_capacity(16 + specs.len() * 24 + self.flat.len() * 4);
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
        for s in specs {
            let ws = s.weight_shape();
            out.extend_from_slice(&(ws.len() as u32).to_le_bytes());
            for d in ws {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&1u32.to_le_bytes());
            out.extend_from_slice(&(s.bias_len() as u32).to_le_bytes());
        }
        for v in &self.flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses an `EVC1` buffer and checks it against `expected`.
    pub fn decode(bytes: &[u8], expected: &ArchitectureConfig) -> Result<Self> {
        let layout = Layout::new(expected)?;
        let header = decode_header(bytes)?;
        for (i, spec) in layout.specs.iter().enumerate() {
            let Some((ws, bs)) = header.shapes.get(i) else {
                return Err(Error::LayerShape {
                    layer: spec.id.clone(),
                    expected: spec.weight_shape(),
                    found: Vec::new(),
                });
            };
            if *ws != spec.weight_shape() {
                return Err(Error::LayerShape {
                    layer: spec.id.clone(),
                    expected: spec.weight_shape(),
                    found: ws.clone(),
                });
            }
            if *bs != [spec.bias_len()] {
                return Err(Error::LayerShape {
                    layer: spec.id.clone(),
                    expected: vec![spec.bias_len()],
                    found: bs.clone(),
                });
            }
        }
        if header.shapes.len() > layout.specs.len() {
            let extra = layout.specs.len();
            return Err(Error::LayerShape {
                layer: format!("layer{}", extra + 1),
                expected: Vec::new(),
                found: header.shapes[extra].0.clone(),
            });
        }
        let payload = &bytes[header.data_offset..];
        if payload.len() != layout.total * 4 {
            return Err(Error::Format(format!(
                "expected {} bytes of parameter data, found {}",
                layout.total * 4,
                payload.len()
            )));
        }
        let flat = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(ModelParams { layout, flat })
    }
}

pub const MAGIC: &[u8; 4] = b"EVC1";
pub const FORMAT_VERSION: u8 = 1;

/// Layer shapes declared by an `EVC1` header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelHeader {
    /// `(weight extents, bias extents)` per layer.
    pub shapes: Vec<(Vec<usize>, Vec<usize>)>,
    pub data_offset: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Format(format!(
                "truncated model file: needed {} bytes at offset {}",
                n, self.at
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn extents(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()?;
        if rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {}", rank)));
        }
        (0..rank).map(|_| self.u32()).collect()
    }
}

pub fn decode_header(bytes: &[u8]) -> Result<ModelHeader> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format(String::from(
            "bad magic, not an EVC1 model file",
        )));
    }
    let version = c.take(1)?[0];
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model format version {} (expected {})",
            version, FORMAT_VERSION
        )));
    }
    let n = c.u32()?;
    if n > 4096 {
        return Err(Error::Format(format!("implausible layer count {}", n)));
    }
    let mut shapes = Vec::with_capacity(n);
    for _ in 0..n {
        let w = c.extents()?;
        let b = c.extents()?;
        shapes.push((w, b));
    }
    Ok(ModelHeader {
        shapes,
        data_offset: c.at,
    })
}

/// Glorot-uniform weights in `[-L, L]`, `L = sqrt(6/(fan_in+fan_out))`,
/// zero biases. Each layer draws from its own stream under `seed`.
pub fn glorot_init(config: &ArchitectureConfig, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(config)?;
    let layout = params.layout.clone();
    for (i, spec) in layout.specs.iter().enumerate() {
        let limit = spec.glorot_limit();
        let mut rng = stream_rng(seed, &[stream::INIT, i as u64]);
        let (w, b) = layout.offsets[i];
        for v in &mut params.flat[w..b] {
            let u: f32 = rng.random();
            *v = ((2.0 * u - 1.0) * limit).clamp(-limit, limit);
        }
    }
    Ok(params)
}
