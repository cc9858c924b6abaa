//! Occlusion saliency: slide a uniform patch over the image and record how
//! much the target-class probability drops at each position.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::resize_bilinear;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::model::{ModelParams, Scratch};
use crate::tensor::{softmax, Tensor};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    /// Fill with the given intensity (normally the training-set mean).
    Mean(f32),
    Zero,
}

impl Fill {
    pub fn value(self) -> f32 {
        match self {
            Fill::Mean(v) => v,
            Fill::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionConfig {
    pub patch: usize,
    pub stride: usize,
    pub fill: Fill,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            patch: 16,
            stride: 8,
            fill: Fill::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// `[rows, cols]` probability drops, clipped at zero.
    pub grid: Tensor,
    /// `[S, S]` bilinear upsampling of the grid, max-normalized to 1.
    pub upsampled: Tensor,
    pub target_class: Label,
    pub patch: usize,
    pub stride: usize,
}

impl SaliencyMap {
    /// Grid cell with the largest drop (first in row-major order on ties).
    pub fn argmax_cell(&self) -> (usize, usize) {
        let cols = self.grid.shape()[1];
        let mut best = 0;
        for (i, &v) in self.grid.data().iter().enumerate() {
            if v > self.grid.data()[best] {
                best = i;
            }
        }
        (best / cols, best % cols)
    }

    /// Pixel rectangle `(x0, y0, size)` occluded at grid cell `(row, col)`.
    pub fn cell_rect(&self, row: usize, col: usize) -> (usize, usize, usize) {
        (col * self.stride, row * self.stride, self.patch)
    }
}

/// Number of patch positions per axis.
pub fn grid_extent(side: usize, patch: usize, stride: usize) -> Option<usize> {
    if patch == 0 || stride == 0 || patch > side {
        return None;
    }
    Some((side - patch) / stride + 1)
}

pub fn occlusion_map<E: Executor>(
    params: &ModelParams,
    image: &Tensor,
    target_class: Label,
    config: &OcclusionConfig,
    exec: &E,
) -> Result<SaliencyMap> {
    let layout = params.layout();
    layout.check_image(image)?;
    let side = layout.config().input_size;
    let cells = grid_extent(side, config.patch, config.stride).ok_or_else(|| {
        Error::arg(format!(
            "invalid occlusion patch {} / stride {} for {}px images",
            config.patch, config.stride, side
        ))
    })?;
    let target = target_class.index();
    let base = {
        let mut scratch = Scratch::new();
        softmax(layout.logits(params.flat(), image.data(), &mut scratch))[target]
    };
    let fill = config.fill.value();
    let drops = exec.map(cells * cells, |cell| {
        let (row, col) = (cell / cells, cell % cells);
        let (x0, y0) = (col * config.stride, row * config.stride);
        let mut occluded = image.data().to_vec();
        for y in y0..y0 + config.patch {
            occluded[y * side + x0..y * side + x0 + config.patch].fill(fill);
        }
        let mut scratch = Scratch::new();
        let p = softmax(layout.logits(params.flat(), &occluded, &mut scratch))[target];
        (base - p).max(0.0)
    });
    let grid = Tensor::new(vec![cells, cells], drops)?;
    let upsampled = upsample_grid(grid.data(), cells, side, config.patch, config.stride);
    Ok(SaliencyMap {
        grid,
        upsampled: Tensor::new(vec![side, side], upsampled)?,
        target_class,
        patch: config.patch,
        stride: config.stride,
    })
}

/// Bilinear interpolation of cell values placed at their patch centres,
/// clamped at the borders, then divided by the maximum when it is positive.
pub fn upsample_grid(
    grid: &[f32],
    cells: usize,
    side: usize,
    patch: usize,
    stride: usize,
) -> Vec<f32> {
    let mut out = if cells == 1 {
        vec![grid[0]; side * side]
    } else {
        // Pad the grid's coordinate frame into pixel space: cell j sits at
        // pixel j*stride + (patch-1)/2.
        let offset = (patch as f32 - 1.0) * 0.5;
        let mut out = vec![0.0f32; side * side];
        let coord = |p: usize| ((p as f32 - offset) / stride as f32).clamp(0.0, (cells - 1) as f32);
        for y in 0..side {
            let gy = coord(y);
            let y0 = libm::floorf(gy) as usize;
            let y1 = (y0 + 1).min(cells - 1);
            let ty = gy - y0 as f32;
            for x in 0..side {
                let gx = coord(x);
                let x0 = libm::floorf(gx) as usize;
                let x1 = (x0 + 1).min(cells - 1);
                let tx = gx - x0 as f32;
                let top = grid[y0 * cells + x0] * (1.0 - tx) + grid[y0 * cells + x1] * tx;
                let bot = grid[y1 * cells + x0] * (1.0 - tx) + grid[y1 * cells + x1] * tx;
                out[y * side + x] = top * (1.0 - ty) + bot * ty;
            }
        }
        out
    };
    let max = out.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        for v in &mut out {
            *v = (*v / max).clamp(0.0, 1.0);
        }
    }
    out
}

/// Resamples a saliency map to another side length (used for display).
pub fn resample(map: &[f32], side: usize, target: usize) -> Vec<f32> {
    resize_bilinear(map, side, side, target, target)
}
