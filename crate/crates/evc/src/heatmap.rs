//! Saliency overlays and grid dumps.

use std::path::Path;

use evc_core::saliency::SaliencyMap;

use crate::error::{CliError, CliResult};
use crate::imageio::{encode_pgm, encode_png_rgb, to_u8, write_file};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    /// RGB overlay: saliency pushes pixels toward red.
    Png,
    /// Side-by-side `2S × S` grayscale panel: image left, map right.
    Pgm,
}

impl HeatmapFormat {
    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "png" => Some(HeatmapFormat::Png),
            "pgm" => Some(HeatmapFormat::Pgm),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            HeatmapFormat::Png => "png",
            HeatmapFormat::Pgm => "pgm",
        }
    }
}

/// Encodes the overlay; `base` is the `S × S` image in `[0, 1]`.
pub fn encode_heatmap(
    map: &SaliencyMap,
    base: &[f32],
    format: HeatmapFormat,
) -> CliResult<Vec<u8>> {
    let side = map.upsampled.shape()[0];
    if base.len() != side * side {
        return Err(CliError::data(format!(
            "image has {} pixels but the map is {side}x{side}",
            base.len()
        )));
    }
    let sal = map.upsampled.data();
    match format {
        HeatmapFormat::Png => {
            let mut rgb = Vec::with_capacity(3 * side * side);
            for (&g, &s) in base.iter().zip(sal) {
                let g = g.clamp(0.0, 1.0);
                let s = s.clamp(0.0, 1.0);
                rgb.push(to_u8(g + (1.0 - g) * s));
                rgb.push(to_u8(g * (1.0 - s)));
                rgb.push(to_u8(g * (1.0 - s)));
            }
            encode_png_rgb(side, side, &rgb)
        }
        HeatmapFormat::Pgm => {
            let mut px = Vec::with_capacity(2 * side * side);
            for y in 0..side {
                px.extend(base[y * side..(y + 1) * side].iter().map(|&v| to_u8(v)));
                px.extend(sal[y * side..(y + 1) * side].iter().map(|&v| to_u8(v)));
            }
            Ok(encode_pgm(2 * side, side, &px))
        }
    }
}

pub fn render_heatmap(
    map: &SaliencyMap,
    base: &[f32],
    format: HeatmapFormat,
    out: &Path,
) -> CliResult<()> {
    write_file(out, &encode_heatmap(map, base, format)?)
}

/// Grid as CSV: `row,col,x0,y0,drop`, one line per occlusion position.
pub fn write_grid_csv(map: &SaliencyMap, out: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(out)
        .map_err(|e| CliError::data(format!("{}: {e}", out.display())))?;
    w.write_record(["row", "col", "x0", "y0", "drop"])?;
    let cols = map.grid.shape()[1];
    for (i, v) in map.grid.data().iter().enumerate() {
        let (row, col) = (i / cols, i % cols);
        w.write_record([
            row.to_string(),
            col.to_string(),
            (col * map.stride).to_string(),
            (row * map.stride).to_string(),
            v.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(out, e))
}
