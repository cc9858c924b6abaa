//! Corpus directories: manifest CSV, PGM images and the ground-truth sidecar.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use evc_core::data::{
    resize_bilinear, Corpus, HeadEllipse, InstitutionProfile, LabeledSample, LesionBox, Split,
};
use evc_core::exec::Executor;
use evc_core::{Label, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::imageio::{encode_pgm, read_gray, to_u8, write_file};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub path: String,
    pub label: String,
    pub institution: String,
    pub split: String,
}

const MANIFEST_HEADER: [&str; 5] = ["id", "path", "label", "institution", "split"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub gamma: f32,
    pub noise_sigma: f32,
    pub intensity_scale: f32,
    pub bias_field_amp: f32,
    pub vessel_density: f32,
    pub blur_sigma: f32,
}

impl From<&InstitutionProfile> for ProfileRecord {
    fn from(p: &InstitutionProfile) -> Self {
        ProfileRecord {
            gamma: p.gamma,
            noise_sigma: p.noise_sigma,
            intensity_scale: p.intensity_scale,
            bias_field_amp: p.bias_field_amp,
            vessel_density: p.vessel_density,
            blur_sigma: p.blur_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstitutionRecord {
    pub tag: String,
    pub profile: ProfileRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionRecord {
    pub x: f32,
    pub y: f32,
    pub radius: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadRecord {
    pub cx: f32,
    pub cy: f32,
    pub semi_x: f32,
    pub semi_y: f32,
    pub angle: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub label: String,
    pub institution: String,
    pub split: String,
    pub head: Option<HeadRecord>,
    pub lesions: Vec<LesionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_size: usize,
    pub master_seed: u64,
    pub institutions: Vec<InstitutionRecord>,
    pub samples: Vec<SampleRecord>,
}

impl GroundTruth {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        GroundTruth {
            image_size: corpus.image_size,
            master_seed: corpus.master_seed,
            institutions: corpus
                .institutions
                .iter()
                .map(|i| InstitutionRecord {
                    tag: i.tag.clone(),
                    profile: (&i.profile).into(),
                })
                .collect(),
            samples: corpus
                .samples
                .iter()
                .map(|s| SampleRecord {
                    id: s.id.clone(),
                    label: s.label.token().to_string(),
                    institution: s.institution.clone(),
                    split: s.split.token().to_string(),
                    head: s.head.map(|h| HeadRecord {
                        cx: h.cx,
                        cy: h.cy,
                        semi_x: h.semi_x,
                        semi_y: h.semi_y,
                        angle: h.angle,
                    }),
                    lesions: s
                        .lesions
                        .iter()
                        .map(|l| LesionRecord {
                            x: l.x,
                            y: l.y,
                            radius: l.radius,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    /// Copies lesion and head annotations onto matching samples by id.
    pub fn annotate(&self, samples: &mut [LabeledSample]) {
        let by_id: HashMap<&str, &SampleRecord> =
            self.samples.iter().map(|r| (r.id.as_str(), r)).collect();
        for s in samples.iter_mut() {
            if let Some(r) = by_id.get(s.id.as_str()) {
                s.lesions = r
                    .lesions
                    .iter()
                    .map(|l| LesionBox {
                        x: l.x,
                        y: l.y,
                        radius: l.radius,
                    })
                    .collect();
                s.head = r.head.map(|h| HeadEllipse {
                    cx: h.cx,
                    cy: h.cy,
                    semi_x: h.semi_x,
                    semi_y: h.semi_y,
                    angle: h.angle,
                });
            }
        }
    }
}

pub fn manifest_rows(corpus: &Corpus) -> Vec<ManifestRow> {
    corpus
        .samples
        .iter()
        .map(|s| ManifestRow {
            id: s.id.clone(),
            path: format!("{IMAGE_DIR}/{}.pgm", s.id),
            label: s.label.token().to_string(),
            institution: s.institution.clone(),
            split: s.split.token().to_string(),
        })
        .collect()
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes images, manifest and ground-truth sidecar under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> CliResult<()> {
    let images = dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&images).map_err(|e| CliError::io(&images, e))?;
    let side = corpus.image_size;
    for s in &corpus.samples {
        let px: Vec<u8> = s.image.data().iter().map(|&v| to_u8(v)).collect();
        write_file(
            &images.join(format!("{}.pgm", s.id)),
            &encode_pgm(side, side, &px),
        )?;
    }
    write_manifest(&dir.join(MANIFEST_FILE), &manifest_rows(corpus))?;
    let gt = serde_json::to_string_pretty(&GroundTruth::from_corpus(corpus))
        .map_err(|e| CliError::data(e.to_string()))?;
    write_file(&dir.join(GROUND_TRUTH_FILE), gt.as_bytes())
}

pub fn read_manifest(path: &Path) -> CliResult<Vec<ManifestRow>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != MANIFEST_HEADER {
        return Err(CliError::data(format!(
            "{}: header must be {}, found {}",
            path.display(),
            MANIFEST_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let row: ManifestRow =
            rec.map_err(|e| CliError::data(format!("{} row {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn row_error(path: &Path, line: usize, row: &ManifestRow, msg: impl std::fmt::Display) -> CliError {
    CliError::data(format!(
        "{} row {} (id {}): {msg}",
        path.display(),
        line,
        row.id
    ))
}

/// Loads every row as a `[1, size, size]` sample, resizing bilinearly when
/// the stored image has other dimensions. Relative image paths resolve
/// against the manifest's directory.
pub fn load_manifest<E: Executor>(
    path: &Path,
    size: usize,
    exec: &E,
) -> CliResult<Vec<LabeledSample>> {
    let rows = read_manifest(path)?;
    if rows.is_empty() {
        return Err(CliError::config(format!(
            "{}: manifest has no data rows",
            path.display()
        )));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = exec.map(rows.len(), |i| load_row(&base, path, i + 1, &rows[i], size));
    let samples = loaded.into_iter().collect::<CliResult<Vec<_>>>()?;
    let mut seen = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        if let Some(prev) = seen.insert(s.id.as_str(), i) {
            return Err(CliError::data(format!(
                "{}: duplicate id {} in rows {} and {}",
                path.display(),
                s.id,
                prev + 1,
                i + 1
            )));
        }
    }
    Ok(samples)
}

fn load_row(
    base: &Path,
    manifest: &Path,
    line: usize,
    row: &ManifestRow,
    size: usize,
) -> CliResult<LabeledSample> {
    let label = Label::parse(&row.label).ok_or_else(|| {
        row_error(
            manifest,
            line,
            row,
            format!("unknown label {:?}", row.label),
        )
    })?;
    let split = Split::parse(&row.split).ok_or_else(|| {
        row_error(
            manifest,
            line,
            row,
            format!("unknown split {:?}", row.split),
        )
    })?;
    if row.id.is_empty() {
        return Err(row_error(manifest, line, row, "empty id"));
    }
    let image_path: PathBuf = base.join(&row.path);
    let img = read_gray(&image_path).map_err(|e| row_error(manifest, line, row, e))?;
    let pixels = if img.width == size && img.height == size {
        img.pixels
    } else {
        resize_bilinear(&img.pixels, img.width, img.height, size, size)
    };
    Ok(LabeledSample {
        id: row.id.clone(),
        image: Tensor::new(vec![1, size, size], pixels)?,
        label,
        institution: row.institution.clone(),
        split,
        lesions: Vec::new(),
        head: None,
    })
}
