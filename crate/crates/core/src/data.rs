//! Labeled samples and a deterministic synthetic corpus that mimics a
//! multi-institution brain MRI collection: one home site plus many outside
//! sites, each with its own acquisition profile, and a balanced
//! normal/metastasis split.
//!
//! Images are elliptical head phantoms with tissue texture. Metastasis images
//! carry one to three bright Gaussian blobs whose positions are recorded as
//! ground truth. Every image is then pushed through its institution's
//! profile in a fixed order:
//! texture → vessels → lesions → bias field → gamma → intensity scale →
//! blur → noise → clamp, and finally quantized to 8-bit levels so that a
//! PGM round trip is lossless.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f32::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::rng::{stream, stream_rng, StreamRng};
use crate::tensor::Tensor;
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn token(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(token: &str) -> Option<Split> {
        match token.trim() {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Ground-truth lesion: centre in pixel coordinates and radius in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LesionBox {
    pub x: f32,
    pub y: f32,
    pub radius: f32,
}

impl LesionBox {
    /// Whether the axis-aligned square `[x0, x0+w) × [y0, y0+h)` intersects
    /// the lesion's bounding square.
    pub fn overlaps_rect(&self, x0: f32, y0: f32, w: f32, h: f32) -> bool {
        let (lx0, lx1) = (self.x - self.radius, self.x + self.radius);
        let (ly0, ly1) = (self.y - self.radius, self.y + self.radius);
        lx0 < x0 + w && x0 < lx1 && ly0 < y0 + h && y0 < ly1
    }
}

/// Head outline of a synthetic image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadEllipse {
    pub cx: f32,
    pub cy: f32,
    pub semi_x: f32,
    pub semi_y: f32,
    pub angle: f32,
}

impl HeadEllipse {
    /// Normalized elliptical radius: below 1 inside the head.
    pub fn rho(&self, x: f32, y: f32) -> f32 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = libm::sincosf(self.angle);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        libm::sqrtf((u / self.semi_x) * (u / self.semi_x) + (v / self.semi_y) * (v / self.semi_y))
    }

    /// Whether the lesion's bounding square lies inside radius `limit`.
    pub fn contains_box(&self, lesion: &LesionBox, limit: f32) -> bool {
        let r = lesion.radius;
        [(-r, -r), (r, -r), (-r, r), (r, r), (0.0, 0.0)]
            .iter()
            .all(|&(ox, oy)| self.rho(lesion.x + ox, lesion.y + oy) < limit)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    /// `[1, S, S]`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: Label,
    pub institution: String,
    pub split: Split,
    /// Ground-truth lesions (synthetic metastasis samples only).
    pub lesions: Vec<LesionBox>,
    /// Head outline (synthetic samples only).
    pub head: Option<HeadEllipse>,
}

impl LabeledSample {
    pub fn side(&self) -> usize {
        self.image.shape().last().copied().unwrap_or(0)
    }
}

/// Tag of the home institution in generated corpora.
pub const HOME_TAG: &str = "home";

/// Acquisition style of one site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstitutionProfile {
    pub gamma: f32,
    pub noise_sigma: f32,
    pub intensity_scale: f32,
    pub bias_field_amp: f32,
    pub vessel_density: f32,
    pub blur_sigma: f32,
}

impl InstitutionProfile {
    pub const GAMMA: (f32, f32) = (0.6, 1.6);
    pub const NOISE_SIGMA: (f32, f32) = (0.0, 0.06);
    pub const INTENSITY_SCALE: (f32, f32) = (0.7, 1.3);
    pub const BIAS_FIELD_AMP: (f32, f32) = (0.0, 0.3);
    pub const VESSEL_DENSITY: (f32, f32) = (0.0, 1.0);
    pub const BLUR_SIGMA: (f32, f32) = (0.0, 1.5);

    /// Draws every field uniformly from its range.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = crate::rng::rng_from_seed(seed);
        let mut draw = |(lo, hi): (f32, f32)| lo + (hi - lo) * rng.random::<f32>();
        InstitutionProfile {
            gamma: draw(Self::GAMMA),
            noise_sigma: draw(Self::NOISE_SIGMA),
            intensity_scale: draw(Self::INTENSITY_SCALE),
            bias_field_amp: draw(Self::BIAS_FIELD_AMP),
            vessel_density: draw(Self::VESSEL_DENSITY),
            blur_sigma: draw(Self::BLUR_SIGMA),
        }
    }

    pub fn is_valid(&self) -> bool {
        let within = |v: f32, (lo, hi): (f32, f32)| v >= lo && v <= hi;
        within(self.gamma, Self::GAMMA)
            && within(self.noise_sigma, Self::NOISE_SIGMA)
            && within(self.intensity_scale, Self::INTENSITY_SCALE)
            && within(self.bias_field_amp, Self::BIAS_FIELD_AMP)
            && within(self.vessel_density, Self::VESSEL_DENSITY)
            && within(self.blur_sigma, Self::BLUR_SIGMA)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Institution {
    pub index: usize,
    pub tag: String,
    pub profile: InstitutionProfile,
}

/// Explicit number of outside-institution images per split and class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutsideCounts {
    pub train_normal: usize,
    pub train_metastasis: usize,
    pub test_normal: usize,
    pub test_metastasis: usize,
}

impl OutsideCounts {
    /// Per-class origin of the clinical cohort this corpus imitates: every
    /// training normal from the home site, most training metastases and
    /// nearly all test images from outside.
    pub const REFERRAL: OutsideCounts = OutsideCounts {
        train_normal: 0,
        train_metastasis: 22,
        test_normal: 29,
        test_metastasis: 21,
    };
}

/// How the outside images of each split are distributed over the classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutsideAllocation {
    /// Split the per-split outside count evenly, odd image to metastasis.
    Even,
    /// Use explicit per-class counts; they must sum to the rounded fractions.
    ByClass(OutsideCounts),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_train_normal: usize,
    pub n_train_metastasis: usize,
    pub n_test_normal: usize,
    pub n_test_metastasis: usize,
    /// Home site included.
    pub n_institutions: usize,
    pub outside_fraction_train: f64,
    pub outside_fraction_test: f64,
    pub allocation: OutsideAllocation,
    pub image_size: usize,
    pub master_seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_train_normal: 30,
            n_train_metastasis: 30,
            n_test_normal: 30,
            n_test_metastasis: 30,
            n_institutions: 58,
            outside_fraction_train: 0.37,
            outside_fraction_test: 0.83,
            allocation: OutsideAllocation::ByClass(OutsideCounts::REFERRAL),
            image_size: 128,
            master_seed: 0,
        }
    }
}

/// Nearest integer, halves rounded up.
pub fn round_half_up(x: f64) -> usize {
    let r = libm::floor(x + 0.5);
    if r <= 0.0 {
        0
    } else {
        r as usize
    }
}

impl CorpusSpec {
    pub fn total(&self) -> usize {
        self.n_train_normal + self.n_train_metastasis + self.n_test_normal + self.n_test_metastasis
    }

    pub fn outside_train(&self) -> usize {
        round_half_up(
            self.outside_fraction_train * (self.n_train_normal + self.n_train_metastasis) as f64,
        )
    }

    pub fn outside_test(&self) -> usize {
        round_half_up(
            self.outside_fraction_test * (self.n_test_normal + self.n_test_metastasis) as f64,
        )
    }

    /// Outside-image counts per split and class after rounding.
    pub fn outside_counts(&self) -> Result<OutsideCounts> {
        let (tr, te) = (self.outside_train(), self.outside_test());
        let counts = match self.allocation {
            OutsideAllocation::Even => {
                let split = |total: usize, n_norm: usize, n_met: usize| {
                    let mut met = total - total / 2;
                    let mut norm = total / 2;
                    if met > n_met {
                        norm += met - n_met;
                        met = n_met;
                    }
                    if norm > n_norm {
                        met += norm - n_norm;
                        norm = n_norm;
                    }
                    (norm, met)
                };
                let (a, b) = split(tr, self.n_train_normal, self.n_train_metastasis);
                let (c, d) = split(te, self.n_test_normal, self.n_test_metastasis);
                OutsideCounts {
                    train_normal: a,
                    train_metastasis: b,
                    test_normal: c,
                    test_metastasis: d,
                }
            }
            OutsideAllocation::ByClass(c) => {
                if c.train_normal + c.train_metastasis != tr
                    || c.test_normal + c.test_metastasis != te
                {
                    return Err(Error::arg(format!(
                        "per-class outside counts ({}+{}, {}+{}) do not match the rounded split fractions ({}, {})",
                        c.train_normal, c.train_metastasis, c.test_normal, c.test_metastasis, tr, te
                    )));
                }
                c
            }
        };
        if counts.train_normal > self.n_train_normal
            || counts.train_metastasis > self.n_train_metastasis
            || counts.test_normal > self.n_test_normal
            || counts.test_metastasis > self.n_test_metastasis
        {
            return Err(Error::arg(
                "more outside images requested than images in a class",
            ));
        }
        Ok(counts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::arg(format!(
                "image_size must be at least 16, got {}",
                self.image_size
            )));
        }
        if self.n_train_normal != self.n_train_metastasis
            || self.n_test_normal != self.n_test_metastasis
        {
            return Err(Error::arg(
                "class counts must be balanced within each split",
            ));
        }
        if self.n_train_normal == 0 || self.n_test_normal == 0 {
            return Err(Error::arg("both splits need at least one image per class"));
        }
        for f in [self.outside_fraction_train, self.outside_fraction_test] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::arg(format!("outside fraction {} outside [0, 1]", f)));
            }
        }
        if self.n_institutions == 0 {
            return Err(Error::arg("need at least one institution"));
        }
        if self.n_institutions > self.total() {
            return Err(Error::arg(format!(
                "{} institutions cannot be represented by {} images",
                self.n_institutions,
                self.total()
            )));
        }
        let counts = self.outside_counts()?;
        let outside = self.outside_train() + self.outside_test();
        if outside > 0 && self.n_institutions < 2 {
            return Err(Error::arg(
                "outside images requested but only the home institution exists",
            ));
        }
        let _ = counts;
        Ok(())
    }
}

/// A generated corpus: samples in manifest order plus the site table.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<LabeledSample>,
    pub institutions: Vec<Institution>,
    pub image_size: usize,
    pub master_seed: u64,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<LabeledSample> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .cloned()
            .collect()
    }

    pub fn institution(&self, tag: &str) -> Option<&Institution> {
        self.institutions.iter().find(|i| i.tag == tag)
    }
}

const SUB_IMAGE: u64 = 1;
const SUB_INSTITUTION: u64 = 2;
const SUB_ASSIGN: u64 = 3;

/// Per-image plan fixed before rendering.
struct Plan {
    id: String,
    label: Label,
    split: Split,
    institution: usize,
    global_index: usize,
}

pub fn generate_corpus<E: Executor>(spec: &CorpusSpec, exec: &E) -> Result<Corpus> {
    spec.validate()?;
    let counts = spec.outside_counts()?;
    let seed = spec.master_seed;

    let institutions: Vec<Institution> = (0..spec.n_institutions)
        .map(|i| Institution {
            index: i,
            tag: if i == 0 {
                String::from(HOME_TAG)
            } else {
                format!("site{:02}", i)
            },
            profile: InstitutionProfile::from_seed(crate::rng::derive_seed(
                seed,
                &[stream::DATA, SUB_INSTITUTION, i as u64],
            )),
        })
        .collect();

    let groups = [
        (
            Split::Train,
            Label::Normal,
            spec.n_train_normal,
            counts.train_normal,
        ),
        (
            Split::Train,
            Label::Metastasis,
            spec.n_train_metastasis,
            counts.train_metastasis,
        ),
        (
            Split::Test,
            Label::Normal,
            spec.n_test_normal,
            counts.test_normal,
        ),
        (
            Split::Test,
            Label::Metastasis,
            spec.n_test_metastasis,
            counts.test_metastasis,
        ),
    ];
    let mut assign_rng = stream_rng(seed, &[stream::DATA, SUB_ASSIGN]);
    let mut plans = Vec::with_capacity(spec.total());
    let mut outside_slots = Vec::new();
    for &(split, label, n, n_out) in &groups {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut assign_rng);
        let mut is_outside = vec![false; n];
        for &k in &order[..n_out] {
            is_outside[k] = true;
        }
        for (k, &outside) in is_outside.iter().enumerate() {
            let global_index = plans.len();
            if outside {
                outside_slots.push(global_index);
            }
            plans.push(Plan {
                id: format!("{}_{}_{:03}", split.token(), label.token(), k),
                label,
                split,
                institution: 0,
                global_index,
            });
        }
    }
    if !outside_slots.is_empty() {
        let n_outside_sites = spec.n_institutions - 1;
        let mut perm: Vec<usize> = (0..outside_slots.len()).collect();
        perm.shuffle(&mut assign_rng);
        for (j, &slot) in outside_slots.iter().enumerate() {
            plans[slot].institution = 1 + perm[j] % n_outside_sites;
        }
    }

    let size = spec.image_size;
    let rendered = exec.map(plans.len(), |i| {
        let p = &plans[i];
        let mut rng = stream_rng(seed, &[stream::DATA, SUB_IMAGE, p.global_index as u64]);
        render_image(
            size,
            p.label,
            &institutions[p.institution].profile,
            &mut rng,
        )
    });

    let samples = plans
        .into_iter()
        .zip(rendered)
        .map(|(p, r)| LabeledSample {
            id: p.id,
            image: Tensor::new(vec![1, size, size], r.pixels).expect("rendered image size"),
            label: p.label,
            institution: institutions[p.institution].tag.clone(),
            split: p.split,
            lesions: r.lesions,
            head: Some(r.head),
        })
        .collect();
    Ok(Corpus {
        samples,
        institutions,
        image_size: size,
        master_seed: seed,
    })
}

/// Output of the phantom renderer.
pub struct Rendered {
    pub pixels: Vec<f32>,
    pub lesions: Vec<LesionBox>,
    pub head: HeadEllipse,
}

/// Inner brain boundary (the rim beyond it is scalp and skull).
const BRAIN_RHO: f32 = 0.9;
/// Lesion bounding squares must stay inside this elliptical radius.
const LESION_RHO: f32 = 0.8;

fn uniform(rng: &mut StreamRng, lo: f32, hi: f32) -> f32 {
    lo + (hi - lo) * rng.random::<f32>()
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Renders one phantom. Draw order from `rng` is fixed; do not reorder.
pub fn render_image(
    size: usize,
    label: Label,
    profile: &InstitutionProfile,
    rng: &mut StreamRng,
) -> Rendered {
    let s = size as f32;
    let head = HeadEllipse {
        cx: s * 0.5 + uniform(rng, -0.03, 0.03) * s,
        cy: s * 0.5 + uniform(rng, -0.03, 0.03) * s,
        semi_x: uniform(rng, 0.34, 0.40) * s,
        semi_y: uniform(rng, 0.40, 0.46) * s,
        angle: uniform(rng, -0.15, 0.15),
    };

    // texture: a few low-frequency sinusoids over the brain
    let waves: Vec<(f32, f32, f32, f32)> = (0..4)
        .map(|_| {
            let freq = uniform(rng, 2.0, 6.0) * 2.0 * PI / s;
            let dir = uniform(rng, 0.0, PI);
            let phase = uniform(rng, 0.0, 2.0 * PI);
            let amp = uniform(rng, 0.008, 0.02);
            (freq * libm::cosf(dir), freq * libm::sinf(dir), phase, amp)
        })
        .collect();

    let mut img = vec![0.0f32; size * size];
    let mut rho_map = vec![0.0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
            let rho = head.rho(fx, fy);
            rho_map[y * size + x] = rho;
            img[y * size + x] = if rho > 1.0 {
                0.02
            } else if rho > BRAIN_RHO {
                0.6
            } else {
                let tissue = 0.34 + 0.08 * smoothstep(0.75, 0.5, rho);
                let tex: f32 = waves
                    .iter()
                    .map(|&(kx, ky, ph, a)| a * libm::sinf(kx * fx + ky * fy + ph))
                    .sum();
                tissue + tex
            };
        }
    }

    // vessels: thin bright curves, combined by max so crossings do not stack
    let n_vessels = libm::roundf(profile.vessel_density * 8.0) as usize;
    let mut vessel = vec![0.0f32; size * size];
    for _ in 0..n_vessels {
        let p0 = point_in_head(&head, 0.85, rng);
        let p1 = point_in_head(&head, 0.85, rng);
        let pc = point_in_head(&head, 0.85, rng);
        let amp = uniform(rng, 0.08, 0.16);
        let width = uniform(rng, 0.4, 0.7);
        let len = libm::hypotf(p1.0 - p0.0, p1.1 - p0.1) + libm::hypotf(pc.0 - p0.0, pc.1 - p0.1);
        let steps = (len * 2.0) as usize + 2;
        for k in 0..=steps {
            let t = k as f32 / steps as f32;
            let a = (1.0 - t) * (1.0 - t);
            let b = 2.0 * (1.0 - t) * t;
            let c = t * t;
            let px = a * p0.0 + b * pc.0 + c * p1.0;
            let py = a * p0.1 + b * pc.1 + c * p1.1;
            stamp_max(&mut vessel, size, px, py, width, amp, &rho_map);
        }
    }

    let mut lesions = Vec::new();
    let mut lesion_layer = vec![0.0f32; size * size];
    if label == Label::Metastasis {
        let count = 1 + (rng.random::<u32>() % 3) as usize;
        let max_r = (s * 0.12).clamp(3.0, 10.0);
        for _ in 0..count {
            let radius = uniform(rng, 3.0, max_r);
            let amp = uniform(rng, 0.35, 0.5);
            let mut placed = None;
            for _ in 0..200 {
                let (x, y) = point_in_head(&head, LESION_RHO, rng);
                let cand = LesionBox { x, y, radius };
                if head.contains_box(&cand, LESION_RHO) {
                    placed = Some(cand);
                    break;
                }
            }
            let lb = placed.unwrap_or(LesionBox {
                x: head.cx,
                y: head.cy,
                radius: radius.min(head.semi_x * 0.3),
            });
            let sigma = lb.radius * 0.5;
            let reach = (lb.radius * 2.0) as isize + 1;
            let (cx, cy) = (lb.x, lb.y);
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (xi, yi) = (
                        libm::floorf(cx) as isize + dx,
                        libm::floorf(cy) as isize + dy,
                    );
                    if xi < 0 || yi < 0 || xi >= size as isize || yi >= size as isize {
                        continue;
                    }
                    let (fx, fy) = (xi as f32 + 0.5 - cx, yi as f32 + 0.5 - cy);
                    let v = amp * libm::expf(-(fx * fx + fy * fy) / (2.0 * sigma * sigma));
                    lesion_layer[yi as usize * size + xi as usize] += v;
                }
            }
            lesions.push(lb);
        }
    }

    for ((p, v), l) in img.iter_mut().zip(&vessel).zip(&lesion_layer) {
        *p += v + l;
    }

    // bias field: linear ramp in a random direction
    let dir = uniform(rng, 0.0, 2.0 * PI);
    let (gx, gy) = (libm::cosf(dir), libm::sinf(dir));
    for y in 0..size {
        for x in 0..size {
            let nx = (x as f32 + 0.5) / s * 2.0 - 1.0;
            let ny = (y as f32 + 0.5) / s * 2.0 - 1.0;
            img[y * size + x] *= 1.0 + profile.bias_field_amp * (gx * nx + gy * ny);
        }
    }
    for p in &mut img {
        *p = libm::powf(p.max(0.0), profile.gamma) * profile.intensity_scale;
    }
    if profile.blur_sigma >= 0.05 {
        img = gaussian_blur(&img, size, profile.blur_sigma);
    }
    for p in &mut img {
        let n: f32 = rng.sample(StandardNormal);
        *p += profile.noise_sigma * n;
    }
    for p in &mut img {
        *p = quantize(p.clamp(0.0, 1.0));
    }
    Rendered {
        pixels: img,
        lesions,
        head,
    }
}

/// Rounds to the nearest of the 256 levels `k / 255`.
pub fn quantize(v: f32) -> f32 {
    libm::roundf(v.clamp(0.0, 1.0) * 255.0) / 255.0
}

fn point_in_head(head: &HeadEllipse, limit: f32, rng: &mut StreamRng) -> (f32, f32) {
    loop {
        let x = head.cx + uniform(rng, -1.0, 1.0) * head.semi_x.max(head.semi_y);
        let y = head.cy + uniform(rng, -1.0, 1.0) * head.semi_x.max(head.semi_y);
        if head.rho(x, y) < limit {
            return (x, y);
        }
    }
}

fn stamp_max(layer: &mut [f32], size: usize, px: f32, py: f32, width: f32, amp: f32, rho: &[f32]) {
    let (x0, y0) = (libm::floorf(px) as isize, libm::floorf(py) as isize);
    for dy in -2..=2 {
        for dx in -2..=2 {
            let (xi, yi) = (x0 + dx, y0 + dy);
            if xi < 0 || yi < 0 || xi >= size as isize || yi >= size as isize {
                continue;
            }
            let idx = yi as usize * size + xi as usize;
            if rho[idx] > BRAIN_RHO {
                continue;
            }
            let (fx, fy) = (xi as f32 + 0.5 - px, yi as f32 + 0.5 - py);
            let v = amp * libm::expf(-(fx * fx + fy * fy) / (2.0 * width * width));
            if v > layer[idx] {
                layer[idx] = v;
            }
        }
    }
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(img: &[f32], size: usize, sigma: f32) -> Vec<f32> {
    let radius = libm::ceilf(3.0 * sigma) as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| libm::expf(-((i * i) as f32) / (2.0 * sigma * sigma)))
        .collect();
    let norm: f32 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let last = size as isize - 1;
    let mut tmp = vec![0.0f32; img.len()];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for (j, &k) in kernel.iter().enumerate() {
                let xi = (x as isize + j as isize - radius).clamp(0, last) as usize;
                acc += k * img[y * size + xi];
            }
            tmp[y * size + x] = acc;
        }
    }
    let mut out = vec![0.0f32; img.len()];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for (j, &k) in kernel.iter().enumerate() {
                let yi = (y as isize + j as isize - radius).clamp(0, last) as usize;
                acc += k * tmp[yi * size + x];
            }
            out[y * size + x] = acc;
        }
    }
    out
}

/// Strongest blob-like response inside the brain: a centre Gaussian minus a
/// surround Gaussian, maximized over pixels with `rho < LESION_RHO`.
pub fn lesion_evidence(image: &[f32], size: usize, head: &HeadEllipse) -> f32 {
    let centre = gaussian_blur(image, size, 1.5);
    let surround = gaussian_blur(image, size, 6.0);
    let mut best = f32::NEG_INFINITY;
    for y in 0..size {
        for x in 0..size {
            if head.rho(x as f32 + 0.5, y as f32 + 0.5) < LESION_RHO {
                let i = y * size + x;
                best = best.max(centre[i] - surround[i]);
            }
        }
    }
    best
}

/// Threshold on [`lesion_evidence`] that lesion-free renders stay under at
/// the default 128-pixel size. Smaller renders pack vessels and texture
/// more densely and need a higher limit.
pub const NORMAL_EVIDENCE_LIMIT: f32 = 0.125;

/// Statistics test satisfied by the normal renderer's output.
pub fn looks_normal(image: &[f32], size: usize, head: &HeadEllipse) -> bool {
    lesion_evidence(image, size, head) < NORMAL_EVIDENCE_LIMIT
}

/// Replaces every pixel within `1.5 × radius` of a lesion centre by the
/// median of a ring just outside it.
pub fn blank_lesions(image: &[f32], size: usize, lesions: &[LesionBox]) -> Vec<f32> {
    let mut out = image.to_vec();
    for l in lesions {
        let (inner, outer) = (l.radius * 1.5, l.radius * 1.5 + 3.0);
        let mut ring = Vec::new();
        let reach = outer as isize + 1;
        let (x0, y0) = (libm::floorf(l.x) as isize, libm::floorf(l.y) as isize);
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (xi, yi) = (x0 + dx, y0 + dy);
                if xi < 0 || yi < 0 || xi >= size as isize || yi >= size as isize {
                    continue;
                }
                let d = libm::hypotf(xi as f32 + 0.5 - l.x, yi as f32 + 0.5 - l.y);
                if d > inner && d <= outer {
                    ring.push(image[yi as usize * size + xi as usize]);
                }
            }
        }
        if ring.is_empty() {
            continue;
        }
        ring.sort_by(|a, b| a.total_cmp(b));
        let fill = ring[ring.len() / 2];
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (xi, yi) = (x0 + dx, y0 + dy);
                if xi < 0 || yi < 0 || xi >= size as isize || yi >= size as isize {
                    continue;
                }
                let d = libm::hypotf(xi as f32 + 0.5 - l.x, yi as f32 + 0.5 - l.y);
                if d <= inner {
                    out[yi as usize * size + xi as usize] = fill;
                }
            }
        }
    }
    out
}

/// Bilinear resize with pixel-centre alignment. Equal sizes copy exactly.
pub fn resize_bilinear(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    if sw == dw && sh == dh {
        return src.to_vec();
    }
    let mut out = vec![0.0f32; dw * dh];
    let (scale_x, scale_y) = (sw as f32 / dw as f32, sh as f32 / dh as f32);
    for y in 0..dh {
        let fy = ((y as f32 + 0.5) * scale_y - 0.5).clamp(0.0, (sh - 1) as f32);
        let y0 = libm::floorf(fy) as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f32;
        for x in 0..dw {
            let fx = ((x as f32 + 0.5) * scale_x - 0.5).clamp(0.0, (sw - 1) as f32);
            let x0 = libm::floorf(fx) as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f32;
            let top = src[y0 * sw + x0] * (1.0 - tx) + src[y0 * sw + x1] * tx;
            let bot = src[y1 * sw + x0] * (1.0 - tx) + src[y1 * sw + x1] * tx;
            out[y * dw + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Side length of the sanity-benchmark images.
pub const MICRO_SIZE: usize = 16;

/// Tiny linearly separable benchmark: 16×16 images whose mean intensity is
/// 0.25 (normal) or 0.75 (metastasis) plus Gaussian noise of 0.05.
/// Ten images per class in each split.
pub fn micro_dataset(seed: u64) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
    let make = |split: Split, split_key: u64| -> Vec<LabeledSample> {
        let mut out = Vec::with_capacity(20);
        for k in 0..20usize {
            let label = if k % 2 == 0 {
                Label::Normal
            } else {
                Label::Metastasis
            };
            let mean = if label == Label::Normal { 0.25 } else { 0.75 };
            let mut rng = stream_rng(seed, &[stream::DATA, 0x6d69_6372, split_key, k as u64]);
            let pixels: Vec<f32> = (0..MICRO_SIZE * MICRO_SIZE)
                .map(|_| {
                    let n: f32 = rng.sample(StandardNormal);
                    (mean + 0.05 * n).clamp(0.0, 1.0)
                })
                .collect();
            out.push(LabeledSample {
                id: format!("micro_{}_{:02}", split.token(), k),
                image: Tensor::new(vec![1, MICRO_SIZE, MICRO_SIZE], pixels).expect("micro image"),
                label,
                institution: String::from(HOME_TAG),
                split,
                lesions: Vec::new(),
                head: None,
            });
        }
        out
    };
    (make(Split::Train, 0), make(Split::Test, 1))
}

/// Mean pixel intensity over a set of samples (the default occlusion fill).
pub fn mean_intensity(samples: &[LabeledSample]) -> f32 {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for s in samples {
        for &v in s.image.data() {
            sum += v as f64;
        }
        n += s.image.len();
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64) as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Serial;

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            image_size: 64,
            master_seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up(22.2), 22);
        assert_eq!(round_half_up(49.8), 50);
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(0.0), 0);
    }

    #[test]
    fn default_outside_counts() {
        let spec = CorpusSpec::default();
        assert_eq!(spec.outside_train(), 22);
        assert_eq!(spec.outside_test(), 50);
        let even = CorpusSpec {
            allocation: OutsideAllocation::Even,
            ..CorpusSpec::default()
        };
        let c = even.outside_counts().unwrap();
        assert_eq!((c.train_normal, c.train_metastasis), (11, 11));
        assert_eq!((c.test_normal, c.test_metastasis), (25, 25));
    }

    #[test]
    fn corpus_structure() {
        let spec = small_spec();
        let corpus = generate_corpus(&spec, &Serial).unwrap();
        assert_eq!(corpus.samples.len(), 120);
        for split in [Split::Train, Split::Test] {
            let s = corpus.split(split);
            assert_eq!(s.len(), 60);
            assert_eq!(s.iter().filter(|x| x.label == Label::Normal).count(), 30);
            let outside = s.iter().filter(|x| x.institution != HOME_TAG).count();
            let expected = if split == Split::Train { 22 } else { 50 };
            assert_eq!(outside, expected);
        }
        for s in &corpus.samples {
            assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(s.lesions.is_empty(), s.label == Label::Normal);
            let head = s.head.unwrap();
            for l in &s.lesions {
                assert!((3.0..=10.0).contains(&l.radius));
                assert!(head.contains_box(l, 1.0));
            }
        }
        for inst in &corpus.institutions {
            assert!(inst.profile.is_valid());
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = generate_corpus(&small_spec(), &Serial).unwrap();
        let b = generate_corpus(&small_spec(), &Serial).unwrap();
        assert_eq!(a, b);
        let mut other = small_spec();
        other.master_seed = 10;
        assert_ne!(
            a.samples[0].image,
            generate_corpus(&other, &Serial).unwrap().samples[0].image
        );
    }

    #[test]
    fn infeasible_specs() {
        let mut spec = small_spec();
        spec.n_institutions = 121;
        assert!(generate_corpus(&spec, &Serial).is_err());
        let mut spec = small_spec();
        spec.n_institutions = 1;
        assert!(spec.validate().is_err());
        let mut spec = small_spec();
        spec.allocation = OutsideAllocation::ByClass(OutsideCounts {
            train_normal: 1,
            ..OutsideCounts::REFERRAL
        });
        assert!(spec.validate().is_err());
        let mut spec = small_spec();
        spec.n_test_normal = 29;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn micro_dataset_is_separable() {
        let (train, test) = micro_dataset(3);
        for set in [&train, &test] {
            assert_eq!(set.len(), 20);
            assert_eq!(set.iter().filter(|s| s.label == Label::Normal).count(), 10);
            for s in set.iter() {
                let m = s.image.data().iter().sum::<f32>() / s.image.len() as f32;
                let pred = if m > 0.5 {
                    Label::Metastasis
                } else {
                    Label::Normal
                };
                assert_eq!(pred, s.label);
            }
        }
        assert_eq!(micro_dataset(3), (train, test));
    }

    #[test]
    fn resize_identity_and_constant() {
        let src: Vec<f32> = (0..16).map(|i| i as f32).collect();
        assert_eq!(resize_bilinear(&src, 4, 4, 4, 4), src);
        let c = vec![0.3f32; 25];
        assert!(resize_bilinear(&c, 5, 5, 9, 7)
            .iter()
            .all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn lesion_box_overlap() {
        let l = LesionBox {
            x: 10.0,
            y: 10.0,
            radius: 3.0,
        };
        assert!(l.overlaps_rect(0.0, 0.0, 8.0, 8.0));
        assert!(!l.overlaps_rect(0.0, 0.0, 7.0, 7.0));
        assert!(l.overlaps_rect(9.0, 9.0, 1.0, 1.0));
    }
}
