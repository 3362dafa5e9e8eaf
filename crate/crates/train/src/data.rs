//! Synthetic shapes segmentation data.
//!
//! Every sample is a pure function of `(seed, id)`: a smooth two-colour
//! background gradient, one to four rotated shapes painted in order, and
//! additive Gaussian noise. Class `k ≥ 1` is drawn as shape kind
//! `(k − 1) mod 4`; its colour hue is jittered around a class centre so the
//! hue ranges of neighbouring classes overlap.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use warpseg_core::container::{read_bundle, write_bundle, RawArray};
use warpseg_core::pnm::RgbImage;
use warpseg_core::Tensor;

use crate::error::{Result, TrainError};
use crate::losses::IGNORE_LABEL;
use crate::rngstate::RngState;

const NOISE_SIGMA: f64 = 0.04;
const HUE_JITTER_DEG: f64 = 70.0;
const SPLIT_STREAM: u64 = 0x53504c;
const AUGMENT_STREAM: u64 = 0x415547;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Triangle,
    Diamond,
}

impl ShapeKind {
    pub fn for_class(class: u8) -> ShapeKind {
        match (class as usize + 3) % 4 {
            0 => ShapeKind::Ellipse,
            1 => ShapeKind::Rectangle,
            2 => ShapeKind::Triangle,
            _ => ShapeKind::Diamond,
        }
    }
}

/// One painted shape, in pixel units (`x` along the width, pixel centres at
/// half-integers).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSpec {
    pub class: u8,
    pub kind: ShapeKind,
    pub center: [f64; 2],
    /// Half extents along the shape's own axes.
    pub half: [f64; 2],
    /// Rotation in radians, counter-clockwise from the x axis.
    pub angle: f64,
    pub color: [f64; 3],
}

impl ShapeSpec {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let (s, c) = self.angle.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.local(x, y);
        let [a, b] = self.half;
        match self.kind {
            ShapeKind::Ellipse => (u / a).powi(2) + (v / b).powi(2) <= 1.0,
            ShapeKind::Rectangle => u.abs() <= a && v.abs() <= b,
            ShapeKind::Diamond => u.abs() / a + v.abs() / b <= 1.0,
            ShapeKind::Triangle => {
                // apex (0, −b), base corners (±a, b)
                let left = 2.0 * b * u + a * v + a * b >= 0.0;
                let right = -2.0 * b * u + a * v + a * b >= 0.0;
                left && right && v <= b
            }
        }
    }

    /// Corners in image coordinates (empty for ellipses).
    pub fn vertices(&self) -> Vec<[f64; 2]> {
        let [a, b] = self.half;
        let local: Vec<[f64; 2]> = match self.kind {
            ShapeKind::Ellipse => return Vec::new(),
            ShapeKind::Rectangle => vec![[-a, -b], [a, -b], [a, b], [-a, b]],
            ShapeKind::Diamond => vec![[a, 0.0], [0.0, b], [-a, 0.0], [0.0, -b]],
            ShapeKind::Triangle => vec![[0.0, -b], [a, b], [-a, b]],
        };
        let (s, c) = self.angle.sin_cos();
        local
            .into_iter()
            .map(|[u, v]| [self.center[0] + c * u - s * v, self.center[1] + s * u + c * v])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub id: u64,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    /// Row-major `H × W` class ids.
    pub label: Vec<u8>,
    pub shapes: Vec<ShapeSpec>,
}

impl SegSample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn check_geometry(height: usize, width: usize, classes: usize) -> Result<()> {
    if classes < 2 || classes > 254 {
        return Err(TrainError::Data(format!("class count {classes} outside 2..=254")));
    }
    if height == 0 || width == 0 || height % 16 != 0 || width % 16 != 0 {
        return Err(TrainError::Data(format!(
            "image size {height}×{width} must be a positive multiple of 16"
        )));
    }
    Ok(())
}

fn random_shape(rng: &mut ChaCha8Rng, height: usize, width: usize, classes: usize) -> ShapeSpec {
    let class = rng.random_range(1..classes) as u8;
    let side = height.min(width) as f64;
    let hue_center = 360.0 * (class - 1) as f64 / (classes - 1) as f64;
    let hue = hue_center + rng.random_range(-HUE_JITTER_DEG..HUE_JITTER_DEG);
    let color = hsv_to_rgb(hue, rng.random_range(0.35..0.9), rng.random_range(0.45..0.95));
    ShapeSpec {
        class,
        kind: ShapeKind::for_class(class),
        center: [
            rng.random_range(0.15..0.85) * width as f64,
            rng.random_range(0.15..0.85) * height as f64,
        ],
        half: [rng.random_range(0.08..0.22) * side, rng.random_range(0.08..0.22) * side],
        angle: rng.random_range(0.0..std::f64::consts::PI),
        color,
    }
}

/// Renders sample `id` of the dataset generated from `seed`.
pub fn render_sample(seed: u64, id: u64, height: usize, width: usize, classes: usize) -> Result<SegSample> {
    check_geometry(height, width, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    let plane = height * width;

    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (st, ct) = theta.sin_cos();

    let (shapes, label) = loop {
        let count = rng.random_range(1..=4usize);
        let shapes: Vec<ShapeSpec> = (0..count)
            .map(|_| random_shape(&mut rng, height, width, classes))
            .collect();
        let mut label = vec![0u8; plane];
        for i in 0..height {
            for j in 0..width {
                let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
                for s in &shapes {
                    if s.contains(x, y) {
                        label[i * width + j] = s.class;
                    }
                }
            }
        }
        if label.iter().any(|&l| l != 0) {
            break (shapes, label);
        }
    };

    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut data = vec![0f32; 3 * plane];
    for i in 0..height {
        for j in 0..width {
            let p = i * width + j;
            let x = (j as f64 + 0.5) / width as f64 - 0.5;
            let y = (i as f64 + 0.5) / height as f64 - 0.5;
            let t = (x * ct + y * st + 0.5).clamp(0.0, 1.0);
            let mut rgb: [f64; 3] = std::array::from_fn(|c| c0[c] + (c1[c] - c0[c]) * t);
            let (px, py) = (j as f64 + 0.5, i as f64 + 0.5);
            for s in &shapes {
                if s.contains(px, py) {
                    rgb = s.color;
                }
            }
            for c in 0..3 {
                let v = rgb[c] + noise.sample(&mut rng);
                data[c * plane + p] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(SegSample {
        id,
        image: Tensor::new(&[3, height, width], data)?,
        label,
        shapes,
    })
}

/// Renders samples `ids` in parallel; output order follows `ids`.
pub fn render_range(
    seed: u64,
    ids: std::ops::Range<u64>,
    height: usize,
    width: usize,
    classes: usize,
) -> Result<Vec<SegSample>> {
    ids.into_par_iter()
        .map(|id| render_sample(seed, id, height, width, classes))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegDataset {
    pub samples: Vec<SegSample>,
    pub classes: usize,
    pub seed: u64,
    pub labeled: Vec<u64>,
    pub unlabeled: Vec<u64>,
}

impl SegDataset {
    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn get(&self, id: u64) -> Option<&SegSample> {
        self.samples
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|i| &self.samples[i])
    }

    /// Replaces the labeled/unlabeled partition.
    pub fn split(&mut self, labeled_fraction: f64, seed: u64) -> Result<()> {
        let (l, u) = split_semi(&self.ids(), labeled_fraction, seed)?;
        self.labeled = l;
        self.unlabeled = u;
        Ok(())
    }

    /// Per-class pixel frequencies.
    pub fn class_histogram(&self) -> Vec<f64> {
        let mut counts = vec![0u64; self.classes];
        let mut total = 0u64;
        for s in &self.samples {
            for &l in &s.label {
                counts[l as usize] += 1;
                total += 1;
            }
        }
        counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
    }
}

/// `count` samples with ids `0..count`, all labeled.
pub fn generate_shapes(seed: u64, count: usize, height: usize, width: usize, classes: usize) -> Result<SegDataset> {
    if count == 0 {
        return Err(TrainError::Data("sample count must be positive".into()));
    }
    let samples = render_range(seed, 0..count as u64, height, width, classes)?;
    let labeled = samples.iter().map(|s| s.id).collect();
    Ok(SegDataset {
        samples,
        classes,
        seed,
        labeled,
        unlabeled: Vec::new(),
    })
}

/// Seeded shuffle, then the first `round(fraction · n)` ids are labeled.
/// Both halves are returned in ascending id order.
pub fn split_semi(ids: &[u64], labeled_fraction: f64, seed: u64) -> Result<(Vec<u64>, Vec<u64>)> {
    if !(0.0..=1.0).contains(&labeled_fraction) {
        return Err(TrainError::Data(format!(
            "labeled fraction {labeled_fraction} outside [0, 1]"
        )));
    }
    let mut order = ids.to_vec();
    order.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    order.shuffle(&mut rng);
    let k = (labeled_fraction * ids.len() as f64).round() as usize;
    let mut labeled = order[..k].to_vec();
    let mut unlabeled = order[k..].to_vec();
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok((labeled, unlabeled))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augment {
    pub flip: bool,
    /// Random crop/pad placement; centred when off.
    pub crop: bool,
    pub scale: bool,
}

impl Augment {
    pub const NONE: Augment = Augment {
        flip: false,
        crop: false,
        scale: false,
    };
    pub const ALL: Augment = Augment {
        flip: true,
        crop: true,
        scale: true,
    };
}

/// A resampling of one sample: scale factor, placement of the scaled image
/// in the output frame, and an optional horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub scaled: [usize; 2],
    /// Row and column of the scaled image's top-left pixel in the output.
    pub offset: [i64; 2],
    pub flip: bool,
}

impl AugmentParams {
    pub fn identity(height: usize, width: usize) -> Self {
        AugmentParams {
            scaled: [height, width],
            offset: [0, 0],
            flip: false,
        }
    }

    pub fn draw<R: Rng + ?Sized>(aug: Augment, height: usize, width: usize, rng: &mut R) -> Self {
        let s = if aug.scale { rng.random_range(0.5..=1.5) } else { 1.0 };
        let scaled = [
            ((height as f64 * s).round() as usize).max(1),
            ((width as f64 * s).round() as usize).max(1),
        ];
        let mut offset = [0i64; 2];
        for (k, (&out, &sc)) in [height, width].iter().zip(&scaled).enumerate() {
            let slack = out as i64 - sc as i64;
            let (lo, hi) = (slack.min(0), slack.max(0));
            offset[k] = if aug.crop && lo < hi {
                rng.random_range(lo..=hi)
            } else {
                slack / 2
            };
        }
        let flip = aug.flip && rng.random_bool(0.5);
        AugmentParams { scaled, offset, flip }
    }

    /// Position in the scaled frame feeding output pixel `(i, j)`, or `None`
    /// where the output is padding.
    fn scaled_position(&self, i: usize, j: usize, width: usize) -> Option<(usize, usize)> {
        let j = if self.flip { width - 1 - j } else { j };
        let r = i as i64 - self.offset[0];
        let c = j as i64 - self.offset[1];
        if r < 0 || c < 0 || r >= self.scaled[0] as i64 || c >= self.scaled[1] as i64 {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }

    /// Source pixel whose label output pixel `(i, j)` takes (nearest
    /// neighbour), or `None` for padding.
    pub fn label_source(&self, i: usize, j: usize, height: usize, width: usize) -> Option<(usize, usize)> {
        let (r, c) = self.scaled_position(i, j, width)?;
        let y = ((r as f64 + 0.5) * height as f64 / self.scaled[0] as f64).floor() as usize;
        let x = ((c as f64 + 0.5) * width as f64 / self.scaled[1] as f64).floor() as usize;
        Some((y.min(height - 1), x.min(width - 1)))
    }

    /// Applies the resampling; images are bilinear (padding 0), labels are
    /// nearest (padding [`IGNORE_LABEL`]).
    pub fn apply(&self, image: &Tensor<f32>, label: &[u8]) -> (Tensor<f32>, Vec<u8>) {
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let plane = h * w;
        let src = image.data();
        let mut out = vec![0f32; 3 * plane];
        let mut out_label = vec![IGNORE_LABEL; plane];
        let (sy, sx) = (h as f64 / self.scaled[0] as f64, w as f64 / self.scaled[1] as f64);
        for i in 0..h {
            for j in 0..w {
                let Some((r, c)) = self.scaled_position(i, j, w) else {
                    continue;
                };
                let (ly, lx) = self.label_source(i, j, h, w).expect("inside scaled frame");
                out_label[i * w + j] = label[ly * w + lx];
                let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
                let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (fy, fx) = (y - y0 as f64, x - x0 as f64);
                for ch in 0..3 {
                    let at = |yy: usize, xx: usize| src[ch * plane + yy * w + xx] as f64;
                    let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                        + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
                    out[ch * plane + i * w + j] = v as f32;
                }
            }
        }
        (Tensor::new(&[3, h, w], out).expect("shape preserved"), out_label)
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<u64>,
    /// `[N, 3, H, W]`.
    pub images: Tensor<f32>,
    /// `N × H × W`, may contain [`IGNORE_LABEL`] where augmentation padded.
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn assemble(samples: &[(u64, Tensor<f32>, Vec<u8>)]) -> Result<Batch> {
        let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.1).collect();
        let mut stacked = Vec::new();
        for img in &images {
            stacked.extend_from_slice(img.data());
        }
        let [c, h, w] = match images.first() {
            Some(t) => [t.shape()[0], t.shape()[1], t.shape()[2]],
            None => return Err(TrainError::Data("empty batch".into())),
        };
        Ok(Batch {
            ids: samples.iter().map(|s| s.0).collect(),
            images: Tensor::new(&[samples.len(), c, h, w], stacked)?,
            labels: samples.iter().flat_map(|s| s.2.iter().copied()).collect(),
        })
    }
}

/// Endless epoch-shuffled stream over a fixed id set. Each epoch visits every
/// id once; the last batch of an epoch may be short.
#[derive(Debug, Clone)]
pub struct BatchStream {
    ids: Vec<u64>,
    batch: usize,
    augment: Augment,
    rng: ChaCha8Rng,
    order: Vec<u64>,
    cursor: usize,
    epoch: u64,
}

impl BatchStream {
    pub fn new(ids: &[u64], batch: usize, seed: u64, augment: Augment) -> Result<Self> {
        if batch == 0 || batch > ids.len() {
            return Err(TrainError::Data(format!(
                "batch size {batch} invalid for a population of {}",
                ids.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(AUGMENT_STREAM);
        let mut stream = BatchStream {
            ids: ids.to_vec(),
            batch,
            augment,
            rng,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        };
        stream.reshuffle();
        Ok(stream)
    }

    fn reshuffle(&mut self) {
        self.order = self.ids.clone();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Ids of the next batch, advancing the stream.
    pub fn next_ids(&mut self) -> Vec<u64> {
        if self.cursor >= self.order.len() {
            self.reshuffle();
            self.epoch += 1;
        }
        let end = (self.cursor + self.batch).min(self.order.len());
        let out = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }

    /// Next batch with augmentation applied.
    pub fn next_batch(&mut self, data: &SegDataset) -> Result<Batch> {
        let ids = self.next_ids();
        let mut parts = Vec::with_capacity(ids.len());
        for id in ids {
            let s = data
                .get(id)
                .ok_or_else(|| TrainError::Data(format!("unknown sample id {id}")))?;
            let params = AugmentParams::draw(self.augment, s.height(), s.width(), &mut self.rng);
            let (img, lab) = params.apply(&s.image, &s.label);
            parts.push((id, img, lab));
        }
        Batch::assemble(&parts)
    }

    /// Order, cursor, epoch and generator position, for checkpoints.
    pub fn state(&self) -> (Vec<u64>, Vec<u64>) {
        let mut head = vec![self.cursor as u64, self.epoch];
        head.extend(RngState::capture(&self.rng).to_words());
        (self.order.clone(), head)
    }

    pub fn restore(&mut self, order: Vec<u64>, head: &[u64]) -> Result<()> {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        let mut ids = self.ids.clone();
        ids.sort_unstable();
        if sorted != ids || head.len() < 2 {
            return Err(TrainError::Manifest(
                "batch stream state does not match its id set".into(),
            ));
        }
        self.order = order;
        self.cursor = head[0] as usize;
        self.epoch = head[1];
        self.rng = RngState::from_words(&head[2..])?.restore();
        Ok(())
    }
}

const MANIFEST_NAME: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "# warpseg synthetic shapes dataset v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataSpec {
    pub seed: u64,
    pub train: usize,
    pub eval: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            seed: 7,
            train: 800,
            eval: 200,
            height: 64,
            width: 64,
            classes: 4,
        }
    }
}

impl DataSpec {
    /// Train split is ids `0..train`, eval split the next `eval` ids.
    pub fn generate(&self) -> Result<(SegDataset, SegDataset)> {
        if self.train == 0 || self.eval == 0 {
            return Err(TrainError::Data("train and eval counts must be positive".into()));
        }
        let (t, e) = (self.train as u64, self.eval as u64);
        let build = |samples: Vec<SegSample>| SegDataset {
            labeled: samples.iter().map(|s| s.id).collect(),
            samples,
            classes: self.classes,
            seed: self.seed,
            unlabeled: Vec::new(),
        };
        let train = render_range(self.seed, 0..t, self.height, self.width, self.classes)?;
        let eval = render_range(self.seed, t..t + e, self.height, self.width, self.classes)?;
        Ok((build(train), build(eval)))
    }
}

fn sample_file(id: u64) -> String {
    format!("samples/{id:06}.ndb")
}

fn encode_sample(s: &SegSample) -> Vec<(String, RawArray)> {
    let (h, w) = (s.height(), s.width());
    vec![
        ("image".into(), RawArray::from_tensor(&s.image)),
        ("label".into(), RawArray::from_u8(&[h, w], &s.label)),
    ]
}

/// Writes `manifest.txt` plus one container per sample. The manifest lists
/// `id seed split sha256` per sample, so equal manifests mean equal data.
pub fn write_dataset(dir: &Path, spec: &DataSpec, train: &SegDataset, eval: &SegDataset) -> Result<()> {
    fs::create_dir_all(dir.join("samples"))?;
    let mut manifest = format!(
        "{MANIFEST_HEADER}\nseed {}\nheight {}\nwidth {}\nclasses {}\ntrain {}\neval {}\n",
        spec.seed, spec.height, spec.width, spec.classes, spec.train, spec.eval
    );
    for (split, set) in [("train", train), ("eval", eval)] {
        for s in &set.samples {
            let rel = sample_file(s.id);
            let path = dir.join(&rel);
            write_bundle(&path, &encode_sample(s))?;
            let digest = Sha256::digest(fs::read(&path)?);
            manifest.push_str(&format!("{} {} {split} {}\n", s.id, spec.seed, hex(&digest)));
        }
    }
    fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads a dataset written by [`write_dataset`], checking every digest.
pub fn read_dataset(dir: &Path) -> Result<(DataSpec, SegDataset, SegDataset)> {
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))
        .map_err(|e| TrainError::Data(format!("cannot read {}: {e}", dir.join(MANIFEST_NAME).display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(TrainError::Data("unrecognised dataset manifest header".into()));
    }
    let mut fields = BTreeMap::new();
    for _ in 0..6 {
        let line = lines.next().unwrap_or_default();
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| TrainError::Data(format!("bad manifest line {line:?}")))?;
        let v: u64 = v
            .parse()
            .map_err(|_| TrainError::Data(format!("bad manifest value {line:?}")))?;
        fields.insert(k.to_string(), v);
    }
    let field = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| TrainError::Data(format!("manifest lacks {k}")))
    };
    let spec = DataSpec {
        seed: field("seed")?,
        height: field("height")? as usize,
        width: field("width")? as usize,
        classes: field("classes")? as usize,
        train: field("train")? as usize,
        eval: field("eval")? as usize,
    };
    check_geometry(spec.height, spec.width, spec.classes)?;
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [id, _, split, digest] = parts[..] else {
            return Err(TrainError::Data(format!("bad manifest entry {line:?}")));
        };
        let id: u64 = id
            .parse()
            .map_err(|_| TrainError::Data(format!("bad sample id in {line:?}")))?;
        let path = dir.join(sample_file(id));
        let bytes = fs::read(&path).map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))?;
        if hex(&Sha256::digest(&bytes)) != digest {
            return Err(TrainError::Data(format!("digest mismatch for sample {id}")));
        }
        let arrays: BTreeMap<String, RawArray> = read_bundle(&path)?.into_iter().collect();
        let get = |k: &str| {
            arrays
                .get(k)
                .ok_or_else(|| TrainError::Data(format!("sample {id} lacks {k}")))
        };
        let image: Tensor<f32> = get("image")?.to_tensor()?;
        image.expect_shape(&[3, spec.height, spec.width], "read_dataset")?;
        let label = get("label")?.to_u8()?;
        if label.len() != spec.height * spec.width || label.iter().any(|&l| l as usize >= spec.classes) {
            return Err(TrainError::Data(format!("sample {id} has an invalid label map")));
        }
        let sample = SegSample {
            id,
            image,
            label,
            shapes: Vec::new(),
        };
        match split {
            "train" => train.push(sample),
            "eval" => eval.push(sample),
            other => return Err(TrainError::Data(format!("unknown split {other:?}"))),
        }
    }
    if train.len() != spec.train || eval.len() != spec.eval {
        return Err(TrainError::Data("manifest counts disagree with its entries".into()));
    }
    let build = |mut samples: Vec<SegSample>| {
        samples.sort_by_key(|s| s.id);
        SegDataset {
            labeled: samples.iter().map(|s| s.id).collect(),
            samples,
            classes: spec.classes,
            seed: spec.seed,
            unlabeled: Vec::new(),
        }
    };
    Ok((spec, build(train), build(eval)))
}

/// Fixed palette for label maps.
pub fn class_color(class: u8) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [0, 0, 0],
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [255, 225, 25],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
    ];
    if class == IGNORE_LABEL {
        [128, 128, 128]
    } else {
        PALETTE[class as usize % PALETTE.len()]
    }
}

pub fn image_to_rgb(image: &Tensor<f32>) -> RgbImage {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let planar: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    RgbImage::from_planar(w, h, &planar)
}

pub fn label_to_rgb(label: &[u8], height: usize, width: usize) -> RgbImage {
    let mut img = RgbImage::new(width, height);
    for i in 0..height {
        for j in 0..width {
            img.put(j, i, class_color(label[i * width + j]));
        }
    }
    img
}

/// Places images side by side.
pub fn hstack(images: &[RgbImage]) -> RgbImage {
    let height = images.iter().map(|i| i.height).max().unwrap_or(0);
    let width = images.iter().map(|i| i.width).sum();
    let mut out = RgbImage::new(width, height);
    let mut x0 = 0;
    for img in images {
        for y in 0..img.height {
            for x in 0..img.width {
                out.put(x0 + x, y, img.get(x, y));
            }
        }
        x0 += img.width;
    }
    out
}

/// Writes `image | label` strips for the first `limit` samples.
pub fn export_ppm(dir: &Path, data: &SegDataset, limit: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in data.samples.iter().take(limit) {
        let strip = hstack(&[image_to_rgb(&s.image), label_to_rgb(&s.label, s.height(), s.width())]);
        strip.save(&dir.join(format!("{:06}.ppm", s.id)))?;
    }
    Ok(())
}
