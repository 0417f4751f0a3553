//! Synthetic single-object detection data, an on-disk dataset layout, and
//! light augmentation.
//!
//! On-disk layout of a dataset directory:
//!
//! ```text
//! <dir>/images/<id>.ppm   binary PPM (P6, maxval 255)
//! <dir>/boxes/<id>.txt    one line: x_min y_min x_max y_max (normalized)
//! ```
//!
//! Samples are enumerated from `boxes/` in file-name order.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{Anchor, NUM_ANCHORS};
use crate::scoring::BoundingBox;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    /// `[1, 3, H, W]`, values in `[0, 1]`.
    pub image: Tensor,
    /// Normalized ground-truth box.
    pub gt: BoundingBox,
}

pub type Dataset = Vec<Sample>;

/// Distribution of the object's area as a fraction of the image area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeDistribution {
    /// `ln(ratio)` uniform on `[ln(min), ln(max)]`.
    LogUniform { min_ratio: f64, max_ratio: f64 },
    Fixed { ratio: f64 },
}

impl Default for SizeDistribution {
    /// Skewed toward small objects: about 91% of boxes cover less than 9%
    /// of the image.
    fn default() -> Self {
        SizeDistribution::LogUniform {
            min_ratio: 0.005,
            max_ratio: 0.12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub count: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub size: SizeDistribution,
    /// Half-width of the uniform `ln(aspect)` range.
    #[serde(default = "default_aspect")]
    pub aspect_log_range: f64,
    /// Amplitude of per-pixel background noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_height() -> usize {
    160
}
fn default_width() -> usize {
    320
}
fn default_aspect() -> f64 {
    0.3
}
fn default_noise() -> f64 {
    0.08
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            count: 500,
            height: default_height(),
            width: default_width(),
            size: SizeDistribution::default(),
            aspect_log_range: default_aspect(),
            noise: default_noise(),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::InvalidConfig("image must be at least 2x2".into()));
        }
        let (lo, hi) = match self.size {
            SizeDistribution::LogUniform { min_ratio, max_ratio } => (min_ratio, max_ratio),
            SizeDistribution::Fixed { ratio } => (ratio, ratio),
        };
        if !(lo > 0.0) || lo > hi {
            return Err(Error::InvalidConfig(format!("bad size ratio range [{lo}, {hi}]")));
        }
        if hi * self.aspect_log_range.exp() > 1.0 || hi > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "objects of ratio {hi} with aspect range {} can exceed the image",
                self.aspect_log_range
            )));
        }
        if !(0.0..=0.5).contains(&self.noise) || self.aspect_log_range < 0.0 {
            return Err(Error::InvalidConfig("noise must be in [0, 0.5], aspect range >= 0".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; mixes a seed and an index into a per-item seed.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn quantize8(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Sample `index` of `spec` with its object mask (row-major `H*W`).
pub fn generate_sample_with_mask(spec: &DatasetSpec, index: usize) -> Result<(Sample, Vec<bool>)> {
    spec.validate()?;
    let (hh, ww) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, index as u64));

    let ratio = match spec.size {
        SizeDistribution::LogUniform { min_ratio, max_ratio } => {
            (rng.random_range(min_ratio.ln()..=max_ratio.ln())).exp()
        }
        SizeDistribution::Fixed { ratio } => ratio,
    };
    let aspect = if spec.aspect_log_range > 0.0 {
        rng.random_range(-spec.aspect_log_range..=spec.aspect_log_range).exp()
    } else {
        1.0
    };
    let bw = ((ratio.sqrt() * aspect * ww as f64).round() as usize).max(1);
    let bh = ((ratio.sqrt() / aspect * hh as f64).round() as usize).max(1);
    if bw > ww || bh > hh {
        return Err(Error::InvalidConfig(format!(
            "object {bw}x{bh} larger than image {ww}x{hh}"
        )));
    }
    let x0 = rng.random_range(0..=ww - bw);
    let y0 = rng.random_range(0..=hh - bh);
    let ellipse = rng.random_bool(0.5);

    let mut mask = vec![false; hh * ww];
    let (cx, cy) = (x0 as f64 + bw as f64 / 2.0, y0 as f64 + bh as f64 / 2.0);
    let (rx, ry) = (bw as f64 / 2.0, bh as f64 / 2.0);
    for y in y0..y0 + bh {
        for x in x0..x0 + bw {
            let inside = if ellipse {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            } else {
                true
            };
            mask[y * ww + x] = inside;
        }
    }
    // Tight extent of the rendered pixels; tiny ellipses may lose their rim.
    let (mut xmin, mut ymin, mut xmax, mut ymax) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..hh {
        for x in 0..ww {
            if mask[y * ww + x] {
                xmin = xmin.min(x);
                ymin = ymin.min(y);
                xmax = xmax.max(x + 1);
                ymax = ymax.max(y + 1);
            }
        }
    }
    if xmin == usize::MAX {
        mask[y0 * ww + x0] = true;
        (xmin, ymin, xmax, ymax) = (x0, y0, x0 + 1, y0 + 1);
    }

    // Background: tinted gray with a low-frequency ripple and pixel noise.
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.5));
    let (fx, fy, phase) = (
        rng.random_range(0.01..0.06),
        rng.random_range(0.01..0.06),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    // Object: saturated color with one dominant channel.
    let dominant = rng.random_range(0..3);
    let color: [f64; 3] = std::array::from_fn(|c| {
        if c == dominant {
            rng.random_range(0.85..1.0)
        } else {
            rng.random_range(0.0..0.25)
        }
    });

    let mut image = Tensor::zeros([1, 3, hh, ww]);
    for y in 0..hh {
        for x in 0..ww {
            let ripple = 0.08 * ((x as f64 * fx + y as f64 * fy) * std::f64::consts::TAU + phase).sin();
            let obj = mask[y * ww + x];
            for (c, (&b, &o)) in base.iter().zip(&color).enumerate() {
                let n = spec.noise * rng.random_range(-1.0..=1.0);
                let v = if obj { o + 0.3 * n } else { b + ripple + n };
                image.set(0, c, y, x, quantize8(v));
            }
        }
    }
    let gt = BoundingBox::new(
        xmin as f64 / ww as f64,
        ymin as f64 / hh as f64,
        xmax as f64 / ww as f64,
        ymax as f64 / hh as f64,
    )?;
    Ok((Sample { id: index, image, gt }, mask))
}

pub fn generate_sample(spec: &DatasetSpec, index: usize) -> Result<Sample> {
    generate_sample_with_mask(spec, index).map(|(s, _)| s)
}

/// Generates `spec.count` samples. Each sample depends only on
/// `(spec, index)`, so the result does not depend on evaluation order.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    use rayon::prelude::*;
    (0..spec.count).into_par_iter().map(|i| generate_sample(spec, i)).collect()
}

/// Deterministic hash split into `(train, validation)`.
pub fn split(data: &[Sample], val_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for s in data {
        let u = (mix_seed(seed ^ 0x5151_5151, s.id as u64) >> 11) as f64 / (1u64 << 53) as f64;
        if u < val_fraction {
            val.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    (train, val)
}

fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = (image.height(), image.width());
    let mut buf = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                buf.push((image.at(0, c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        reason: reason.to_string(),
    };
    // Header: magic, width, height, maxval separated by whitespace.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PPM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad("expected binary PPM (P6) with maxval 255"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let body = bytes.get(pos..pos + w * h * 3).ok_or_else(|| bad("truncated pixel data"))?;
    let mut t = Tensor::zeros([1, 3, h.max(1), w.max(1)]);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                t.set(0, c, y, x, body[(y * w + x) * 3 + c] as f64 / 255.0);
            }
        }
    }
    Ok(t)
}

fn parse_box(path: &Path, text: &str) -> Result<BoundingBox> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (n, line) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        reason: "empty box file".into(),
    })?;
    let err = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        line: n + 1,
        reason,
    };
    let vals = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| err(format!("not a number: {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != 4 {
        return Err(err(format!("expected 4 values, found {}", vals.len())));
    }
    let b = BoundingBox {
        x_min: vals[0],
        y_min: vals[1],
        x_max: vals[2],
        y_max: vals[3],
    };
    if b.validate().is_err() || b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > 1.0 || b.y_max > 1.0 {
        return Err(err(format!("box {vals:?} is not a normalized box")));
    }
    if let Some((n, _)) = lines.next() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            reason: "exactly one box per image is expected".into(),
        });
    }
    Ok(b)
}

pub fn save_dataset(data: &[Sample], dir: &Path) -> Result<()> {
    let images = dir.join("images");
    let boxes = dir.join("boxes");
    for d in [&images, &boxes] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for s in data {
        write_ppm(&images.join(format!("{:06}.ppm", s.id)), &s.image)?;
        let path = boxes.join(format!("{:06}.txt", s.id));
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{} {} {} {}", s.gt.x_min, s.gt.y_min, s.gt.x_max, s.gt.y_max)
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Loads a dataset directory. A directory without a `boxes/` folder (or an
/// empty one) yields an empty dataset.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let boxes = dir.join("boxes");
    if !dir.exists() {
        return Err(Error::io(dir, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    if !boxes.exists() {
        return Ok(Vec::new());
    }
    let mut entries: Vec<_> = fs::read_dir(&boxes)
        .map_err(|e| Error::io(&boxes, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    entries.sort();
    let mut out = Vec::with_capacity(entries.len());
    for (i, path) in entries.iter().enumerate() {
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let gt = parse_box(path, &text)?;
        let image = read_ppm(&dir.join("images").join(format!("{stem}.ppm")))?;
        let id = stem.parse().unwrap_or(i);
        out.push(Sample { id, image, gt });
    }
    Ok(out)
}

/// Light augmentation applied per sample during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Mirror horizontally with probability 0.5.
    #[serde(default)]
    pub flip: bool,
    /// Photometric distortion: brightness offset drawn from `[-d, d]`.
    #[serde(default)]
    pub brightness: f64,
    /// Contrast scale drawn from `[1 - c, 1 + c]`.
    #[serde(default)]
    pub contrast: f64,
    /// Random translation of up to this many pixels; objects stay in frame.
    #[serde(default)]
    pub jitter_px: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            brightness: 0.05,
            contrast: 0.1,
            jitter_px: 0,
        }
    }
}

pub fn augment(s: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    let [_, nc, h, w] = s.image.shape();
    let mut gt = s.gt;
    let flip = cfg.flip && rng.random_bool(0.5);
    let (mut dx, mut dy) = (0isize, 0isize);
    if cfg.jitter_px > 0 {
        let j = cfg.jitter_px as isize;
        let px = |v: f64, n: usize| (v * n as f64).round() as isize;
        // keep the whole object inside the frame
        let lo_x = (-j).max(-px(gt.x_min, w));
        let hi_x = j.min(w as isize - px(gt.x_max, w));
        let lo_y = (-j).max(-px(gt.y_min, h));
        let hi_y = j.min(h as isize - px(gt.y_max, h));
        if lo_x <= hi_x {
            dx = rng.random_range(lo_x as i64..=hi_x as i64) as isize;
        }
        if lo_y <= hi_y {
            dy = rng.random_range(lo_y as i64..=hi_y as i64) as isize;
        }
    }
    let bright = if cfg.brightness > 0.0 { rng.random_range(-cfg.brightness..=cfg.brightness) } else { 0.0 };
    let contrast = if cfg.contrast > 0.0 { rng.random_range(1.0 - cfg.contrast..=1.0 + cfg.contrast) } else { 1.0 };

    let image = Tensor::from_fn([1, nc, h, w], |_, c, y, x| {
        let sx = x as isize - dx;
        let sy = y as isize - dy;
        if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
            return 0.0;
        }
        let sx = if flip { w - 1 - sx as usize } else { sx as usize };
        let v = s.image.at(0, c, sy as usize, sx);
        if contrast == 1.0 && bright == 0.0 {
            v
        } else {
            ((v - 0.5) * contrast + 0.5 + bright).clamp(0.0, 1.0)
        }
    });
    let (ox, oy) = (dx as f64 / w as f64, dy as f64 / h as f64);
    gt = BoundingBox {
        x_min: gt.x_min + ox,
        x_max: gt.x_max + ox,
        y_min: gt.y_min + oy,
        y_max: gt.y_max + oy,
    };
    if flip {
        gt = BoundingBox {
            x_min: 1.0 - gt.x_max,
            x_max: 1.0 - gt.x_min,
            ..gt
        };
    }
    Sample { id: s.id, image, gt }
}

/// Two anchor priors from k-means over box shapes with `1 - IoU` distance.
/// Deterministic: centroids start at the 25th and 75th area percentiles.
pub fn kmeans_anchors(boxes: &[BoundingBox], iterations: usize) -> Result<[Anchor; NUM_ANCHORS]> {
    if boxes.is_empty() {
        return Err(Error::InvalidArgument("k-means needs at least one box".into()));
    }
    let mut shapes: Vec<(f64, f64)> = boxes.iter().map(|b| (b.width().max(1e-6), b.height().max(1e-6))).collect();
    shapes.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
    let n = shapes.len();
    let mut centroids = [shapes[n / 4], shapes[(3 * n) / 4]];
    let shape_iou = |a: (f64, f64), b: (f64, f64)| {
        let inter = a.0.min(b.0) * a.1.min(b.1);
        inter / (a.0 * a.1 + b.0 * b.1 - inter)
    };
    for _ in 0..iterations {
        let mut sums = [(0.0, 0.0, 0usize); NUM_ANCHORS];
        for &s in &shapes {
            let k = if shape_iou(s, centroids[1]) > shape_iou(s, centroids[0]) { 1 } else { 0 };
            sums[k].0 += s.0;
            sums[k].1 += s.1;
            sums[k].2 += 1;
        }
        let mut next = centroids;
        for k in 0..NUM_ANCHORS {
            if sums[k].2 > 0 {
                next[k] = (sums[k].0 / sums[k].2 as f64, sums[k].1 / sums[k].2 as f64);
            }
        }
        if next == centroids {
            break;
        }
        centroids = next;
    }
    centroids.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
    Ok(centroids.map(|(w, h)| Anchor { w, h }))
}
