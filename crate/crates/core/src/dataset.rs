//! Image corpus ingestion: directory scan, RGB filtering, square resize and
//! seeded batch sampling.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageDecoder, ImageReader};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_RESOLUTION: usize = 64;
pub const MIN_RESOLUTION: usize = 16;
pub const MAX_RESOLUTION: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
    Jpeg,
}

impl ImageFormat {
    fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "png" => Some(ImageFormat::Png),
            "jpg" | "jpeg" => Some(ImageFormat::Jpeg),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    /// 1 gray, 2 gray+alpha, 3 RGB, 4 RGBA
    pub channels: u8,
    pub format: ImageFormat,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub scanned: usize,
    pub kept: usize,
    pub dropped_non_rgb: usize,
    pub dropped_unreadable: usize,
}

impl DatasetCounts {
    pub fn is_conserved(&self) -> bool {
        self.kept + self.dropped_non_rgb + self.dropped_unreadable == self.scanned
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub target_resolution: usize,
    pub counts: DatasetCounts,
}

impl DatasetManifest {
    pub fn with_resolution(mut self, resolution: usize) -> Result<Self> {
        check_resolution(resolution)?;
        self.target_resolution = resolution;
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}

pub fn check_resolution(target: usize) -> Result<()> {
    if !target.is_power_of_two() || !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&target) {
        return Err(Error::Config(format!(
            "resolution must be a power of two in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {target}"
        )));
    }
    Ok(())
}

fn probe(path: &Path) -> std::result::Result<(u32, u32, u8), String> {
    let reader = ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?;
    let decoder = reader.into_decoder().map_err(|e| e.to_string())?;
    let (w, h) = decoder.dimensions();
    let channels = decoder.color_type().channel_count();
    Ok((w, h, channels))
}

/// Lists decodable PNG and JPEG files in `dir` (non-recursive, sorted by path).
///
/// Files with an image extension that fail to decode are counted as
/// unreadable; other files are skipped with a warning.
pub fn scan_directory(dir: &Path) -> Result<DatasetManifest> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut candidates = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        match ImageFormat::from_path(&path) {
            Some(fmt) => candidates.push((path, fmt)),
            None => log::warn!("ignoring non-image file {}", path.display()),
        }
    }
    candidates.sort_by(|a, b| a.0.cmp(&b.0));

    let probed: Vec<_> = candidates
        .par_iter()
        .map(|(path, fmt)| (path.clone(), *fmt, probe(path)))
        .collect();

    let mut counts = DatasetCounts {
        scanned: probed.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for (path, format, res) in probed {
        match res {
            Ok((width, height, channels)) if width > 0 && height > 0 => {
                records.push(ImageRecord {
                    path,
                    width,
                    height,
                    channels,
                    format,
                });
            }
            Ok(_) => counts.dropped_unreadable += 1,
            Err(msg) => {
                log::warn!("unreadable image {}: {msg}", path.display());
                counts.dropped_unreadable += 1;
            }
        }
    }
    counts.kept = records.len();
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no decodable PNG or JPEG files in {}",
            dir.display()
        )));
    }
    Ok(DatasetManifest {
        records,
        target_resolution: DEFAULT_RESOLUTION,
        counts,
    })
}

/// Keeps only 3-channel records. Grayscale and alpha-carrying images are dropped.
pub fn filter_rgb(manifest: DatasetManifest) -> DatasetManifest {
    let DatasetManifest {
        records,
        target_resolution,
        mut counts,
    } = manifest;
    let (kept, dropped): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.channels == 3);
    counts.dropped_non_rgb += dropped.len();
    counts.kept = kept.len();
    DatasetManifest {
        records: kept,
        target_resolution,
        counts,
    }
}

/// Resamples one axis: area averaging when shrinking, bilinear when growing.
fn resample_axis(src: &[f64], out_len: usize) -> Vec<f64> {
    let n = src.len();
    if n == out_len {
        return src.to_vec();
    }
    let ratio = n as f64 / out_len as f64;
    if out_len < n {
        (0..out_len)
            .map(|o| {
                let lo = o as f64 * ratio;
                let hi = lo + ratio;
                let mut acc = 0.0;
                let mut i = lo.floor() as usize;
                while i < n && (i as f64) < hi {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    acc += overlap * src[i];
                    i += 1;
                }
                acc / ratio
            })
            .collect()
    } else {
        (0..out_len)
            .map(|o| {
                let x = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n - 1) as f64);
                let i0 = x.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                let t = x - i0 as f64;
                src[i0] * (1.0 - t) + src[i1] * t
            })
            .collect()
    }
}

/// Separable resample of a C×H×W tensor to C×out_h×out_w.
pub(crate) fn resample<T: Scalar>(pixels: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [c, h, w] = match *pixels.shape() {
        [c, h, w] => [c, h, w],
        _ => {
            return Err(Error::Shape(format!(
                "expected C x H x W image, got {:?}",
                pixels.shape()
            )))
        }
    };
    if (h, w) == (out_h, out_w) {
        return Ok(pixels.clone());
    }
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in pixels.data().chunks(h * w) {
        let rows: Vec<Vec<f64>> = plane
            .chunks(w)
            .map(|r| resample_axis(&r.iter().map(|v| v.as_f64()).collect::<Vec<_>>(), out_w))
            .collect();
        let mut cols = vec![vec![0.0; out_h]; out_w];
        for (j, col) in cols.iter_mut().enumerate() {
            let src: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            *col = resample_axis(&src, out_h);
        }
        for i in 0..out_h {
            for col in &cols {
                out.push(T::lit(col[i]));
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Square resize of a 3×H×W image without aspect preservation.
pub fn resize_image<T: Scalar>(pixels: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    check_resolution(target)?;
    if pixels.rank() != 3 || pixels.shape()[0] != 3 {
        return Err(Error::Shape(format!(
            "resize_image expects 3 x H x W, got {:?}",
            pixels.shape()
        )));
    }
    resample(pixels, target, target)
}

/// Decodes an RGB image into a 3×H×W tensor of raw [0, 255] values.
pub fn read_rgb<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    let mut data = vec![T::zero(); 3 * h * w];
    for (p, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + p] = T::lit(px[c] as f64);
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Maps [0, 255] to [-1, 1].
pub fn normalize_pixels<T: Scalar>(raw: &Tensor<T>) -> Tensor<T> {
    let scale = T::lit(1.0 / 127.5);
    raw.map(|v| (v * scale - T::one()).max(-T::one()).min(T::one()))
}

/// Loads every record, resized to the manifest resolution and scaled to [-1, 1].
pub fn load_images<T: Scalar>(manifest: &DatasetManifest) -> Result<Vec<Tensor<T>>> {
    check_resolution(manifest.target_resolution)?;
    if manifest.records.is_empty() {
        return Err(Error::EmptyDataset("manifest has no records".into()));
    }
    manifest
        .records
        .par_iter()
        .map(|r| {
            let raw = read_rgb::<T>(&r.path)?;
            let sized = resize_image(&raw, manifest.target_resolution)?;
            Ok(normalize_pixels(&sized))
        })
        .collect()
}

/// Converts a 3×H×W image in [-1, 1] to 8-bit RGB, clamping out-of-range values.
pub fn to_rgb8<T: Scalar>(img: &Tensor<T>) -> Result<image::RgbImage> {
    let (h, w) = match *img.shape() {
        [3, h, w] => (h, w),
        _ => return Err(Error::Shape(format!("expected 3 x H x W, got {:?}", img.shape()))),
    };
    let d = img.data();
    let byte = |v: T| ((v.as_f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
    let mut raw = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        raw.extend((0..3).map(|c| byte(d[c * h * w + p])));
    }
    Ok(image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized for image"))
}

pub fn write_png<T: Scalar>(img: &Tensor<T>, path: &Path) -> Result<()> {
    to_rgb8(img)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Tiles equally sized 3×R×R images `per_row` to a row; empty cells are black.
pub fn image_grid<T: Scalar>(images: &[Tensor<T>], per_row: usize) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InsufficientSamples("image grid needs at least one image".into()))?;
    let (h, w) = match *first.shape() {
        [3, h, w] => (h, w),
        _ => return Err(Error::Shape(format!("expected 3 x H x W, got {:?}", first.shape()))),
    };
    if per_row == 0 || images.iter().any(|i| i.shape() != first.shape()) {
        return Err(Error::Shape("grid images must share one shape and per_row must be positive".into()));
    }
    let cols = per_row.min(images.len());
    let rows = images.len().div_ceil(per_row);
    let (gh, gw) = (rows * h, cols * w);
    let mut out = Tensor::full(&[3, gh, gw], -T::one());
    let data = out.data_mut();
    for (k, img) in images.iter().enumerate() {
        let (r0, c0) = ((k / per_row) * h, (k % per_row) * w);
        for c in 0..3 {
            for y in 0..h {
                let src = &img.data()[(c * h + y) * w..][..w];
                data[(c * gh + r0 + y) * gw + c0..][..w].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

/// Mirrors a C×H×W image left to right.
pub fn flip_horizontal<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let w = *img.shape().last().expect("image has a width");
    let mut data = img.data().to_vec();
    for row in data.chunks_mut(w) {
        row.reverse();
    }
    Tensor::new(img.shape().to_vec(), data).expect("same shape")
}

/// Seeded without-replacement batch sampler.
///
/// Batch `k` draws the global sample positions `k·B .. (k+1)·B`; position `p`
/// falls in epoch `p / n`, whose order is a seeded permutation. Batches are a
/// pure function of `(seed, k)`, so sampling can resume at any index.
#[derive(Clone, Debug)]
pub struct BatchSampler<T: Scalar> {
    images: Vec<Tensor<T>>,
    batch_size: usize,
    seed: u64,
    augment_flip: bool,
}

impl<T: Scalar> BatchSampler<T> {
    pub fn new(images: Vec<Tensor<T>>, batch_size: usize, seed: u64, augment_flip: bool) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyDataset("no images to sample from".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let shape = images[0].shape().to_vec();
        if images.iter().any(|i| i.shape() != shape.as_slice()) {
            return Err(Error::Shape("images differ in shape".into()));
        }
        Ok(BatchSampler {
            images,
            batch_size,
            seed,
            augment_flip,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor<T>] {
        &self.images
    }

    fn epoch_plan(&self, epoch: u64) -> (Vec<usize>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut order: Vec<usize> = (0..self.images.len()).collect();
        order.shuffle(&mut rng);
        let flips = (0..order.len()).map(|_| rng.random_bool(0.5)).collect();
        (order, flips)
    }

    /// (image index, flipped) pairs making up batch `k`.
    pub fn batch_indices(&self, k: u64) -> Vec<(usize, bool)> {
        let n = self.images.len() as u64;
        let b = self.batch_size as u64;
        let mut out = Vec::with_capacity(self.batch_size);
        let mut plan: Option<(u64, (Vec<usize>, Vec<bool>))> = None;
        for p in k * b..(k + 1) * b {
            let epoch = p / n;
            if plan.as_ref().map(|(e, _)| *e) != Some(epoch) {
                plan = Some((epoch, self.epoch_plan(epoch)));
            }
            let (order, flips) = &plan.as_ref().expect("plan set").1;
            let pos = (p % n) as usize;
            out.push((order[pos], self.augment_flip && flips[pos]));
        }
        out
    }

    /// Batch `k` as individual 3×R×R images.
    pub fn batch_images(&self, k: u64) -> Vec<Tensor<T>> {
        self.batch_indices(k)
            .into_iter()
            .map(|(i, flip)| {
                if flip {
                    flip_horizontal(&self.images[i])
                } else {
                    self.images[i].clone()
                }
            })
            .collect()
    }

    /// Batch `k` stacked as B×3×R×R.
    pub fn batch(&self, k: u64) -> Tensor<T> {
        let imgs = self.batch_images(k);
        let mut shape = vec![imgs.len()];
        shape.extend_from_slice(imgs[0].shape());
        let data = imgs.into_iter().flat_map(Tensor::into_data).collect();
        Tensor::new(shape, data).expect("stacked batch")
    }
}

/// First training batch for a manifest: loads, resizes and samples with `seed`.
pub fn training_batch<T: Scalar>(
    manifest: &DatasetManifest,
    batch_size: usize,
    seed: u64,
    augment_flip: bool,
) -> Result<Tensor<T>> {
    let images = load_images(manifest)?;
    Ok(BatchSampler::new(images, batch_size, seed, augment_flip)?.batch(0))
}
