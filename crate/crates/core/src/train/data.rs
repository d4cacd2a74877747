//! Training images, low-resolution pairs, and augmented patch batches.

use std::path::Path;

use rand::Rng;

use super::config::Dataset;
use crate::error::{Error, Result};
use crate::image::{bicubic_resize_image, read_ppm, synth_image, Family, ImageRGB8};
use crate::tensor::{Scalar, Shape, Tensor};

/// Load or synthesize the high-resolution images of `ds`.
pub fn load_images(ds: &Dataset) -> Result<Vec<(String, ImageRGB8)>> {
    match ds {
        Dataset::Synthetic {
            seed,
            count,
            size,
            family,
        } => (0..*count)
            .map(|i| {
                let family = family.unwrap_or(Family::ALL[i % Family::ALL.len()]);
                let img = synth_image(seed.wrapping_add(i as u64), *size, *size, family)?;
                Ok((format!("synth{i:03}_{family}"), img))
            })
            .collect(),
        Dataset::Directory(dir) => load_dir(dir),
    }
}

/// Reads `<dir>/HR/*.ppm` when that subdirectory exists, else `<dir>/*.ppm`.
fn load_dir(root: &Path) -> Result<Vec<(String, ImageRGB8)>> {
    let hr = root.join("HR");
    let dir = if hr.is_dir() { hr.as_path() } else { root };
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no .ppm images in {}", dir.display()),
        )));
    }
    paths
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p)?;
            let img = read_ppm(&bytes)?;
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, img))
        })
        .collect()
}

/// Crop `img` so both sides are multiples of `scale`.
pub fn mod_crop(img: &ImageRGB8, scale: usize) -> Result<ImageRGB8> {
    let (w, h) = (img.width() / scale * scale, img.height() / scale * scale);
    if w == 0 || h == 0 {
        return Err(Error::Usage(format!(
            "{}x{} image is smaller than the scale {scale}",
            img.width(),
            img.height()
        )));
    }
    img.crop(0, 0, w, h)
}

/// Bicubic downscale by `scale`, quantized to 8 bits.
pub fn degrade(hr: &ImageRGB8, scale: usize) -> Result<ImageRGB8> {
    bicubic_resize_image(hr, hr.width() / scale, hr.height() / scale)
}

/// A high-resolution image with its degraded counterpart.
#[derive(Clone, Debug)]
pub struct Pair<T> {
    pub name: String,
    pub hr: Tensor<T>,
    pub lr: Tensor<T>,
}

pub fn make_pairs<T: Scalar>(images: &[(String, ImageRGB8)], scale: usize) -> Result<Vec<Pair<T>>> {
    images
        .iter()
        .map(|(name, img)| {
            let hr = mod_crop(img, scale)?;
            let lr = degrade(&hr, scale)?;
            Ok(Pair {
                name: name.clone(),
                hr: hr.to_tensor(),
                lr: lr.to_tensor(),
            })
        })
        .collect()
}

/// One of the eight symmetries of the square: bit 0 flips columns, bit 1
/// flips rows, bit 2 transposes (applied last).
pub fn dihedral<T: Scalar>(t: &Tensor<T>, k: u8) -> Tensor<T> {
    let s = t.shape();
    let (flip_x, flip_y, transpose) = (k & 1 != 0, k & 2 != 0, k & 4 != 0);
    let out = if transpose { Shape::new(s.n, s.c, s.w, s.h) } else { s };
    Tensor::from_fn(out, |n, c, y, x| {
        let (mut sy, mut sx) = if transpose { (x, y) } else { (y, x) };
        if flip_y {
            sy = s.h - 1 - sy;
        }
        if flip_x {
            sx = s.w - 1 - sx;
        }
        t.at(n, c, sy, sx)
    })
}

/// Draw `batch` aligned patch pairs: LR side `patch`, HR side `patch * scale`.
pub fn sample_batch<T: Scalar, R: Rng + ?Sized>(
    pairs: &[Pair<T>],
    batch: usize,
    patch: usize,
    scale: usize,
    augment: bool,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if pairs.is_empty() {
        return Err(Error::Usage("empty training set".into()));
    }
    let mut lrs = Vec::with_capacity(batch);
    let mut hrs = Vec::with_capacity(batch);
    for _ in 0..batch {
        let p = &pairs[rng.random_range(0..pairs.len())];
        let s = p.lr.shape();
        if s.h < patch || s.w < patch {
            return Err(Error::Usage(format!(
                "{}: LR image {}x{} is smaller than the {patch}px patch",
                p.name, s.w, s.h
            )));
        }
        let y = rng.random_range(0..=s.h - patch);
        let x = rng.random_range(0..=s.w - patch);
        let k = if augment { rng.random_range(0..8u8) } else { 0 };
        let lr = p.lr.crop(y, x, patch, patch)?;
        let hr = p.hr.crop(y * scale, x * scale, patch * scale, patch * scale)?;
        lrs.push(dihedral(&lr, k));
        hrs.push(dihedral(&hr, k));
    }
    Ok((Tensor::stack(&lrs)?, Tensor::stack(&hrs)?))
}
