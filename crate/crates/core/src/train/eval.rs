//! Y-channel PSNR / SSIM evaluation of a model or the bicubic baseline.

use crate::error::Result;
use crate::image::{bicubic_resize_image, psnr, rgb_to_y, ssim, ImageRGB8};
use crate::network::DlgsaNet;
use crate::tensor::Scalar;

use super::data::{degrade, mod_crop};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub scores: Vec<ImageScore>,
    /// Images that could not be scored, with the reason.
    pub errors: Vec<(String, String)>,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.scores.iter().map(|s| s.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.scores.iter().map(|s| s.ssim))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.scores {
            out += &format!("{:<24} psnr {:>8.3} dB  ssim {:.5}\n", s.name, s.psnr, s.ssim);
        }
        for (name, e) in &self.errors {
            out += &format!("{name:<24} error: {e}\n");
        }
        out += &format!(
            "{:<24} psnr {:>8.3} dB  ssim {:.5}  ({} images)\n",
            "mean",
            self.mean_psnr(),
            self.mean_ssim(),
            self.scores.len()
        );
        out
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Score `sr` against `hr` on luma, shaving `border` pixels on every side.
pub fn score(name: &str, hr: &ImageRGB8, sr: &ImageRGB8, border: usize) -> Result<ImageScore> {
    let (yh, ys) = (rgb_to_y(hr), rgb_to_y(sr));
    let p = psnr(&yh, &ys, border)?;
    let s = ssim(&yh.shave(border)?, &ys.shave(border)?)?;
    Ok(ImageScore {
        name: name.to_string(),
        psnr: p,
        ssim: s,
    })
}

fn run(
    images: &[(String, ImageRGB8)],
    scale: usize,
    upscale: impl Fn(&ImageRGB8) -> Result<ImageRGB8> + Sync,
) -> EvalReport {
    let one = |(name, img): &(String, ImageRGB8)| {
        mod_crop(img, scale).and_then(|hr| {
            let lr = degrade(&hr, scale)?;
            let sr = upscale(&lr)?;
            score(name, &hr, &sr, scale)
        })
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(images.len());
    let results: Vec<Result<ImageScore>> = if workers <= 1 {
        images.iter().map(one).collect()
    } else {
        // Contiguous chunks keep the report in input order.
        let chunk = images.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = images
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(one).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };
    let mut report = EvalReport::default();
    for ((name, _), result) in images.iter().zip(results) {
        match result {
            Ok(s) => report.scores.push(s),
            Err(e) => report.errors.push((name.clone(), e.to_string())),
        }
    }
    report
}

/// Degrade each image, super-resolve it, and score the clamped result.
/// Failures are recorded per image and evaluation continues.
pub fn evaluate<T: Scalar>(model: &DlgsaNet<T>, images: &[(String, ImageRGB8)], tlc: Option<usize>) -> EvalReport {
    run(images, model.config.scale, |lr| {
        let y = model.infer(&lr.to_tensor::<T>(), tlc)?;
        ImageRGB8::from_tensor(&y, 0)
    })
}

/// The same protocol with bicubic upscaling in place of the network.
pub fn evaluate_bicubic(images: &[(String, ImageRGB8)], scale: usize) -> EvalReport {
    run(images, scale, |lr| {
        bicubic_resize_image(lr, lr.width() * scale, lr.height() * scale)
    })
}
