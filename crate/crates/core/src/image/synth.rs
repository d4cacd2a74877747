//! Procedural RGB images with structure at several spatial frequencies.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImageRGB8;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Stripes,
    Checker,
    Blobs,
    Mixed,
    /// A 4x4 grid of independent tiles from the other families; dense detail
    /// and hard tile seams make it hard for interpolation.
    Mosaic,
    /// Flat rectangles snapped to a 32-cell grid over the longer side.
    Blocks,
}

impl Family {
    /// The single-scene families.
    pub const ALL: [Family; 4] = [Family::Stripes, Family::Checker, Family::Blobs, Family::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Family::Stripes => "stripes",
            Family::Checker => "checker",
            Family::Blobs => "blobs",
            Family::Mixed => "mixed",
            Family::Mosaic => "mosaic",
            Family::Blocks => "blocks",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .chain([Family::Mosaic, Family::Blocks])
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown image family {s:?}")))
    }
}

type Rgb = [f64; 3];

fn color(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]
}

fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

/// A continuous scene sampled at normalized coordinates in `[0, 1)`.
trait Scene {
    fn eval(&self, u: f64, v: f64) -> Rgb;
}

/// Gratings whose wave vectors stay within 15 degrees of one axis.
struct Stripes {
    waves: Vec<(f64, f64, f64, f64)>,
    lo: Rgb,
    hi: Rgb,
}

impl Stripes {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let axis = if rng.random_bool(0.5) { 0.0 } else { PI / 2.0 };
        let base: f64 = rng.random_range(3.0..6.0);
        let waves = (0..3)
            .map(|i| {
                let theta = axis + rng.random_range(-PI / 12.0..PI / 12.0);
                let freq = base * (1.0 + 1.7 * i as f64) * rng.random_range(0.9..1.1);
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = 1.0 / (1.0 + i as f64);
                (theta, freq, phase, amp)
            })
            .collect();
        Stripes {
            waves,
            lo: color(rng),
            hi: color(rng),
        }
    }
}

impl Scene for Stripes {
    fn eval(&self, u: f64, v: f64) -> Rgb {
        let norm: f64 = self.waves.iter().map(|w| w.3).sum();
        let s: f64 = self
            .waves
            .iter()
            .map(|&(theta, f, p, a)| a * (2.0 * PI * f * (u * theta.cos() + v * theta.sin()) + p).sin())
            .sum();
        lerp(self.lo, self.hi, 0.5 + 0.5 * s / norm)
    }
}

/// Rotated checkerboard with a finer checker overlaid at lower contrast.
struct Checker {
    angle: f64,
    cells: f64,
    a: Rgb,
    b: Rgb,
}

impl Checker {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Checker {
            angle: rng.random_range(0.0..PI / 2.0),
            cells: rng.random_range(3.0..7.0),
            a: color(rng),
            b: color(rng),
        }
    }

    fn parity(&self, u: f64, v: f64, cells: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let x = (u * c - v * s) * cells;
        let y = (u * s + v * c) * cells;
        ((x.floor() + y.floor()).rem_euclid(2.0) == 0.0) as u8 as f64
    }
}

impl Scene for Checker {
    fn eval(&self, u: f64, v: f64) -> Rgb {
        let t = 0.8 * self.parity(u, v, self.cells) + 0.2 * self.parity(u, v, 3.0 * self.cells);
        lerp(self.a, self.b, t)
    }
}

/// Anisotropic Gaussian blobs over a smooth gradient background.
struct Blobs {
    bg0: Rgb,
    bg1: Rgb,
    blobs: Vec<(f64, f64, f64, f64, f64, Rgb)>,
}

impl Blobs {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.random_range(6..12);
        let blobs = (0..n)
            .map(|_| {
                let cx = rng.random_range(0.0..1.0);
                let cy = rng.random_range(0.0..1.0);
                let sx: f64 = rng.random_range(0.03..0.2);
                let sy: f64 = rng.random_range(0.03..0.2);
                let rot = rng.random_range(0.0..PI);
                (cx, cy, sx, sy, rot, color(rng))
            })
            .collect();
        Blobs {
            bg0: color(rng),
            bg1: color(rng),
            blobs,
        }
    }
}

impl Scene for Blobs {
    fn eval(&self, u: f64, v: f64) -> Rgb {
        let mut px = lerp(self.bg0, self.bg1, 0.5 * (u + v));
        for &(cx, cy, sx, sy, rot, col) in &self.blobs {
            let (s, c) = rot.sin_cos();
            let (dx, dy) = (u - cx, v - cy);
            let (a, b) = ((dx * c + dy * s) / sx, (-dx * s + dy * c) / sy);
            let wgt = 0.8 * (-0.5 * (a * a + b * b)).exp();
            px = lerp(px, col, wgt);
        }
        px
    }
}

/// Stripes and checker regions separated by a soft diagonal boundary, over blobs.
struct Mixed {
    stripes: Stripes,
    checker: Checker,
    blobs: Blobs,
    split: f64,
}

impl Scene for Mixed {
    fn eval(&self, u: f64, v: f64) -> Rgb {
        let base = self.blobs.eval(u, v);
        let d = u - v + self.split;
        let sel = 1.0 / (1.0 + (-d * 25.0).exp());
        let tex = lerp(self.checker.eval(u, v), self.stripes.eval(u, v), sel);
        lerp(base, tex, 0.6)
    }
}

const MOSAIC_TILES: usize = 4;

struct Mosaic {
    tiles: Vec<Box<dyn Scene>>,
}

impl Scene for Mosaic {
    fn eval(&self, u: f64, v: f64) -> Rgb {
        let n = MOSAIC_TILES as f64;
        let (tu, tv) = ((u * n).floor(), (v * n).floor());
        let (i, j) = ((tu as usize).min(MOSAIC_TILES - 1), (tv as usize).min(MOSAIC_TILES - 1));
        self.tiles[j * MOSAIC_TILES + i].eval(u * n - tu, v * n - tv)
    }
}

const BLOCK_GRID: f64 = 32.0;
const BLOCK_COUNT: usize = 200;
const BLOCK_MAX_CELLS: usize = 4;

/// Later rectangles paint over earlier ones.
struct Blocks {
    bg: Rgb,
    rects: Vec<([f64; 4], Rgb)>,
}

impl Blocks {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let grid = BLOCK_GRID as usize;
        let rects = (0..BLOCK_COUNT)
            .map(|_| {
                let w = rng.random_range(1..=BLOCK_MAX_CELLS);
                let h = rng.random_range(1..=BLOCK_MAX_CELLS);
                let x = rng.random_range(0..=grid - w);
                let y = rng.random_range(0..=grid - h);
                let r = [x, y, x + w, y + h].map(|v| v as f64 / BLOCK_GRID);
                (r, color(rng))
            })
            .collect();
        Blocks { bg: color(rng), rects }
    }
}

impl Scene for Blocks {
    fn eval(&self, u: f64, v: f64) -> Rgb {
        self.rects
            .iter()
            .rev()
            .find(|(r, _)| u >= r[0] && u < r[2] && v >= r[1] && v < r[3])
            .map_or(self.bg, |&(_, c)| c)
    }
}

fn scene(family: Family, rng: &mut ChaCha8Rng) -> Box<dyn Scene> {
    match family {
        Family::Stripes => Box::new(Stripes::new(rng)),
        Family::Checker => Box::new(Checker::new(rng)),
        Family::Blobs => Box::new(Blobs::new(rng)),
        Family::Mixed => Box::new(Mixed {
            stripes: Stripes::new(rng),
            checker: Checker::new(rng),
            blobs: Blobs::new(rng),
            split: rng.random_range(-0.3..0.3),
        }),
        Family::Blocks => Box::new(Blocks::new(rng)),
        Family::Mosaic => Box::new(Mosaic {
            tiles: (0..MOSAIC_TILES * MOSAIC_TILES)
                .map(|_| {
                    let f = Family::ALL[rng.random_range(0..Family::ALL.len())];
                    scene(f, rng)
                })
                .collect(),
        }),
    }
}

const SUPERSAMPLE: usize = 3;

/// Deterministic synthetic image for `(seed, width, height, family)`.
pub fn synth_image(seed: u64, width: usize, height: usize, family: Family) -> Result<ImageRGB8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ family.tag());
    let scene = scene(family, &mut rng);
    // Normalize by the longer side so structures keep their aspect ratio.
    let extent = width.max(height) as f64;
    let ss = SUPERSAMPLE as f64;
    let mut pixels = Vec::with_capacity(3 * width * height);
    for y in 0..height {
        for x in 0..width {
            let mut acc = [0.0; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let u = (x as f64 + (sx as f64 + 0.5) / ss) / extent;
                    let v = (y as f64 + (sy as f64 + 0.5) / ss) / extent;
                    let c = scene.eval(u, v);
                    for i in 0..3 {
                        acc[i] += c[i];
                    }
                }
            }
            for a in acc {
                let m = a / (ss * ss);
                pixels.push((m * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageRGB8::new(width, height, pixels)
}
