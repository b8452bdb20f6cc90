//! Seeded synthetic translation tasks.
//!
//! Unpaired: domain A draws striped foreground shapes whose stripes run
//! horizontally, domain B the same kind of shapes striped vertically, both
//! on a noisy background. Translating between them swaps texture and keeps
//! geometry. Paired: a flat palette label map and a textured rendering of it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::Image;
use crate::error::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const FOREGROUND: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StripeOrientation {
    /// Stripes run along rows.
    Horizontal,
    /// Stripes run along columns.
    Vertical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnpairedDatasetSpec {
    pub resolution: usize,
    /// Training images per domain.
    pub samples: usize,
    /// Held-out images per domain.
    pub test_samples: usize,
    /// Target foreground fraction, drawn uniformly per image.
    pub coverage: (f64, f64),
    /// Pixels per stripe pair.
    pub stripe_period: usize,
    pub stripe_colors: ([u8; 3], [u8; 3]),
    pub background: [u8; 3],
    /// Standard deviation of background noise in 8-bit units.
    pub noise: f64,
    pub seed: u64,
}

impl Default for UnpairedDatasetSpec {
    fn default() -> Self {
        UnpairedDatasetSpec {
            resolution: 32,
            samples: 64,
            test_samples: 16,
            coverage: (0.15, 0.35),
            stripe_period: 4,
            stripe_colors: ([235, 225, 200], [40, 30, 25]),
            background: [90, 150, 80],
            noise: 12.0,
            seed: 0,
        }
    }
}

impl UnpairedDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.coverage;
        if self.resolution < 8 {
            return Err(Error::Config(format!("resolution {} below 8", self.resolution)));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if !(0.0 < lo && lo <= hi && hi <= 0.6) {
            return Err(Error::Config(format!(
                "coverage range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 0.6"
            )));
        }
        if self.stripe_period < 2 {
            return Err(Error::Config("stripe_period must be at least 2".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!("noise {} must be non-negative", self.noise)));
        }
        Ok(())
    }
}

/// An image with its per-pixel class mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedImage {
    pub image: Image,
    pub mask: Image,
}

impl MaskedImage {
    pub fn coverage(&self) -> f64 {
        let fg = self.mask.pixels().iter().filter(|&&c| c == FOREGROUND).count();
        fg as f64 / self.mask.pixels().len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnpairedDataset {
    pub spec: UnpairedDatasetSpec,
    pub train_a: Vec<MaskedImage>,
    pub train_b: Vec<MaskedImage>,
    pub test_a: Vec<MaskedImage>,
    pub test_b: Vec<MaskedImage>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Foreground mask of one ellipse or rectangle with area close to
/// `coverage · side²`, fully inside the frame.
fn draw_shape(side: usize, coverage: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let area = coverage * (side * side) as f64;
    let aspect: f64 = rng.gen_range(0.7..1.4);
    let ellipse = rng.gen_bool(0.5);
    // half-extents (rx, ry) with ry = aspect · rx
    let rx = if ellipse {
        (area / (std::f64::consts::PI * aspect)).sqrt()
    } else {
        (area / (4.0 * aspect)).sqrt()
    };
    let ry = aspect * rx;
    let fit = |r: f64| r.min(side as f64 / 2.0 - 0.5).max(1.0);
    let (rx, ry) = (fit(rx), fit(ry));
    let cx = rng.gen_range(rx..=side as f64 - rx);
    let cy = rng.gen_range(ry..=side as f64 - ry);
    let mut mask = vec![false; side * side];
    for y in 0..side {
        for x in 0..side {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            mask[y * side + x] = if ellipse {
                dx * dx + dy * dy <= 1.0
            } else {
                dx.abs() <= 1.0 && dy.abs() <= 1.0
            };
        }
    }
    if !mask.iter().any(|&m| m) {
        mask[(cy as usize).min(side - 1) * side + (cx as usize).min(side - 1)] = true;
    }
    mask
}

fn noisy(base: u8, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> u8 {
    (base as f64 + noise.sample(rng)).round().clamp(0.0, 255.0) as u8
}

/// One striped-object image.
pub fn render_striped(
    spec: &UnpairedDatasetSpec,
    orientation: StripeOrientation,
    rng: &mut ChaCha8Rng,
) -> MaskedImage {
    let side = spec.resolution;
    let coverage = rng.gen_range(spec.coverage.0..=spec.coverage.1);
    let shape = draw_shape(side, coverage, rng);
    let phase = rng.gen_range(0..spec.stripe_period);
    let noise = Normal::new(0.0, spec.noise.max(1e-12)).expect("finite noise");
    let half = spec.stripe_period / 2;
    let mut image = Image::filled(side, side, 3, 0);
    let mut mask = Image::filled(side, side, 1, BACKGROUND);
    for y in 0..side {
        for x in 0..side {
            if shape[y * side + x] {
                let along = match orientation {
                    StripeOrientation::Horizontal => y,
                    StripeOrientation::Vertical => x,
                };
                let light = (along + phase) % spec.stripe_period < half;
                let color = if light { spec.stripe_colors.0 } else { spec.stripe_colors.1 };
                for (c, v) in color.into_iter().enumerate() {
                    image.set(x, y, c, v);
                }
                mask.set(x, y, 0, FOREGROUND);
            } else {
                for c in 0..3 {
                    let v = noisy(spec.background[c], &noise, rng);
                    image.set(x, y, c, v);
                }
            }
        }
    }
    MaskedImage { image, mask }
}

pub fn gen_unpaired(spec: &UnpairedDatasetSpec) -> Result<UnpairedDataset> {
    spec.validate()?;
    let split = |stream: u64, n: usize, o: StripeOrientation| {
        let mut rng = rng_for(spec.seed, stream);
        (0..n).map(|_| render_striped(spec, o, &mut rng)).collect::<Vec<_>>()
    };
    use StripeOrientation::*;
    Ok(UnpairedDataset {
        spec: spec.clone(),
        train_a: split(1, spec.samples, Horizontal),
        train_b: split(2, spec.samples, Vertical),
        test_a: split(3, spec.test_samples, Horizontal),
        test_b: split(4, spec.test_samples, Vertical),
    })
}

/// Class colors for label maps. Class `i` is `colors[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
}

impl Palette {
    pub fn new(colors: Vec<[u8; 3]>) -> Result<Self> {
        if colors.is_empty() {
            return Err(Error::Invalid("palette is empty".into()));
        }
        if colors.len() > 256 {
            return Err(Error::Invalid("palette holds at most 256 classes".into()));
        }
        for i in 0..colors.len() {
            for j in 0..i {
                if colors[i] == colors[j] {
                    return Err(Error::Invalid(format!("palette colors {j} and {i} coincide")));
                }
            }
        }
        Ok(Palette { colors })
    }

    /// Street-scene-like classes: sky, road, building, vegetation.
    pub fn street() -> Self {
        Palette::new(vec![[70, 130, 220], [128, 64, 128], [200, 200, 60], [40, 160, 40]])
            .expect("distinct colors")
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn color(&self, class: u8) -> [u8; 3] {
        self.colors[class as usize]
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    /// Class whose color is nearest in Euclidean RGB distance; ties go to
    /// the lower class id.
    pub fn nearest(&self, rgb: [u8; 3]) -> u8 {
        let d2 = |c: &[u8; 3]| -> i32 {
            (0..3).map(|k| (c[k] as i32 - rgb[k] as i32).pow(2)).sum()
        };
        let mut best = 0;
        for (i, c) in self.colors.iter().enumerate().skip(1) {
            if d2(c) < d2(&self.colors[best]) {
                best = i;
            }
        }
        best as u8
    }

    pub fn min_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.colors.len() {
            for j in 0..i {
                let d: f64 = (0..3)
                    .map(|k| (self.colors[i][k] as f64 - self.colors[j][k] as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(d);
            }
        }
        best
    }

    /// Flat color rendering of a class mask.
    pub fn render(&self, mask: &Image) -> Image {
        let mut img = Image::filled(mask.width(), mask.height(), 3, 0);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                for (c, v) in self.color(mask.get(x, y, 0)).into_iter().enumerate() {
                    img.set(x, y, c, v);
                }
            }
        }
        img
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDatasetSpec {
    pub resolution: usize,
    pub samples: usize,
    pub test_samples: usize,
    pub palette: Palette,
    /// Per-channel texture amplitude in 8-bit units. Must stay below
    /// `(min_distance / 2 − 1) / √3` so every textured, rounded pixel remains
    /// nearest to its own class color.
    pub texture: f64,
    pub seed: u64,
}

impl Default for PairedDatasetSpec {
    fn default() -> Self {
        PairedDatasetSpec {
            resolution: 32,
            samples: 64,
            test_samples: 16,
            palette: Palette::street(),
            texture: 20.0,
            seed: 0,
        }
    }
}

impl PairedDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::Config(format!("resolution {} below 8", self.resolution)));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if self.palette.len() < 2 {
            return Err(Error::Config("paired data needs at least 2 classes".into()));
        }
        let limit = (self.palette.min_distance() / 2.0 - 1.0) / 3f64.sqrt();
        if !(self.texture >= 0.0 && self.texture < limit) {
            return Err(Error::Config(format!(
                "texture amplitude {} must lie in [0, {limit:.2}) for this palette",
                self.texture
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    /// Flat palette rendering of the mask.
    pub label: Image,
    pub photo: Image,
    /// Class id per pixel.
    pub mask: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub spec: PairedDatasetSpec,
    pub train: Vec<PairedSample>,
    pub test: Vec<PairedSample>,
}

/// Random layout: sky above a horizon, road below it, then a few
/// buildings and vegetation patches.
fn layout(side: usize, classes: usize, rng: &mut ChaCha8Rng) -> Image {
    let mut mask = Image::filled(side, side, 1, 0);
    let horizon = rng.gen_range(side / 3..=side / 2);
    for y in horizon..side {
        for x in 0..side {
            mask.set(x, y, 0, 1 % classes as u8);
        }
    }
    for _ in 0..rng.gen_range(2..=4) {
        let class = rng.gen_range(2.min(classes - 1)..classes) as u8;
        let w = rng.gen_range(side / 8..=side / 3).max(1);
        let h = rng.gen_range(side / 8..=side / 2).max(1);
        let x0 = rng.gen_range(0..=side - w);
        let y0 = rng.gen_range(0..=side - h);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                mask.set(x, y, 0, class);
            }
        }
    }
    mask
}

/// Textured rendering of a class mask. A pure function of `(mask, palette,
/// amplitude, seed)`.
pub fn colorize(mask: &Image, palette: &Palette, amplitude: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (mask.width(), mask.height());
    // per-class stripe frequency and phase give each class its own texture
    let waves: Vec<(f64, f64, f64)> = (0..palette.len())
        .map(|_| (rng.gen_range(0.3..1.5), rng.gen_range(0.3..1.5), rng.gen_range(0.0..6.3)))
        .collect();
    let mut img = Image::filled(w, h, 3, 0);
    for y in 0..h {
        for x in 0..w {
            let class = mask.get(x, y, 0);
            let (fx, fy, ph) = waves[class as usize];
            let wave = (fx * x as f64 + fy * y as f64 + ph).sin();
            let base = palette.color(class);
            for c in 0..3 {
                let jitter: f64 = rng.gen_range(-1.0..1.0);
                let t = amplitude * (0.7 * wave + 0.3 * jitter);
                img.set(x, y, c, (base[c] as f64 + t).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    img
}

pub fn gen_paired(spec: &PairedDatasetSpec) -> Result<PairedDataset> {
    spec.validate()?;
    let split = |stream: u64, n: usize| {
        let mut rng = rng_for(spec.seed, stream);
        (0..n)
            .map(|_| {
                let mask = layout(spec.resolution, spec.palette.len(), &mut rng);
                let tex_seed = rng.gen();
                PairedSample {
                    label: spec.palette.render(&mask),
                    photo: colorize(&mask, &spec.palette, spec.texture, tex_seed),
                    mask,
                }
            })
            .collect::<Vec<_>>()
    };
    Ok(PairedDataset {
        spec: spec.clone(),
        train: split(11, spec.samples),
        test: split(12, spec.test_samples),
    })
}
