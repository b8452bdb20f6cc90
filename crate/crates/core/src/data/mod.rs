//! Synthetic datasets, image codecs and the on-disk dataset layout.
//!
//! Unpaired datasets are stored as `trainA/ trainB/ testA/ testB/`, paired
//! ones as `train/ test/`. Each image `NNNN.ppm` (or `NNNN_label.ppm` and
//! `NNNN_photo.ppm`) sits next to its class mask `NNNN_mask.pgm`. A
//! `manifest.txt` records the generating spec and seed.

mod image;
mod synth;

use std::path::Path;

pub use image::{decode_image, encode_image, read_image, write_image, Image};
pub use synth::{
    colorize, gen_paired, gen_unpaired, render_striped, MaskedImage, PairedDataset,
    PairedDatasetSpec, PairedSample, Palette, StripeOrientation, UnpairedDataset,
    UnpairedDatasetSpec, BACKGROUND, FOREGROUND,
};

use crate::error::{Error, Result};
use crate::kv::{format_rgb, parse_rgb, KvMap};

pub const MANIFEST_FILE: &str = "manifest.txt";

const UNPAIRED_KEYS: &[&str] = &[
    "kind", "resolution", "samples", "test_samples", "coverage_min", "coverage_max",
    "stripe_period", "stripe_light", "stripe_dark", "background", "noise", "seed",
];

const PAIRED_KEYS: &[&str] = &["kind", "resolution", "samples", "test_samples", "palette", "texture", "seed"];

impl UnpairedDatasetSpec {
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.set("kind", "unpaired");
        kv.set("resolution", self.resolution);
        kv.set("samples", self.samples);
        kv.set("test_samples", self.test_samples);
        kv.set("coverage_min", self.coverage.0);
        kv.set("coverage_max", self.coverage.1);
        kv.set("stripe_period", self.stripe_period);
        kv.set("stripe_light", format_rgb(self.stripe_colors.0));
        kv.set("stripe_dark", format_rgb(self.stripe_colors.1));
        kv.set("background", format_rgb(self.background));
        kv.set("noise", self.noise);
        kv.set("seed", self.seed);
        kv
    }

    /// Builds a spec from `key=value` pairs; missing keys keep defaults.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.check_keys(UNPAIRED_KEYS)?;
        let d = UnpairedDatasetSpec::default();
        let rgb = |k: &str, def: [u8; 3]| kv.get(k).map_or(Ok(def), parse_rgb);
        let spec = UnpairedDatasetSpec {
            resolution: kv.parsed_or("resolution", d.resolution)?,
            samples: kv.parsed_or("samples", d.samples)?,
            test_samples: kv.parsed_or("test_samples", d.test_samples)?,
            coverage: (
                kv.parsed_or("coverage_min", d.coverage.0)?,
                kv.parsed_or("coverage_max", d.coverage.1)?,
            ),
            stripe_period: kv.parsed_or("stripe_period", d.stripe_period)?,
            stripe_colors: (rgb("stripe_light", d.stripe_colors.0)?, rgb("stripe_dark", d.stripe_colors.1)?),
            background: rgb("background", d.background)?,
            noise: kv.parsed_or("noise", d.noise)?,
            seed: kv.parsed_or("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl PairedDatasetSpec {
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.set("kind", "paired");
        kv.set("resolution", self.resolution);
        kv.set("samples", self.samples);
        kv.set("test_samples", self.test_samples);
        let colors: Vec<String> = self.palette.colors().iter().map(|c| format_rgb(*c)).collect();
        kv.set("palette", colors.join(";"));
        kv.set("texture", self.texture);
        kv.set("seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.check_keys(PAIRED_KEYS)?;
        let d = PairedDatasetSpec::default();
        let palette = match kv.get("palette") {
            None => d.palette,
            Some(s) => Palette::new(s.split(';').map(parse_rgb).collect::<Result<_>>()?)?,
        };
        let spec = PairedDatasetSpec {
            resolution: kv.parsed_or("resolution", d.resolution)?,
            samples: kv.parsed_or("samples", d.samples)?,
            test_samples: kv.parsed_or("test_samples", d.test_samples)?,
            palette,
            texture: kv.parsed_or("texture", d.texture)?,
            seed: kv.parsed_or("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Either kind of generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Unpaired(UnpairedDataset),
    Paired(PairedDataset),
}

fn write_masked(dir: &Path, items: &[MaskedImage]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, s) in items.iter().enumerate() {
        write_image(dir.join(format!("{i:04}.ppm")), &s.image)?;
        write_image(dir.join(format!("{i:04}_mask.pgm")), &s.mask)?;
    }
    Ok(())
}

fn write_pairs(dir: &Path, items: &[PairedSample]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, s) in items.iter().enumerate() {
        write_image(dir.join(format!("{i:04}_label.ppm")), &s.label)?;
        write_image(dir.join(format!("{i:04}_photo.ppm")), &s.photo)?;
        write_image(dir.join(format!("{i:04}_mask.pgm")), &s.mask)?;
    }
    Ok(())
}

pub fn save_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let manifest = match data {
        Dataset::Unpaired(d) => {
            write_masked(&dir.join("trainA"), &d.train_a)?;
            write_masked(&dir.join("trainB"), &d.train_b)?;
            write_masked(&dir.join("testA"), &d.test_a)?;
            write_masked(&dir.join("testB"), &d.test_b)?;
            d.spec.to_kv()
        }
        Dataset::Paired(d) => {
            write_pairs(&dir.join("train"), &d.train)?;
            write_pairs(&dir.join("test"), &d.test)?;
            d.spec.to_kv()
        }
    };
    std::fs::write(dir.join(MANIFEST_FILE), manifest.to_text())?;
    Ok(())
}

fn read_masked(dir: &Path, n: usize) -> Result<Vec<MaskedImage>> {
    (0..n)
        .map(|i| {
            Ok(MaskedImage {
                image: read_image(dir.join(format!("{i:04}.ppm")))?,
                mask: read_image(dir.join(format!("{i:04}_mask.pgm")))?,
            })
        })
        .collect()
}

fn read_pairs(dir: &Path, n: usize) -> Result<Vec<PairedSample>> {
    (0..n)
        .map(|i| {
            Ok(PairedSample {
                label: read_image(dir.join(format!("{i:04}_label.ppm")))?,
                photo: read_image(dir.join(format!("{i:04}_photo.ppm")))?,
                mask: read_image(dir.join(format!("{i:04}_mask.pgm")))?,
            })
        })
        .collect()
}

/// Loads a dataset written by [`save_dataset`]. Image counts come from the
/// manifest; pixels come from the files.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read dataset manifest {}: {e}", path.display())))?;
    let kv = KvMap::parse(&text)?;
    match kv.get("kind") {
        Some("unpaired") => {
            let spec = UnpairedDatasetSpec::from_kv(&kv)?;
            Ok(Dataset::Unpaired(UnpairedDataset {
                train_a: read_masked(&dir.join("trainA"), spec.samples)?,
                train_b: read_masked(&dir.join("trainB"), spec.samples)?,
                test_a: read_masked(&dir.join("testA"), spec.test_samples)?,
                test_b: read_masked(&dir.join("testB"), spec.test_samples)?,
                spec,
            }))
        }
        Some("paired") => {
            let spec = PairedDatasetSpec::from_kv(&kv)?;
            Ok(Dataset::Paired(PairedDataset {
                train: read_pairs(&dir.join("train"), spec.samples)?,
                test: read_pairs(&dir.join("test"), spec.test_samples)?,
                spec,
            }))
        }
        other => Err(Error::Config(format!(
            "dataset manifest kind {other:?} is neither unpaired nor paired"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unpaired_disk_round_trip() {
        let spec = UnpairedDatasetSpec {
            samples: 3,
            test_samples: 2,
            seed: 21,
            ..Default::default()
        };
        let data = Dataset::Unpaired(gen_unpaired(&spec).unwrap());
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &data).unwrap();
        assert!(dir.path().join("trainA/0002_mask.pgm").exists());
        assert_eq!(load_dataset(dir.path()).unwrap(), data);
    }

    #[test]
    fn paired_disk_round_trip() {
        let spec = PairedDatasetSpec {
            samples: 2,
            test_samples: 1,
            ..Default::default()
        };
        let data = Dataset::Paired(gen_paired(&spec).unwrap());
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &data).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), data);
    }

    #[test]
    fn spec_kv_round_trip() {
        let spec = UnpairedDatasetSpec {
            coverage: (0.2, 0.3),
            noise: 3.5,
            ..Default::default()
        };
        assert_eq!(UnpairedDatasetSpec::from_kv(&spec.to_kv()).unwrap(), spec);
        let p = PairedDatasetSpec::default();
        assert_eq!(PairedDatasetSpec::from_kv(&p.to_kv()).unwrap(), p);
    }

    #[test]
    fn missing_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("manifest"), "{err}");
    }
}
