use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::AdamConfig;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::losses::{DistillConfig, Reduction};
use crate::models::{DiscriminatorSpec, GeneratorKind, GeneratorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Two generators with cycle consistency.
    Unpaired,
    /// One conditional generator trained on aligned pairs.
    Paired,
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unpaired" => Ok(Regime::Unpaired),
            "paired" => Ok(Regime::Paired),
            other => Err(Error::Config(format!("unknown regime `{other}` (unpaired, paired)"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Unpaired => "unpaired",
            Regime::Paired => "paired",
        })
    }
}

/// SP weight used for a named task; `gamma1 = gamma2` for unpaired tasks.
/// There is no known value for `resnet6`, so it reuses horse2zebra's.
pub fn gamma_preset(name: &str) -> Option<f64> {
    Some(match name {
        "horse2zebra" | "resnet6" => 0.9,
        "summer2winter" => 0.5,
        "apple2orange" => 0.8,
        "tiger2leopard" | "cityscapes" => 0.2,
        "paired" => 1.0,
        _ => return None,
    })
}

/// Everything a training run needs besides its data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub distill: DistillConfig,
    pub adam: AdamConfig,
    pub iterations: usize,
    pub seed: u64,
    /// Dataset directory written by `save_dataset`.
    pub dataset: Option<PathBuf>,
    /// Directory holding teacher checkpoints, for distillation.
    pub teacher: Option<PathBuf>,
    /// Save checkpoints every this many iterations; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub pool_size: usize,
    /// Log a progress line every this many iterations; 0 disables.
    pub log_every: usize,
}

pub const CONFIG_KEYS: &[&str] = &[
    "regime", "generator", "ngf", "resolution", "ndf", "d_layers", "lambda", "alpha", "gamma",
    "gamma1", "gamma2", "preset", "distill_layer", "reduction", "lr", "beta1", "beta2", "eps",
    "iterations", "seed", "dataset", "teacher", "checkpoint_every", "pool_size", "log_every",
];

impl TrainConfig {
    /// Desk-scale unpaired defaults: 3-block ResNet generators at 32×32.
    pub fn unpaired() -> Self {
        TrainConfig {
            regime: Regime::Unpaired,
            generator: GeneratorSpec::resnet(3, 16).with_resolution(32),
            discriminator: DiscriminatorSpec {
                ndf: 16,
                ..Default::default()
            },
            distill: DistillConfig::default(),
            adam: AdamConfig::default(),
            iterations: 2000,
            seed: 0,
            dataset: None,
            teacher: None,
            checkpoint_every: 0,
            pool_size: 50,
            log_every: 100,
        }
    }

    /// Desk-scale paired defaults: a 5-level UNet at 32×32 and a
    /// conditional discriminator.
    pub fn paired() -> Self {
        TrainConfig {
            regime: Regime::Paired,
            generator: GeneratorSpec::unet_for(16, 32),
            discriminator: DiscriminatorSpec {
                ndf: 16,
                in_channels: 6,
                ..Default::default()
            },
            distill: DistillConfig {
                lambda: 100.0,
                alpha: 0.05,
                gamma1: 1.0,
                gamma2: 0.0,
                ..Default::default()
            },
            pool_size: 0,
            ..Self::unpaired()
        }
    }

    /// Builds a config from parsed `key=value` pairs over regime defaults.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.check_keys(CONFIG_KEYS)?;
        let regime: Regime = kv.parsed_or("regime", Regime::Unpaired)?;
        let mut c = match regime {
            Regime::Unpaired => Self::unpaired(),
            Regime::Paired => Self::paired(),
        };

        let ngf = kv.parsed_or("ngf", c.generator.ngf)?;
        let resolution = kv.parsed_or("resolution", c.generator.resolution)?;
        let mut g = match kv.get("generator") {
            Some(name) => GeneratorSpec::from_arch_name(name, ngf)?,
            None => GeneratorSpec { ngf, ..c.generator.clone() },
        };
        if g.kind == GeneratorKind::Unet {
            let named = kv.get("generator").and_then(|n| n.strip_prefix("unet")).filter(|r| !r.is_empty());
            if named.is_some_and(|r| r != resolution.to_string()) && kv.contains("resolution") {
                return Err(Error::Config(format!(
                    "generator `{}` conflicts with resolution {resolution}",
                    kv.get("generator").unwrap()
                )));
            }
            let res = if named.is_some() && !kv.contains("resolution") { g.resolution } else { resolution };
            g = GeneratorSpec::unet_for(ngf, res);
        } else {
            g = g.with_resolution(resolution);
        }
        g.validate()?;
        c.generator = g;

        c.discriminator.ndf = kv.parsed_or("ndf", c.discriminator.ndf)?;
        c.discriminator.n_layers = kv.parsed_or("d_layers", c.discriminator.n_layers)?;
        c.discriminator.validate()?;

        let d = &mut c.distill;
        if let Some(p) = kv.get("preset") {
            let g = gamma_preset(p).ok_or_else(|| Error::Config(format!("unknown preset `{p}`")))?;
            d.gamma1 = g;
            d.gamma2 = if regime == Regime::Paired { 0.0 } else { g };
        }
        if let Some(g) = kv.parsed::<f64>("gamma")? {
            d.gamma1 = g;
            d.gamma2 = if regime == Regime::Paired { 0.0 } else { g };
        }
        d.lambda = kv.parsed_or("lambda", d.lambda)?;
        d.alpha = kv.parsed_or("alpha", d.alpha)?;
        d.gamma1 = kv.parsed_or("gamma1", d.gamma1)?;
        d.gamma2 = kv.parsed_or("gamma2", d.gamma2)?;
        d.reduction = kv.parsed_or("reduction", d.reduction)?;
        d.distill_layer = kv.get("distill_layer").map(str::to_string);

        c.adam.lr = kv.parsed_or("lr", c.adam.lr)?;
        c.adam.beta1 = kv.parsed_or("beta1", c.adam.beta1)?;
        c.adam.beta2 = kv.parsed_or("beta2", c.adam.beta2)?;
        c.adam.eps = kv.parsed_or("eps", c.adam.eps)?;
        c.iterations = kv.parsed_or("iterations", c.iterations)?;
        c.seed = kv.parsed_or("seed", c.seed)?;
        c.dataset = kv.get("dataset").map(PathBuf::from);
        c.teacher = kv.get("teacher").map(PathBuf::from);
        c.checkpoint_every = kv.parsed_or("checkpoint_every", c.checkpoint_every)?;
        c.pool_size = kv.parsed_or("pool_size", c.pool_size)?;
        c.log_every = kv.parsed_or("log_every", c.log_every)?;
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvMap::parse(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.distill.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        let want_d = match self.regime {
            Regime::Unpaired => self.generator.out_channels,
            Regime::Paired => self.generator.in_channels + self.generator.out_channels,
        };
        if self.discriminator.in_channels != want_d {
            return Err(Error::Config(format!(
                "{} discriminator needs {want_d} input channels, has {}",
                self.regime, self.discriminator.in_channels
            )));
        }
        Ok(())
    }

    /// Fully resolved settings; parsing this back yields an equal config.
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        let g = &self.generator;
        kv.set("regime", self.regime);
        let name = match g.kind {
            GeneratorKind::Resnet => format!("resnet{}", g.n_blocks),
            GeneratorKind::Unet => format!("unet{}", g.resolution),
        };
        kv.set("generator", name);
        kv.set("ngf", g.ngf);
        kv.set("resolution", g.resolution);
        kv.set("ndf", self.discriminator.ndf);
        kv.set("d_layers", self.discriminator.n_layers);
        let d = &self.distill;
        kv.set("lambda", d.lambda);
        kv.set("alpha", d.alpha);
        kv.set("gamma1", d.gamma1);
        kv.set("gamma2", d.gamma2);
        kv.set("reduction", match d.reduction {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        });
        if let Some(l) = &d.distill_layer {
            kv.set("distill_layer", l);
        }
        kv.set("lr", self.adam.lr);
        kv.set("beta1", self.adam.beta1);
        kv.set("beta2", self.adam.beta2);
        kv.set("eps", self.adam.eps);
        kv.set("iterations", self.iterations);
        kv.set("seed", self.seed);
        if let Some(p) = &self.dataset {
            kv.set("dataset", p.display());
        }
        if let Some(p) = &self.teacher {
            kv.set("teacher", p.display());
        }
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("pool_size", self.pool_size);
        kv.set("log_every", self.log_every);
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_by_regime() {
        let u = TrainConfig::parse("").unwrap();
        assert_eq!(u, TrainConfig::unpaired());
        assert_eq!((u.distill.lambda, u.distill.alpha), (10.0, 0.05));
        assert_eq!((u.adam.lr, u.adam.beta1, u.adam.beta2), (2e-4, 0.5, 0.999));
        assert_eq!(u.pool_size, 50);
        let p = TrainConfig::parse("regime=paired\n").unwrap();
        assert_eq!((p.distill.lambda, p.distill.gamma1), (100.0, 1.0));
        assert_eq!(p.discriminator.in_channels, 6);
    }

    #[test]
    fn presets_and_overrides() {
        let c = TrainConfig::parse("preset=horse2zebra\n").unwrap();
        assert_eq!((c.distill.gamma1, c.distill.gamma2), (0.9, 0.9));
        let c = TrainConfig::parse("preset=resnet6\ngamma2=0\n").unwrap();
        assert_eq!((c.distill.gamma1, c.distill.gamma2), (0.9, 0.0));
        assert!(TrainConfig::parse("preset=nowhere\n").is_err());
    }

    #[test]
    fn generator_keys() {
        let c = TrainConfig::parse("generator=resnet6\nngf=8\nresolution=64\n").unwrap();
        assert_eq!(c.generator, GeneratorSpec::resnet(6, 8).with_resolution(64));
        let c = TrainConfig::parse("regime=paired\ngenerator=unet64\n").unwrap();
        assert_eq!(c.generator, GeneratorSpec::unet_for(16, 64));
        assert!(TrainConfig::parse("regime=paired\ngenerator=unet64\nresolution=32\n").is_err());
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(TrainConfig::parse("lr=0\n").is_err());
        assert!(TrainConfig::parse("iterations=0\n").is_err());
        assert!(TrainConfig::parse("alpha=2\n").is_err());
        assert!(TrainConfig::parse("learning_rate=1\n").is_err());
        assert!(TrainConfig::parse("regime=paired\nndf=8\nd_layers=0\n").is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let c = TrainConfig::parse("seed=4\nalpha=0.25\ndistill_layer=res2\ndataset=/tmp/d\n").unwrap();
        assert_eq!(TrainConfig::from_kv(&c.to_kv()).unwrap(), c);
        let p = TrainConfig::paired();
        assert_eq!(TrainConfig::from_kv(&p.to_kv()).unwrap(), p);
    }
}
