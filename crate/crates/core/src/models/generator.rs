use std::fmt;
use std::str::FromStr;

use super::{Layer, Model, Tap};
use crate::error::{Error, Result};
use crate::tensor::{Padding, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Resnet,
    Unet,
}

/// Width and depth of a generator.
///
/// For `Resnet`, `n_blocks` is the number of residual blocks. For `Unet` it
/// is the number of downsampling levels; 8 gives the 256×256 topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n_blocks: usize,
    pub ngf: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub resolution: usize,
}

impl GeneratorSpec {
    pub fn resnet(n_blocks: usize, ngf: usize) -> Self {
        GeneratorSpec {
            kind: GeneratorKind::Resnet,
            n_blocks,
            ngf,
            in_channels: 3,
            out_channels: 3,
            resolution: 256,
        }
    }

    pub fn unet(ngf: usize) -> Self {
        GeneratorSpec {
            kind: GeneratorKind::Unet,
            n_blocks: 8,
            ngf,
            in_channels: 3,
            out_channels: 3,
            resolution: 256,
        }
    }

    pub fn with_resolution(mut self, resolution: usize) -> Self {
        self.resolution = resolution;
        self
    }

    /// UNet depth matched to the resolution so the bottleneck is 1×1.
    pub fn unet_for(ngf: usize, resolution: usize) -> Self {
        let depth = resolution.max(1).trailing_zeros() as usize;
        GeneratorSpec {
            n_blocks: depth,
            ..Self::unet(ngf).with_resolution(resolution)
        }
    }

    /// Same topology with every layer `factor` times narrower.
    pub fn narrower(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.ngf % factor != 0 {
            return Err(Error::InvalidSpec(format!(
                "ngf {} is not divisible by {factor}",
                self.ngf
            )));
        }
        Ok(GeneratorSpec {
            ngf: self.ngf / factor,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.ngf == 0 {
            return bad("ngf must be at least 1".into());
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        match self.kind {
            GeneratorKind::Resnet => {
                if self.n_blocks == 0 {
                    return bad("resnet generators need at least one residual block".into());
                }
                if self.resolution < 8 || self.resolution % 4 != 0 {
                    return bad(format!(
                        "resnet resolution {} must be a multiple of 4 and at least 8",
                        self.resolution
                    ));
                }
            }
            GeneratorKind::Unet => {
                if !(5..=8).contains(&self.n_blocks) {
                    return bad(format!(
                        "unet depth {} outside the supported 5..=8 levels",
                        self.n_blocks
                    ));
                }
                if self.resolution % (1 << self.n_blocks) != 0 || self.resolution == 0 {
                    return bad(format!(
                        "unet with {} levels needs a resolution divisible by {}, got {}",
                        self.n_blocks,
                        1 << self.n_blocks,
                        self.resolution
                    ));
                }
            }
        }
        Ok(())
    }

    pub(super) fn layers(&self) -> Vec<Layer> {
        match self.kind {
            GeneratorKind::Resnet => resnet_layers(self),
            GeneratorKind::Unet => unet_layers(self),
        }
    }

    pub(super) fn feature_points(&self) -> Vec<String> {
        match self.kind {
            GeneratorKind::Resnet => {
                let mut p = vec!["stem".to_string(), "down1".into(), "down2".into()];
                p.extend((1..=self.n_blocks).map(|b| format!("res{b}")));
                p.extend(["up1".to_string(), "up2".into()]);
                p
            }
            GeneratorKind::Unet => (1..=self.n_blocks).map(|k| format!("down{k}")).collect(),
        }
    }

    /// Last residual block for resnets; the 64×64-at-256 level for UNets.
    pub(super) fn default_endpoint(&self) -> String {
        match self.kind {
            GeneratorKind::Resnet => format!("res{}", self.n_blocks),
            GeneratorKind::Unet => "down2".into(),
        }
    }
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            GeneratorKind::Resnet => write!(f, "resnet{}/ngf{}", self.n_blocks, self.ngf),
            GeneratorKind::Unet => write!(f, "unet{}/ngf{}", 1usize << self.n_blocks, self.ngf),
        }
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet" => Ok(GeneratorKind::Resnet),
            "unet" => Ok(GeneratorKind::Unet),
            other => Err(Error::InvalidSpec(format!("unknown generator kind `{other}`"))),
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorKind::Resnet => "resnet",
            GeneratorKind::Unet => "unet",
        })
    }
}

impl GeneratorSpec {
    /// Parses names like `resnet9`, `resnet6`, `unet` or `unet256` with the
    /// given width.
    pub fn from_arch_name(name: &str, ngf: usize) -> Result<Self> {
        if let Some(blocks) = name.strip_prefix("resnet") {
            let n = blocks
                .parse()
                .map_err(|_| Error::InvalidSpec(format!("bad resnet depth in `{name}`")))?;
            return Ok(GeneratorSpec::resnet(n, ngf));
        }
        if let Some(res) = name.strip_prefix("unet") {
            if res.is_empty() {
                return Ok(GeneratorSpec::unet(ngf));
            }
            let r: usize = res
                .parse()
                .map_err(|_| Error::InvalidSpec(format!("bad unet resolution in `{name}`")))?;
            return Ok(GeneratorSpec::unet_for(ngf, r));
        }
        Err(Error::InvalidSpec(format!("unknown architecture `{name}`")))
    }
}

// Layer order below is the execution order; `forward` indexes into it.

fn resnet_layers(s: &GeneratorSpec) -> Vec<Layer> {
    let ngf = s.ngf;
    let mut l = vec![
        Layer::conv("stem", s.in_channels, ngf, 7, 1, Padding::reflect(3)),
        Layer::conv("down1", ngf, 2 * ngf, 3, 2, Padding::zero(1)),
        Layer::conv("down2", 2 * ngf, 4 * ngf, 3, 2, Padding::zero(1)),
    ];
    for b in 1..=s.n_blocks {
        for c in 1..=2 {
            l.push(Layer::conv(format!("res{b}.conv{c}"), 4 * ngf, 4 * ngf, 3, 1, Padding::reflect(1)));
        }
    }
    l.push(Layer::conv_t("up1", 4 * ngf, 2 * ngf, 3, 2, 1, 1));
    l.push(Layer::conv_t("up2", 2 * ngf, ngf, 3, 2, 1, 1));
    l.push(Layer::conv("head", ngf, s.out_channels, 7, 1, Padding::reflect(3)));
    l
}

/// Channel widths `(outer, inner)` of UNet level `k` (1-based, outermost first).
fn unet_level(s: &GeneratorSpec, k: usize) -> (usize, usize) {
    let ngf = s.ngf;
    match k {
        1 => (s.out_channels, ngf),
        2 => (ngf, 2 * ngf),
        3 => (2 * ngf, 4 * ngf),
        4 => (4 * ngf, 8 * ngf),
        _ => (8 * ngf, 8 * ngf),
    }
}

fn unet_layers(s: &GeneratorSpec) -> Vec<Layer> {
    let depth = s.n_blocks;
    let mut l = Vec::with_capacity(2 * depth);
    for k in 1..=depth {
        let (outer, inner) = unet_level(s, k);
        let cin = if k == 1 { s.in_channels } else { outer };
        l.push(Layer::conv(format!("down{k}"), cin, inner, 4, 2, Padding::zero(1)));
    }
    for k in (1..=depth).rev() {
        let (outer, inner) = unet_level(s, k);
        let cin = if k == depth { inner } else { 2 * inner };
        l.push(Layer::conv_t(format!("up{k}"), cin, outer, 4, 2, 1, 0));
    }
    l
}

fn check_input(s: &GeneratorSpec, x: &Tensor) -> Result<()> {
    let (_, c, h, w) = x.dims4("generator")?;
    if c != s.in_channels {
        return Err(Error::Shape {
            op: "generator",
            detail: format!("{s} expects {} input channels, got {c}", s.in_channels),
        });
    }
    let step = match s.kind {
        GeneratorKind::Resnet => 4,
        GeneratorKind::Unet => 1 << s.n_blocks,
    };
    if h % step != 0 || w % step != 0 || h == 0 || w == 0 {
        return Err(Error::Shape {
            op: "generator",
            detail: format!("{s} needs spatial sides divisible by {step}, got {h}x{w}"),
        });
    }
    Ok(())
}

pub(super) fn forward(m: &Model, s: &GeneratorSpec, x: &Tensor, tap: &mut Tap) -> Result<Tensor> {
    check_input(s, x)?;
    match s.kind {
        GeneratorKind::Resnet => resnet_forward(m, s, x, tap),
        GeneratorKind::Unet => unet_forward(m, s, x, tap),
    }
}

fn resnet_forward(m: &Model, s: &GeneratorSpec, x: &Tensor, tap: &mut Tap) -> Result<Tensor> {
    let block = |i: usize, h: &Tensor| -> Result<Tensor> {
        Ok(m.apply_normed(i, h)?.relu())
    };
    let mut h = block(0, x)?;
    tap.mark("stem", &h);
    h = block(1, &h)?;
    tap.mark("down1", &h);
    h = block(2, &h)?;
    tap.mark("down2", &h);
    for b in 0..s.n_blocks {
        let i = 3 + 2 * b;
        let r = block(i, &h)?;
        let r = m.apply_normed(i + 1, &r)?;
        h = h.add(&r)?;
        tap.mark(&format!("res{}", b + 1), &h);
    }
    let up = 3 + 2 * s.n_blocks;
    h = block(up, &h)?;
    tap.mark("up1", &h);
    h = block(up + 1, &h)?;
    tap.mark("up2", &h);
    Ok(m.apply(up + 2, &h)?.tanh())
}

fn unet_forward(m: &Model, s: &GeneratorSpec, x: &Tensor, tap: &mut Tap) -> Result<Tensor> {
    let depth = s.n_blocks;
    let mut skips: Vec<Tensor> = Vec::with_capacity(depth);
    let mut h = x.clone();
    for k in 1..=depth {
        let input = if k == 1 { h } else { h.leaky_relu(0.2) };
        h = if k > 1 && k < depth {
            m.apply_normed(k - 1, &input)?
        } else {
            m.apply(k - 1, &input)?
        };
        tap.mark(&format!("down{k}"), &h);
        skips.push(h.clone());
    }
    // innermost up layer consumes the bottleneck alone
    let mut u = m.apply_normed(depth, &skips[depth - 1].relu())?;
    for k in (1..depth).rev() {
        let joined = Tensor::concat_channels(&[skips[k - 1].clone(), u])?;
        let idx = depth + (depth - k);
        u = if k == 1 {
            m.apply(idx, &joined.relu())?.tanh()
        } else {
            m.apply_normed(idx, &joined.relu())?
        };
    }
    Ok(u)
}
