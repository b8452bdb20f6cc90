use std::fmt;

use super::{Layer, Model, Tap};
use crate::error::{Error, Result};
use crate::tensor::{Padding, Tensor};

/// PatchGAN discriminator: `n_layers` stride-2 4×4 convolutions, one
/// stride-1 convolution, and a 1-channel stride-1 score layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscriminatorSpec {
    pub ndf: usize,
    pub n_layers: usize,
    /// 3 for unconditional use, 6 when the input image is concatenated.
    pub in_channels: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            ndf: 64,
            n_layers: 3,
            in_channels: 3,
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ndf == 0 || self.n_layers == 0 || self.in_channels == 0 {
            return Err(Error::InvalidSpec(format!(
                "discriminator needs ndf, n_layers and in_channels >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub(super) fn layers(&self) -> Vec<Layer> {
        let ndf = self.ndf;
        let width = |n: usize| ndf * (1usize << n.min(3));
        let mut l = vec![Layer::conv("conv0", self.in_channels, ndf, 4, 2, Padding::zero(1))];
        for n in 1..self.n_layers {
            l.push(Layer::conv(format!("conv{n}"), width(n - 1), width(n), 4, 2, Padding::zero(1)));
        }
        let n = self.n_layers;
        l.push(Layer::conv(format!("conv{n}"), width(n - 1), width(n), 4, 1, Padding::zero(1)));
        l.push(Layer::conv(format!("conv{}", n + 1), width(n), 1, 4, 1, Padding::zero(1)));
        l
    }

    /// Side of the score map for a square input, if the stack fits.
    pub fn patch_side(&self, resolution: usize) -> Option<usize> {
        self.layers()
            .iter()
            .try_fold(resolution, |side, l| l.output_side(side))
    }
}

impl fmt::Display for DiscriminatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "patchgan{}/ndf{}", self.n_layers, self.ndf)
    }
}

pub(super) fn forward(m: &Model, s: &DiscriminatorSpec, x: &Tensor, tap: &mut Tap) -> Result<Tensor> {
    let (_, c, _, _) = x.dims4("discriminator")?;
    if c != s.in_channels {
        return Err(Error::Shape {
            op: "discriminator",
            detail: format!("{s} expects {} input channels, got {c}", s.in_channels),
        });
    }
    let last = s.n_layers + 1;
    let mut h = x.clone();
    for i in 0..last {
        h = if i > 0 { m.apply_normed(i, &h)? } else { m.apply(i, &h)? };
        h = h.leaky_relu(0.2);
        tap.mark(&m.layers()[i].name, &h);
    }
    let out = m.apply(last, &h)?;
    tap.mark(&m.layers()[last].name, &out);
    Ok(out)
}
