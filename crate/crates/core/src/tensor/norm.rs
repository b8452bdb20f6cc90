use super::{Op, Tensor};
use crate::error::{shape_err, Result};

impl Tensor {
    /// Instance normalization without affine parameters: every `(n, c)`
    /// plane is shifted to zero mean and scaled by `1/sqrt(var + eps)`,
    /// using the biased variance.
    pub fn instance_norm(&self, eps: f64) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4("instance_norm")?;
        let m = h * w;
        if m == 0 {
            return Err(shape_err("instance_norm", "empty spatial plane"));
        }
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(n * c);
        for plane in 0..n * c {
            let s = &x[plane * m..(plane + 1) * m];
            let mean = s.iter().sum::<f64>() / m as f64;
            let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in out[plane * m..(plane + 1) * m].iter_mut().zip(s) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::InstanceNorm {
                input: self.clone(),
                inv_std,
            },
        ))
    }

    /// Divides every row of a matrix by its L2 norm. All-zero rows stay zero.
    pub fn row_normalize(&self) -> Result<Tensor> {
        let [rows, cols] = *self.shape() else {
            return Err(shape_err(
                "row_normalize",
                format!("expected a matrix, got shape {:?}", self.shape()),
            ));
        };
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        let mut inv_norm = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                // divide rather than scale by 1/norm: single-entry rows come out exactly ±1
                for (o, v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                    *o = v / norm;
                }
            }
            inv_norm.push(if norm > 0.0 { 1.0 / norm } else { 0.0 });
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::RowNormalize {
                input: self.clone(),
                inv_norm,
            },
        ))
    }
}

pub(super) fn instance_norm_backward(out: &Tensor, input: &Tensor, inv_std: &[f64], g: &[f64]) -> Vec<f64> {
    let (_, _, h, w) = input.dims4("instance_norm").unwrap();
    let m = h * w;
    let y = out.data();
    let mut gx = vec![0.0; g.len()];
    for (plane, inv) in inv_std.iter().enumerate() {
        let range = plane * m..(plane + 1) * m;
        let (gs, ys) = (&g[range.clone()], &y[range.clone()]);
        let mean_g = gs.iter().sum::<f64>() / m as f64;
        let mean_gy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / m as f64;
        for ((d, gi), yi) in gx[range].iter_mut().zip(gs).zip(ys) {
            *d = inv * (gi - mean_g - yi * mean_gy);
        }
    }
    gx
}

pub(super) fn row_normalize_backward(out: &Tensor, inv_norm: &[f64], g: &[f64]) -> Vec<f64> {
    let cols = out.shape()[1];
    let y = out.data();
    let mut gx = vec![0.0; g.len()];
    for (r, inv) in inv_norm.iter().enumerate() {
        if *inv == 0.0 {
            continue;
        }
        let range = r * cols..(r + 1) * cols;
        let (gs, ys) = (&g[range.clone()], &y[range.clone()]);
        let proj = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>();
        for ((d, gi), yi) in gx[range].iter_mut().zip(gs).zip(ys) {
            *d = inv * (gi - yi * proj);
        }
    }
    gx
}
