use super::gemm::gemm;
use super::{Op, Tensor};
use crate::error::{shape_err, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            op,
            format!("operands have shapes {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = zip_map(self, other, |x, y| x + y);
        Ok(Tensor::from_op(data, self.shape().to_vec(), Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = zip_map(self, other, |x, y| x - y);
        Ok(Tensor::from_op(data, self.shape().to_vec(), Op::Sub(self.clone(), other.clone())))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = zip_map(self, other, |x, y| x * y);
        Ok(Tensor::from_op(data, self.shape().to_vec(), Op::Mul(self.clone(), other.clone())))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * s).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Scale(self.clone(), s))
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|x| x + s).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::AddScalar(self.clone()))
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|&x| x.max(0.0)).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Relu(self.clone()))
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let data = self
            .data()
            .iter()
            .map(|&x| if x >= 0.0 { x } else { slope * x })
            .collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::LeakyRelu(self.clone(), slope))
    }

    pub fn tanh(&self) -> Tensor {
        let data = self.data().iter().map(|x| x.tanh()).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Tanh(self.clone()))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![s], Vec::new(), Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(vec![s / self.numel() as f64], Vec::new(), Op::Mean(self.clone()))
    }

    /// Mean absolute difference (L1 loss, mean reduction).
    pub fn abs_mean(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("abs_mean", self, other)?;
        let s: f64 = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        let v = s / self.numel() as f64;
        Ok(Tensor::from_op(vec![v], Vec::new(), Op::AbsMean(self.clone(), other.clone())))
    }

    /// Mean squared difference (MSE loss, mean reduction).
    pub fn square_mean(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("square_mean", self, other)?;
        let s: f64 = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let v = s / self.numel() as f64;
        Ok(Tensor::from_op(vec![v], Vec::new(), Op::SquareMean(self.clone(), other.clone())))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(shape_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    pub fn transpose2d(&self) -> Result<Tensor> {
        let [r, c] = *self.shape() else {
            return Err(shape_err(
                "transpose2d",
                format!("expected a matrix, got shape {:?}", self.shape()),
            ));
        };
        let data = transpose(r, c, self.data());
        Ok(Tensor::from_op(data, vec![c, r], Op::Transpose2d(self.clone())))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(shape_err(
                "matmul",
                format!("expected matrices, got {:?} and {:?}", self.shape(), other.shape()),
            ));
        };
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("inner dimensions differ: {m}x{k} times {k2}x{n}"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), false, other.data(), false, 0.0, &mut out);
        Ok(Tensor::from_op(out, vec![m, n], Op::MatMul(self.clone(), other.clone())))
    }
}

pub(crate) fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(super) fn elementwise_backward(out: &Tensor, op: &Op, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let need = |t: &Tensor| t.requires_grad();
    let map = |t: &Tensor, f: &dyn Fn(usize) -> f64| -> Option<Vec<f64>> {
        need(t).then(|| (0..g.len()).map(f).collect())
    };
    match op {
        Op::Add(a, b) => vec![map(a, &|i| g[i]), map(b, &|i| g[i])],
        Op::Sub(a, b) => vec![map(a, &|i| g[i]), map(b, &|i| -g[i])],
        Op::Mul(a, b) => {
            let (ad, bd) = (a.data(), b.data());
            vec![map(a, &|i| g[i] * bd[i]), map(b, &|i| g[i] * ad[i])]
        }
        Op::Scale(a, s) => vec![map(a, &|i| g[i] * s)],
        Op::AddScalar(a) | Op::Reshape(a) => vec![map(a, &|i| g[i])],
        Op::Relu(a) => {
            let ad = a.data();
            vec![map(a, &|i| if ad[i] > 0.0 { g[i] } else { 0.0 })]
        }
        Op::LeakyRelu(a, slope) => {
            let ad = a.data();
            vec![map(a, &|i| if ad[i] >= 0.0 { g[i] } else { slope * g[i] })]
        }
        Op::Tanh(a) => {
            let y = out.data();
            vec![map(a, &|i| g[i] * (1.0 - y[i] * y[i]))]
        }
        Op::Sum(a) => vec![need(a).then(|| vec![g[0]; a.numel()])],
        Op::Mean(a) => vec![need(a).then(|| vec![g[0] / a.numel() as f64; a.numel()])],
        Op::AbsMean(a, b) => {
            let n = a.numel() as f64;
            let d: Vec<f64> = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| g[0] * sign(x - y) / n)
                .collect();
            let gb = need(b).then(|| d.iter().map(|v| -v).collect());
            vec![need(a).then_some(d), gb]
        }
        Op::SquareMean(a, b) => {
            let n = a.numel() as f64;
            let d: Vec<f64> = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| g[0] * 2.0 * (x - y) / n)
                .collect();
            let gb = need(b).then(|| d.iter().map(|v| -v).collect());
            vec![need(a).then_some(d), gb]
        }
        Op::Transpose2d(a) => {
            let (r, c) = (a.shape()[0], a.shape()[1]);
            // g is c x r
            vec![need(a).then(|| transpose(c, r, g))]
        }
        Op::MatMul(a, b) => {
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let ga = need(a).then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, false, b.data(), true, 0.0, &mut ga);
                ga
            });
            let gb = need(b).then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, a.data(), true, g, false, 0.0, &mut gb);
                gb
            });
            vec![ga, gb]
        }
        Op::ConcatChannels(parts) => super::conv::concat_backward(parts, g),
        _ => unreachable!("handled by the dedicated backward"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64], s: &[usize]) -> Tensor {
        Tensor::new(v.to_vec(), s).unwrap()
    }

    #[test]
    fn abs_mean_of_self_is_zero() {
        let x = t(&[1.0, -2.0, 3.5, 0.0], &[4]);
        assert_eq!(x.abs_mean(&x).unwrap().item(), 0.0);
    }

    #[test]
    fn identity_matmul() {
        let id = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let m = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        assert_eq!(id.matmul(&m).unwrap().data(), m.data());
    }

    #[test]
    fn mean_value_and_gradient() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[4]).with_grad();
        let m = x.mean();
        assert_eq!(m.item(), 2.5);
        m.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn kink_conventions() {
        let x = t(&[0.0, 0.0], &[2]).with_grad();
        x.leaky_relu(0.2).sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);

        let a = t(&[1.0, 2.0], &[2]).with_grad();
        let b = t(&[1.0, 2.0], &[2]);
        a.abs_mean(&b).unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_named() {
        let a = t(&[1.0, 2.0], &[2]);
        let b = t(&[1.0, 2.0, 3.0], &[3]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
        let m = t(&[1.0; 6], &[2, 3]);
        let err = m.matmul(&m).unwrap_err().to_string();
        assert!(err.contains("2x3 times 2x3"), "{err}");
    }

    #[test]
    fn transpose_round_trip() {
        let m = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let tt = m.transpose2d().unwrap();
        assert_eq!(tt.shape(), &[3, 2]);
        assert_eq!(tt.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(tt.transpose2d().unwrap().data(), m.data());
    }
}
