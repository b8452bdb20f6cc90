//! Convolution, transposed convolution, reflection padding and channel
//! concatenation, all on NCHW tensors.
//!
//! Convolutions lower to a single GEMM per batch item through an im2col
//! buffer of shape `(C·k·k) × (H_out·W_out)`.

use super::gemm::gemm;
use super::{Op, Tensor};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub mode: PadMode,
    pub size: usize,
}

impl Padding {
    pub const NONE: Padding = Padding {
        mode: PadMode::Zero,
        size: 0,
    };

    pub fn zero(size: usize) -> Self {
        Padding {
            mode: PadMode::Zero,
            size,
        }
    }

    pub fn reflect(size: usize) -> Self {
        Padding {
            mode: PadMode::Reflect,
            size,
        }
    }
}

/// Geometry of one 2-D sliding window pass.
#[derive(Clone, Copy)]
struct Window {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col(x: &[f64], win: Window, cols: &mut [f64]) {
    let Window {
        channels,
        h,
        w,
        k,
        stride,
        pad,
        oh,
        ow,
    } = win;
    let l = oh * ow;
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add inverse of [`im2col`].
fn col2im(cols: &[f64], win: Window, x: &mut [f64]) {
    let Window {
        channels,
        h,
        w,
        k,
        stride,
        pad,
        oh,
        ow,
    } = win;
    let l = oh * ow;
    for c in 0..channels {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    (padded >= k).then(|| (padded - k) / stride + 1)
}

fn check_weight(op: &'static str, weight: &Tensor) -> Result<(usize, usize, usize)> {
    match *weight.shape() {
        [a, b, kh, kw] if kh == kw && kh > 0 => Ok((a, b, kh)),
        _ => Err(shape_err(
            op,
            format!("expected square kernel [A, B, k, k], got weight shape {:?}", weight.shape()),
        )),
    }
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(shape_err(
                op,
                format!("bias shape {:?} does not match {channels} output channels", b.shape()),
            ));
        }
    }
    Ok(())
}

fn add_bias(out: &mut [f64], bias: Option<&Tensor>, n: usize, c: usize, plane: usize) {
    if let Some(b) = bias {
        for ni in 0..n {
            for (ci, bv) in b.data().iter().enumerate().take(c) {
                let start = (ni * c + ci) * plane;
                out[start..start + plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

fn bias_grad(g: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; c];
    for ni in 0..n {
        for (ci, acc) in gb.iter_mut().enumerate() {
            let start = (ni * c + ci) * plane;
            *acc += g[start..start + plane].iter().sum::<f64>();
        }
    }
    gb
}

/// 2-D cross-correlation. `weight` is `[C_out, C_in, k, k]`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    if stride == 0 {
        return Err(shape_err("conv2d", "stride must be positive"));
    }
    match padding.mode {
        PadMode::Reflect if padding.size > 0 => {
            let padded = input.reflect_pad(padding.size)?;
            conv2d_zero(&padded, weight, bias, stride, 0)
        }
        _ => conv2d_zero(input, weight, bias, stride, padding.size),
    }
}

fn conv2d_zero(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4("conv2d")?;
    let (co, ci, k) = check_weight("conv2d", weight)?;
    if ci != c {
        return Err(shape_err(
            "conv2d",
            format!("input has {c} channels but weight expects {ci} (weight shape {:?})", weight.shape()),
        ));
    }
    check_bias("conv2d", bias, co)?;
    let (Some(oh), Some(ow)) = (conv_out(h, k, stride, pad), conv_out(w, k, stride, pad)) else {
        return Err(shape_err(
            "conv2d",
            format!("kernel {k}x{k} does not fit input {h}x{w} with padding {pad}"),
        ));
    };
    let win = Window {
        channels: c,
        h,
        w,
        k,
        stride,
        pad,
        oh,
        ow,
    };
    let mut cols = vec![0.0; win.rows() * win.cols()];
    let mut out = vec![0.0; n * co * oh * ow];
    for ni in 0..n {
        im2col(&input.data()[ni * c * h * w..(ni + 1) * c * h * w], win, &mut cols);
        let dst = &mut out[ni * co * oh * ow..(ni + 1) * co * oh * ow];
        gemm(co, win.rows(), win.cols(), weight.data(), false, &cols, false, 0.0, dst);
    }
    add_bias(&mut out, bias, n, co, oh * ow);
    Ok(Tensor::from_op(
        out,
        vec![n, co, oh, ow],
        Op::Conv2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.cloned(),
            stride,
            pad,
        },
    ))
}

pub(super) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
    g: &[f64],
) -> Vec<Option<Vec<f64>>> {
    let (n, c, h, w) = input.dims4("conv2d").unwrap();
    let (co, _, k) = check_weight("conv2d", weight).unwrap();
    let oh = conv_out(h, k, stride, pad).unwrap();
    let ow = conv_out(w, k, stride, pad).unwrap();
    let win = Window {
        channels: c,
        h,
        w,
        k,
        stride,
        pad,
        oh,
        ow,
    };
    let (rows, l) = (win.rows(), win.cols());
    let mut cols = vec![0.0; rows * l];
    let mut gx = input.requires_grad().then(|| vec![0.0; input.numel()]);
    let mut gw = weight.requires_grad().then(|| vec![0.0; weight.numel()]);
    for ni in 0..n {
        let gn = &g[ni * co * l..(ni + 1) * co * l];
        if let Some(gw) = gw.as_mut() {
            im2col(&input.data()[ni * c * h * w..(ni + 1) * c * h * w], win, &mut cols);
            gemm(co, l, rows, gn, false, &cols, true, 1.0, gw);
        }
        if let Some(gx) = gx.as_mut() {
            gemm(rows, co, l, weight.data(), true, gn, false, 0.0, &mut cols);
            col2im(&cols, win, &mut gx[ni * c * h * w..(ni + 1) * c * h * w]);
        }
    }
    let mut grads = vec![gx, gw];
    if let Some(b) = bias {
        grads.push(b.requires_grad().then(|| bias_grad(g, n, co, l)));
    }
    grads
}

/// Transposed convolution, the adjoint of [`conv2d`] with zero padding.
/// `weight` is `[C_in, C_out, k, k]`; the output side is
/// `(H - 1)·stride - 2·padding + k + output_padding`.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor> {
    let (n, ci, h, w) = input.dims4("conv_transpose2d")?;
    let (wi, co, k) = check_weight("conv_transpose2d", weight)?;
    if stride == 0 {
        return Err(shape_err("conv_transpose2d", "stride must be positive"));
    }
    if wi != ci {
        return Err(shape_err(
            "conv_transpose2d",
            format!("input has {ci} channels but weight expects {wi} (weight shape {:?})", weight.shape()),
        ));
    }
    if output_padding >= stride {
        return Err(shape_err(
            "conv_transpose2d",
            format!("output padding {output_padding} must be smaller than stride {stride}"),
        ));
    }
    check_bias("conv_transpose2d", bias, co)?;
    let full_h = (h - 1) * stride + k + output_padding;
    let full_w = (w - 1) * stride + k + output_padding;
    if h == 0 || w == 0 || full_h <= 2 * padding || full_w <= 2 * padding {
        return Err(shape_err(
            "conv_transpose2d",
            format!("input {h}x{w} with kernel {k}, padding {padding} yields an empty output"),
        ));
    }
    let (oh, ow) = (full_h - 2 * padding, full_w - 2 * padding);
    let win = Window {
        channels: co,
        h: oh,
        w: ow,
        k,
        stride,
        pad: padding,
        oh: h,
        ow: w,
    };
    let mut cols = vec![0.0; win.rows() * win.cols()];
    let mut out = vec![0.0; n * co * oh * ow];
    for ni in 0..n {
        let xn = &input.data()[ni * ci * h * w..(ni + 1) * ci * h * w];
        gemm(win.rows(), ci, h * w, weight.data(), true, xn, false, 0.0, &mut cols);
        col2im(&cols, win, &mut out[ni * co * oh * ow..(ni + 1) * co * oh * ow]);
    }
    add_bias(&mut out, bias, n, co, oh * ow);
    Ok(Tensor::from_op(
        out,
        vec![n, co, oh, ow],
        Op::ConvTranspose2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.cloned(),
            stride,
            pad: padding,
        },
    ))
}

pub(super) fn conv_transpose2d_backward(
    out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
    g: &[f64],
) -> Vec<Option<Vec<f64>>> {
    let (n, ci, h, w) = input.dims4("conv_transpose2d").unwrap();
    let (_, co, oh, ow) = out.dims4("conv_transpose2d").unwrap();
    let k = weight.shape()[2];
    let win = Window {
        channels: co,
        h: oh,
        w: ow,
        k,
        stride,
        pad,
        oh: h,
        ow: w,
    };
    let (rows, l) = (win.rows(), win.cols());
    let mut cols = vec![0.0; rows * l];
    let mut gx = input.requires_grad().then(|| vec![0.0; input.numel()]);
    let mut gw = weight.requires_grad().then(|| vec![0.0; weight.numel()]);
    for ni in 0..n {
        im2col(&g[ni * co * oh * ow..(ni + 1) * co * oh * ow], win, &mut cols);
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx[ni * ci * l..(ni + 1) * ci * l];
            gemm(ci, rows, l, weight.data(), false, &cols, false, 0.0, dst);
        }
        if let Some(gw) = gw.as_mut() {
            let xn = &input.data()[ni * ci * l..(ni + 1) * ci * l];
            gemm(ci, l, rows, xn, false, &cols, true, 1.0, gw);
        }
    }
    let mut grads = vec![gx, gw];
    if let Some(b) = bias {
        grads.push(b.requires_grad().then(|| bias_grad(g, n, co, oh * ow)));
    }
    grads
}

fn reflect_index(i: isize, len: usize) -> usize {
    let last = len as isize - 1;
    let mut j = i;
    if j < 0 {
        j = -j;
    }
    if j > last {
        j = 2 * last - j;
    }
    j as usize
}

impl Tensor {
    /// Mirror padding without repeating the edge, on both spatial axes.
    pub fn reflect_pad(&self, pad: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4("reflect_pad")?;
        if pad >= h || pad >= w {
            return Err(shape_err(
                "reflect_pad",
                format!("padding {pad} must be smaller than the input side ({h}x{w})"),
            ));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let src = self.data();
        let mut out = vec![0.0; n * c * ph * pw];
        for plane in 0..n * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            let d = &mut out[plane * ph * pw..(plane + 1) * ph * pw];
            for y in 0..ph {
                let sy = reflect_index(y as isize - pad as isize, h);
                for x in 0..pw {
                    let sx = reflect_index(x as isize - pad as isize, w);
                    d[y * pw + x] = s[sy * w + sx];
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![n, c, ph, pw],
            Op::ReflectPad {
                input: self.clone(),
                pad,
            },
        ))
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
        let Some(first) = parts.first() else {
            return Err(shape_err("concat_channels", "no tensors given"));
        };
        let (n, _, h, w) = first.dims4("concat_channels")?;
        let mut total_c = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4("concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(shape_err(
                    "concat_channels",
                    format!("shapes {:?} and {:?} differ outside the channel axis", first.shape(), p.shape()),
                ));
            }
            total_c += pc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total_c * plane);
        for ni in 0..n {
            for p in parts {
                let pc = p.shape()[1];
                out.extend_from_slice(&p.data()[ni * pc * plane..(ni + 1) * pc * plane]);
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![n, total_c, h, w],
            Op::ConcatChannels(parts.to_vec()),
        ))
    }
}

pub(super) fn reflect_pad_backward(input: &Tensor, pad: usize, g: &[f64]) -> Vec<f64> {
    let (n, c, h, w) = input.dims4("reflect_pad").unwrap();
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut gx = vec![0.0; input.numel()];
    for plane in 0..n * c {
        let gs = &g[plane * ph * pw..(plane + 1) * ph * pw];
        let d = &mut gx[plane * h * w..(plane + 1) * h * w];
        for y in 0..ph {
            let sy = reflect_index(y as isize - pad as isize, h);
            for x in 0..pw {
                let sx = reflect_index(x as isize - pad as isize, w);
                d[sy * w + sx] += gs[y * pw + x];
            }
        }
    }
    gx
}

pub(super) fn concat_backward(parts: &[Tensor], g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let [n, _, h, w] = parts[0].shape()[..] else {
        unreachable!()
    };
    let total_c: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let plane = h * w;
    let mut offset = 0;
    parts
        .iter()
        .map(|p| {
            let pc = p.shape()[1];
            let out = p.requires_grad().then(|| {
                let mut gp = Vec::with_capacity(p.numel());
                for ni in 0..n {
                    let start = (ni * total_c + offset) * plane;
                    gp.extend_from_slice(&g[start..start + pc * plane]);
                }
                gp
            });
            offset += pc;
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    /// Direct six-loop evaluation with zero padding.
    fn naive_conv(x: &Tensor, wt: &Tensor, b: &[f64], s: usize, p: usize) -> Vec<f64> {
        let (n, c, h, w) = x.dims4("t").unwrap();
        let (co, _, k, _) = wt.dims4("t").unwrap();
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let (xd, wd) = (x.data(), wt.data());
        let mut out = vec![0.0; n * co * oh * ow];
        for ni in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[o];
                        for ci in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * s + ki) as isize - p as isize;
                                    let ix = (ox * s + kj) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += xd[((ni * c + ci) * h + iy as usize) * w + ix as usize]
                                        * wd[((o * c + ci) * k + ki) * k + kj];
                                }
                            }
                        }
                        out[((ni * co + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::new((0..9).map(f64::from).collect(), &[1, 1, 3, 3]).unwrap();
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d(&x, &k, None, 1, Padding::NONE).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn all_ones_sum() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, None, 1, Padding::NONE).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, &[2, 3, 8, 8]);
        let w = rand_tensor(&mut rng, &[4, 3, 3, 3]);
        let b = rand_tensor(&mut rng, &[4]);
        let y = conv2d(&x, &w, Some(&b), 2, Padding::zero(1)).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 4]);
        let want = naive_conv(&x, &w, b.data(), 2, 1);
        for (a, e) in y.data().iter().zip(&want) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn transposed_shape_arithmetic() {
        let x = Tensor::zeros(&[1, 2, 16, 16]);
        let w = Tensor::zeros(&[2, 3, 3, 3]);
        let y = conv_transpose2d(&x, &w, None, 2, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 32, 32]);
    }

    #[test]
    fn transposed_single_pixel() {
        let x = Tensor::full(&[1, 1, 1, 1], 0.75);
        let w = Tensor::full(&[1, 1, 2, 2], 1.0);
        let y = conv_transpose2d(&x, &w, None, 1, 0, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[0.75; 4]);
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(h, k, s, p) in &[(8, 3, 2, 1), (7, 3, 1, 1), (9, 4, 2, 1), (6, 1, 1, 0), (10, 5, 3, 2)] {
            let x = rand_tensor(&mut rng, &[2, 3, h, h]);
            let w = rand_tensor(&mut rng, &[4, 3, k, k]);
            let y1 = conv2d(&x, &w, None, s, Padding::zero(p)).unwrap();
            let y = rand_tensor(&mut rng, y1.shape());
            let op = (h + 2 * p - k) % s;
            let xt = conv_transpose2d(&y, &w, None, s, p, op).unwrap();
            assert_eq!(xt.shape(), x.shape());
            let (lhs, rhs) = (dot(&y1, &y), dot(&x, &xt));
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn reflect_pad_values() {
        let x =Tensor::new((1..=9).map(f64::from).collect(), &[1, 1, 3, 3]).unwrap();
        let y = x.reflect_pad(1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5]);
        assert_eq!(&y.data()[..5], &[5.0, 4.0, 5.0, 6.0, 5.0]);
        assert_eq!(&y.data()[5..10], &[2.0, 1.0, 2.0, 3.0, 2.0]);
        assert!(x.reflect_pad(3).is_err());
    }

    #[test]
    fn channel_mismatch_names_dimensions() {
        let x = Tensor::zeros(&[1, 3, 8, 8]);
        let w = Tensor::zeros(&[4, 2, 3, 3]);
        let err = conv2d(&x, &w, None, 1, Padding::NONE).unwrap_err().to_string();
        assert!(err.contains("3 channels") && err.contains("expects 2"), "{err}");
        let big = Tensor::zeros(&[4, 3, 9, 9]);
        let err = conv2d(&x, &big, None, 1, Padding::NONE).unwrap_err().to_string();
        assert!(err.contains("9x9") && err.contains("8x8"), "{err}");
    }

    #[test]
    fn concat_then_split_gradient() {
        let a = Tensor::full(&[1, 1, 2, 2], 1.0).with_grad();
        let b = Tensor::full(&[1, 2, 2, 2], 2.0).with_grad();
        let c = Tensor::concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.shape(), &[1, 3, 2, 2]);
        let wts = Tensor::new((0..12).map(f64::from).collect(), &[1, 3, 2, 2]).unwrap();
        c.mul(&wts).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(b.grad().unwrap(), (4..12).map(f64::from).collect::<Vec<_>>());
    }
}
