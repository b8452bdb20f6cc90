//! Naive reference computations shared by the loss tests and the acceptance
//! harness. Everything here works on raw `f64` slices so it shares no code
//! with the library's loss paths.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use srd_core::losses::{ActivationMatrix, CycleBatch, CycleModels, CycleTeacherTargets, DistillConfig, PairedTeacherTarget};
use srd_core::models::Model;
use srd_core::{Result, Tensor};

/// `C × P` features with entries in `[-1, 1)`.
pub fn random_features(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
    let data = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(data, &[1, c, h, w]).unwrap()
}

/// Deterministic, visibly structured values for hand-set toy batches.
pub fn toy_tensor(shape: &[usize], phase: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| (0.37 * i as f64 + phase).sin() * 0.9).collect();
    Tensor::new(data, shape).unwrap()
}

/// Double-loop Gram over pixels followed by per-row L2 normalization.
/// `f` is `C × P` row-major.
pub fn naive_semrel(f: &[f64], c: usize, p: usize) -> Vec<f64> {
    let mut gram = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..c {
                s += f[k * p + i] * f[k * p + j];
            }
            gram[i * p + j] = s;
        }
    }
    for i in 0..p {
        let row = &mut gram[i * p..(i + 1) * p];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    gram
}

/// Unnormalized Gram `FᵀF` as a matrix.
pub fn naive_gram(f: &[f64], c: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| (0..c).map(|k| f[k * p + i] * f[k * p + j]).sum())
}

/// Haar-ish random orthogonal matrix from the QR factor of a Gaussian-like
/// matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    m.qr().q()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn ls(scores: &[f64], target: f64) -> f64 {
    scores.iter().map(|s| (s - target) * (s - target)).sum::<f64>() / scores.len() as f64
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn semrel_of(feature: &Tensor) -> Vec<f64> {
    let s = feature.shape();
    naive_semrel(feature.data(), s[1], s[2] * s[3])
}

fn target_of(a: &ActivationMatrix) -> &[f64] {
    a.matrix().data()
}

fn channel_concat(a: &Tensor, b: &Tensor) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    let data = a.data().iter().chain(b.data()).copied().collect();
    Tensor::new(data, &[1, sa[1] + sb[1], sa[2], sa[3]]).unwrap()
}

/// The unpaired generator objective written out term by term.
pub fn straight_line_cycle(
    batch: &CycleBatch,
    models: &CycleModels,
    teacher: Option<&CycleTeacherTargets>,
    cfg: &DistillConfig,
) -> Result<f64> {
    let layer_a = cfg.distill_layer.clone().unwrap_or_else(|| models.g_a.encoder_endpoint().to_string());
    let layer_b = cfg.distill_layer.clone().unwrap_or_else(|| models.g_b.encoder_endpoint().to_string());
    let fake_b = models.g_a.forward(&batch.real_a)?;
    let rec_a = models.g_b.forward(&fake_b)?;
    let fake_a = models.g_b.forward(&batch.real_b)?;
    let rec_b = models.g_a.forward(&fake_a)?;
    let mut total = ls(models.d_a.forward(&fake_b)?.data(), 1.0) + ls(models.d_b.forward(&fake_a)?.data(), 1.0);
    let cyc = l1(rec_a.data(), batch.real_a.data()) + l1(rec_b.data(), batch.real_b.data());
    total += cfg.lambda * cfg.alpha * cyc;
    if let Some(t) = teacher {
        let feat_a = models.g_a.forward_split(&batch.real_a, &layer_a)?.0;
        let feat_b = models.g_b.forward_split(&batch.real_b, &layer_b)?.0;
        total += cfg.gamma1 * l1(target_of(&t.semrel_a), &semrel_of(&feat_a));
        total += cfg.gamma2 * l1(target_of(&t.semrel_b), &semrel_of(&feat_b));
        let kd = l1(rec_a.data(), t.rec_a.data()) + l1(rec_b.data(), t.rec_b.data());
        total += cfg.lambda * (1.0 - cfg.alpha) * kd;
    }
    Ok(total)
}

/// The paired generator objective written out term by term.
pub fn straight_line_pix2pix(
    x: &Tensor,
    y: &Tensor,
    teacher: Option<&PairedTeacherTarget>,
    g: &Model,
    d: &Model,
    cfg: &DistillConfig,
) -> Result<f64> {
    let layer = cfg.distill_layer.clone().unwrap_or_else(|| g.encoder_endpoint().to_string());
    let fake = g.forward(x)?;
    let mut total = ls(d.forward(&channel_concat(x, &fake))?.data(), 1.0);
    total += cfg.lambda * cfg.alpha * l1(fake.data(), y.data());
    if let Some(t) = teacher {
        let feat = g.forward_split(x, &layer)?.0;
        total += cfg.gamma1 * l1(target_of(&t.semrel), &semrel_of(&feat));
        total += cfg.lambda * (1.0 - cfg.alpha) * l1(fake.data(), t.output.data());
    }
    Ok(total)
}
