use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, Padding, Tensor};

/// Mean and covariance of a set of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.shape() != (d, d) {
            return Err(Error::Invalid(format!(
                "moments need d >= 1 and a {d}x{d} covariance, got {:?}",
                cov.shape()
            )));
        }
        check_symmetric(&cov, 1e-10)?;
        Ok(GaussianMoments { mean, cov })
    }

    /// Sample mean and unbiased covariance.
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 samples, got {}",
                samples.len()
            )));
        }
        let d = samples[0].len();
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            return Err(Error::Invalid("samples must share a non-zero dimension".into()));
        }
        let n = samples.len() as f64;
        let mut mean = DVector::zeros(d);
        for s in samples {
            mean += DVector::from_column_slice(s);
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for s in samples {
            let c = DVector::from_column_slice(s) - &mean;
            cov += &c * c.transpose();
        }
        cov /= n - 1.0;
        // exact symmetry; accumulation order can differ by an ulp
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(GaussianMoments { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > tol * scale {
        return Err(Error::Invalid(format!(
            "matrix is not symmetric (max |M - Mᵀ| = {asym:e})"
        )));
    }
    Ok(())
}

/// Principal square root of a symmetric positive semidefinite matrix.
/// Eigenvalues down to −1e-8 (relative) are clamped to zero.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Invalid(format!("matrix_sqrt_psd needs a square matrix, got {:?}", m.shape())));
    }
    check_symmetric(m, 1e-8)?;
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let floor = -1e-8 * m.amax().max(1.0);
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < floor) {
        return Err(Error::Invalid(format!(
            "matrix is not positive semidefinite (eigenvalue {bad:e})"
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// `|μa − μb|² + Tr(Ca + Cb − 2(Ca·Cb)^{1/2})`, clamped at zero.
///
/// The trace of `(Ca·Cb)^{1/2}` is taken as `Tr((√Ca·Cb·√Ca)^{1/2})`, which
/// has the same eigenvalues and keeps every square root symmetric.
pub fn frechet_distance(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Invalid(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let sa = matrix_sqrt_psd(&a.cov)?;
    let inner = &sa * &b.cov * &sa;
    let cross = matrix_sqrt_psd(&((&inner + inner.transpose()) * 0.5))?.trace();
    let d = diff + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn frechet_proxy(features_a: &[Vec<f64>], features_b: &[Vec<f64>]) -> Result<f64> {
    let a = GaussianMoments::from_samples(features_a)?;
    let b = GaussianMoments::from_samples(features_b)?;
    frechet_distance(&a, &b)
}

/// Fixed random convolutional features: three stride-2 3×3 convolutions
/// (3→16→32→64) with ReLU, then global average pooling to 64 values.
/// Weights depend only on the seed. Distances computed with it are only
/// comparable with each other, not with Inception-based scores.
#[derive(Debug, Clone)]
pub struct ProxyExtractor {
    weights: Vec<Tensor>,
}

pub const PROXY_FEATURE_DIM: usize = 64;
pub const PROXY_SEED: u64 = 0x5eed;

impl ProxyExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [3, 16, 32, PROXY_FEATURE_DIM];
        let weights = widths
            .windows(2)
            .map(|w| {
                let (cin, cout) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / (cin * 9) as f64).sqrt()).unwrap();
                let data = (0..cout * cin * 9).map(|_| normal.sample(&mut rng)).collect();
                Tensor::new(data, &[cout, cin, 3, 3]).expect("weight shape")
            })
            .collect();
        ProxyExtractor { weights }
    }

    pub fn features(&self, image: &Tensor) -> Result<Vec<f64>> {
        let mut h = image.detach();
        for w in &self.weights {
            h = conv2d(&h, w, None, 2, Padding::zero(1))?.relu();
        }
        let (_, c, hh, ww) = h.dims4("proxy features")?;
        let p = hh * ww;
        Ok((0..c)
            .map(|k| h.data()[k * p..(k + 1) * p].iter().sum::<f64>() / p as f64)
            .collect())
    }

    pub fn features_of(&self, images: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        images.iter().map(|x| self.features(x)).collect()
    }
}

impl Default for ProxyExtractor {
    fn default() -> Self {
        ProxyExtractor::new(PROXY_SEED)
    }
}
