//! Central finite-difference checks for analytic gradients.

use super::Tensor;
use crate::error::{Error, Result};

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone)]
pub struct GradEntry {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub probed: usize,
    /// Probes whose `x ± step` pair straddled a relu/abs kink. Central
    /// differences are meaningless there, so they are not compared.
    pub skipped: usize,
}

impl GradEntry {
    pub fn compare(name: impl Into<String>, analytic: &[f64], numeric: &[f64]) -> Self {
        assert_eq!(analytic.len(), numeric.len());
        let mut worst = (0.0f64, 0usize);
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let e = relative_error(*a, *n);
            if e > worst.0 || e.is_nan() {
                worst = (e, i);
            }
        }
        GradEntry {
            name: name.into(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            probed: analytic.len(),
            skipped: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
    pub tol: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn probed(&self) -> usize {
        self.entries.iter().map(|e| e.probed).sum()
    }

    pub fn skipped(&self) -> usize {
        self.entries.iter().map(|e| e.skipped).sum()
    }

    pub fn worst(&self) -> Option<&GradEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn scalar_of(t: Tensor) -> Result<f64> {
    if t.numel() != 1 {
        return Err(Error::NonScalarLoss(t.shape().to_vec()));
    }
    Ok(t.item())
}

/// Central differences of `f` with respect to every element of `inputs[which]`.
pub fn numeric_gradient<F>(f: F, inputs: &[Tensor], which: usize, step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let all: Vec<usize> = (0..inputs[which].numel()).collect();
    numeric_gradient_at(f, inputs, which, &all, step)
}

/// Central differences at selected flat indices of `inputs[which]`.
pub fn numeric_gradient_at<F>(f: F, inputs: &[Tensor], which: usize, indices: &[usize], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut args: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
    let base = inputs[which].data().to_vec();
    let shape = inputs[which].shape().to_vec();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let mut probe = base.clone();
        probe[i] = base[i] + step;
        args[which] = Tensor::new(probe.clone(), &shape)?;
        let plus = scalar_of(f(&args)?)?;
        probe[i] = base[i] - step;
        args[which] = Tensor::new(probe, &shape)?;
        let minus = scalar_of(f(&args)?)?;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Central differences that return `None` where the two evaluations sit on
/// different linear pieces of the graph.
fn kink_aware_probes<F>(f: &F, inputs: &[Tensor], which: usize, indices: &[usize], step: f64) -> Result<Vec<Option<f64>>>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut args: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
    let base = inputs[which].data().to_vec();
    let shape = inputs[which].shape().to_vec();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let mut eval = |v: f64| -> Result<(f64, Vec<bool>)> {
            let mut probe = base.clone();
            probe[i] = v;
            // tracked so the graph below this input is kept for the signature
            args[which] = Tensor::new(probe, &shape)?.with_grad();
            let y = f(&args)?;
            Ok((scalar_of(y.clone())?, y.kink_signature()))
        };
        let (plus, sig_plus) = eval(base[i] + step)?;
        let (minus, sig_minus) = eval(base[i] - step)?;
        out.push((sig_plus == sig_minus).then(|| (plus - minus) / (2.0 * step)));
    }
    Ok(out)
}

/// Checks the analytic gradient of `f` with respect to each named input.
pub fn grad_check_many<F>(f: F, inputs: &[(String, Tensor)], step: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    grad_check_sampled(f, inputs, usize::MAX, step, tol)
}

/// Like [`grad_check_many`] but probes at most `max_probes` evenly spaced
/// elements of each input.
pub fn grad_check_sampled<F>(f: F, inputs: &[(String, Tensor)], max_probes: usize, step: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|(_, t)| t.with_grad()).collect();
    let loss = f(&leaves)?;
    loss.backward()?;
    let mut entries = Vec::with_capacity(inputs.len());
    for (i, (name, _)) in inputs.iter().enumerate() {
        let n = leaves[i].numel();
        let indices: Vec<usize> = if n <= max_probes {
            (0..n).collect()
        } else {
            (0..max_probes).map(|k| k * n / max_probes).collect()
        };
        let full = leaves[i].grad().unwrap_or_else(|| vec![0.0; n]);
        let numeric = kink_aware_probes(&f, &leaves, i, &indices, step)?;
        let (mut analytic, mut kept, mut idx) = (Vec::new(), Vec::new(), Vec::new());
        for (&k, num) in indices.iter().zip(&numeric) {
            if let Some(num) = num {
                analytic.push(full[k]);
                kept.push(*num);
                idx.push(k);
            }
        }
        let mut entry = GradEntry::compare(name.clone(), &analytic, &kept);
        entry.worst_index = idx.get(entry.worst_index).copied().unwrap_or(0);
        entry.skipped = indices.len() - idx.len();
        entries.push(entry);
    }
    Ok(GradReport { entries, tol })
}

pub fn grad_check<F>(f: F, input: &Tensor, step: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    grad_check_many(|xs| f(&xs[0]), &[("input".to_string(), input.clone())], step, tol)
}
