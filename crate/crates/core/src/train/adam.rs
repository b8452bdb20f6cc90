use crate::error::{Error, Result};
use crate::models::{f32_round, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (n, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{n} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update in place. `t` is the 1-based step count.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || m.len() != n || v.len() != n {
        return Err(Error::Shape {
            op: "adam_step",
            detail: format!(
                "params {n}, grads {}, first moment {}, second moment {}",
                grads.len(),
                m.len(),
                v.len()
            ),
        });
    }
    if t == 0 {
        return Err(Error::Invalid("adam step count starts at 1".into()));
    }
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..n {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam state for every parameter of one model.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Adam {
            cfg,
            first: zeros.clone(),
            second: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies the gradients accumulated on `model`'s parameters and returns
    /// the updated model. New values are rounded to `f32` so checkpoints
    /// store them exactly. Parameters without a gradient see a zero gradient.
    pub fn step(&mut self, model: &Model) -> Result<Model> {
        if model.params().len() != self.first.len() {
            return Err(Error::Invalid(format!(
                "optimizer tracks {} tensors, model has {}",
                self.first.len(),
                model.params().len()
            )));
        }
        self.t += 1;
        let mut updated = Vec::with_capacity(self.first.len());
        for (i, (_, p)) in model.params().iter().enumerate() {
            let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            let mut data = p.data().to_vec();
            adam_step(&mut data, &grad, &mut self.first[i], &mut self.second[i], self.t, &self.cfg)?;
            data.iter_mut().for_each(|x| *x = f32_round(*x));
            updated.push(Tensor::new(data, p.shape())?.with_grad());
        }
        model.with_param_tensors(updated)
    }
}
