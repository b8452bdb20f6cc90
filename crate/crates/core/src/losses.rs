//! Training objectives: least-squares adversarial loss, cycle consistency
//! blended with teacher reconstructions, and the semantic-relation (SP)
//! loss between pixel-pairwise similarity matrices.
//!
//! For a feature map `F̂ ∈ R^{1×C×H×W}` the encoding `F ∈ R^{C×P}` holds one
//! column per pixel (`P = H·W`). The activation matrix is `A = rownorm(FᵀF)`,
//! a `P × P` matrix whose entry `(i, j)` is the cosine-like similarity of
//! pixels `i` and `j` across channels. It does not depend on `C`, so teacher
//! and student may have different widths as long as the grids agree.

use crate::error::{shape_err, Error, Result};
use crate::models::Model;
use crate::tensor::Tensor;

/// `C × P` matrix of per-pixel feature columns.
#[derive(Debug, Clone)]
pub struct FeatureEncoding {
    matrix: Tensor,
    height: usize,
    width: usize,
}

impl FeatureEncoding {
    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn channels(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Restores the `1 × C × H × W` feature map.
    pub fn unflatten(&self) -> Result<Tensor> {
        self.matrix
            .reshape(&[1, self.channels(), self.height, self.width])
    }
}

/// Row-normalized `P × P` pixel similarity matrix.
#[derive(Debug, Clone)]
pub struct ActivationMatrix {
    matrix: Tensor,
    height: usize,
    width: usize,
}

impl ActivationMatrix {
    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn pixels(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Constant copy; gradients stop here.
    pub fn detach(&self) -> Self {
        ActivationMatrix {
            matrix: self.matrix.detach(),
            ..*self
        }
    }

    pub fn from_matrix(matrix: Tensor, grid: (usize, usize)) -> Result<Self> {
        let p = grid.0 * grid.1;
        if matrix.shape() != [p, p] {
            return Err(shape_err(
                "activation matrix",
                format!("grid {grid:?} needs a {p}x{p} matrix, got {:?}", matrix.shape()),
            ));
        }
        Ok(ActivationMatrix {
            matrix,
            height: grid.0,
            width: grid.1,
        })
    }
}

/// Reshapes `1 × C × H × W` to `C × (H·W)`; row `c` scans channel `c`
/// row-major.
pub fn flatten_features(feature: &Tensor) -> Result<FeatureEncoding> {
    let (n, c, h, w) = feature.dims4("flatten_features")?;
    if n != 1 {
        return Err(shape_err(
            "flatten_features",
            format!("batch size must be 1, got {n}"),
        ));
    }
    Ok(FeatureEncoding {
        matrix: feature.reshape(&[c, h * w])?,
        height: h,
        width: w,
    })
}

/// Unnormalized pixel Gram matrix `FᵀF`.
pub fn pixel_gram(f: &FeatureEncoding) -> Result<Tensor> {
    f.matrix.transpose2d()?.matmul(&f.matrix)
}

pub fn semrel_matrix(f: &FeatureEncoding) -> Result<ActivationMatrix> {
    Ok(ActivationMatrix {
        matrix: pixel_gram(f)?.row_normalize()?,
        height: f.height,
        width: f.width,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl std::str::FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reduction::Mean),
            "sum" => Ok(Reduction::Sum),
            other => Err(Error::Config(format!("unknown reduction `{other}`"))),
        }
    }
}

fn l1(a: &Tensor, b: &Tensor, reduction: Reduction) -> Result<Tensor> {
    let m = a.abs_mean(b)?;
    Ok(match reduction {
        Reduction::Mean => m,
        Reduction::Sum => m.scale(a.numel() as f64),
    })
}

/// L1 distance between teacher and student activation matrices.
pub fn sp_loss(teacher: &ActivationMatrix, student: &ActivationMatrix) -> Result<Tensor> {
    sp_loss_reduced(teacher, student, Reduction::Mean)
}

pub fn sp_loss_reduced(
    teacher: &ActivationMatrix,
    student: &ActivationMatrix,
    reduction: Reduction,
) -> Result<Tensor> {
    if teacher.grid() != student.grid() {
        return Err(shape_err(
            "sp_loss",
            format!(
                "teacher grid {}x{} and student grid {}x{} differ",
                teacher.height, teacher.width, student.height, student.width
            ),
        ));
    }
    l1(&teacher.matrix, &student.matrix, reduction)
}

/// Least-squares GAN loss: mean of `(score - target)²` with target 1 for
/// real and 0 for fake.
pub fn adversarial_loss(scores: &Tensor, target_is_real: bool) -> Result<Tensor> {
    let target = Tensor::full(scores.shape(), if target_is_real { 1.0 } else { 0.0 });
    scores.square_mean(&target)
}

/// `α·L1(x, rec_s) + (1 − α)·L1(rec_t, rec_s)` for one cycle direction.
/// Without a teacher reconstruction `α` must be 1.
pub fn vanilla_kd_cycle(
    x: &Tensor,
    rec_student: &Tensor,
    rec_teacher: Option<&Tensor>,
    alpha: f64,
) -> Result<Tensor> {
    let truth = l1(x, rec_student, Reduction::Mean)?.scale(alpha);
    match rec_teacher {
        Some(t) => truth.add(&l1(t, rec_student, Reduction::Mean)?.scale(1.0 - alpha)),
        None if alpha == 1.0 => Ok(truth),
        None => Err(Error::Invalid(
            "teacher reconstruction required when alpha < 1".into(),
        )),
    }
}

/// Discriminator objective, halved: `0.5·(LS(D(real), 1) + LS(D(fake), 0))`.
/// `fake` is detached so no gradient reaches the generator.
pub fn discriminator_loss(d: &Model, real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    let real_term = adversarial_loss(&d.forward(real)?, true)?;
    let fake_term = adversarial_loss(&d.forward(&fake.detach())?, false)?;
    Ok(real_term.add(&fake_term)?.scale(0.5))
}

/// Hyperparameters of the distillation objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Cycle (or paired L1) weight.
    pub lambda: f64,
    /// Ground truth vs teacher blend; 1 ignores the teacher.
    pub alpha: f64,
    /// SP weight for the A (X→Y) generator; the paired objective uses only this one.
    pub gamma1: f64,
    /// SP weight for the B (Y→X) generator.
    pub gamma2: f64,
    /// Feature point for the SP loss; `None` uses each model's encoder endpoint.
    pub distill_layer: Option<String>,
    pub reduction: Reduction,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            lambda: 10.0,
            alpha: 0.05,
            gamma1: 0.5,
            gamma2: 0.5,
            distill_layer: None,
            reduction: Reduction::Mean,
        }
    }
}

impl DistillConfig {
    /// Plain training without any teacher signal.
    pub fn without_teacher(lambda: f64) -> Self {
        DistillConfig {
            lambda,
            alpha: 1.0,
            gamma1: 0.0,
            gamma2: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        for (name, v) in [("lambda", self.lambda), ("gamma1", self.gamma1), ("gamma2", self.gamma2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }

    pub fn needs_teacher(&self) -> bool {
        self.alpha < 1.0 || self.gamma1 > 0.0 || self.gamma2 > 0.0
    }

    fn layer_for<'a>(&'a self, m: &'a Model) -> &'a str {
        self.distill_layer.as_deref().unwrap_or(m.encoder_endpoint())
    }
}

/// One weighted component of an objective.
#[derive(Debug, Clone)]
pub struct LossTerm {
    pub name: String,
    pub weight: f64,
    pub value: Tensor,
}

/// Named, weighted components in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct LossTerms {
    terms: Vec<LossTerm>,
}

impl LossTerms {
    pub fn push(&mut self, name: &str, weight: f64, value: Tensor) {
        // zero-weight terms are reported but kept out of the graph
        let value = if weight == 0.0 { value.detach() } else { value };
        self.terms.push(LossTerm {
            name: name.to_string(),
            weight,
            value,
        });
    }

    pub fn iter(&self) -> impl Iterator<Item = &LossTerm> {
        self.terms.iter()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value.item())
    }

    pub fn names(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.name.as_str()).collect()
    }

    /// `Σ weight · value` over the non-zero-weight terms.
    pub fn total(&self) -> Result<Tensor> {
        let mut acc: Option<Tensor> = None;
        for t in self.terms.iter().filter(|t| t.weight != 0.0) {
            let v = if t.weight == 1.0 { t.value.clone() } else { t.value.scale(t.weight) };
            acc = Some(match acc {
                None => v,
                Some(a) => a.add(&v)?,
            });
        }
        Ok(acc.unwrap_or_else(|| Tensor::scalar(0.0)))
    }

    /// Recomputes the weighted sum from the reported scalar values.
    pub fn resum(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.weight != 0.0)
            .map(|t| t.weight * t.value.item())
            .sum()
    }
}

/// Output of a generator-side objective evaluation.
#[derive(Debug, Clone)]
pub struct Objective {
    pub terms: LossTerms,
    pub total: Tensor,
}

pub struct CycleBatch {
    pub real_a: Tensor,
    pub real_b: Tensor,
}

/// `g_a` maps domain A to B, `g_b` maps B to A. `d_a` judges images in
/// domain B, `d_b` judges images in domain A.
pub struct CycleModels<'a> {
    pub g_a: &'a Model,
    pub g_b: &'a Model,
    pub d_a: &'a Model,
    pub d_b: &'a Model,
}

/// Teacher quantities for one unpaired batch, all constants.
#[derive(Debug, Clone)]
pub struct CycleTeacherTargets {
    pub rec_a: Tensor,
    pub rec_b: Tensor,
    pub semrel_a: ActivationMatrix,
    pub semrel_b: ActivationMatrix,
}

/// Runs both frozen teacher generators over a batch.
pub fn cycle_teacher_targets(
    teacher_a: &Model,
    teacher_b: &Model,
    batch: &CycleBatch,
    layer: Option<&str>,
) -> Result<CycleTeacherTargets> {
    let (ta, tb) = (teacher_a.frozen(), teacher_b.frozen());
    let (feat_a, fake_b) = ta.forward_split(&batch.real_a, layer.unwrap_or(ta.encoder_endpoint()))?;
    let rec_a = tb.forward(&fake_b)?;
    let (feat_b, fake_a) = tb.forward_split(&batch.real_b, layer.unwrap_or(tb.encoder_endpoint()))?;
    let rec_b = ta.forward(&fake_a)?;
    Ok(CycleTeacherTargets {
        rec_a,
        rec_b,
        semrel_a: semrel_matrix(&flatten_features(&feat_a)?)?.detach(),
        semrel_b: semrel_matrix(&flatten_features(&feat_b)?)?.detach(),
    })
}

/// Generator outputs produced while evaluating the unpaired objective.
#[derive(Debug, Clone)]
pub struct CycleOutputs {
    pub objective: Objective,
    pub fake_a: Tensor,
    pub fake_b: Tensor,
}

fn matched_semrel(
    teacher: &ActivationMatrix,
    feature: &Tensor,
    layer: &str,
) -> Result<ActivationMatrix> {
    let student = semrel_matrix(&flatten_features(feature)?)?;
    if teacher.grid() != student.grid() {
        return Err(Error::ResolutionMismatch {
            layer: layer.to_string(),
            teacher: teacher.grid(),
            student: student.grid(),
        });
    }
    Ok(student)
}

/// Generator objective for unpaired distillation:
///
/// `L_GAN_A + L_GAN_B + γ1·L_SP_A + γ2·L_SP_B
///   + λ(α·(cyc_a + cyc_b) + (1 − α)·(kd_a + kd_b))`
///
/// where `cyc_*` compare reconstructions with the real images and `kd_*`
/// compare them with the teacher's reconstructions. Terms are emitted as
/// `gan_a, gan_b, sp_a, sp_b, cyc_a, cyc_b, kd_a, kd_b`; the teacher terms
/// are omitted when no targets are given.
pub fn full_cycle_objective(
    batch: &CycleBatch,
    models: &CycleModels,
    teacher: Option<&CycleTeacherTargets>,
    cfg: &DistillConfig,
) -> Result<CycleOutputs> {
    cfg.validate()?;
    if teacher.is_none() && cfg.needs_teacher() {
        return Err(Error::Invalid(
            "distillation weights are set but no teacher targets were given".into(),
        ));
    }
    let layer_a = cfg.layer_for(models.g_a);
    let layer_b = cfg.layer_for(models.g_b);
    let (feat_a, fake_b) = models.g_a.forward_split(&batch.real_a, layer_a)?;
    let rec_a = models.g_b.forward(&fake_b)?;
    let (feat_b, fake_a) = models.g_b.forward_split(&batch.real_b, layer_b)?;
    let rec_b = models.g_a.forward(&fake_a)?;

    // discriminators are judges here, not trainees
    let gan_a = adversarial_loss(&models.d_a.frozen().forward(&fake_b)?, true)?;
    let gan_b = adversarial_loss(&models.d_b.frozen().forward(&fake_a)?, true)?;

    let red = cfg.reduction;
    let mut terms = LossTerms::default();
    terms.push("gan_a", 1.0, gan_a);
    terms.push("gan_b", 1.0, gan_b);
    if let Some(t) = teacher {
        let sa = matched_semrel(&t.semrel_a, &feat_a, layer_a)?;
        let sb = matched_semrel(&t.semrel_b, &feat_b, layer_b)?;
        terms.push("sp_a", cfg.gamma1, sp_loss_reduced(&t.semrel_a, &sa, red)?);
        terms.push("sp_b", cfg.gamma2, sp_loss_reduced(&t.semrel_b, &sb, red)?);
    }
    terms.push("cyc_a", cfg.lambda * cfg.alpha, l1(&rec_a, &batch.real_a, red)?);
    terms.push("cyc_b", cfg.lambda * cfg.alpha, l1(&rec_b, &batch.real_b, red)?);
    if let Some(t) = teacher {
        let w = cfg.lambda * (1.0 - cfg.alpha);
        terms.push("kd_a", w, l1(&rec_a, &t.rec_a, red)?);
        terms.push("kd_b", w, l1(&rec_b, &t.rec_b, red)?);
    }
    let total = terms.total()?;
    Ok(CycleOutputs {
        objective: Objective { terms, total },
        fake_a,
        fake_b,
    })
}

/// The undistilled CycleGAN generator objective
/// `L_GAN_A + L_GAN_B + λ·(cyc_a + cyc_b)`.
pub fn cyclegan_objective(batch: &CycleBatch, models: &CycleModels, lambda: f64) -> Result<Tensor> {
    let fake_b = models.g_a.forward(&batch.real_a)?;
    let rec_a = models.g_b.forward(&fake_b)?;
    let fake_a = models.g_b.forward(&batch.real_b)?;
    let rec_b = models.g_a.forward(&fake_a)?;
    let gan_a = adversarial_loss(&models.d_a.forward(&fake_b)?, true)?;
    let gan_b = adversarial_loss(&models.d_b.forward(&fake_a)?, true)?;
    let cyc = rec_a.abs_mean(&batch.real_a)?.add(&rec_b.abs_mean(&batch.real_b)?)?;
    gan_a.add(&gan_b)?.add(&cyc.scale(lambda))
}

/// Teacher quantities for one paired sample.
#[derive(Debug, Clone)]
pub struct PairedTeacherTarget {
    pub output: Tensor,
    pub semrel: ActivationMatrix,
}

pub fn paired_teacher_target(teacher: &Model, x: &Tensor, layer: Option<&str>) -> Result<PairedTeacherTarget> {
    let t = teacher.frozen();
    let (feat, output) = t.forward_split(x, layer.unwrap_or(t.encoder_endpoint()))?;
    Ok(PairedTeacherTarget {
        output,
        semrel: semrel_matrix(&flatten_features(&feat)?)?.detach(),
    })
}

#[derive(Debug, Clone)]
pub struct PairedOutputs {
    pub objective: Objective,
    pub fake: Tensor,
}

/// Paired (conditional) generator objective:
///
/// `L_GAN + γ·L_SP + λ(α·L1(G(x), y) + (1 − α)·L1(G(x), y_t))`
///
/// with `γ = cfg.gamma1`. The discriminator sees `x` and the image stacked
/// along channels. Terms: `gan, sp, l1, kd`.
pub fn pix2pix_objective(
    x: &Tensor,
    y: &Tensor,
    teacher: Option<&PairedTeacherTarget>,
    generator: &Model,
    discriminator: &Model,
    cfg: &DistillConfig,
) -> Result<PairedOutputs> {
    cfg.validate()?;
    if teacher.is_none() && (cfg.alpha < 1.0 || cfg.gamma1 > 0.0) {
        return Err(Error::Invalid(
            "distillation weights are set but no teacher target was given".into(),
        ));
    }
    let layer = cfg.layer_for(generator);
    let (feat, fake) = generator.forward_split(x, layer)?;
    let joined = Tensor::concat_channels(&[x.clone(), fake.clone()])?;
    let gan = adversarial_loss(&discriminator.frozen().forward(&joined)?, true)?;

    let red = cfg.reduction;
    let mut terms = LossTerms::default();
    terms.push("gan", 1.0, gan);
    if let Some(t) = teacher {
        let s = matched_semrel(&t.semrel, &feat, layer)?;
        terms.push("sp", cfg.gamma1, sp_loss_reduced(&t.semrel, &s, red)?);
    }
    terms.push("l1", cfg.lambda * cfg.alpha, l1(&fake, y, red)?);
    if let Some(t) = teacher {
        terms.push("kd", cfg.lambda * (1.0 - cfg.alpha), l1(&fake, &t.output, red)?);
    }
    let total = terms.total()?;
    Ok(PairedOutputs {
        objective: Objective { terms, total },
        fake,
    })
}

/// The undistilled paired objective `L_GAN + λ·L1(G(x), y)`.
pub fn paired_objective(x: &Tensor, y: &Tensor, generator: &Model, discriminator: &Model, lambda: f64) -> Result<Tensor> {
    let fake = generator.forward(x)?;
    let joined = Tensor::concat_channels(&[x.clone(), fake.clone()])?;
    let gan = adversarial_loss(&discriminator.forward(&joined)?, true)?;
    gan.add(&fake.abs_mean(y)?.scale(lambda))
}

/// Conditional discriminator objective for paired training.
pub fn paired_discriminator_loss(d: &Model, x: &Tensor, y: &Tensor, fake: &Tensor) -> Result<Tensor> {
    let real = Tensor::concat_channels(&[x.clone(), y.clone()])?;
    let fake = Tensor::concat_channels(&[x.clone(), fake.detach()])?;
    discriminator_loss(d, &real, &fake)
}
