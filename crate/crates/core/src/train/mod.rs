//! Alternating generator / discriminator optimization for teachers and
//! distilled students, in the unpaired (two generators, cycle loss) and
//! paired (one conditional generator) regimes.
//!
//! Each iteration updates the generators first, then the discriminators.
//! Randomness comes from independent ChaCha streams derived from the seed
//! (model init, sample order, each image pool), so a run is a pure function
//! of its config and data, and adding teacher terms never shifts the
//! student's random draws.

mod adam;
mod config;
mod history;
mod pool;

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use adam::{adam_step, Adam, AdamConfig};
pub use config::{gamma_preset, Regime, TrainConfig, CONFIG_KEYS};
pub use history::LossHistory;
pub use pool::ImagePool;

use crate::data::{PairedDataset, UnpairedDataset};
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss, flatten_features, full_cycle_objective, paired_discriminator_loss,
    pix2pix_objective, semrel_matrix, ActivationMatrix, CycleBatch, CycleModels,
    CycleTeacherTargets, DistillConfig, PairedTeacherTarget,
};
use crate::models::{build_discriminator, build_generator, save_model, Arch, Model};
use crate::tensor::Tensor;

const STREAM_INIT: u64 = 1;
const STREAM_SAMPLES: u64 = 2;
const STREAM_POOL_A: u64 = 3;
const STREAM_POOL_B: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// SHA-256 over parameter names, shapes and values, as hex.
pub fn param_digest(model: &Model) -> String {
    let mut h = Sha256::new();
    for (name, t) in model.params() {
        h.update(name.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Trained unpaired models. `g_a` maps A to B and `g_b` maps B to A.
#[derive(Debug, Clone)]
pub struct CycleRun {
    pub g_a: Model,
    pub g_b: Model,
    pub d_a: Model,
    pub d_b: Model,
    pub history: LossHistory,
}

#[derive(Debug, Clone)]
pub struct PairedRun {
    pub generator: Model,
    pub discriminator: Model,
    pub history: LossHistory,
}

/// Frozen unpaired teacher pair.
#[derive(Debug, Clone)]
pub struct CycleTeacher {
    pub g_a: Model,
    pub g_b: Model,
}

fn checkpoint(out: Option<&Path>, cfg: &TrainConfig, it: usize, models: &[(&str, &Model)]) -> Result<()> {
    let Some(dir) = out else { return Ok(()) };
    let due = it == cfg.iterations || (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0);
    if due {
        std::fs::create_dir_all(dir)?;
        for (name, m) in models {
            save_model(dir.join(format!("{name}.ckpt")), m)?;
        }
    }
    Ok(())
}

fn generator_for(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Model> {
    let mut g = build_generator(cfg.generator.clone(), rng)?;
    if let Some(layer) = &cfg.distill.distill_layer {
        g.set_encoder_endpoint(layer)?;
    }
    Ok(g)
}

fn check_resolution(data_res: usize, cfg: &TrainConfig) -> Result<()> {
    if data_res != cfg.generator.resolution {
        return Err(Error::Config(format!(
            "dataset resolution {data_res} differs from generator resolution {}",
            cfg.generator.resolution
        )));
    }
    Ok(())
}

/// Fails unless teacher and student activations at the distill layer share
/// a spatial grid.
pub fn check_distill_layer(teacher: &Model, student: &Model, layer: Option<&str>, resolution: usize) -> Result<()> {
    let lt = layer.unwrap_or(teacher.encoder_endpoint());
    let ls = layer.unwrap_or(student.encoder_endpoint());
    let t = teacher.feature_side(lt, resolution)?;
    let s = student.feature_side(ls, resolution)?;
    if t != s {
        return Err(Error::ResolutionMismatch {
            layer: if lt == ls { lt.to_string() } else { format!("{lt} / {ls}") },
            teacher: (t, t),
            student: (s, s),
        });
    }
    Ok(())
}

/// Teacher reconstruction and activation matrix for one input, through
/// `forward` then `back`.
fn teacher_side(forward: &Model, back: &Model, x: &Tensor, layer: &str) -> Result<(Tensor, ActivationMatrix)> {
    let (feat, fake) = forward.forward_split(x, layer)?;
    let rec = back.forward(&fake)?;
    Ok((rec, semrel_matrix(&flatten_features(&feat)?)?.detach()))
}

struct TeacherCache<'a> {
    teacher: &'a CycleTeacher,
    layer_a: String,
    layer_b: String,
    side_a: HashMap<usize, (Tensor, ActivationMatrix)>,
    side_b: HashMap<usize, (Tensor, ActivationMatrix)>,
}

impl TeacherCache<'_> {
    fn targets(&mut self, ia: usize, a: &Tensor, ib: usize, b: &Tensor) -> Result<CycleTeacherTargets> {
        let t = self.teacher;
        if !self.side_a.contains_key(&ia) {
            self.side_a.insert(ia, teacher_side(&t.g_a, &t.g_b, a, &self.layer_a)?);
        }
        if !self.side_b.contains_key(&ib) {
            self.side_b.insert(ib, teacher_side(&t.g_b, &t.g_a, b, &self.layer_b)?);
        }
        let (rec_a, semrel_a) = self.side_a[&ia].clone();
        let (rec_b, semrel_b) = self.side_b[&ib].clone();
        Ok(CycleTeacherTargets {
            rec_a,
            rec_b,
            semrel_a,
            semrel_b,
        })
    }
}

fn cycle_init(cfg: &TrainConfig) -> Result<(Model, Model, Model, Model)> {
    let mut init = stream(cfg.seed, STREAM_INIT);
    Ok((
        generator_for(cfg, &mut init)?,
        generator_for(cfg, &mut init)?,
        build_discriminator(cfg.discriminator.clone(), &mut init)?,
        build_discriminator(cfg.discriminator.clone(), &mut init)?,
    ))
}

/// The generator pair an unpaired run with `cfg` starts from.
pub fn initial_generators(cfg: &TrainConfig) -> Result<(Model, Model)> {
    let (g_a, g_b, _, _) = cycle_init(cfg)?;
    Ok((g_a, g_b))
}

fn run_cycle(
    data: &UnpairedDataset,
    cfg: &TrainConfig,
    objective: &DistillConfig,
    teacher: Option<&CycleTeacher>,
    out: Option<&Path>,
) -> Result<CycleRun> {
    cfg.validate()?;
    if cfg.regime != Regime::Unpaired {
        return Err(Error::Config("unpaired training needs regime=unpaired".into()));
    }
    check_resolution(data.spec.resolution, cfg)?;
    if data.train_a.is_empty() || data.train_b.is_empty() {
        return Err(Error::Config("unpaired training needs images in both domains".into()));
    }
    let (mut g_a, mut g_b, mut d_a, mut d_b) = cycle_init(cfg)?;

    let mut cache = match teacher {
        Some(t) => {
            let layer = objective.distill_layer.as_deref();
            check_distill_layer(&t.g_a, &g_a, layer, cfg.generator.resolution)?;
            check_distill_layer(&t.g_b, &g_b, layer, cfg.generator.resolution)?;
            Some(TeacherCache {
                teacher: t,
                layer_a: layer.unwrap_or(t.g_a.encoder_endpoint()).to_string(),
                layer_b: layer.unwrap_or(t.g_b.encoder_endpoint()).to_string(),
                side_a: HashMap::new(),
                side_b: HashMap::new(),
            })
        }
        None => None,
    };

    let images_a: Vec<Tensor> = data.train_a.iter().map(|s| s.image.to_tensor()).collect();
    let images_b: Vec<Tensor> = data.train_b.iter().map(|s| s.image.to_tensor()).collect();
    let mut samples = stream(cfg.seed, STREAM_SAMPLES);
    let mut pool_a = ImagePool::new(cfg.pool_size, stream(cfg.seed, STREAM_POOL_A));
    let mut pool_b = ImagePool::new(cfg.pool_size, stream(cfg.seed, STREAM_POOL_B));
    let mut opt = [&g_a, &g_b, &d_a, &d_b].map(|m| Adam::new(cfg.adam, m));
    let mut history: Option<LossHistory> = None;

    for it in 1..=cfg.iterations {
        let ia = samples.gen_range(0..images_a.len());
        let ib = samples.gen_range(0..images_b.len());
        let batch = CycleBatch {
            real_a: images_a[ia].clone(),
            real_b: images_b[ib].clone(),
        };
        let targets = match cache.as_mut() {
            Some(c) => Some(c.targets(ia, &batch.real_a, ib, &batch.real_b)?),
            None => None,
        };
        let models = CycleModels {
            g_a: &g_a,
            g_b: &g_b,
            d_a: &d_a,
            d_b: &d_b,
        };
        let step = full_cycle_objective(&batch, &models, targets.as_ref(), objective)?;
        step.objective.total.backward()?;
        g_a = opt[0].step(&g_a)?;
        g_b = opt[1].step(&g_b)?;

        // d_a judges domain B, d_b judges domain A
        let fake_b = pool_b.push(&step.fake_b);
        let fake_a = pool_a.push(&step.fake_a);
        let loss_da = discriminator_loss(&d_a, &batch.real_b, &fake_b)?;
        loss_da.backward()?;
        d_a = opt[2].step(&d_a)?;
        let loss_db = discriminator_loss(&d_b, &batch.real_a, &fake_a)?;
        loss_db.backward()?;
        d_b = opt[3].step(&d_b)?;

        let mut row: Vec<(String, f64)> =
            step.objective.terms.iter().map(|t| (t.name.clone(), t.value.item())).collect();
        row.push(("total".into(), step.objective.total.item()));
        row.push(("d_a".into(), loss_da.item()));
        row.push(("d_b".into(), loss_db.item()));
        let h = history.get_or_insert_with(|| LossHistory::new(row.iter().map(|(n, _)| n.clone()).collect()));
        h.push(it, row.into_iter().map(|(_, v)| v).collect())?;
        if cfg.log_every > 0 && it % cfg.log_every == 0 {
            log::info!("iteration {it}/{}: {}", cfg.iterations, h.describe_last());
        }
        checkpoint(out, cfg, it, &[("g_a", &g_a), ("g_b", &g_b), ("d_a", &d_a), ("d_b", &d_b)])?;
    }
    let history = history.expect("at least one iteration");
    if let Some(dir) = out {
        std::fs::write(dir.join("history.csv"), history.to_csv())?;
    }
    Ok(CycleRun {
        g_a,
        g_b,
        d_a,
        d_b,
        history,
    })
}

/// Trains an unpaired teacher pair without any distillation terms. Only
/// `lambda` is taken from the distillation settings.
pub fn train_teacher(data: &UnpairedDataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<CycleRun> {
    let objective = DistillConfig {
        distill_layer: cfg.distill.distill_layer.clone(),
        reduction: cfg.distill.reduction,
        ..DistillConfig::without_teacher(cfg.distill.lambda)
    };
    run_cycle(data, cfg, &objective, None, out)
}

/// Trains fresh student generators and discriminators against a frozen
/// teacher pair. The teacher's parameters are only ever read.
pub fn distill_student(
    data: &UnpairedDataset,
    cfg: &TrainConfig,
    teacher: &CycleTeacher,
    out: Option<&Path>,
) -> Result<CycleRun> {
    for g in [&teacher.g_a, &teacher.g_b] {
        if !matches!(g.arch(), Arch::Generator(_)) {
            return Err(Error::Config("teacher checkpoints must hold generators".into()));
        }
    }
    let frozen = CycleTeacher {
        g_a: teacher.g_a.frozen(),
        g_b: teacher.g_b.frozen(),
    };
    run_cycle(data, cfg, &cfg.distill, Some(&frozen), out)
}

fn run_paired(
    data: &PairedDataset,
    cfg: &TrainConfig,
    objective: &DistillConfig,
    teacher: Option<&Model>,
    out: Option<&Path>,
) -> Result<PairedRun> {
    cfg.validate()?;
    if cfg.regime != Regime::Paired {
        return Err(Error::Config("paired training needs regime=paired".into()));
    }
    check_resolution(data.spec.resolution, cfg)?;
    if data.train.is_empty() {
        return Err(Error::Config("paired training needs at least one pair".into()));
    }
    let mut init = stream(cfg.seed, STREAM_INIT);
    let mut g = generator_for(cfg, &mut init)?;
    let mut d = build_discriminator(cfg.discriminator.clone(), &mut init)?;
    let layer = objective.distill_layer.as_deref();
    if let Some(t) = teacher {
        check_distill_layer(t, &g, layer, cfg.generator.resolution)?;
    }
    let inputs: Vec<Tensor> = data.train.iter().map(|s| s.label.to_tensor()).collect();
    let targets: Vec<Tensor> = data.train.iter().map(|s| s.photo.to_tensor()).collect();
    let mut cache: HashMap<usize, PairedTeacherTarget> = HashMap::new();
    let mut samples = stream(cfg.seed, STREAM_SAMPLES);
    let mut opt_g = Adam::new(cfg.adam, &g);
    let mut opt_d = Adam::new(cfg.adam, &d);
    let mut history: Option<LossHistory> = None;

    for it in 1..=cfg.iterations {
        let i = samples.gen_range(0..inputs.len());
        let (x, y) = (&inputs[i], &targets[i]);
        let target = match teacher {
            Some(t) => {
                if !cache.contains_key(&i) {
                    let l = layer.unwrap_or(t.encoder_endpoint());
                    let (feat, output) = t.forward_split(x, l)?;
                    let semrel = semrel_matrix(&flatten_features(&feat)?)?.detach();
                    cache.insert(i, PairedTeacherTarget { output, semrel });
                }
                Some(&cache[&i])
            }
            None => None,
        };
        let step = pix2pix_objective(x, y, target, &g, &d, objective)?;
        step.objective.total.backward()?;
        g = opt_g.step(&g)?;
        let loss_d = paired_discriminator_loss(&d, x, y, &step.fake)?;
        loss_d.backward()?;
        d = opt_d.step(&d)?;

        let mut row: Vec<(String, f64)> =
            step.objective.terms.iter().map(|t| (t.name.clone(), t.value.item())).collect();
        row.push(("total".into(), step.objective.total.item()));
        row.push(("d".into(), loss_d.item()));
        let h = history.get_or_insert_with(|| LossHistory::new(row.iter().map(|(n, _)| n.clone()).collect()));
        h.push(it, row.into_iter().map(|(_, v)| v).collect())?;
        if cfg.log_every > 0 && it % cfg.log_every == 0 {
            log::info!("iteration {it}/{}: {}", cfg.iterations, h.describe_last());
        }
        checkpoint(out, cfg, it, &[("g", &g), ("d", &d)])?;
    }
    let history = history.expect("at least one iteration");
    if let Some(dir) = out {
        std::fs::write(dir.join("history.csv"), history.to_csv())?;
    }
    Ok(PairedRun {
        generator: g,
        discriminator: d,
        history,
    })
}

/// Trains a paired teacher (conditional GAN plus L1) without distillation.
pub fn train_paired_teacher(data: &PairedDataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<PairedRun> {
    let objective = DistillConfig {
        distill_layer: cfg.distill.distill_layer.clone(),
        reduction: cfg.distill.reduction,
        ..DistillConfig::without_teacher(cfg.distill.lambda)
    };
    run_paired(data, cfg, &objective, None, out)
}

pub fn distill_paired_student(
    data: &PairedDataset,
    cfg: &TrainConfig,
    teacher: &Model,
    out: Option<&Path>,
) -> Result<PairedRun> {
    run_paired(data, cfg, &cfg.distill, Some(&teacher.frozen()), out)
}
