//! Randomized finite-difference cases for every differentiable op and for
//! small composed networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srd_core::losses::{
    adversarial_loss, flatten_features, full_cycle_objective, pix2pix_objective, semrel_matrix,
    sp_loss, CycleBatch, CycleModels, CycleTeacherTargets, DistillConfig, PairedTeacherTarget,
};
use srd_core::models::{build_discriminator, build_generator, DiscriminatorSpec, GeneratorSpec, Model};
use srd_core::tensor::{conv2d, conv_transpose2d, grad_check_sampled, GradReport, Padding};
use srd_core::{Result, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const CASES_PER_OP: usize = 20;

pub type CaseFn = fn(&mut ChaCha8Rng) -> Result<GradReport>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(v, shape).unwrap()
}

fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.gen_range(1..=3);
    (0..rank).map(|_| rng.gen_range(1..=4)).collect()
}

/// `Σ w ⊙ y` with fixed random weights, so every output element matters.
fn weighted(y: &Tensor, w: &Tensor) -> Result<Tensor> {
    Ok(y.mul(w)?.sum())
}

fn check(
    inputs: Vec<(&str, Tensor)>,
    out_shape_probe: impl Fn(&[Tensor]) -> Result<Tensor>,
    rng: &mut ChaCha8Rng,
) -> Result<GradReport> {
    let named: Vec<(String, Tensor)> = inputs.into_iter().map(|(n, t)| (n.to_string(), t)).collect();
    let detached: Vec<Tensor> = named.iter().map(|(_, t)| t.detach()).collect();
    let shape = out_shape_probe(&detached)?.shape().to_vec();
    let w = uniform(rng, &shape);
    grad_check_sampled(|xs| weighted(&out_shape_probe(xs)?, &w), &named, usize::MAX, STEP, TOL)
}

fn scalar_check(inputs: Vec<(&str, Tensor)>, f: impl Fn(&[Tensor]) -> Result<Tensor>) -> Result<GradReport> {
    let named: Vec<(String, Tensor)> = inputs.into_iter().map(|(n, t)| (n.to_string(), t)).collect();
    grad_check_sampled(f, &named, usize::MAX, STEP, TOL)
}

fn case_add(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let s = random_shape(rng);
    let (a, b) = (uniform(rng, &s), uniform(rng, &s));
    check(vec![("a", a), ("b", b)], |x| x[0].add(&x[1]), rng)
}

fn case_sub(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let s = random_shape(rng);
    let (a, b) = (uniform(rng, &s), uniform(rng, &s));
    check(vec![("a", a), ("b", b)], |x| x[0].sub(&x[1]), rng)
}

fn case_mul(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let s = random_shape(rng);
    let (a, b) = (uniform(rng, &s), uniform(rng, &s));
    check(vec![("a", a), ("b", b)], |x| x[0].mul(&x[1]), rng)
}

fn case_scale(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let s = random_shape(rng);
    let c = rng.gen_range(-3.0..3.0);
    check(vec![("x", uniform(rng, &s))], move |x| Ok(x[0].scale(c)), rng)
}

fn case_add_scalar(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let s = random_shape(rng);
    let c = rng.gen_range(-3.0..3.0);
    check(vec![("x", uniform(rng, &s))], move |x| Ok(x[0].add_scalar(c)), rng)
}

fn case_relu(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let s = random_shape(rng);
    check(vec![("x", away_from_zero(rng, &s))], |x| Ok(x[0].relu()), rng)
}

fn case_leaky_relu(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let s = random_shape(rng);
    check(vec![("x", away_from_zero(rng, &s))], |x| Ok(x[0].leaky_relu(0.2)), rng)
}

fn case_tanh(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let s = random_shape(rng);
    let x = uniform(rng, &s).scale(2.0);
    check(vec![("x", x)], |x| Ok(x[0].tanh()), rng)
}

fn case_sum(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let s = random_shape(rng);
    scalar_check(vec![("x", uniform(rng, &s))], |x| Ok(x[0].sum()))
}

fn case_mean(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let s = random_shape(rng);
    scalar_check(vec![("x", uniform(rng, &s))], |x| Ok(x[0].mean()))
}

fn case_reshape(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (a, b, c) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
    check(vec![("x", uniform(rng, &[a, b, c]))], move |x| x[0].reshape(&[c, a * b]), rng)
}

fn case_transpose2d(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (m, n) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
    check(vec![("x", uniform(rng, &[m, n]))], |x| x[0].transpose2d(), rng)
}

fn case_matmul(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (m, k, n) = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=5));
    let (a, b) = (uniform(rng, &[m, k]), uniform(rng, &[k, n]));
    check(vec![("a", a), ("b", b)], |x| x[0].matmul(&x[1]), rng)
}

fn case_abs_mean(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let s = random_shape(rng);
    let b = uniform(rng, &s);
    // keep a − b away from the kink
    let a = b.add(&away_from_zero(rng, &s))?;
    scalar_check(vec![("a", a), ("b", b)], |x| x[0].abs_mean(&x[1]))
}

fn case_square_mean(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let s = random_shape(rng);
    let (a, b) = (uniform(rng, &s), uniform(rng, &s));
    scalar_check(vec![("a", a), ("b", b)], |x| x[0].square_mean(&x[1]))
}

fn conv_geometry(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize, usize, usize, usize) {
    let n = rng.gen_range(1..=2);
    let cin = rng.gen_range(1..=3);
    let cout = rng.gen_range(1..=3);
    let k = rng.gen_range(1..=3);
    let stride = rng.gen_range(1..=2);
    let h = rng.gen_range(k.max(3)..=6);
    let w = rng.gen_range(k.max(3)..=6);
    (n, cin, cout, k, stride, h, w)
}

fn case_conv2d(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (n, cin, cout, k, stride, h, w) = conv_geometry(rng);
    let pad = match rng.gen_range(0..3) {
        0 => Padding::NONE,
        1 => Padding::zero(rng.gen_range(1..=2)),
        _ => Padding::reflect(1),
    };
    let x = uniform(rng, &[n, cin, h, w]);
    let wt = uniform(rng, &[cout, cin, k, k]);
    if rng.gen_bool(0.5) {
        let b = uniform(rng, &[cout]);
        check(vec![("x", x), ("w", wt), ("b", b)], move |v| conv2d(&v[0], &v[1], Some(&v[2]), stride, pad), rng)
    } else {
        check(vec![("x", x), ("w", wt)], move |v| conv2d(&v[0], &v[1], None, stride, pad), rng)
    }
}

fn case_conv_transpose2d(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (n, cin, cout, k, stride, h, w) = conv_geometry(rng);
    let pad = rng.gen_range(0..k);
    let out_pad = rng.gen_range(0..stride);
    let x = uniform(rng, &[n, cin, h.min(4), w.min(4)]);
    let wt = uniform(rng, &[cin, cout, k, k]);
    let b = uniform(rng, &[cout]);
    check(
        vec![("x", x), ("w", wt), ("b", b)],
        move |v| conv_transpose2d(&v[0], &v[1], Some(&v[2]), stride, pad, out_pad),
        rng,
    )
}

fn case_reflect_pad(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let pad = rng.gen_range(1..=2);
    let (h, w) = (rng.gen_range(pad + 1..=5), rng.gen_range(pad + 1..=5));
    let c = rng.gen_range(1..=2);
    check(vec![("x", uniform(rng, &[1, c, h, w]))], move |x| x[0].reflect_pad(pad), rng)
}

fn case_instance_norm(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (n, c) = (rng.gen_range(1..=2), rng.gen_range(1..=3));
    let (h, w) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
    check(vec![("x", uniform(rng, &[n, c, h, w]))], |x| x[0].instance_norm(1e-5), rng)
}

fn case_concat_channels(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (h, w) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let (c1, c2) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let (a, b) = (uniform(rng, &[1, c1, h, w]), uniform(rng, &[1, c2, h, w]));
    check(vec![("a", a), ("b", b)], |x| Tensor::concat_channels(&[x[0].clone(), x[1].clone()]), rng)
}

fn case_row_normalize(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (m, n) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
    check(vec![("x", uniform(rng, &[m, n]))], |x| x[0].row_normalize(), rng)
}

pub fn op_cases() -> Vec<(&'static str, CaseFn)> {
    vec![
        ("add", case_add),
        ("sub", case_sub),
        ("mul", case_mul),
        ("scale", case_scale),
        ("add_scalar", case_add_scalar),
        ("relu", case_relu),
        ("leaky_relu", case_leaky_relu),
        ("tanh", case_tanh),
        ("sum", case_sum),
        ("mean", case_mean),
        ("reshape", case_reshape),
        ("transpose2d", case_transpose2d),
        ("matmul", case_matmul),
        ("abs_mean", case_abs_mean),
        ("square_mean", case_square_mean),
        ("conv2d", case_conv2d),
        ("conv_transpose2d", case_conv_transpose2d),
        ("reflect_pad", case_reflect_pad),
        ("instance_norm", case_instance_norm),
        ("concat_channels", case_concat_channels),
        ("row_normalize", case_row_normalize),
    ]
}

/// Gradient of `loss(model with params replaced by xs[..n], extra inputs)`.
fn model_inputs(m: &Model) -> Vec<(String, Tensor)> {
    m.params().iter().map(|(n, t)| (n.clone(), t.detach())).collect()
}

const MAX_PROBES: usize = 24;

fn case_resnet_generator(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let g = build_generator(GeneratorSpec::resnet(1, 2).with_resolution(8), rng)?;
    let x = uniform(rng, &[1, 3, 8, 8]);
    let w = uniform(rng, &[1, 3, 8, 8]);
    let mut inputs = model_inputs(&g);
    let np = inputs.len();
    inputs.push(("input".into(), x));
    grad_check_sampled(
        |v| weighted(&g.with_param_tensors(v[..np].to_vec())?.forward(&v[np])?, &w),
        &inputs,
        MAX_PROBES,
        STEP,
        TOL,
    )
}

fn case_unet_generator(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let g = build_generator(GeneratorSpec::unet_for(1, 32), rng)?;
    let x = uniform(rng, &[1, 3, 32, 32]);
    let w = uniform(rng, &[1, 3, 32, 32]);
    let mut inputs = model_inputs(&g);
    let np = inputs.len();
    inputs.push(("input".into(), x));
    grad_check_sampled(
        |v| weighted(&g.with_param_tensors(v[..np].to_vec())?.forward(&v[np])?, &w),
        &inputs,
        MAX_PROBES,
        STEP,
        TOL,
    )
}

fn case_discriminator(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let spec = DiscriminatorSpec { ndf: 2, n_layers: 2, in_channels: 3 };
    let d = build_discriminator(spec, rng)?;
    let x = uniform(rng, &[1, 3, 16, 16]);
    let real = rng.gen_bool(0.5);
    let mut inputs = model_inputs(&d);
    let np = inputs.len();
    inputs.push(("input".into(), x));
    grad_check_sampled(
        |v| adversarial_loss(&d.with_param_tensors(v[..np].to_vec())?.forward(&v[np])?, real),
        &inputs,
        MAX_PROBES,
        STEP,
        TOL,
    )
}

fn case_sp_loss(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (h, w) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
    let teacher = semrel_matrix(&flatten_features(&uniform(rng, &[1, 6, h, w]))?)?.detach();
    let c = rng.gen_range(1..=4);
    let student = uniform(rng, &[1, c, h, w]);
    scalar_check(vec![("student", student)], |v| sp_loss(&teacher, &semrel_matrix(&flatten_features(&v[0])?)?))
}

fn tiny_cycle(rng: &mut ChaCha8Rng) -> Result<(Model, Model, Model, Model)> {
    let gs = GeneratorSpec::resnet(1, 2).with_resolution(16);
    let ds = DiscriminatorSpec { ndf: 2, n_layers: 1, in_channels: 3 };
    Ok((
        build_generator(gs.clone(), rng)?,
        build_generator(gs, rng)?,
        build_discriminator(ds.clone(), rng)?,
        build_discriminator(ds, rng)?,
    ))
}

fn case_full_cycle_objective(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let (g_a, g_b, d_a, d_b) = tiny_cycle(rng)?;
    let batch = CycleBatch {
        real_a: uniform(rng, &[1, 3, 16, 16]),
        real_b: uniform(rng, &[1, 3, 16, 16]),
    };
    let sem = |rng: &mut ChaCha8Rng| semrel_matrix(&flatten_features(&uniform(rng, &[1, 8, 4, 4])).unwrap()).unwrap();
    let targets = CycleTeacherTargets {
        rec_a: uniform(rng, &[1, 3, 16, 16]),
        rec_b: uniform(rng, &[1, 3, 16, 16]),
        semrel_a: sem(rng),
        semrel_b: sem(rng),
    };
    let cfg = DistillConfig::default();
    let mut inputs = model_inputs(&g_a);
    let np = inputs.len();
    inputs.extend(model_inputs(&g_b).into_iter().map(|(n, t)| (format!("b.{n}"), t)));
    grad_check_sampled(
        |v| {
            let ga = g_a.with_param_tensors(v[..np].to_vec())?;
            let gb = g_b.with_param_tensors(v[np..].to_vec())?;
            let models = CycleModels { g_a: &ga, g_b: &gb, d_a: &d_a, d_b: &d_b };
            Ok(full_cycle_objective(&batch, &models, Some(&targets), &cfg)?.objective.total)
        },
        &inputs,
        MAX_PROBES / 2,
        STEP,
        TOL,
    )
}

fn case_pix2pix_objective(rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let g = build_generator(GeneratorSpec::unet_for(4, 32), rng)?;
    let d = build_discriminator(DiscriminatorSpec { ndf: 4, n_layers: 1, in_channels: 6 }, rng)?;
    let x = uniform(rng, &[1, 3, 32, 32]);
    let y = uniform(rng, &[1, 3, 32, 32]);
    let side = 32 >> 2;
    let target = PairedTeacherTarget {
        output: uniform(rng, &[1, 3, 32, 32]),
        semrel: semrel_matrix(&flatten_features(&uniform(rng, &[1, 8, side, side]))?)?.detach(),
    };
    let cfg = DistillConfig {
        lambda: 100.0,
        gamma1: 1.0,
        gamma2: 0.0,
        ..Default::default()
    };
    let inputs = model_inputs(&g);
    grad_check_sampled(
        |v| Ok(pix2pix_objective(&x, &y, Some(&target), &g.with_param_tensors(v.to_vec())?, &d, &cfg)?.objective.total),
        &inputs,
        MAX_PROBES / 2,
        STEP,
        TOL,
    )
}

pub fn composed_cases() -> Vec<(&'static str, CaseFn)> {
    vec![
        ("resnet_generator", case_resnet_generator),
        ("unet_generator", case_unet_generator),
        ("patch_discriminator", case_discriminator),
        ("sp_loss", case_sp_loss),
        ("full_cycle_objective", case_full_cycle_objective),
        ("pix2pix_objective", case_pix2pix_objective),
    ]
}

/// Outcome of one case family over its seeded runs.
pub struct CaseSummary {
    pub max_rel_error: f64,
    /// `case <i> <tensor>[<index>]` of the worst probe.
    pub worst: String,
    pub probed: usize,
    pub skipped: usize,
}

/// Largest share of probes allowed to be skipped for straddling a kink.
pub const MAX_SKIPPED_FRACTION: f64 = 0.15;

impl CaseSummary {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOL && (self.skipped as f64) <= MAX_SKIPPED_FRACTION * (self.probed + self.skipped) as f64
    }
}

pub fn run_case(name: &str, f: CaseFn, cases: usize) -> Result<CaseSummary> {
    let mut out = CaseSummary { max_rel_error: 0.0, worst: String::new(), probed: 0, skipped: 0 };
    for i in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e37 ^ (i as u64) ^ ((name.len() as u64) << 32));
        rng.set_stream(name.bytes().map(u64::from).sum());
        let report = f(&mut rng)?;
        out.probed += report.probed();
        out.skipped += report.skipped();
        let e = report.max_rel_error();
        if e > out.max_rel_error || e.is_nan() || i == 0 {
            let w = report.worst().map(|w| format!("{}[{}]", w.name, w.worst_index)).unwrap_or_default();
            out.max_rel_error = e;
            out.worst = format!("case {i} {w}");
        }
    }
    Ok(out)
}
