mod support;

use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use srd_core::losses::{
    cycle_teacher_targets, flatten_features, full_cycle_objective, paired_teacher_target, pix2pix_objective,
    semrel_matrix, sp_loss, sp_loss_reduced, ActivationMatrix, DistillConfig, Reduction,
};
use srd_core::Tensor;
use support::criteria::{
    cycle_reduction_gap, pix2pix_reduction_gap, semrel_invariance_errors, semrel_oracle_error, toy_cycle, toy_paired,
};
use support::oracles::{naive_gram, random_features, straight_line_cycle, straight_line_pix2pix};

fn semrel(f: &Tensor) -> ActivationMatrix {
    semrel_matrix(&flatten_features(f).unwrap()).unwrap()
}

#[test]
fn semrel_matches_double_loop_oracle() {
    let err = semrel_oracle_error(100, 11);
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn semrel_ignores_scale_and_channel_rotation() {
    let (scale, mix) = semrel_invariance_errors(100, 12);
    assert!(scale < 1e-10, "scaling {scale:e}");
    assert!(mix < 1e-8, "orthogonal mixing {mix:e}");
}

#[test]
fn sp_loss_accepts_different_channel_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = semrel(&random_features(&mut rng, 8, 4, 4));
    let s = semrel(&random_features(&mut rng, 4, 4, 4));
    assert!(sp_loss(&t, &s).unwrap().item() > 0.0);
}

fn features() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
    (1usize..=6, 1usize..=4, 1usize..=4).prop_flat_map(|(c, h, w)| {
        (Just(c), Just(h), Just(w), prop::collection::vec(-2.0f64..2.0, c * h * w))
    })
}

proptest! {
    #[test]
    fn gram_is_symmetric_psd((c, h, w, data) in features()) {
        let p = h * w;
        let g = naive_gram(&data, c, p);
        let t = Tensor::new(data.clone(), &[1, c, h, w]).unwrap();
        let lib = srd_core::losses::pixel_gram(&flatten_features(&t).unwrap()).unwrap();
        for i in 0..p {
            for j in 0..p {
                prop_assert!((lib.data()[i * p + j] - lib.data()[j * p + i]).abs() < 1e-12);
                prop_assert!((lib.data()[i * p + j] - g[(i, j)]).abs() < 1e-10);
            }
        }
        let min_eig = SymmetricEigen::new(g).eigenvalues.min();
        prop_assert!(min_eig >= -1e-8, "min eigenvalue {}", min_eig);
    }

    #[test]
    fn activation_rows_are_unit_and_bounded((c, h, w, data) in features()) {
        let p = h * w;
        let a = semrel(&Tensor::new(data, &[1, c, h, w]).unwrap());
        for row in a.matrix().data().chunks(p) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-6, "row norm {}", norm);
            prop_assert!(row.iter().all(|v| v.abs() <= 1.0 + 1e-8));
        }
    }

    #[test]
    fn sp_loss_is_symmetric_and_zero_only_on_equal((c, h, w, data) in features(), shift in 0.01f64..1.0) {
        let f = Tensor::new(data.clone(), &[1, c, h, w]).unwrap();
        let g = Tensor::new(data.iter().enumerate().map(|(i, v)| v + shift * (i as f64).cos()).collect(), &[1, c, h, w]).unwrap();
        let (a, b) = (semrel(&f), semrel(&g));
        let ab = sp_loss(&a, &b).unwrap().item();
        let ba = sp_loss(&b, &a).unwrap().item();
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(sp_loss(&a, &a).unwrap().item(), 0.0);
        let differs = a.matrix().data().iter().zip(b.matrix().data()).any(|(x, y)| (x - y).abs() > 1e-9);
        prop_assert_eq!(differs, ab > 1e-12);
    }
}

#[test]
fn sum_reduction_scales_mean_by_entry_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = semrel(&random_features(&mut rng, 3, 3, 2));
    let b = semrel(&random_features(&mut rng, 5, 3, 2));
    let mean = sp_loss_reduced(&a, &b, Reduction::Mean).unwrap().item();
    let sum = sp_loss_reduced(&a, &b, Reduction::Sum).unwrap().item();
    assert!((sum - 36.0 * mean).abs() < 1e-12);
}

fn distill_cfg() -> DistillConfig {
    DistillConfig { lambda: 10.0, alpha: 0.05, gamma1: 0.5, gamma2: 0.7, ..Default::default() }
}

#[test]
fn cycle_objective_matches_straight_line_oracle() {
    let toy = toy_cycle(21).unwrap();
    let models = toy.models();
    let targets = cycle_teacher_targets(&toy.t_a, &toy.t_b, &toy.batch, None).unwrap();
    for cfg in [distill_cfg(), DistillConfig { alpha: 0.0, ..distill_cfg() }, DistillConfig::without_teacher(10.0)] {
        let teacher = cfg.needs_teacher().then_some(&targets);
        let out = full_cycle_objective(&toy.batch, &models, teacher, &cfg).unwrap();
        let oracle = straight_line_cycle(&toy.batch, &models, teacher, &cfg).unwrap();
        let total = out.objective.total.item();
        assert!((total - oracle).abs() < 1e-12, "{total} vs {oracle}");
        assert!((out.objective.terms.resum() - total).abs() < 1e-12);
    }
}

#[test]
fn cycle_terms_follow_documented_order() {
    let toy = toy_cycle(22).unwrap();
    let targets = cycle_teacher_targets(&toy.t_a, &toy.t_b, &toy.batch, None).unwrap();
    let out = full_cycle_objective(&toy.batch, &toy.models(), Some(&targets), &distill_cfg()).unwrap();
    assert_eq!(out.objective.terms.names(), ["gan_a", "gan_b", "sp_a", "sp_b", "cyc_a", "cyc_b", "kd_a", "kd_b"]);
}

#[test]
fn pix2pix_objective_matches_straight_line_oracle() {
    let toy = toy_paired(23).unwrap();
    let target = paired_teacher_target(&toy.teacher, &toy.x, None).unwrap();
    let paired = DistillConfig { lambda: 100.0, alpha: 0.05, gamma1: 1.0, gamma2: 0.0, ..Default::default() };
    for cfg in [paired.clone(), DistillConfig { alpha: 0.0, ..paired }, DistillConfig::without_teacher(100.0)] {
        let teacher = cfg.needs_teacher().then_some(&target);
        let out = pix2pix_objective(&toy.x, &toy.y, teacher, &toy.g, &toy.d, &cfg).unwrap();
        let oracle = straight_line_pix2pix(&toy.x, &toy.y, teacher, &toy.g, &toy.d, &cfg).unwrap();
        let total = out.objective.total.item();
        assert!((total - oracle).abs() < 1e-12, "{total} vs {oracle}");
    }
}

#[test]
fn zero_distillation_weights_reduce_to_plain_objectives() {
    for seed in 0..3 {
        let c = cycle_reduction_gap(seed).unwrap();
        let p = pix2pix_reduction_gap(seed).unwrap();
        assert!(c <= 1e-12, "cycle gap {c:e}");
        assert!(p <= 1e-12, "paired gap {p:e}");
    }
}
