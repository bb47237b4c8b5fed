mod common;

use common::oracles::*;
use common::*;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use waldorf::distill::*;
use waldorf::tensor::{Graph, Tensor, Var, MASK_VALUE};
use waldorf::Error;

// ---- embedding / hidden losses ---------------------------------------------

#[test]
fn embedding_loss_identity_projection_is_zero() {
    let mut r = rng(1);
    let e = values(&mut r, 2 * 8 * 3);
    let mut g = Graph::no_grad();
    let s = g.constant(tensor(&[2, 8, 3], e.clone()));
    let eye = g.constant(tensor(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]));
    let l = embedding_loss(&mut g, &e, &s, &eye, &[1.0; 16]).unwrap();
    assert_eq!(l.item(), 0.0);
}

#[test]
fn embedding_loss_of_zero_student_is_mean_square() {
    let mut r = rng(2);
    let t = values(&mut r, 8 * 4);
    let mut g = Graph::no_grad();
    let s = g.constant(Tensor::zeros(&[1, 8, 3]));
    let w = g.constant(random_tensor(&mut r, &[3, 4]));
    let l = embedding_loss(&mut g, &t, &s, &w, &[1.0; 8]).unwrap();
    let ms = t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
    assert!((l.item() - ms).abs() < 1e-12);
}

#[test]
fn embedding_loss_matches_triple_loop() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let (b, l, e1, e2) = (2, 8, 3, 5);
        let mask = ragged_mask(&mut r, b, l);
        let t = values(&mut r, b * l * e2);
        let s = values(&mut r, b * l * e1);
        let w = values(&mut r, e1 * e2);
        let mut g = Graph::no_grad();
        let sv = g.constant(tensor(&[b, l, e1], s.clone()));
        let wv = g.constant(tensor(&[e1, e2], w.clone()));
        let got = embedding_loss(&mut g, &t, &sv, &wv, &mask).unwrap().item();
        let want = projected_mse_oracle(&t, &s, &w, &mask, (b, l, e1, e2));
        assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn embedding_loss_shape_mismatch_is_dimension_error() {
    let mut g = Graph::no_grad();
    let s = g.constant(Tensor::zeros(&[1, 4, 3]));
    let w = g.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(embedding_loss(&mut g, &[0.0; 5], &s, &w, &[1.0; 4]), Err(Error::Dimension(_))));
    let w = g.constant(Tensor::zeros(&[4, 2]));
    assert!(matches!(embedding_loss(&mut g, &[0.0; 8], &s, &w, &[1.0; 4]), Err(Error::Dimension(_))));
}

#[test]
fn hidden_loss_constant_teacher_matched_student_is_zero() {
    let v = [0.5, -1.0, 2.0];
    let teacher = tensor(&[1, 8, 3], v.iter().cycle().take(24).cloned().collect());
    let mut g = Graph::no_grad();
    let s = g.constant(tensor(&[1, 2, 3], v.iter().cycle().take(6).cloned().collect()));
    let eye = g.constant(tensor(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]));
    let l = hidden_loss(&mut g, &teacher, &s, &eye, &[1.0; 8]).unwrap();
    assert_eq!(l.item(), 0.0);
}

#[test]
fn hidden_loss_of_zero_student_is_mean_square_of_pooled_teacher() {
    let mut r = rng(3);
    let teacher = random_tensor(&mut r, &[1, 8, 2]);
    let mut g = Graph::no_grad();
    let s = g.constant(Tensor::zeros(&[1, 2, 3]));
    let w = g.constant(random_tensor(&mut r, &[3, 2]));
    let l = hidden_loss(&mut g, &teacher, &s, &w, &[1.0; 8]).unwrap();
    let pooled = avgpool_oracle(teacher.data(), &[1.0; 8], 1, 8, 2);
    let ms = pooled.iter().map(|v| v * v).sum::<f64>() / pooled.len() as f64;
    assert!((l.item() - ms).abs() < 1e-12);
}

#[test]
fn hidden_loss_matches_pool_then_mse_oracle() {
    for seed in 0..20 {
        let mut r = rng(40 + seed);
        let (b, l, ds, dt) = (2, 16, 3, 4);
        let mask = ragged_mask(&mut r, b, l);
        let teacher = values(&mut r, b * l * dt);
        let s = values(&mut r, b * (l / 4) * ds);
        let w = values(&mut r, ds * dt);
        let mut g = Graph::no_grad();
        let sv = g.constant(tensor(&[b, l / 4, ds], s.clone()));
        let wv = g.constant(tensor(&[ds, dt], w.clone()));
        let got = hidden_loss(&mut g, &tensor(&[b, l, dt], teacher.clone()), &sv, &wv, &mask)
            .unwrap()
            .item();
        let pooled = avgpool_oracle(&teacher, &mask, b, l, dt);
        let want = projected_mse_oracle(&pooled, &s, &w, &compress(&mask, b, l), (b, l / 4, ds, dt));
        assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn hidden_loss_rejects_indivisible_length() {
    let mut g = Graph::no_grad();
    let s = g.constant(Tensor::zeros(&[1, 1, 2]));
    let w = g.constant(Tensor::zeros(&[2, 2]));
    let r = hidden_loss(&mut g, &Tensor::zeros(&[1, 6, 2]), &s, &w, &[1.0; 6]);
    assert!(matches!(r, Err(Error::Length(_))));
}

// ---- pooling and attention -------------------------------------------------

#[test]
fn masked_pools_match_loop_oracles_on_random_instances() {
    for seed in 0..100 {
        let mut r = rng(1000 + seed);
        let (b, h, l, ch) = (2, 2, 4 * r.gen_range(1..=3), 3);
        let mask = ragged_mask(&mut r, b, l);
        let x = values(&mut r, b * l * ch);
        assert_eq!(masked_avgpool(&x, b, l, ch, &mask).unwrap(), avgpool_oracle(&x, &mask, b, l, ch));

        let scores = values(&mut r, b * h * l * l);
        let (pooled, cells) = masked_maxpool2d(&scores, b, h, l, &mask).unwrap();
        let (want_pooled, want_cells) = maxpool_oracle(&scores, &mask, b, h, l);
        assert_eq!(pooled, want_pooled);
        assert_eq!(cells.iter().map(|&c| f64::from(u8::from(c != 0.0))).collect::<Vec<_>>(), want_cells);
    }
}

#[test]
fn attention_loss_matches_enumerating_oracle_exactly() {
    for seed in 0..100 {
        let mut r = rng(2000 + seed);
        let (b, h, l) = (2, 2, 8);
        let mask = ragged_mask(&mut r, b, l);
        let t = values(&mut r, b * h * l * l);
        let s = values(&mut r, b * h * 4);
        let mut g = Graph::no_grad();
        let sv = g.constant(tensor(&[b, h, 2, 2], s.clone()));
        let got = attention_loss(&mut g, &tensor(&[b, h, l, l], t.clone()), &sv, &mask).unwrap().item();
        let want = attention_loss_oracle(&t, &s, &mask, b, h, l);
        assert!((got - want).abs() <= 1e-12 * want.max(1.0), "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn attention_loss_constant_teacher_matched_student_is_zero() {
    let c = 0.75;
    let mut mask = vec![1.0; 8];
    mask[6..].fill(0.0);
    let teacher: Vec<f64> = (0..64)
        .map(|i| if mask[i / 8] != 0.0 && mask[i % 8] != 0.0 { c } else { MASK_VALUE })
        .collect();
    let mut g = Graph::no_grad();
    let s = g.constant(Tensor::full(&[1, 1, 2, 2], c));
    let l = attention_loss(&mut g, &tensor(&[1, 1, 8, 8], teacher), &s, &mask).unwrap();
    assert_eq!(l.item(), 0.0);
}

#[test]
fn attention_loss_single_window_is_squared_difference() {
    let mut r = rng(7);
    let t = values(&mut r, 16);
    let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut g = Graph::no_grad();
    let s = g.constant(tensor(&[1, 1, 1, 1], vec![0.3]));
    let l = attention_loss(&mut g, &tensor(&[1, 1, 4, 4], t), &s, &[1.0; 4]).unwrap();
    assert!((l.item() - (m - 0.3).powi(2)).abs() < 1e-15);
}

#[test]
fn attention_loss_head_mismatch_is_config_error() {
    let mut g = Graph::no_grad();
    let s = g.constant(Tensor::zeros(&[1, 2, 1, 1]));
    let r = attention_loss(&mut g, &Tensor::zeros(&[1, 4, 4, 4]), &s, &[1.0; 4]);
    assert!(matches!(r, Err(Error::Config(_))));
    let r = attention_loss_pooled(&mut g, &[0.0; 4], &[1.0], &s);
    assert!(matches!(r, Err(Error::Config(_))));
}

// ---- output losses ---------------------------------------------------------

fn distill_value(zt: &[f64], zs: &[f64], batch: usize, len: usize, t: f64) -> f64 {
    let mut g = Graph::no_grad();
    let s = g.constant(tensor(&[batch, len], zs.to_vec()));
    softmax_distillation_loss(&mut g, zt, zt, &s, &s, t).unwrap().item()
}

#[test]
fn distillation_of_two_uniform_positions_is_ln2() {
    let z = [0.0, 0.0, MASK_VALUE, MASK_VALUE];
    assert!((distill_value(&z, &z, 1, 4, 1.0) - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn distillation_of_identical_logits_is_entropy() {
    let mut r = rng(8);
    let z = values(&mut r, 6);
    let p = softmax(&z);
    let h: f64 = p.iter().map(|v| -v * v.ln()).sum();
    assert!((distill_value(&z, &z, 1, 6, 1.0) - h).abs() < 1e-12);
}

#[test]
fn distillation_matches_naive_formula_with_t_squared() {
    for seed in 0..10 {
        let mut r = rng(300 + seed);
        let (b, l) = (2, 8);
        let mask = ragged_mask(&mut r, b, l);
        let zts = masked_logits(&mut r, &mask, 3.0);
        let zte = masked_logits(&mut r, &mask, 3.0);
        let zss = masked_logits(&mut r, &mask, 3.0);
        let zse = masked_logits(&mut r, &mask, 3.0);
        let mut g = Graph::no_grad();
        let s = g.constant(tensor(&[b, l], zss.clone()));
        let e = g.constant(tensor(&[b, l], zse.clone()));
        let got = softmax_distillation_loss(&mut g, &zts, &zte, &s, &e, 5.0).unwrap().item();
        let want = distill_oracle([&zts, &zte], [&zss, &zse], b, l, 5.0);
        assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn distillation_below_unit_temperature_is_config_error() {
    let mut g = Graph::no_grad();
    let s = g.constant(Tensor::zeros(&[1, 4]));
    let r = softmax_distillation_loss(&mut g, &[0.0; 4], &[0.0; 4], &s, &s, 0.5);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn t_squared_keeps_distillation_gradient_bounded() {
    for seed in 0..5 {
        let mut r = rng(400 + seed);
        let zt = values(&mut r, 8);
        let zs = values(&mut r, 8);
        let norm = |t: f64| {
            let mut g = Graph::new();
            let s = g.param(&tensor(&[1, 8], zs.clone()));
            let l = softmax_distillation_loss(&mut g, &zt, &zt, &s, &s, t).unwrap();
            let grads = g.backward(&l).unwrap();
            grads.get(&s).unwrap().iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        let (g1, g5) = (norm(1.0), norm(5.0));
        assert!(g5 < 10.0 * g1 && g1 < 10.0 * g5, "seed {seed}: {g1} vs {g5}");
    }
}

fn gt_value(zs: &[f64], ze_end: &[f64], batch: usize, len: usize, spans: &[(usize, usize)], has: &[bool], mask: &[f64]) -> waldorf::Result<f64> {
    let mut g = Graph::no_grad();
    let s = g.constant(tensor(&[batch, len], zs.to_vec()));
    let e = g.constant(tensor(&[batch, len], ze_end.to_vec()));
    ground_truth_loss(&mut g, &s, &e, spans, has, mask).map(|v| v.item())
}

#[test]
fn ground_truth_loss_examples() {
    let mut one_hot = vec![0.0; 8];
    one_hot[3] = 1e4;
    let mut end = vec![0.0; 8];
    end[5] = 1e4;
    let l = gt_value(&one_hot, &end, 1, 8, &[(3, 5)], &[true], &[1.0; 8]).unwrap();
    assert!(l.abs() < 1e-12);

    let mask = [1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    let z: Vec<f64> = mask.iter().map(|&m| if m != 0.0 { 0.0 } else { MASK_VALUE }).collect();
    let l = gt_value(&z, &z, 1, 8, &[(1, 2)], &[true], &mask).unwrap();
    assert!((l - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn ground_truth_loss_ignores_unlabeled_examples() {
    let mut r = rng(9);
    let z = values(&mut r, 16);
    let e = values(&mut r, 16);
    let both = gt_value(&z, &e, 2, 8, &[(2, 4), (1, 1)], &[true, false], &[1.0; 16]).unwrap();
    let alone = gt_value(&z[..8], &e[..8], 1, 8, &[(2, 4)], &[true], &[1.0; 8]).unwrap();
    assert!((both - alone).abs() < 1e-12);
    let none = gt_value(&z, &e, 2, 8, &[(2, 4), (1, 1)], &[false, false], &[1.0; 16]).unwrap();
    assert_eq!(none, 0.0);
}

#[test]
fn ground_truth_target_outside_valid_region_is_data_error() {
    let mask = [1.0, 1.0, 1.0, 0.0];
    let r = gt_value(&[0.0; 4], &[0.0; 4], 1, 4, &[(1, 3)], &[true], &mask);
    assert!(matches!(r, Err(Error::Data(_))));
}

// ---- schedule ----------------------------------------------------------------

#[test]
fn chi_examples() {
    assert!(chi(8, 517_500, 57_500));
    assert!(!chi(8, 517_499, 57_500));
    for j in 0..10 {
        assert!(!chi(j, 0, 5));
    }
    assert!(chi(0, 2, 2));
    assert!(!chi(0, 1, 2));
    assert_eq!(LossSchedule::default().build_up_steps(8), 517_500);
}

#[test]
fn modes_round_trip_through_names() {
    for m in TrainMode::ALL {
        assert_eq!(m.name().parse::<TrainMode>().unwrap(), m);
    }
    assert!("nope".parse::<TrainMode>().is_err());
}

fn fake_parts(g: &mut Graph, n: usize, r: &mut ChaCha8Rng) -> LossParts {
    let mut s = |g: &mut Graph| g.constant(Tensor::scalar(r.gen_range(0.0..3.0)));
    LossParts {
        l_e: Some(s(g)),
        l_h: (0..n).map(|_| s(g)).collect(),
        l_a: (0..n).map(|_| s(g)).collect(),
        l_d: Some(s(g)),
        l_g: s(g),
    }
}

#[test]
fn total_loss_examples() {
    let mut r = rng(10);
    let sched = LossSchedule { tau_star: 100, ..LossSchedule::default() };
    let mut g = Graph::no_grad();
    let parts = fake_parts(&mut g, 8, &mut r);

    let early = ActiveTerms::at(TrainMode::SlowBuild, &sched, 99, 8);
    let (_, rep) = total_loss(&mut g, &parts, &sched, &early).unwrap();
    assert_eq!(rep.total, sched.alpha * rep.l_e.unwrap());
    assert_eq!(rep.active_layers, 0);

    let unit = LossSchedule { alpha: 1.0, beta: 1.0, gamma: 1.0, delta: 1.0, epsilon: 1.0, tau_star: 100 };
    let late = ActiveTerms::at(TrainMode::SlowBuild, &unit, 900, 8);
    let (_, rep) = total_loss(&mut g, &parts, &unit, &late).unwrap();
    let plain = rep.l_e.unwrap() + rep.l_h.iter().sum::<f64>() + rep.l_a.iter().sum::<f64>() + rep.l_d.unwrap() + rep.l_g;
    assert!((rep.total - plain).abs() < 1e-10);

    let mid = ActiveTerms::at(TrainMode::SlowBuild, &sched, 300, 8);
    assert_eq!(mid.layers, [true, true, true, false, false, false, false, false]);
    assert!(!mid.distillation && !mid.ground_truth);
    let (_, rep) = total_loss(&mut g, &parts, &sched, &mid).unwrap();
    let want = sched.alpha * rep.l_e.unwrap()
        + (0..3).map(|j| sched.beta * rep.l_h[j] + sched.gamma * rep.l_a[j]).sum::<f64>();
    assert!((rep.total - want).abs() < 1e-10);
}

#[test]
fn mode_switches() {
    let s = LossSchedule { tau_star: 10, ..LossSchedule::default() };
    let base = ActiveTerms::at(TrainMode::Baseline, &s, 1000, 4);
    assert!(!base.needs_teacher() && base.ground_truth);
    let soft = ActiveTerms::at(TrainMode::SoftmaxDistil, &s, 0, 4);
    assert!(soft.distillation && soft.ground_truth && !soft.embedding && soft.active_layers() == 0);
    let all = ActiveTerms::at(TrainMode::AllLayerDistil, &s, 0, 4);
    assert!(all.embedding && all.distillation && all.active_layers() == 4);
}

#[test]
fn inactive_terms_receive_no_gradient() {
    let mut g = Graph::new();
    let a = g.param(&Tensor::scalar(1.0));
    let b = g.param(&Tensor::scalar(2.0));
    let gt = g.param(&Tensor::scalar(3.0));
    let parts = LossParts { l_e: Some(a.clone()), l_h: vec![b.clone()], l_a: vec![b.clone()], l_d: None, l_g: gt.clone() };
    let s = LossSchedule { tau_star: 10, ..LossSchedule::default() };
    let active = ActiveTerms::at(TrainMode::SlowBuild, &s, 5, 1);
    let (total, _) = total_loss(&mut g, &parts, &s, &active).unwrap();
    let grads = g.backward(&total).unwrap();
    assert_eq!(grads.get(&a).unwrap(), &[s.alpha]);
    assert!(grads.get(&b).map_or(true, |v| v == [0.0]));
    assert!(grads.get(&gt).map_or(true, |v| v == [0.0]));
}

#[test]
fn log_line_has_expected_keys() {
    let line = LossLogLine {
        step: 3,
        report: LossReport { l_e: Some(1.0), l_h: vec![0.5], l_a: vec![0.25], l_d: None, l_g: 0.0, total: 1.0, active_layers: 0 },
        lr: 2e-4,
        temperature: 5.0,
    };
    let v: serde_json::Value = serde_json::from_str(&line.to_json()).unwrap();
    for k in ["step", "L_e", "L_h", "L_a", "L_d", "L_g", "total", "lr", "T", "active_layers"] {
        assert!(v.get(k).is_some(), "missing {k}");
    }
    assert_eq!(serde_json::from_value::<LossLogLine>(v).unwrap(), line);
}

// ---- gradients of each loss ------------------------------------------------

#[test]
fn each_loss_passes_finite_difference_check() {
    for seed in 0..5 {
        let mut r = rng(500 + seed);
        let (b, l, e1, e2) = (2, 8, 3, 4);
        let mask = ragged_mask(&mut r, b, l);
        let te = values(&mut r, b * l * e2);
        let th = tensor(&[b, l, e2], values(&mut r, b * l * e2));
        let ta = tensor(&[b, 2, l, l], values(&mut r, b * 2 * l * l));
        let zt = masked_logits(&mut r, &mask, 2.0);
        let zs = masked_logits(&mut r, &mask, 2.0);
        let spans: Vec<(usize, usize)> = (0..b).map(|i| (0, mask[i * l..].iter().take(l).filter(|&&m| m != 0.0).count() - 1)).collect();

        type F = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;
        let cases: Vec<(&str, Vec<Tensor>, F)> = vec![
            ("embedding", vec![random_tensor(&mut r, &[b, l, e1]), random_tensor(&mut r, &[e1, e2])], {
                let (te, mask) = (te.clone(), mask.clone());
                Box::new(move |g, v| embedding_loss(g, &te, &v[0], &v[1], &mask).unwrap())
            }),
            ("hidden", vec![random_tensor(&mut r, &[b, l / 4, e1]), random_tensor(&mut r, &[e1, e2])], {
                let (th, mask) = (th.clone(), mask.clone());
                Box::new(move |g, v| hidden_loss(g, &th, &v[0], &v[1], &mask).unwrap())
            }),
            ("attention", vec![random_tensor(&mut r, &[b, 2, l / 4, l / 4])], {
                let (ta, mask) = (ta.clone(), mask.clone());
                Box::new(move |g, v| attention_loss(g, &ta, &v[0], &mask).unwrap())
            }),
            ("distillation", vec![tensor(&[b, l], zs.clone()), tensor(&[b, l], zs.iter().rev().cloned().collect::<Vec<_>>())], {
                let zt = zt.clone();
                Box::new(move |g, v| softmax_distillation_loss(g, &zt, &zt, &v[0], &v[0], 3.0).unwrap())
            }),
            ("ground_truth", vec![tensor(&[b, l], zs.clone()), tensor(&[b, l], zt.clone())], {
                let (spans, mask) = (spans.clone(), mask.clone());
                Box::new(move |g, v| ground_truth_loss(g, &v[0], &v[1], &spans, &[true, true], &mask).unwrap())
            }),
        ];
        for (name, inputs, f) in cases {
            // masked logits sit at -1e9; perturbing them is meaningless, so
            // only check the finite entries
            let analytic = analytic_grads(f.as_ref(), &inputs);
            for which in 0..inputs.len() {
                let numeric = numeric_grad(f.as_ref(), &inputs, which);
                for (i, (a, n)) in analytic[which].iter().zip(&numeric).enumerate() {
                    if inputs[which].data()[i] == MASK_VALUE {
                        continue;
                    }
                    let err = rel_err(*a, *n);
                    assert!(err < FD_REL_TOL, "{name} seed {seed} input {which}[{i}]: {a} vs {n}");
                }
            }
        }
    }
}

// ---- masking invariance ----------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_positions_do_not_move_layer_losses(seed in 0u64..10_000, noise in -1e6f64..1e6) {
        let mut r = rng(seed);
        let (b, h, l, ds, dt) = (2, 2, 12, 3, 4);
        let mask = ragged_mask(&mut r, b, l);
        let cm = compress(&mask, b, l);
        let m = l / 4;
        let te = values(&mut r, b * l * dt);
        let se = values(&mut r, b * l * ds);
        let th = values(&mut r, b * l * dt);
        let sh = values(&mut r, b * m * ds);
        let ta = values(&mut r, b * h * l * l);
        let sa = values(&mut r, b * h * m * m);
        let we = values(&mut r, ds * dt);
        let wh = values(&mut r, ds * dt);

        let eval = |te: &[f64], se: &[f64], th: &[f64], sh: &[f64], ta: &[f64], sa: &[f64]| {
            let mut g = Graph::no_grad();
            let sev = g.constant(tensor(&[b, l, ds], se.to_vec()));
            let shv = g.constant(tensor(&[b, m, ds], sh.to_vec()));
            let sav = g.constant(tensor(&[b, h, m, m], sa.to_vec()));
            let wev = g.constant(tensor(&[ds, dt], we.clone()));
            let whv = g.constant(tensor(&[ds, dt], wh.clone()));
            (
                embedding_loss(&mut g, te, &sev, &wev, &mask).unwrap().item(),
                hidden_loss(&mut g, &tensor(&[b, l, dt], th.to_vec()), &shv, &whv, &mask).unwrap().item(),
                attention_loss(&mut g, &tensor(&[b, h, l, l], ta.to_vec()), &sav, &mask).unwrap().item(),
            )
        };
        let before = eval(&te, &se, &th, &sh, &ta, &sa);

        let bump_rows = |x: &[f64], rows_mask: &[f64], width: usize| -> Vec<f64> {
            x.iter().enumerate().map(|(i, v)| if rows_mask[i / width] == 0.0 { v + noise } else { *v }).collect()
        };
        let bump_pairs = |x: &[f64], mk: &[f64], n: usize| -> Vec<f64> {
            x.iter().enumerate().map(|(i, v)| {
                let bi = i / (h * n * n);
                let (q, k) = ((i / n) % n, i % n);
                if mk[bi * n + q] == 0.0 || mk[bi * n + k] == 0.0 { v + noise } else { *v }
            }).collect()
        };
        let after = eval(
            &bump_rows(&te, &mask, dt),
            &bump_rows(&se, &mask, ds),
            &bump_rows(&th, &mask, dt),
            &bump_rows(&sh, &cm, ds),
            &bump_pairs(&ta, &mask, l),
            &bump_pairs(&sa, &cm, m),
        );
        prop_assert_eq!(before, after);
    }

    #[test]
    fn active_terms_grow_monotonically(t1 in 0u64..2000, dt in 0u64..2000, n in 1usize..10, tau_star in 1u64..300) {
        let s = LossSchedule { tau_star, ..LossSchedule::default() };
        for mode in TrainMode::ALL {
            let a = ActiveTerms::at(mode, &s, t1, n);
            let b = ActiveTerms::at(mode, &s, t1 + dt, n);
            prop_assert!(!a.embedding || b.embedding);
            prop_assert!(!a.distillation || b.distillation);
            prop_assert!(!a.ground_truth || b.ground_truth);
            for j in 0..n {
                prop_assert!(!a.layers[j] || b.layers[j]);
            }
        }
    }

    #[test]
    fn losses_are_nonnegative(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let (b, l) = (2, 8);
        let mask = ragged_mask(&mut r, b, l);
        let zt = masked_logits(&mut r, &mask, 5.0);
        let zs = masked_logits(&mut r, &mask, 5.0);
        let mut g = Graph::no_grad();
        let s = g.constant(tensor(&[b, l], zs));
        let d = softmax_distillation_loss(&mut g, &zt, &zt, &s, &s, 2.0).unwrap().item();
        let gt = ground_truth_loss(&mut g, &s, &s, &[(0, 0), (0, 0)], &[true, true], &mask).unwrap().item();
        prop_assert!(d >= 0.0 && gt >= 0.0);
    }
}
