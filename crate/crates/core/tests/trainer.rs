mod common;

use std::collections::BTreeMap;

use common::fixtures::*;
use waldorf::distill::TrainMode;
use waldorf::model::{ParamStore, StudentModel};
use waldorf::teacher::TeacherModel;
use waldorf::tensor::Tensor;
use waldorf::trainer::*;
use waldorf::Error;

fn setup(paragraphs: usize) -> (Vec<waldorf::corpus::QAExample>, StudentModel, TeacherModel) {
    let (vocab, ex) = synthetic_examples(11, paragraphs, 32);
    let (sc, tc) = tiny_pair(vocab.len(), 32);
    (ex, StudentModel::build(sc, 1).unwrap(), TeacherModel::build(tc, 2).unwrap())
}

fn small_config(mode: TrainMode, tau_star: u64, total: u64) -> TrainConfig {
    TrainConfig { mode, tau_star, total_steps: total, batch_size: 4, init_lr: 1e-3, ..TrainConfig::desk() }
}

#[test]
fn learning_rate_schedule_examples() {
    let c = TrainConfig::full_size();
    let s = c.schedule(8, 1_000_000);
    assert_eq!(s.lr_at(0).unwrap(), 2e-4);
    assert_eq!(s.lr_at(517_500).unwrap(), 2e-4);
    assert_eq!(s.lr_at(1_000_000).unwrap(), 0.0);
    let mid = 517_500 + (1_000_000 - 517_500) / 2;
    assert!((s.lr_at(mid).unwrap() - 1e-4).abs() < 1e-15);
    assert!(matches!(s.lr_at(1_000_001), Err(Error::Contract(_))));
}

#[test]
fn temperature_schedule_examples() {
    let s = TrainConfig::full_size().schedule(8, 1_000_000);
    assert_eq!(s.temperature_at(0), 5.0);
    assert_eq!(s.temperature_at(517_500), 5.0);
    assert_eq!(s.temperature_at(1_000_000), 1.0);
    assert!((s.temperature_at(758_750) - 3.0).abs() < 1e-12);
}

#[test]
fn full_size_schedule_arithmetic() {
    let c = TrainConfig::full_size();
    assert_eq!(c.schedule(8, 1_000_000).build_up, 517_500);
    // 130k labeled plus 500k augmented examples for 35 epochs at batch 24
    let total = c.planned_steps(630_000);
    assert!((total as f64 - 1e6).abs() / 1e6 < 0.1, "{total}");
}

#[test]
fn non_slow_modes_decay_over_the_whole_run() {
    let c = TrainConfig { mode: TrainMode::Baseline, ..TrainConfig::desk() };
    let s = c.schedule(4, 100);
    assert_eq!(s.build_up, 0);
    assert!((s.lr_at(50).unwrap() - c.init_lr / 2.0).abs() < 1e-15);
}

#[test]
fn config_round_trips_through_kv_text() {
    use waldorf::kv::KvFields;
    let mut c = TrainConfig::desk();
    c.mode = TrainMode::AllLayerDistil;
    c.gamma = 0.5;
    let mut back = TrainConfig::full_size();
    for (k, v) in c.fields() {
        back.set_field(k, &v).unwrap();
    }
    assert_eq!(back, c);
    assert!(back.set_field("nope", "1").is_err());
    assert!(back.set_field("mode", "fast").is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let (ex, student, teacher) = setup(4);
    let short = small_config(TrainMode::SlowBuild, 10, 30);
    assert!(matches!(
        Trainer::new(student.clone(), Some(&teacher), &ex, short),
        Err(Error::Config(_))
    ));
    let needs_teacher = small_config(TrainMode::SoftmaxDistil, 10, 30);
    assert!(matches!(Trainer::new(student.clone(), None, &ex, needs_teacher), Err(Error::Config(_))));
    let negative = TrainConfig { beta: -1.0, ..small_config(TrainMode::Baseline, 10, 30) };
    assert!(matches!(Trainer::new(student, None, &ex, negative), Err(Error::Config(_))));
}

#[test]
fn adam_with_zero_gradient_leaves_parameters_unchanged() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
    let before = store.clone();
    let mut adam = Adam::new(0.9, 0.999, 1e-5, 0.0);
    let grads = BTreeMap::from([("w".to_string(), vec![0.0; 3])]);
    for _ in 0..5 {
        adam.step(&mut store, &grads, 1e-2);
    }
    assert_eq!(store, before);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
    let mut adam = Adam::new(0.9, 0.999, 1e-12, 0.0);
    adam.step(&mut store, &BTreeMap::from([("w".to_string(), vec![3.0, -0.5])]), 0.1);
    let w = store.get("w").unwrap().data();
    assert!((w[0] + 0.1).abs() < 1e-9 && (w[1] - 0.1).abs() < 1e-9);
}

#[test]
fn baseline_uses_only_ground_truth() {
    let (ex, student, teacher) = setup(6);
    let mut t = Trainer::new(student, Some(&teacher), &ex, small_config(TrainMode::Baseline, 10, 5)).unwrap();
    let line = t.train_step().unwrap();
    assert!(line.report.l_e.is_none() && line.report.l_d.is_none() && line.report.l_h.is_empty());
    assert_eq!(line.report.total, line.report.l_g);
    assert!(t.projections.is_empty() || t.adam.state.keys().all(|k| !k.starts_with("proj")));
}

#[test]
fn all_layer_distillation_activates_everything_at_once() {
    let (ex, student, teacher) = setup(6);
    let mut t = Trainer::new(student, Some(&teacher), &ex, small_config(TrainMode::AllLayerDistil, 10, 5)).unwrap();
    let line = t.train_step().unwrap();
    assert_eq!(line.report.active_layers, 2);
    let r = &line.report;
    let s = t.loss_schedule();
    let want = s.alpha * r.l_e.unwrap()
        + (0..2).map(|j| s.beta * r.l_h[j] + s.gamma * r.l_a[j]).sum::<f64>()
        + s.delta * r.l_d.unwrap()
        + s.epsilon * r.l_g;
    assert!((r.total - want).abs() < 1e-10);
}

#[test]
fn block_gradients_start_exactly_at_their_phase() {
    let (ex, student, teacher) = setup(6);
    let tau_star = 3;
    let mut t = Trainer::new(student, Some(&teacher), &ex, small_config(TrainMode::SlowBuild, tau_star, 20)).unwrap();
    let block_grad = |grads: &BTreeMap<String, Vec<f64>>, j: usize| {
        grads
            .iter()
            .filter(|(k, _)| k.starts_with(&format!("blocks.{j}.")))
            .flat_map(|(_, v)| v.iter())
            .map(|v| v.abs())
            .sum::<f64>()
    };
    for j in 0..2 {
        let on = (j as u64 + 1) * tau_star;
        let (_, _, before) = t.loss_and_grads(on - 1).unwrap();
        let (_, _, at) = t.loss_and_grads(on).unwrap();
        assert_eq!(block_grad(&before, j), 0.0, "block {j} before {on}");
        assert!(block_grad(&at, j) > 0.0, "block {j} at {on}");
    }
    // decoder and head wait for the final phase
    let (_, _, early) = t.loss_and_grads(3 * tau_star - 1).unwrap();
    assert!(!early.contains_key("head.weight"));
    let (_, _, last) = t.loss_and_grads(3 * tau_star).unwrap();
    assert!(last["head.weight"].iter().any(|v| *v != 0.0));
}

#[test]
fn training_is_deterministic() {
    let (ex, student, teacher) = setup(6);
    let run = || {
        let mut t = Trainer::new(student.clone(), Some(&teacher), &ex, small_config(TrainMode::SlowBuild, 4, 16)).unwrap();
        t.run(&RunOptions::default()).unwrap();
        (t.history.clone(), t.student.params.clone())
    };
    let (ha, pa) = run();
    let (hb, pb) = run();
    assert_eq!(ha, hb);
    assert_eq!(pa, pb);
}

#[test]
fn resume_continues_bit_identically() {
    let (ex, student, teacher) = setup(6);
    let cfg = small_config(TrainMode::SlowBuild, 3, 14);
    let dir = tempfile::tempdir().unwrap();
    let full_dir = dir.path().join("full");
    let part_dir = dir.path().join("part");

    let mut full = Trainer::new(student.clone(), Some(&teacher), &ex, cfg.clone()).unwrap();
    full.run(&RunOptions { out_dir: Some(full_dir.clone()), stop_after: None }).unwrap();

    let mut first = Trainer::new(student, Some(&teacher), &ex, cfg).unwrap();
    first.run(&RunOptions { out_dir: Some(part_dir.clone()), stop_after: Some(7) }).unwrap();
    assert_eq!(first.step, 7);
    drop(first);
    let mut second = Trainer::resume(&part_dir.join("checkpoint"), Some(&teacher), &ex).unwrap();
    assert_eq!(second.step, 7);
    second.run(&RunOptions { out_dir: Some(part_dir.clone()), stop_after: None }).unwrap();

    assert_eq!(second.student.params, full.student.params);
    assert_eq!(second.projections, full.projections);
    assert_eq!(
        read_metrics(&part_dir.join(METRICS_FILE)).unwrap(),
        read_metrics(&full_dir.join(METRICS_FILE)).unwrap()
    );
    // phase boundaries were checkpointed
    assert!(full_dir.join("checkpoints/step-00000003").is_dir());
    assert!(full_dir.join("student/manifest.txt").is_file());
}

#[test]
fn resume_rejects_different_data() {
    let (ex, student, teacher) = setup(6);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(student, Some(&teacher), &ex, small_config(TrainMode::SlowBuild, 3, 14)).unwrap();
    t.run(&RunOptions { out_dir: Some(dir.path().to_path_buf()), stop_after: Some(2) }).unwrap();
    let r = Trainer::resume(&dir.path().join("checkpoint"), Some(&teacher), &ex[..5]);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn non_finite_loss_aborts_with_dump() {
    let (ex, mut student, teacher) = setup(4);
    student.params.get_mut("conv1.weight").unwrap().data_mut()[0] = f64::NAN;
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(student, Some(&teacher), &ex, small_config(TrainMode::AllLayerDistil, 3, 5)).unwrap();
    let r = t.run(&RunOptions { out_dir: Some(dir.path().to_path_buf()), stop_after: None });
    match r {
        Err(Error::Divergence { step, detail }) => {
            assert_eq!(step, 0);
            assert!(detail.contains("L_g"), "{detail}");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
    assert!(dir.path().join(distil::DIVERGENCE_FILE).is_file());
}

#[test]
fn distillation_lowers_the_loss() {
    let (ex, student, teacher) = setup(10);
    let mut t = Trainer::new(student, Some(&teacher), &ex, small_config(TrainMode::AllLayerDistil, 3, 60)).unwrap();
    t.run(&RunOptions::default()).unwrap();
    let first: f64 = t.history[..5].iter().map(|h| h.report.l_e.unwrap()).sum();
    let last: f64 = t.history[55..].iter().map(|h| h.report.l_e.unwrap()).sum();
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn identical_configs_give_identical_scores() {
    let (ex, _, teacher) = setup(6);
    let inputs = AblationInputs {
        student_config: tiny_pair(teacher.config.vocab_size, 32).0,
        student_seed: 3,
        teacher: &teacher,
        train: &ex,
        unlabeled: &ex,
        dev: &ex,
        config: small_config(TrainMode::SlowBuild, 2, 8),
    };
    let a = ablation::run_mode(&inputs, TrainMode::SlowBuild, 8).unwrap();
    let b = ablation::run_mode(&inputs, TrainMode::SlowBuild, 8).unwrap();
    assert_eq!(a, b);
}
