use proptest::prelude::*;
use waldorf::bench::*;
use waldorf::model::{ControlModel, InferenceModel, ModelConfig, StudentModel};
use waldorf::Error;

#[test]
fn compression_cuts_attention_flops_sixteen_fold() {
    let (d, h) = (480, 16);
    let full = attention_flops(384, d, h);
    let compressed = attention_flops(96, d, h);
    assert_eq!(full, 16 * compressed);
    assert_eq!(full, 4 * 384 * 384 * 480);
}

#[test]
fn single_token_attention_is_positive() {
    assert!(attention_flops(1, 480, 16) > 0);
    assert_eq!(attention_flops(1, 8, 2), 32);
}

proptest! {
    #[test]
    fn attention_flops_scale_quadratically(l in 1u64..512, k in 1u64..5, heads in 1u64..9) {
        let d = heads * 8;
        prop_assert_eq!(attention_flops(k * l, d, heads), k * k * attention_flops(l, d, heads));
    }
}

#[test]
fn totals_are_the_sum_of_components() {
    let c = ModelConfig::full_size(30522);
    for m in [FlopModel::student(&c, 384), FlopModel::control(&c, 384)] {
        let sum = m.embedding + m.convs + m.projections + m.attention_projections + m.attention + m.feed_forward + m.head;
        assert_eq!(m.total(), sum);
    }
}

#[test]
fn full_size_student_needs_fewer_flops_than_control() {
    let c = ModelConfig::full_size(30522);
    let s = FlopModel::student(&c, 384);
    let ctl = FlopModel::control(&c, 384);
    assert_eq!(ctl.attention, 16 * s.attention);
    assert!(s.total() * 2 < ctl.total(), "{} vs {}", s.total(), ctl.total());
}

fn desk_pair() -> (StudentModel, ControlModel) {
    let c = ModelConfig::desk(300, 128, 32, 2, 2);
    (StudentModel::build(c.clone(), 1).unwrap(), ControlModel::build(c, 1).unwrap())
}

#[test]
fn baseline_speedup_is_one() {
    let (s, c) = desk_pair();
    let data = synthetic_dataset(4, 4, 64, 300, 0).unwrap();
    let mut reports = vec![
        bench("control", &InferenceModel::<f32>::control(&c), &data, &BenchOptions::default()).unwrap(),
        bench("student", &InferenceModel::<f32>::student(&s), &data, &BenchOptions::default()).unwrap(),
    ];
    relative_to(&mut reports, "control").unwrap();
    assert_eq!(reports[0].rel_speedup, 1.0);
    assert!(reports[1].rel_speedup > 0.0);
    assert_eq!(reports[1].baseline, "control");
    assert_eq!(reports[0].precision, "f32");
    assert!(matches!(relative_to(&mut reports, "teacher"), Err(Error::Contract(_))));
    let json: serde_json::Value = serde_json::from_str(&reports[1].to_json()).unwrap();
    for key in ["model", "n_params", "precision", "avg_time", "stddev", "rel_speedup"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}

#[test]
fn empty_dataset_and_too_few_trials_are_rejected() {
    let (s, _) = desk_pair();
    let m = InferenceModel::<f64>::student(&s);
    assert!(matches!(bench("s", &m, &[], &BenchOptions::default()), Err(Error::Contract(_))));
    let data = synthetic_dataset(2, 2, 32, 300, 0).unwrap();
    let two = BenchOptions { trials: 2, warmup: 0 };
    assert!(matches!(bench("s", &m, &data, &two), Err(Error::Contract(_))));
}

#[test]
fn time_grows_with_dataset_size() {
    let (s, _) = desk_pair();
    let m = InferenceModel::<f32>::student(&s);
    let times: Vec<f64> = [4, 32, 128]
        .iter()
        .map(|&n| {
            let data = synthetic_dataset(n, 4, 128, 300, 1).unwrap();
            bench("s", &m, &data, &BenchOptions::default()).unwrap().avg_time
        })
        .collect();
    assert!(times[0] < times[1] && times[1] < times[2], "{times:?}");
}

#[test]
fn synthetic_dataset_is_deterministic_and_sized() {
    let a = synthetic_dataset(10, 4, 32, 300, 5).unwrap();
    assert_eq!(a, synthetic_dataset(10, 4, 32, 300, 5).unwrap());
    assert_eq!(a.iter().map(|b| b.batch).collect::<Vec<_>>(), vec![4, 4, 2]);
    assert!(a.iter().all(|b| b.token_ids.iter().all(|&t| t < 300)));
}
