use hpt_core::encoders::EncoderConfig;
use hpt_core::harness::{
    bundle_values, cross_dataset_eval, default_shifts, domain_gen_eval, evaluate, make_splits,
    run_ablation, synthetic_corpus, train_all_classes, train_base, AblationSuite, DatasetSpec,
    DomainShift, SyntheticDataset,
};
use hpt_core::knowledge::{DescriptionCorpus, KnowledgeConfig};
use hpt_core::training::{HptModel, TrainConfig};

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    }
}

fn dataset(model: &HptModel, name: &str) -> (SyntheticDataset, DescriptionCorpus) {
    let ds = SyntheticDataset::generate(DatasetSpec::builtin(name).unwrap(), &model.text).unwrap();
    let corpus = synthetic_corpus(&ds, &model.text, &KnowledgeConfig::default()).unwrap();
    (ds, corpus)
}

#[test]
fn splits_put_the_larger_half_in_base() {
    let model = HptModel::new(EncoderConfig::default(), quick()).unwrap();
    let (ds, _) = dataset(&model, "toy6");
    let split = make_splits(&ds, 3, 16).unwrap();
    assert_eq!(split.base_classes, vec![0, 1, 2]);
    assert_eq!(split.new_classes, vec![3, 4, 5]);
    for idx in &split.shots {
        assert_eq!(idx.len(), 16);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }
    assert_eq!(make_splits(&ds, 3, 16).unwrap(), split);
    assert!(make_splits(&ds, 3, 0).is_err());
    assert!(make_splits(&ds, 3, 33).is_err());
}

#[test]
fn evaluation_reports_fractions_and_leaves_parameters_alone() {
    let mut model = HptModel::new(EncoderConfig::default(), quick()).unwrap();
    let (ds, corpus) = dataset(&model, "toy6");
    let split = make_splits(&ds, 0, 8).unwrap();
    train_base(&mut model, &corpus, &ds, &split).unwrap();
    let before = bundle_values(&model);
    let report = evaluate(&model, &corpus, &ds, &split).unwrap();
    assert_eq!(bundle_values(&model), before);
    assert_eq!(report.rows.len(), 1);
    let row = &report.rows[0];
    for v in row.accuracies() {
        assert!((0.0..=1.0).contains(&v));
    }
    let (b, n) = (row.base.unwrap(), row.new.unwrap());
    assert!((row.hm.unwrap() - 2.0 * b * n / (b + n)).abs() < 1e-12);
    assert!(report.to_table().contains("Base"));
    let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(json["config"]["n_g"], 2);
}

#[test]
fn cross_dataset_rows_are_targets_plus_average() {
    let mut model = HptModel::new(EncoderConfig::default(), quick()).unwrap();
    let (src, src_corpus) = dataset(&model, "toy8");
    train_all_classes(&mut model, &src_corpus, &src, 8).unwrap();
    let (a, ac) = dataset(&model, "toy6");
    let (b, bc) = dataset(&model, "toy12");
    let report = cross_dataset_eval(&model, "toy8", &[(&a, &ac), (&b, &bc)]).unwrap();
    let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["toy6", "toy12", "average"]);
    let mean = (report.rows[0].accuracy.unwrap() + report.rows[1].accuracy.unwrap()) / 2.0;
    assert!((report.rows[2].accuracy.unwrap() - mean).abs() < 1e-12);
}

#[test]
fn domain_shift_variants_share_classes_and_only_perturb_tests() {
    let mut model = HptModel::new(EncoderConfig::default(), quick()).unwrap();
    let (ds, corpus) = dataset(&model, "toy6");
    train_all_classes(&mut model, &corpus, &ds, 8).unwrap();
    let shifted: Vec<(String, SyntheticDataset)> = default_shifts()
        .into_iter()
        .enumerate()
        .map(|(i, (label, shift))| (label, ds.shifted(shift, i as u64).unwrap()))
        .collect();
    for (_, v) in &shifted {
        assert_eq!(v.train, ds.train);
        assert_ne!(v.test, ds.test);
    }
    let variants: Vec<(&str, &SyntheticDataset)> =
        shifted.iter().map(|(l, d)| (l.as_str(), d)).collect();
    let report = domain_gen_eval(&model, &corpus, &ds, &variants).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert!(ds
        .shifted(
            DomainShift {
                noise_scale: -1.0,
                channel_drop: 0.0
            },
            0
        )
        .is_err());

    let (other, _) = dataset(&model, "toy8");
    assert!(domain_gen_eval(&model, &corpus, &ds, &[("other", &other)]).is_err());
}

#[test]
fn prompt_level_ablation_emits_four_rows() {
    let model = HptModel::new(EncoderConfig::default(), quick()).unwrap();
    let (ds, corpus) = dataset(&model, "toy6");
    let split = make_splits(&ds, 0, 4).unwrap();
    let base = TrainConfig {
        epochs: 1,
        ..AblationSuite::PromptLevels.default_config()
    };
    let report = run_ablation(
        AblationSuite::PromptLevels,
        &base,
        &EncoderConfig::default(),
        &corpus,
        &ds,
        &split,
    )
    .unwrap();
    let labels: Vec<&str> = report
        .rows
        .iter()
        .map(|r| r.metrics.label.as_str())
        .collect();
    assert_eq!(labels, ["G", "G+H", "G+L", "G+H+L"]);
    assert!(report.to_table().lines().count() >= 6);
}
