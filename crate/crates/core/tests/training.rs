use dhgcn::autodiff::{Tape, Tensor};
use dhgcn::geometry::{Dataset, DatasetSpec};
use dhgcn::model::{ForwardOptions, ModelConfig};
use dhgcn::training::{
    ablate_attention, ablate_sigma, evaluate, hop_accuracy, linear_probe, pretrain, probe_subset,
    sigma_csv, AttentionVariant,
};
use dhgcn::{Checkpoint, Error, TrainConfig};
use proptest::prelude::*;

fn small_dataset(seed: u64) -> Dataset {
    Dataset::synthetic(&DatasetSpec {
        classes: 4,
        per_class: 5,
        points: 64,
        seed,
        test_fraction: 0.2,
    })
    .unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        probe_epochs: 10,
        ..TrainConfig::default()
    }
}

#[test]
fn seeded_runs_repeat_exactly() {
    let data = small_dataset(1);
    let a = pretrain(&data, &ModelConfig::tiny(), &quick(2)).unwrap();
    let b = pretrain(&data, &ModelConfig::tiny(), &quick(2)).unwrap();
    assert_eq!(a.losses(), b.losses());
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    let other = pretrain(
        &data,
        &ModelConfig::tiny(),
        &TrainConfig {
            seed: 2,
            ..quick(2)
        },
    )
    .unwrap();
    assert_ne!(a.losses(), other.losses());
}

#[test]
fn thread_count_does_not_change_results() {
    let data = small_dataset(2);
    let one = pretrain(
        &data,
        &ModelConfig::tiny(),
        &TrainConfig {
            threads: 1,
            ..quick(1)
        },
    )
    .unwrap();
    let two = pretrain(
        &data,
        &ModelConfig::tiny(),
        &TrainConfig {
            threads: 2,
            ..quick(1)
        },
    )
    .unwrap();
    assert_eq!(one.losses(), two.losses());
    assert_eq!(one.checkpoint.model, two.checkpoint.model);
}

#[test]
fn loss_goes_down() {
    let data = small_dataset(3);
    let cfg = TrainConfig {
        augment: None,
        lr: 0.05,
        ..quick(8)
    };
    let report = pretrain(&data, &ModelConfig::tiny(), &cfg).unwrap();
    let losses = report.losses();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses[losses.len() - 1] < losses[0], "{losses:?}");
    let curve = report.curve_csv();
    assert!(curve.starts_with("epoch,loss,hop_acc,lr\n1,"));
    assert_eq!(curve.lines().count(), 9);
}

#[test]
fn checkpoint_reload_reproduces_evaluation() {
    let data = small_dataset(4);
    let report = pretrain(&data, &ModelConfig::tiny(), &quick(1)).unwrap();
    let probed = linear_probe(&report.checkpoint, &data, &quick(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    probed.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let before = evaluate(&probed.checkpoint, &data.test).unwrap();
    let after = evaluate(&back, &data.test).unwrap();
    assert_eq!(before, after);
    assert_eq!(before.cls_acc, probed.metrics.cls_acc);
    assert_eq!(back.meta("stage"), Some("pretrain"));
    assert_eq!(back.meta("probe_train_samples"), Some("16"));
}

#[test]
fn probe_leaves_backbone_untouched() {
    let data = small_dataset(5);
    let report = pretrain(&data, &ModelConfig::tiny(), &quick(1)).unwrap();
    let probed = linear_probe(&report.checkpoint, &data, &quick(1)).unwrap();
    assert_eq!(probed.checkpoint.model, report.checkpoint.model);
    let head = probed.checkpoint.probe.as_ref().unwrap();
    assert_eq!(head.classes(), 4);
    assert!(probed.train_acc >= 0.0 && probed.train_acc <= 1.0);
}

#[test]
fn evaluation_is_deterministic_and_per_layer() {
    let data = small_dataset(6);
    let report = pretrain(&data, &ModelConfig::tiny(), &quick(1)).unwrap();
    let a = evaluate(&report.checkpoint, &data.test).unwrap();
    let b = evaluate(&report.checkpoint, &data.test).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.hop_acc_per_layer.len(), 2);
    assert_eq!(a.cls_acc, None);
    let mean = a.hop_acc_per_layer.iter().sum::<f64>() / 2.0;
    assert!((a.hop_acc - mean).abs() < 1e-12);
    assert!(a.to_csv().starts_with("metric,value\n"));
}

#[test]
fn true_hop_logits_score_perfectly_and_drive_the_kernel() {
    let data = small_dataset(7);
    let model = dhgcn::Model::new(ModelConfig::tiny()).unwrap();
    let (partition, hops) = model.ground_truth(&data.train[0].cloud).unwrap();
    let v = hops.num_parts();
    let classes = hops.num_classes();
    let mut one_hot = vec![-5.0; v * v * classes];
    for (r, &d) in hops.distances().iter().enumerate() {
        one_hot[r * classes + d] = 5.0;
    }
    let truth = Tensor::new(vec![v * v, classes], one_hot).unwrap();
    assert_eq!(hop_accuracy(&[truth.clone(), truth.clone()], &hops), 1.0);

    // injected logits replace the predicted ones on the kernel path, so the
    // kernel no longer depends on the network weights
    let cfg = ModelConfig::tiny().with_uniform_lambda(true);
    let options = ForwardOptions {
        logits_override: Some(vec![truth.clone(), truth]),
        ..ForwardOptions::default()
    };
    let kernels: Vec<Vec<f64>> = [3, 4]
        .into_iter()
        .map(|seed| {
            let model = dhgcn::Model::new(ModelConfig {
                seed,
                ..cfg.clone()
            })
            .unwrap();
            let mut tape = Tape::new();
            let out = model
                .forward(&mut tape, &data.train[0].cloud, &partition, &hops, &options)
                .unwrap();
            out.layers
                .iter()
                .flat_map(|l| tape.value(l.kernel.unwrap()).data().to_vec())
                .collect()
        })
        .collect();
    assert_eq!(kernels[0], kernels[1]);
}

#[test]
fn divergence_names_the_sample() {
    let data = small_dataset(8);
    let cfg = TrainConfig {
        lr: 1e250,
        ..quick(3)
    };
    match pretrain(&data, &ModelConfig::tiny(), &cfg) {
        Err(Error::NonFiniteLoss { sample }) => assert!(sample.ends_with(".xyz"), "{sample}"),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn probe_rejects_out_of_range_labels() {
    let mut data = small_dataset(9);
    data.classes.truncate(2);
    let report = pretrain(&data, &ModelConfig::tiny(), &quick(1)).unwrap();
    assert!(matches!(
        linear_probe(&report.checkpoint, &data, &quick(1)),
        Err(Error::ClassMismatch { expected: 2, .. })
    ));
}

#[test]
fn sigma_table_has_one_row_per_value() {
    let data = small_dataset(10);
    let values = [0.2, 0.5, 1.0, 2.0, 5.0];
    let rows = ablate_sigma(&values, &data, &ModelConfig::tiny(), &quick(1)).unwrap();
    assert_eq!(rows.iter().map(|r| r.sigma2).collect::<Vec<_>>(), values);
    let csv = sigma_csv(&rows);
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("sigma2,hop_acc,cls_acc\n0.2,"));
    assert!(ablate_sigma(&[0.0], &data, &ModelConfig::tiny(), &quick(1)).is_err());
}

#[test]
fn attention_ablation_covers_all_variants() {
    let data = small_dataset(11);
    let rows = ablate_attention(&data, &ModelConfig::tiny(), &quick(1)).unwrap();
    let names: Vec<_> = rows.iter().map(|r| r.variant.name()).collect();
    assert_eq!(names, ["sa", "hga_last_layer_loss", "hga_all_layer_loss"]);
    let sa = AttentionVariant::SelfAttention.apply(&ModelConfig::tiny());
    assert!(sa.lambda.iter().all(|&on| !on));
}

#[test]
fn probe_subset_sizes() {
    assert_eq!(probe_subset(800, 0.05, 1).len(), 40);
    assert_eq!(probe_subset(800, 0.2, 1).len(), 160);
    assert_eq!(probe_subset(800, 1.0, 1).len(), 800);
    assert_eq!(probe_subset(95, 0.1, 1).len(), 10);
    assert_eq!(probe_subset(3, 0.01, 1).len(), 1);
}

proptest! {
    #[test]
    fn probe_subsets_are_nested_and_distinct(n in 1usize..300, a in 0.01f64..1.0, b in 0.01f64..1.0, seed in any::<u64>()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = probe_subset(n, lo, seed);
        let large = probe_subset(n, hi, seed);
        prop_assert_eq!(small.len(), ((lo * n as f64).ceil() as usize).max(1));
        prop_assert_eq!(&large[..small.len()], &small[..]);
        let mut sorted = large.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), large.len());
        prop_assert!(large.iter().all(|&i| i < n));
    }
}
