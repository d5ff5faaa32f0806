use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use dhgcn::autodiff::{Coordinates, Tape};
use dhgcn::geometry::{load_points, sample_synthetic, ShapeClass, SyntheticSpec};
use dhgcn::model::{attention_csv, hop_csv};
use dhgcn::partition::ground_truth;
use dhgcn::training::{
    ablate_attention as run_attention_ablation, ablate_sigma as run_sigma_ablation,
    attention_csv_table, evaluate, linear_probe, pretrain_with, sigma_csv,
};
use dhgcn::{Checkpoint, Dataset, ForwardOptions, ModelConfig, PointCloud};

use crate::args::{
    AblateAttentionArgs, AblateSigmaArgs, EvalArgs, ExportAttentionArgs, GenDataArgs,
    GradcheckArgs, PartitionArgs, PretrainArgs, ProbeArgs, SplitArg,
};
use crate::run::Run;
use crate::Failure;

fn load_dataset(root: &Path) -> Result<Dataset, Failure> {
    Dataset::load(root)
        .with_context(|| format!("loading dataset {}", root.display()))
        .map_err(Failure::data)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .map_err(Failure::data)
}

fn load_cloud(path: &Path) -> Result<PointCloud, Failure> {
    load_points(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::data)
}

fn check(result: dhgcn::Result<()>) -> Result<(), Failure> {
    result.map_err(Failure::usage)
}

pub fn gen_data(a: &GenDataArgs) -> Result<(), Failure> {
    let spec = a.spec();
    let data = Dataset::synthetic(&spec).map_err(|e| Failure::usage(dhgcn::Error::from(e)))?;
    let mut run = Run::start("gen-data", &a.out)?;
    data.save(&a.out)
        .with_context(|| format!("writing dataset to {}", a.out.display()))
        .map_err(Failure::data)?;
    run.record("dataset", spec);
    run.record("train_samples", data.train.len());
    run.record("test_samples", data.test.len());
    run.say(format!(
        "wrote {} classes, {} train and {} test clouds of {} points to {}",
        data.num_classes(),
        data.train.len(),
        data.test.len(),
        spec.points,
        a.out.display()
    ));
    run.finish()
}

pub fn partition(a: &PartitionArgs) -> Result<(), Failure> {
    let cloud = load_cloud(&a.input)?;
    let (partition, hops) = ground_truth(&cloud, a.split, a.scale)
        .map_err(|e| Failure::usage(dhgcn::Error::from(e)))?;
    let dir = match a.out_hops.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = a
        .out_hops
        .file_name()
        .ok_or_else(|| Failure::usage(anyhow!("--out-hops needs a file name")))?
        .to_string_lossy()
        .into_owned();
    let mut run = Run::start("partition", &dir)?;
    run.write(&name, hops.to_csv())?;

    let sizes: Vec<usize> = partition
        .parts()
        .iter()
        .map(Vec::len)
        .filter(|&n| n > 0)
        .collect();
    let mut histogram = vec![0usize; hops.num_classes()];
    for r in hops.valid_pairs() {
        histogram[hops.distances()[r]] += 1;
    }
    run.record("split", a.split);
    run.record("scale", a.scale);
    run.record("points", cloud.len());
    run.record("occupied_parts", partition.occupied());
    run.record("valid_pairs", hops.num_valid());
    run.record("hop_histogram", &histogram);
    run.say(format!(
        "{} points in {} of {} parts (min {}, max {} points per occupied part)",
        cloud.len(),
        partition.occupied(),
        partition.num_parts(),
        sizes.iter().min().unwrap_or(&0),
        sizes.iter().max().unwrap_or(&0)
    ));
    let hist: Vec<String> = histogram
        .iter()
        .enumerate()
        .map(|(d, n)| format!("{d}:{n}"))
        .collect();
    run.say(format!(
        "{} valid pairs, hop counts {}",
        hops.num_valid(),
        hist.join(" ")
    ));
    run.finish()
}

pub fn pretrain(a: &PretrainArgs) -> Result<(), Failure> {
    let model = a.model.resolve(a.seed);
    let train = a.train.resolve(a.seed, 1.0);
    check(model.validate())?;
    check(train.validate())?;
    let data = load_dataset(&a.data)?;
    let mut run = Run::start("pretrain", &a.out)?;
    run.record("model", &model);
    run.record("train", &train);
    run.record("train_samples", data.train.len());
    let report = pretrain_with(&data, &model, &train, |e| {
        run.say(format!(
            "epoch {} loss {:.6} hop_acc {:.4} lr {:.6}",
            e.epoch, e.loss, e.hop_acc, e.lr
        ))
    })?;
    run.write("checkpoint.dhgc", report.checkpoint.to_bytes())?;
    run.write("curve.csv", report.curve_csv())?;
    let metrics = evaluate(&report.checkpoint, &data.test)?;
    run.write("metrics.csv", metrics.to_csv())?;
    run.record("losses", report.losses());
    run.record("test_hop_acc", metrics.hop_acc);
    run.say(format!(
        "test hop accuracy {:.4} over {} clouds",
        metrics.hop_acc, metrics.samples
    ));
    run.finish()
}

pub fn probe(a: &ProbeArgs) -> Result<(), Failure> {
    let train = a.train.resolve(a.seed, a.train_fraction);
    check(train.validate())?;
    let data = load_dataset(&a.data)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let mut run = Run::start("probe", &a.out)?;
    run.record("model", ckpt.model.config());
    run.record("train", &train);
    let report = linear_probe(&ckpt, &data, &train)?;
    run.write("probe.dhgc", report.checkpoint.to_bytes())?;
    run.write("metrics.csv", report.metrics.to_csv())?;
    run.record("train_fraction", train.train_fraction);
    run.record("probe_train_samples", report.train_samples);
    run.record("train_acc", report.train_acc);
    run.record("test_cls_acc", report.metrics.cls_acc);
    run.say(format!(
        "probe on {} of {} training clouds: train accuracy {:.4}, test accuracy {:.4}",
        report.train_samples,
        data.train.len(),
        report.train_acc,
        report.metrics.cls_acc.unwrap_or(f64::NAN)
    ));
    run.finish()
}

pub fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let data = load_dataset(&a.data)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let (split, samples) = match a.on {
        SplitArg::Train => ("train", &data.train),
        SplitArg::Test => ("test", &data.test),
    };
    if let Some(head) = &ckpt.probe {
        if head.classes() != data.num_classes() {
            return Err(dhgcn::Error::ClassMismatch {
                expected: head.classes(),
                got: data.num_classes(),
            }
            .into());
        }
    }
    let mut run = Run::start("eval", &a.out)?;
    run.record("model", ckpt.model.config());
    run.record("split", split);
    let metrics = evaluate(&ckpt, samples)?;
    run.write("metrics.csv", metrics.to_csv())?;
    run.record("metrics", &metrics);
    let cls = metrics
        .cls_acc
        .map(|c| format!(", class accuracy {c:.4}"))
        .unwrap_or_default();
    run.say(format!(
        "{split}: hop accuracy {:.4}{cls} over {} clouds",
        metrics.hop_acc, metrics.samples
    ));
    run.finish()
}

pub fn ablate_sigma(a: &AblateSigmaArgs) -> Result<(), Failure> {
    let model = a.model.resolve(a.seed);
    let train = a.train.resolve(a.seed, a.train_fraction);
    check(model.validate())?;
    check(train.validate())?;
    let data = load_dataset(&a.data)?;
    let mut run = Run::start("ablate-sigma", &a.out)?;
    run.record("model", &model);
    run.record("train", &train);
    run.record("values", &a.values);
    let rows = run_sigma_ablation(&a.values, &data, &model, &train)?;
    for r in &rows {
        run.say(format!(
            "sigma2 {:?}: hop accuracy {:.4}, class accuracy {:.4}",
            r.sigma2, r.hop_acc, r.cls_acc
        ));
    }
    run.write("sigma.csv", sigma_csv(&rows))?;
    run.finish()
}

pub fn ablate_attention(a: &AblateAttentionArgs) -> Result<(), Failure> {
    let model = a.model.resolve(a.seed);
    let train = a.train.resolve(a.seed, a.train_fraction);
    check(model.validate())?;
    check(train.validate())?;
    let data = load_dataset(&a.data)?;
    let mut run = Run::start("ablate-attention", &a.out)?;
    run.record("model", &model);
    run.record("train", &train);
    let rows = run_attention_ablation(&data, &model, &train)?;
    for r in &rows {
        run.say(format!(
            "{}: hop accuracy {:.4}, class accuracy {:.4}",
            r.variant.name(),
            r.hop_acc,
            r.cls_acc
        ));
    }
    run.write("attention.csv", attention_csv_table(&rows))?;
    run.finish()
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    let mut model_args = a.model.clone();
    model_args.tiny = true;
    let config: ModelConfig = model_args.resolve(a.seed);
    check(config.validate())?;
    let cloud = match &a.input {
        Some(path) => load_cloud(path)?,
        None => sample_synthetic(&SyntheticSpec {
            class: ShapeClass::ALL[(a.seed % ShapeClass::ALL.len() as u64) as usize],
            points: a.points,
            seed: a.seed,
            params: None,
        })
        .map_err(|e| Failure::usage(dhgcn::Error::from(e)))?,
    };
    let coords = match a.per_param {
        Some(per_param) => Coordinates::Sampled {
            per_param,
            seed: a.seed,
        },
        None => Coordinates::All,
    };
    let mut run = Run::start("gradcheck", &a.out)?;
    run.record("model", &config);
    run.record("eps", a.eps);
    run.record("threshold", a.threshold);
    run.record("points", cloud.len());
    let model = dhgcn::Model::new(config)?;
    let report = model.check_gradients(&cloud, a.eps, coords)?;
    run.record("max_rel_error", report.max_rel_error);
    run.record("worst_param", &report.worst_param);
    run.record("checked", report.checked);
    run.say(format!(
        "max relative error {:e} at {}[{}] over {} coordinates",
        report.max_rel_error, report.worst_param, report.worst_index, report.checked
    ));
    let passed = report.max_rel_error < a.threshold;
    run.record("passed", passed);
    run.finish()?;
    if passed {
        Ok(())
    } else {
        Err(Failure::verification(anyhow!(
            "gradient check failed: {:e} is not below {:e}",
            report.max_rel_error,
            a.threshold
        )))
    }
}

pub fn export_attention(a: &ExportAttentionArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let cloud = load_cloud(&a.input)?;
    let model = &ckpt.model;
    let (partition, hops) = model.ground_truth(&cloud)?;
    let mut tape = Tape::new();
    let out = model.forward(
        &mut tape,
        &cloud,
        &partition,
        &hops,
        &ForwardOptions::loss_only(),
    )?;
    let mut run = Run::start("export-attention", &a.out)?;
    run.record("model", model.config());
    run.record("valid_pairs", hops.num_valid());
    run.write("attention.csv", attention_csv(&tape, &out, &hops))?;
    run.write("hops.csv", hop_csv(&tape, &out, &hops))?;
    run.say(format!(
        "wrote attention and hop predictions for {} valid pairs over {} layers",
        hops.num_valid(),
        out.layers.len()
    ));
    run.finish()
}
