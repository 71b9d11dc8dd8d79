use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use efanet::data::io::{read_efat, read_image, write_image};
use efanet::data::Image;
use efanet::{Checkpoint, EfaNet, ModelConfig, RunConfig};
use efanet_cli::train::{FINAL_CHECKPOINT, LOG_FILE};
use efanet_cli::{evaluate, predict, synth, train, CliError, EvalOptions};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_efanet"))
}

fn toy_model() -> ModelConfig {
    ModelConfig::from_text(include_str!("../../../configs/toy.cfg")).unwrap()
}

fn toy_run(dir: &Path, manifest: &Path, out: &str) -> RunConfig {
    let mut c = RunConfig { model: toy_model(), seed: 3, ..RunConfig::default() };
    c.aug.target_size = 32;
    c.optim.batch_size = 4;
    c.optim.epochs = 1;
    c.optim.max_steps = 3;
    c.optim.lr = 1e-3;
    c.manifest = manifest.to_path_buf();
    c.out_dir = dir.join(out);
    c
}

fn small_dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    synth(20, 32, 5, &data).unwrap();
    data.join("manifest.tsv")
}

#[test]
fn synth_splits_eighty_twenty_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = synth(100, 32, 7, &dir.path().join("a")).unwrap();
    let b = synth(100, 32, 7, &dir.path().join("b")).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.split("train").len(), 80);
    assert_eq!(a.split("test").len(), 20);
    let bytes = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(bytes("a", "manifest.tsv"), bytes("b", "manifest.tsv"));
    for r in &a.records {
        let p = r.image.to_str().unwrap();
        assert_eq!(bytes("a", p), bytes("b", p));
    }
}

#[test]
fn oracle_eval_is_perfect_and_covers_the_split() {
    let dir = TempDir::new().unwrap();
    let manifest = small_dataset(dir.path());
    let ck = dir.path().join("init.efac");
    let config = toy_run(dir.path(), &manifest, "unused");
    let net = EfaNet::new(config.model.clone()).unwrap();
    Checkpoint::capture(&config, 0, &net.init_params::<f32>(0), None).save(&ck).unwrap();

    let out = dir.path().join("eval");
    let opts = EvalOptions { oracle: true, out_dir: Some(out.clone()), ..EvalOptions::default() };
    let (report, curves) = evaluate(&ck, &manifest, &opts).unwrap();
    let means = report.means();
    assert_eq!(means.dice, 1.0);
    assert_eq!(means.iou, 1.0);
    assert_eq!(report.records.len(), 4);
    let tsv = fs::read_to_string(out.join("report.tsv")).unwrap();
    let rows = tsv.lines().filter(|l| !l.starts_with('#') && !l.starts_with("id\t")).count();
    assert_eq!(rows, 4);
    assert_eq!(curves.to_tsv().lines().count(), 257);
}

#[test]
fn training_is_reproducible_and_checkpoints_round_trip() {
    let dir = TempDir::new().unwrap();
    let manifest = small_dataset(dir.path());
    let a = train(&toy_run(dir.path(), &manifest, "a"), |_, _, _| {}).unwrap();
    let b = train(&toy_run(dir.path(), &manifest, "b"), |_, _, _| {}).unwrap();
    assert_eq!(a.steps, 3);
    assert_eq!(fs::read(&a.log).unwrap(), fs::read(&b.log).unwrap());
    assert_eq!(fs::read_to_string(&a.log).unwrap().lines().count(), 4);

    let bytes = fs::read(&a.checkpoint).unwrap();
    let again = dir.path().join("again.efac");
    Checkpoint::load(&a.checkpoint).unwrap().save(&again).unwrap();
    assert_eq!(bytes, fs::read(&again).unwrap());
    let (ca, cb) = (Checkpoint::load(&a.checkpoint).unwrap(), Checkpoint::load(&b.checkpoint).unwrap());
    assert_eq!(ca.tensors, cb.tensors);
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let dir = TempDir::new().unwrap();
    let manifest = small_dataset(dir.path());
    let mut config = toy_run(dir.path(), &manifest, "lr0");
    config.optim.lr = 0.0;
    let outcome = train(&config, |_, _, _| {}).unwrap();
    let init = EfaNet::new(config.model.clone()).unwrap().init_params::<f32>(config.seed);
    for (name, p) in outcome.params.iter().filter(|(_, p)| p.trainable) {
        assert_eq!(p.value, init.get(name).unwrap().value, "{name}");
    }
}

#[test]
fn predict_writes_maps_at_input_resolution() {
    let dir = TempDir::new().unwrap();
    let manifest = small_dataset(dir.path());
    let trained = train(&toy_run(dir.path(), &manifest, "run"), |_, _, _| {}).unwrap();
    let image = dir.path().join("odd.pgm");
    let mut img = Image::new(1, 40, 56);
    img.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i % 7) as f32 / 7.0);
    write_image(&image, &img).unwrap();

    let out = dir.path().join("prob.pgm");
    let raw = dir.path().join("prob.efat");
    let probs = predict(&trained.checkpoint, &image, &out, Some(&raw)).unwrap();
    assert_eq!(probs.len(), 40 * 56);
    let written = read_image(&out).unwrap();
    assert_eq!((written.channels, written.height, written.width), (1, 40, 56));
    let (extents, values) = read_efat(&raw).unwrap();
    assert_eq!(extents, vec![1, 1, 40, 56]);
    assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn binary_exit_codes_follow_error_class() {
    let dir = TempDir::new().unwrap();
    let manifest = small_dataset(dir.path());

    let status = bin().args(["eval", "--checkpoint", "nope.efac", "--manifest"]).arg(&manifest).output().unwrap().status;
    assert_eq!(status.code(), Some(3));

    let bad = dir.path().join("bad.efac");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let out = bin().args(["predict", "--image", "x.pgm", "--out", "y.pgm", "--checkpoint"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(3));

    let cfg = dir.path().join("missing.cfg");
    fs::write(&cfg, "data.manifest = does/not/exist.tsv\n").unwrap();
    assert_eq!(bin().args(["train", "--config"]).arg(&cfg).output().unwrap().status.code(), Some(2));

    fs::write(&cfg, "optim.lrr = 1\n").unwrap();
    let out = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("optim.lrr"));
}

#[test]
fn divergence_stops_with_a_last_good_checkpoint() {
    let dir = TempDir::new().unwrap();
    let manifest = small_dataset(dir.path());
    let mut config = toy_run(dir.path(), &manifest, "diverge");
    config.optim.lr = 3e38;
    config.optim.max_steps = 20;
    config.optim.epochs = 10;
    match train(&config, |_, _, _| {}) {
        Err(e @ CliError::Numeric { .. }) => {
            assert_eq!(e.exit_code(), 4);
            let CliError::Numeric { last_good, .. } = e else { unreachable!() };
            assert!(Checkpoint::load(&last_good).is_ok());
        }
        other => panic!("expected a numeric failure, got {:?}", other.map(|o| o.steps)),
    }
}

#[test]
fn eval_rejects_a_mismatched_model_config() {
    let dir = TempDir::new().unwrap();
    let manifest = small_dataset(dir.path());
    let run = train(&toy_run(dir.path(), &manifest, "run"), |_, _, _| {}).unwrap();
    assert!(run.checkpoint.ends_with(FINAL_CHECKPOINT));
    assert!(run.log.ends_with(LOG_FILE));
    let mut other = toy_run(dir.path(), &manifest, "run");
    other.model.common_width = 16;
    let opts = EvalOptions { config: Some(other), ..EvalOptions::default() };
    let err = evaluate(&run.checkpoint, &manifest, &opts).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("model.common_width"));
}

#[test]
fn analyze_prints_a_total_row() {
    let out = bin().args(["analyze", "--res", "32", "--config", "../../configs/toy.cfg"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let total = text.lines().find(|l| l.starts_with("all\t")).unwrap();
    let net = EfaNet::new(toy_model()).unwrap();
    let report = net.analyze(32, 32).unwrap();
    assert!(total.ends_with(&format!("\t{}\t{}", report.total_params(), report.total_flops())));
}
