mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{read, tiny_experiment, tiny_model, write_config};
use cotmisr::checkpoint::save_checkpoint;
use cotmisr::cli::ABLATION_HEADER;
use cotmisr::dataset::load_scene;
use cotmisr::experiment::{ExperimentConfig, DATA_ROOT_ENV};
use cotmisr::fit::{HISTORY_FILE, MODEL_FILE, REPORT_FILE};
use cotmisr::png::read_image;
use cotmisr_core::model::{CotMisr, Group};
use cotmisr_core::rng;
use tempfile::tempdir;

fn cotmisr(args: &[&str]) -> Output {
    cotmisr_env(args, &[])
}

fn cotmisr_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cotmisr"));
    cmd.args(args).env_remove(DATA_ROOT_ENV);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_flag_prints_usage() {
    let o = cotmisr(&["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempdir().unwrap();
    let o = cotmisr(&["train", "--config", s(&dir.path().join("nope.cfg"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn invalid_config_values_are_config_errors() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    for text in ["[model]\narch = (2c\n", "[train]\nbatch_size = 0\n", "[model]\nbogus = 1\n", "[nowhere]\nk = 1\n"] {
        std::fs::write(&path, text).unwrap();
        let o = cotmisr(&["params", "--config", s(&path)]);
        assert_eq!(o.status.code(), Some(2), "{text:?}: {}", stderr(&o));
    }
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempdir().unwrap();
    let mut exp = tiny_experiment(dir.path(), 2, 1);
    exp.data.root = Some(dir.path().join("absent"));
    let cfg = write_config(dir.path(), &exp);
    let o = cotmisr(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run")), "--quiet"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn train_then_eval_round_trip_and_unknown_band() {
    let dir = tempdir().unwrap();
    let exp = tiny_experiment(dir.path(), 4, 1);
    let cfg = write_config(dir.path(), &exp);
    let out = dir.path().join("run");
    let o = cotmisr(&["train", "--config", s(&cfg), "--out", s(&out), "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("trained 1 epochs"));

    let ckpt = out.join(MODEL_FILE);
    let data = exp.data.root.unwrap();
    let report = dir.path().join("eval.csv");
    let o = cotmisr(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--manifest", s(&out.join("split.txt")), "--out", s(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(&report), read(out.join(REPORT_FILE)));

    let o = cotmisr(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--band", "RED"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().all(|l| !l.contains(",NIR,")));
    assert!(text.contains("bicubic,mean,RED,"));

    let o = cotmisr(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--band", "SWIR"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn train_reads_the_data_root_from_the_environment() {
    let dir = tempdir().unwrap();
    let mut exp = tiny_experiment(dir.path(), 2, 1);
    let real = exp.data.root.take().unwrap();
    exp.data.root = Some(dir.path().join("stale"));
    let cfg = write_config(dir.path(), &exp);
    let out = dir.path().join("run");
    let args = ["train", "--config", s(&cfg), "--out", s(&out), "--quiet"];
    assert_eq!(cotmisr(&args).status.code(), Some(3));
    let o = cotmisr_env(&args, &[(DATA_ROOT_ENV, s(&real))]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn train_twice_gives_byte_identical_outputs() {
    let dir = tempdir().unwrap();
    let exp = tiny_experiment(dir.path(), 4, 2);
    let cfg = write_config(dir.path(), &exp);
    let out = dir.path().join("run");
    let run = || {
        let o = cotmisr(&["train", "--config", s(&cfg), "--out", s(&out), "--seed", "3", "--quiet"]);
        assert!(o.status.success(), "{}", stderr(&o));
        [MODEL_FILE, HISTORY_FILE, REPORT_FILE].map(|f| read(out.join(f)))
    };
    assert_eq!(run(), run());
}

#[test]
fn infer_writes_a_clamped_upscaled_png() {
    let dir = tempdir().unwrap();
    let exp = tiny_experiment(dir.path(), 2, 0);
    let model = CotMisr::new(exp.model.clone()).unwrap();
    let mut params = model.init_params::<f32>(&mut rng::stream(1, rng::STREAM_INIT));
    // Pushes every output far outside [0, 1].
    let bias = params.get_mut("encoder.reconstruct.conv.bias").unwrap();
    bias.value.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = if i % 2 == 0 { 40.0 } else { -40.0 });
    let ckpt = dir.path().join("wild.ckpt");
    save_checkpoint(&ckpt, &exp.model, &params).unwrap();

    let scene = exp.data.root.unwrap().join("NIR/imgset0000");
    let (w, h) = load_scene(&scene).unwrap().dims();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    for out in [&a, &b] {
        let o = cotmisr(&["infer", "--checkpoint", s(&ckpt), "--scene-dir", s(&scene), "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(read(&a), read(&b));
    let sr = read_image(&a).unwrap();
    assert_eq!(sr.dims(), (3 * w, 3 * h));
    assert!(sr.data().iter().all(|&v| v == 0.0 || v == 1.0));
    assert!(sr.data().contains(&0.0) && sr.data().contains(&1.0));
}

#[test]
fn infer_on_a_missing_scene_is_a_data_error() {
    let dir = tempdir().unwrap();
    let model = tiny_model(3);
    let params = CotMisr::new(model.clone()).unwrap().init_params::<f32>(&mut rng::stream(0, 0));
    let ckpt = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &model, &params).unwrap();
    let o = cotmisr(&["infer", "--checkpoint", s(&ckpt), "--scene-dir", s(&dir.path().join("none")), "--out", s(&dir.path().join("x.png"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn params_matches_count_params() {
    let dir = tempdir().unwrap();
    let exp = ExperimentConfig::default();
    let cfg = write_config(dir.path(), &exp);
    let o = cotmisr(&["params", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let value = |key: &str| -> usize {
        let line = text.lines().find(|l| l.starts_with(&format!("{key},"))).unwrap_or_else(|| panic!("{key} missing:\n{text}"));
        line.rsplit(',').next().unwrap().parse().unwrap()
    };
    let model = CotMisr::new(exp.model.clone()).unwrap();
    assert_eq!(value("encoder"), model.count_params(Some(Group::Encoder)));
    assert_eq!(value("cot"), model.count_params(Some(Group::Cot)));
    assert_eq!(value("total"), model.count_params(None));
    assert_eq!(value("encoder") + value("cot"), value("total"));
    assert_eq!(value("lrca:ca+sa"), value("total"));
    assert!(value("lrca:ca+sa") > value("lrca:ca") && value("lrca:ca") > value("lrca:sa"));
}

fn ablation_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ABLATION_HEADER);
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn ablate_emits_one_row_per_variant() {
    let dir = tempdir().unwrap();
    let mut exp = tiny_experiment(dir.path(), 4, 1);
    exp.train.steps_per_epoch = 1;
    exp.train.batch_size = 1;
    let cfg = write_config(dir.path(), &exp);
    for (suite, want) in [("attention", ["ca+sa", "ca", "sa"]), ("arch", ["8c4t", "4c4t4c", "(2c1t)x4"])] {
        let out = dir.path().join(suite);
        let o = cotmisr(&["ablate", "--suite", suite, "--config", s(&cfg), "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let rows = ablation_rows(&out.join("ablation.csv"));
        assert_eq!(rows.iter().map(|r| r[1].as_str()).collect::<Vec<_>>(), want);
        assert!(rows.iter().all(|r| r[0] == suite && r[6].parse::<f64>().unwrap().is_finite()));
    }
}

#[test]
fn ablate_without_data_synthesizes_its_own() {
    let dir = tempdir().unwrap();
    let mut exp = tiny_experiment(dir.path(), 3, 1);
    exp.data.root = None;
    exp.train.steps_per_epoch = 1;
    let cfg = write_config(dir.path(), &exp);
    let out = dir.path().join("abl");
    let o = cotmisr(&["ablate", "--suite", "attention", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("data/NIR/imgset0000/HR.png").is_file());
    assert_eq!(ablation_rows(&out.join("ablation.csv")).len(), 3);
}

#[test]
fn synth_writes_the_requested_layout() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("d");
    let args = ["synth", "--out", s(&out), "--scenes", "3", "--hr-size", "18", "--frames", "2", "--seed", "4"];
    let o = cotmisr(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let scene = load_scene(&out.join("RED/imgset0001")).unwrap();
    assert_eq!((scene.k(), scene.dims()), (2, (6, 6)));
    assert!(out.join("NIR/imgset0002/LR001.png").is_file());
    let first = read(out.join("NIR/imgset0000/LR000.png"));
    assert!(cotmisr(&args).status.success());
    assert_eq!(first, read(out.join("NIR/imgset0000/LR000.png")));
}
