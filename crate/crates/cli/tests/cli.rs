use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use zslc::data::{generate_synthetic, load_dataset_dir, SynthSpec};
use zslc::recog::harmonic_mean;

/// A small problem that trains in well under a second.
const SMALL: &[&str] = &[
    "--set=synth_train_per_class=20",
    "--set=synth_test_per_class=10",
    "--set=synth_d_x=8",
    "--set=synth_d_h=4",
    "--set=hidden_generator=16",
    "--set=hidden_inference=16",
    "--set=hidden_critic=16",
    "--set=classifier_epochs=3",
    "--set=n_syn=20",
    "--set=epochs=3",
    "--set=batch_size=32",
];

fn zslc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zslc")).args(args).env_remove("ZSLC_THREADS").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = zslc(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn small(cmd: &str, out: &Path, extra: &[&str]) -> Vec<String> {
    let mut v = vec![cmd.to_string(), "--out".into(), out.display().to_string()];
    v.extend(SMALL.iter().map(|s| s.to_string()));
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run(args: &[String]) -> Output {
    zslc(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn run_ok(args: &[String]) -> Output {
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

/// A config echo minus its `out` line.
fn without_out(p: &Path) -> Vec<String> {
    String::from_utf8(read(p)).unwrap().lines().filter(|l| !l.starts_with("out =")).map(String::from).collect()
}

fn log_lines(dir: &Path) -> Vec<serde_json::Value> {
    String::from_utf8(read(dir.join("loss.jsonl"))).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn synth_data_round_trips_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth-data", "--preset", "desk", "--seed", "3", "--out", a.to_str().unwrap()]);
    ok(&["synth-data", "--preset", "desk", "--seed", "3", "--out", b.to_str().unwrap()]);
    let ds = load_dataset_dir(&a).unwrap();
    assert_eq!(ds.num_classes(), 10);
    assert_eq!(ds, generate_synthetic(&SynthSpec { seed: 3, ..SynthSpec::default() }).unwrap());
    for f in ["features.csv", "attributes.csv", "splits.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    assert_eq!(without_out(&a.join("config.txt")), without_out(&b.join("config.txt")));
}

#[test]
fn synth_data_refuses_to_overwrite() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().to_str().unwrap();
    ok(&["synth-data", "--out", dir]);
    let again = zslc(&["synth-data", "--out", dir, "--seed", "1"]);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let before = read(tmp.path().join("features.csv"));
    ok(&["synth-data", "--out", dir, "--seed", "1", "--force"]);
    assert_ne!(before, read(tmp.path().join("features.csv")));
}

#[test]
fn s1_logs_zero_align_and_joint_max() {
    let tmp = TempDir::new().unwrap();
    run_ok(&small("train", tmp.path(), &["--ablation", "S1"]));
    let lines = log_lines(tmp.path());
    assert!(lines.iter().any(|l| l["phase"] == "generator"));
    for l in &lines {
        assert_eq!(l["align"], 0.0);
        assert_eq!(l["joint_max"], 0.0);
    }
}

#[test]
fn cub_s4_echoes_the_preset_gamma() {
    let tmp = TempDir::new().unwrap();
    run_ok(&small("train", tmp.path(), &["--preset", "cub", "--ablation", "S4", "--set=epochs=1"]));
    let echo = String::from_utf8(read(tmp.path().join("config.txt"))).unwrap();
    assert!(echo.lines().any(|l| l == "gamma = 3.0"), "{echo}");
    assert!(echo.lines().any(|l| l == "preset = cub"));
    assert!(echo.lines().any(|l| l == "ablation = S4"));
}

#[test]
fn log_has_every_epoch_and_matches_the_checkpoint() {
    let tmp = TempDir::new().unwrap();
    run_ok(&small("train", tmp.path(), &[]));
    let lines = log_lines(tmp.path());
    let state = zslc::train::TrainState::load(&tmp.path().join("checkpoint.bin")).unwrap();
    assert_eq!(state.epoch, 3);
    assert_eq!(lines.len(), state.history.len());
    assert_eq!(lines.last().unwrap()["epoch"], 2);
}

#[test]
fn resumed_training_equals_uninterrupted() {
    let tmp = TempDir::new().unwrap();
    let (full, split) = (tmp.path().join("full"), tmp.path().join("split"));
    run_ok(&small("train", &full, &["--set=epochs=4"]));
    run_ok(&small("train", &split, &["--set=epochs=2"]));
    let ckpt = split.join("checkpoint.bin");
    run_ok(&small("train", &split, &["--set=epochs=4", "--resume", ckpt.to_str().unwrap()]));
    assert_eq!(read(full.join("checkpoint.bin")), read(split.join("checkpoint.bin")));
    assert_eq!(read(full.join("loss.jsonl")), read(split.join("loss.jsonl")));
}

#[test]
fn existing_checkpoint_needs_resume_or_force() {
    let tmp = TempDir::new().unwrap();
    run_ok(&small("train", tmp.path(), &["--set=epochs=1"]));
    assert_eq!(code(&run(&small("train", tmp.path(), &["--set=epochs=1"]))), 2);
    run_ok(&small("train", tmp.path(), &["--set=epochs=1", "--force"]));
}

#[test]
fn rerun_from_the_echo_is_bit_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&small("train", &a, &["--preset", "flo", "--seed", "9", "--set=lr=0.000731"]));
    let cfg = a.join("config.txt");
    ok(&["train", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(read(a.join("checkpoint.bin")), read(b.join("checkpoint.bin")));
    assert_eq!(without_out(&cfg), without_out(&b.join("config.txt")));
}

#[test]
fn eval_writes_consistent_deterministic_metrics() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    run_ok(&small("train", dir, &[]));
    run_ok(&small("eval", dir, &[]));
    let json = read(dir.join("metrics.json"));
    let csv = read(dir.join("metrics.csv"));
    run_ok(&small("eval", dir, &[]));
    assert_eq!(json, read(dir.join("metrics.json")));
    assert_eq!(csv, read(dir.join("metrics.csv")));

    let m: serde_json::Value = serde_json::from_slice(&json).unwrap();
    let keys: Vec<&String> = m.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["H", "S", "U", "per_class"]);
    let (u, s, h) = (m["U"].as_f64().unwrap(), m["S"].as_f64().unwrap(), m["H"].as_f64().unwrap());
    assert_eq!(h, harmonic_mean(u, s).unwrap());
    assert_eq!(m["per_class"].as_object().unwrap().len(), 10);
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv, format!("U,S,H\n{u},{s},{h}\n"));
}

#[test]
fn eval_overrides_recognition_settings() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    run_ok(&small("train", dir, &[]));
    run_ok(&small("eval", dir, &["--set=n_syn=0"]));
    let m: serde_json::Value = serde_json::from_slice(&read(dir.join("metrics.json"))).unwrap();
    assert_eq!(m["U"], 0.0);
}

#[test]
fn eval_rejects_a_dataset_of_other_width() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    run_ok(&small("train", dir, &["--set=epochs=1"]));
    let out = run(&small("eval", dir, &["--set=synth_d_x=9"]));
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_x=8"));
}

#[test]
fn sweep_writes_one_row_per_value_and_a_chart() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    run_ok(&small("sweep", dir, &["--axis", "n_syn", "--values", "0,50,200"]));
    let csv = String::from_utf8(read(dir.join("sweep.csv"))).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(csv.lines().next(), Some("value,U,S,H,status"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "0");
    assert_eq!(rows[0][1], "0");
    assert!(rows.iter().all(|r| r[4] == "ok"));
    for v in ["0", "50", "200"] {
        assert!(dir.join(format!("n_syn={v}")).join("metrics.json").exists());
    }
    let svg = String::from_utf8(read(dir.join("sweep.svg"))).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("well-formed SVG");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 3);
}

#[test]
fn sweep_marks_failed_cells_and_continues() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    // The second weight overflows the generator objective.
    let out = run(&small("sweep", dir, &["--axis", "alpha2", "--values", "1,1e308", "--set=epochs=1"]));
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(read(dir.join("sweep.csv"))).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("1,") && rows[0].ends_with(",ok"), "{csv}");
    assert_eq!(rows[1], "1e308,,,,failed (exit 4)");
    let svg = String::from_utf8(read(dir.join("sweep.svg"))).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 1);
}

#[test]
fn sweep_argument_errors() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&run(&small("sweep", tmp.path(), &["--axis", "n_syn", "--values", "10"]))), 2);
    assert_eq!(code(&run(&small("sweep", tmp.path(), &["--axis", "beta", "--values", "1,2"]))), 2);
    assert_eq!(code(&run(&small("sweep", tmp.path(), &["--axis", "n_syn", "--values", "1,x"]))), 2);
}

const FIXTURE: &str = r#"{"phase":"critic","epoch":0,"step":1,"wgan1":1.0,"wgan2":0.5,"total":1.5}
{"phase":"generator","epoch":0,"step":2,"wgan1":0.8,"wgan2":0.4,"total":1.2}
{"phase":"critic","epoch":0,"step":3,"wgan1":0.6,"wgan2":0.3,"total":0.9}
"#;

fn plot(log: &str, extra: &[&str]) -> (Output, Option<String>) {
    let tmp = TempDir::new().unwrap();
    let (src, dst) = (tmp.path().join("loss.jsonl"), tmp.path().join("loss.svg"));
    fs::write(&src, log).unwrap();
    let mut args = vec!["plot", "--log", src.to_str().unwrap()];
    args.extend(extra);
    let out = zslc(&args);
    (out, fs::read_to_string(dst).ok())
}

fn circles_per_series(svg: &str) -> Vec<(String, usize)> {
    let doc = roxmltree::Document::parse(svg).expect("well-formed SVG");
    doc.descendants()
        .filter(|n| n.has_tag_name("g"))
        .filter_map(|g| Some((g.attribute("data-series")?.to_string(), g.children().filter(|c| c.has_tag_name("circle")).count())))
        .collect()
}

#[test]
fn plot_draws_one_point_per_step() {
    let (out, svg) = plot(FIXTURE, &["--terms", "wgan1,wgan2,total"]);
    assert!(out.status.success());
    let counts = circles_per_series(&svg.unwrap());
    assert_eq!(counts, [("wgan1".to_string(), 3), ("wgan2".to_string(), 3), ("total".to_string(), 3)]);
}

#[test]
fn plot_skips_missing_terms_with_a_warning() {
    let log = FIXTURE.replace(r#""wgan2":0.4,"#, "");
    let (out, svg) = plot(&log, &["--terms", "wgan1,wgan2"]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning: line 2: missing term \"wgan2\""), "{stderr}");
    assert_eq!(circles_per_series(&svg.unwrap())[1], ("wgan2".to_string(), 2));
}

#[test]
fn plot_is_byte_deterministic() {
    let (_, a) = plot(FIXTURE, &[]);
    let (_, b) = plot(FIXTURE, &[]);
    assert_eq!(a.unwrap(), b.unwrap());
}

#[test]
fn plot_of_a_real_log() {
    let tmp = TempDir::new().unwrap();
    run_ok(&small("train", tmp.path(), &["--set=epochs=1"]));
    let log = tmp.path().join("loss.jsonl");
    let svg = tmp.path().join("gen.svg");
    ok(&["plot", "--log", log.to_str().unwrap(), "--out", svg.to_str().unwrap(), "--phase", "generator"]);
    let n_gen = log_lines(tmp.path()).iter().filter(|l| l["phase"] == "generator").count();
    let counts = circles_per_series(&fs::read_to_string(svg).unwrap());
    assert_eq!(counts.len(), 7);
    assert!(counts.iter().all(|(_, c)| *c == n_gen));
}

#[test]
fn empty_log_is_a_data_error() {
    let (out, svg) = plot("", &[]);
    assert_eq!(code(&out), 3);
    assert!(svg.is_none());
}

#[test]
fn config_file_errors_name_the_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# comment\nepochs = 2\nalhpa1 = 3\n").unwrap();
    let out = zslc(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("run.cfg:3") && stderr.contains("alhpa1"), "{stderr}");
    assert!(!tmp.path().join("checkpoint.bin").exists());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "preset = awa1\nseed = 4\ngamma = 0.5\n").unwrap();
    let dir = tmp.path().join("out");
    let mut args = small("train", &dir, &["--set=epochs=1", "--seed", "5"]);
    args.extend(["--config".to_string(), cfg.display().to_string()]);
    run_ok(&args);
    let echo = String::from_utf8(read(dir.join("config.txt"))).unwrap();
    for want in ["seed = 5", "gamma = 0.5", "alpha1 = 10.0", "synth_seed = 5"] {
        assert!(echo.lines().any(|l| l == want), "missing {want:?} in\n{echo}");
    }
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&run(&small("train", dir, &["--preset", "imagenet"]))), 2);
    assert_eq!(code(&run(&small("train", dir, &["--set=lr=-1"]))), 2);
    assert_eq!(code(&zslc(&["train"])), 2);
    let missing = dir.join("nope.bin");
    assert_eq!(code(&run(&small("eval", dir, &["--checkpoint", missing.to_str().unwrap()]))), 1);
    fs::write(&missing, b"garbage").unwrap();
    assert_eq!(code(&run(&small("eval", dir, &["--checkpoint", missing.to_str().unwrap()]))), 3);
    let mut threads = Command::new(env!("CARGO_BIN_EXE_zslc"));
    threads.args(["synth-data", "--out", dir.join("d").to_str().unwrap()]).env("ZSLC_THREADS", "many");
    assert_eq!(threads.output().unwrap().status.code(), Some(2));
}

#[test]
fn overflowing_features_exit_numerical() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    run_ok(&small("synth-data", &data, &[]));
    let features = data.join("features.csv");
    let text = fs::read_to_string(&features).unwrap();
    let mut lines = text.lines();
    let mut scaled = format!("{}\n", lines.next().unwrap());
    for line in lines {
        let mut cols = line.split(',');
        let mut row = vec![cols.next().unwrap().to_string()];
        row.extend(cols.map(|v| format!("{}", v.parse::<f64>().unwrap() * 1e200 + 1e200)));
        scaled.push_str(&row.join(","));
        scaled.push('\n');
    }
    fs::write(&features, scaled).unwrap();
    let out = run(&small("train", &tmp.path().join("run"), &["--dataset", data.to_str().unwrap()]));
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at step"));
}

#[test]
fn zslc_threads_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let dirs: Vec<PathBuf> = ["one", "four"].iter().map(|d| tmp.path().join(d)).collect();
    for (dir, n) in dirs.iter().zip(["1", "4"]) {
        let args = small("train", dir, &["--set=hidden_critic=128", "--set=epochs=1"]);
        let out = Command::new(env!("CARGO_BIN_EXE_zslc")).args(&args).env("ZSLC_THREADS", n).output().unwrap();
        assert!(out.status.success());
    }
    assert_eq!(read(dirs[0].join("checkpoint.bin")), read(dirs[1].join("checkpoint.bin")));
}
