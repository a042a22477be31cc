//! Subcommand implementations.
//!
//! Every command that writes into an output directory also writes
//! `config.txt`, the effective configuration, which can be passed back with
//! `--config` to rerun it.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::Value;
use zslc::data::{generate_synthetic, load_dataset_dir, normalize_features, save_dataset, DatasetPaths, GzslDataset};
use zslc::losses::Phase;
use zslc::recog::{recognize, GzslMetrics};
use zslc::train::TrainState;

use crate::config::{RunConfig, Setting};
use crate::svg::{LineChart, Series};
use crate::CliError;

pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_LOG: &str = "loss.jsonl";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

/// Axes accepted by [`sweep`].
pub const SWEEP_AXES: &[&str] = &["alpha1", "alpha2", "gamma", "n_syn"];

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.out.as_deref().ok_or_else(|| CliError::Config("no output directory: pass --out or set `out`".into()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Writes through a sibling temporary file so a crash never leaves a
/// truncated file behind.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write(&tmp, contents)?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// The configured dataset directory, or the synthetic dataset described by
/// the `synth_*` keys; normalized as configured.
pub fn load_data(cfg: &RunConfig) -> Result<GzslDataset, CliError> {
    let ds = match &cfg.dataset {
        Some(dir) => load_dataset_dir(dir)?,
        None => generate_synthetic(&cfg.synth)?,
    };
    Ok(normalize_features(&ds, cfg.normalize))
}

/// Writes the synthetic dataset files into the output directory.
pub fn synth_data(cfg: &RunConfig, force: bool) -> Result<DatasetPaths, CliError> {
    let dir = out_dir(cfg)?;
    let paths = DatasetPaths::in_dir(dir);
    if !force {
        if let Some(p) = [&paths.features, &paths.attributes, &paths.splits].into_iter().find(|p| p.exists()) {
            return Err(CliError::Config(format!("{} exists; pass --force to overwrite", p.display())));
        }
    }
    let ds = generate_synthetic(&cfg.synth)?;
    create_dir(dir)?;
    write(&dir.join(CONFIG_FILE), cfg.echo())?;
    Ok(save_dataset(&ds, dir)?)
}

fn check_dims(state: &TrainState, ds: &GzslDataset, source: &Path) -> Result<(), CliError> {
    let (want, got) = ((state.net.d_x, state.net.d_h), (ds.d_x(), ds.d_h()));
    if want != got {
        return Err(CliError::Data(format!(
            "{} was trained on d_x={}, d_h={} but the dataset has d_x={}, d_h={}",
            source.display(),
            want.0,
            want.1,
            got.0,
            got.1
        )));
    }
    Ok(())
}

/// Trains from scratch, or from the checkpoint at `resume`, saving the
/// checkpoint and appending to the loss log after every epoch.
///
/// A resumed run keeps the checkpoint's hyper-parameters and network; only
/// `epochs` can be changed, to extend a run.
pub fn train(cfg: &RunConfig, resume: Option<&Path>, force: bool) -> Result<TrainState, CliError> {
    let dir = out_dir(cfg)?;
    let ckpt = cfg.checkpoint.clone().unwrap_or_else(|| dir.join(CHECKPOINT));
    let ds = load_data(cfg)?;
    let mut cfg = cfg.clone();
    let mut state = match resume {
        Some(path) => {
            let state = TrainState::load(path)?;
            check_dims(&state, &ds, path)?;
            let epochs = if cfg.explicit.contains("epochs") { cfg.hp.epochs } else { state.hp.epochs };
            cfg.hp = state.hp.clone();
            cfg.hp.epochs = epochs;
            cfg.d_z = Some(state.net.d_z);
            cfg.hidden_generator = state.net.hidden_generator;
            cfg.hidden_inference = state.net.hidden_inference;
            cfg.hidden_critic = state.net.hidden_critic;
            cfg.leaky_slope = state.net.leaky_slope;
            let mut state = state;
            state.hp.epochs = epochs;
            state
        }
        None => {
            if !force && ckpt.exists() {
                return Err(CliError::Config(format!("{} exists; pass --resume to continue it or --force to start over", ckpt.display())));
            }
            TrainState::init(&ds, &cfg.hp, &cfg.net(ds.d_x(), ds.d_h()))?
        }
    };
    create_dir(dir)?;
    write(&dir.join(CONFIG_FILE), cfg.echo())?;

    let log_path = dir.join(LOSS_LOG);
    let mut log = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut logged = 0;
    let mut append = |state: &TrainState| -> Result<(), CliError> {
        let mut buf = String::new();
        for r in &state.history[logged..] {
            buf.push_str(&r.to_json_line());
            buf.push('\n');
        }
        logged = state.history.len();
        log.write_all(buf.as_bytes()).and_then(|_| log.flush()).map_err(|e| CliError::io(&log_path, e))
    };
    append(&state)?;

    let mut sink: Option<CliError> = None;
    let epochs = cfg.hp.epochs as u64;
    let run = state.run_until(&ds, epochs, |s| {
        let r = append(s).and_then(|_| write_atomic(&ckpt, &s.to_bytes()));
        r.map_err(|e| {
            let msg = e.to_string();
            sink = Some(e);
            zslc::Error::Numerical(msg)
        })
    });
    match (run, sink) {
        (Ok(()), _) => Ok(state),
        (Err(_), Some(e)) => Err(e),
        (Err(e), None) => Err(e.into()),
    }
}

/// Loads a checkpoint and runs synthesis, recognizer training and scoring,
/// writing `metrics.json` and `metrics.csv`.
///
/// `n_syn`, `seed`, `recognizer_epochs` and `recognizer_lr` given in `cfg`
/// override the checkpoint. Latent features are used for S3 and S4; when
/// no ablation is given, they are used unless the checkpoint was trained
/// without the inference branch.
pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<GzslMetrics, CliError> {
    let dir = out_dir(cfg)?;
    let path = checkpoint.map(Path::to_path_buf).or_else(|| cfg.checkpoint.clone()).unwrap_or_else(|| dir.join(CHECKPOINT));
    let mut state = TrainState::load(&path)?;
    let ds = load_data(cfg)?;
    check_dims(&state, &ds, &path)?;
    for key in cfg.explicit.iter() {
        match key.as_str() {
            "n_syn" => state.hp.n_syn = cfg.hp.n_syn,
            "seed" => state.hp.seed = cfg.hp.seed,
            "recognizer_epochs" => state.hp.recognizer_epochs = cfg.hp.recognizer_epochs,
            "recognizer_lr" => state.hp.recognizer_lr = cfg.hp.recognizer_lr,
            _ => {}
        }
    }
    let latents = if cfg.explicit.contains("ablation") {
        cfg.ablation.uses_latents()
    } else {
        state.hp.alpha1 != 0.0 || state.hp.alpha2 != 0.0
    };
    let metrics = recognize(&state, &ds, latents)?.metrics;
    create_dir(dir)?;
    write(&dir.join(METRICS_JSON), metrics.to_json())?;
    write(&dir.join(METRICS_CSV), format!("{}\n{}\n", GzslMetrics::CSV_HEADER, metrics.csv_row()))?;
    Ok(metrics)
}

/// Result of one sweep cell.
#[derive(Debug)]
pub struct Cell {
    pub value: String,
    pub dir: PathBuf,
    pub result: Result<GzslMetrics, CliError>,
}

/// Trains and evaluates one run per value of `axis`, each in its own
/// subdirectory `<out>/<axis>=<value>`, then writes `sweep.csv` and
/// `sweep.svg`. A failing cell is recorded and the others still run.
pub fn sweep(file: &[Setting], flags: &[Setting], axis: &str, values: &[String], force: bool) -> Result<Vec<Cell>, CliError> {
    if !SWEEP_AXES.contains(&axis) {
        return Err(CliError::Config(format!("unknown sweep axis {axis:?}; expected one of {}", SWEEP_AXES.join(", "))));
    }
    if values.len() < 2 {
        return Err(CliError::Config("a sweep needs at least two values".into()));
    }
    let base = RunConfig::resolve(file, flags)?;
    let dir = out_dir(&base)?.to_path_buf();
    let mut cells = Vec::new();
    for v in values {
        let cell_dir = dir.join(format!("{axis}={v}"));
        let mut settings = flags.to_vec();
        settings.push(Setting { key: axis.into(), value: v.clone(), origin: "--values".into() });
        settings.push(Setting { key: "out".into(), value: cell_dir.display().to_string(), origin: "sweep".into() });
        settings.push(Setting { key: "checkpoint".into(), value: String::new(), origin: "sweep".into() });
        cells.push((v.clone(), cell_dir, RunConfig::resolve(file, &settings)?));
    }
    let results: Vec<Cell> = cells
        .into_par_iter()
        .map(|(value, dir, cfg)| {
            let result = train(&cfg, None, force).and_then(|_| eval(&cfg, None));
            Cell { value, dir, result }
        })
        .collect();

    let mut csv = String::from("value,U,S,H,status\n");
    let mut points = Vec::new();
    for c in &results {
        match &c.result {
            Ok(m) => {
                csv.push_str(&format!("{},{},{},{},ok\n", c.value, m.unseen, m.seen, m.harmonic));
                if let Ok(x) = c.value.parse::<f64>() {
                    points.push((x, m.harmonic));
                }
            }
            Err(e) => csv.push_str(&format!("{},,,,failed (exit {})\n", c.value, e.exit_code())),
        }
    }
    create_dir(&dir)?;
    write(&dir.join("sweep.csv"), csv)?;
    let chart = LineChart {
        title: format!("H vs {axis} ({})", base.ablation.name()),
        x_label: axis.into(),
        y_label: "H (%)".into(),
        series: vec![Series { name: "H".into(), points }],
    };
    write(&dir.join("sweep.svg"), chart.render())?;
    Ok(results)
}

/// Loss terms plotted by default.
pub const PLOT_TERMS: &[&str] = &["wgan1", "wgan2", "joint_d3", "joint_max", "cls", "align", "total"];

/// Builds a chart of `terms` against `step` from a JSON-lines loss log,
/// keeping only lines of `phase` when given. Lines without a term are
/// skipped for that term and reported in the returned warnings.
pub fn loss_chart(log: &str, phase: Option<Phase>, terms: &[String]) -> Result<(LineChart, Vec<String>), CliError> {
    let mut warnings = Vec::new();
    let mut series: Vec<Series> = terms.iter().map(|t| Series { name: t.clone(), points: Vec::new() }).collect();
    let mut lines = 0;
    for (n, line) in log.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| CliError::Data(format!("loss log line {}: {e}", n + 1)))?;
        if let Some(p) = phase {
            let want = serde_json::to_value(p).expect("phase serializes");
            if v.get("phase") != Some(&want) {
                continue;
            }
        }
        let Some(step) = v.get("step").and_then(Value::as_f64) else {
            warnings.push(format!("line {}: no step, skipped", n + 1));
            continue;
        };
        lines += 1;
        for s in &mut series {
            match v.get(&s.name).and_then(Value::as_f64) {
                Some(y) => s.points.push((step, y)),
                None => warnings.push(format!("line {}: missing term {:?}, skipped", n + 1, s.name)),
            }
        }
    }
    if lines == 0 {
        return Err(CliError::Data("loss log has no entries to plot".into()));
    }
    let title = match phase {
        Some(Phase::Critic) => "critic losses",
        Some(Phase::Generator) => "generator losses",
        None => "training losses",
    };
    Ok((LineChart { title: title.into(), x_label: "step".into(), y_label: "loss".into(), series }, warnings))
}

/// Renders the loss log at `log` to the SVG file `out`.
pub fn plot(log: &Path, out: &Path, phase: Option<Phase>, terms: &[String]) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(log).map_err(|e| CliError::io(log, e))?;
    let (chart, warnings) = loss_chart(&text, phase, terms)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write(out, chart.render())?;
    Ok(warnings)
}

/// Parses `critic` or `generator`.
pub fn parse_phase(s: &str) -> Result<Phase, CliError> {
    match s {
        "critic" => Ok(Phase::Critic),
        "generator" => Ok(Phase::Generator),
        _ => Err(CliError::Config(format!("unknown phase {s:?}; expected critic or generator"))),
    }
}
