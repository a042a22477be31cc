//! Flat `key = value` run configuration.
//!
//! Values are resolved in four layers: the preset's loss weights, then the
//! config file, then command-line flags, then the ablation mode, which
//! switches off the terms its stage does not use.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use zslc::data::{NormMode, SynthSpec};
use zslc::losses::{HyperParams, Preset};
use zslc::nn::NetConfig;
use zslc::train::Ablation;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub ablation: Ablation,
    pub hp: HyperParams,
    /// Noise width; `None` follows the attribute width.
    pub d_z: Option<usize>,
    pub hidden_generator: usize,
    pub hidden_inference: usize,
    pub hidden_critic: usize,
    pub leaky_slope: f64,
    pub synth: SynthSpec,
    pub normalize: NormMode,
    /// Dataset directory; a synthetic dataset is generated in memory when
    /// unset.
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Keys set by the file or by flags, as opposed to defaults.
    pub explicit: BTreeSet<String>,
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "preset",
    "ablation",
    "beta",
    "lambda",
    "gamma",
    "alpha1",
    "alpha2",
    "epsilon",
    "n_critic",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch_size",
    "epochs",
    "n_syn",
    "seed",
    "classifier_epochs",
    "classifier_lr",
    "recognizer_epochs",
    "recognizer_lr",
    "sinkhorn_max_iter",
    "sinkhorn_tol",
    "joint_max_ascent",
    "d_z",
    "hidden_generator",
    "hidden_inference",
    "hidden_critic",
    "leaky_slope",
    "synth_n_seen",
    "synth_n_unseen",
    "synth_d_x",
    "synth_d_h",
    "synth_train_per_class",
    "synth_test_per_class",
    "synth_attribute_density",
    "synth_sigma",
    "synth_seed",
    "normalize",
    "dataset",
    "out",
    "checkpoint",
];

/// A `key = value` pair with where it came from, for error messages.
#[derive(Clone, Debug)]
pub struct Setting {
    pub key: String,
    pub value: String,
    pub origin: String,
}

fn bad(s: &Setting, what: &str) -> CliError {
    CliError::Config(format!("{}: {} = {:?}: {what}", s.origin, s.key, s.value))
}

fn num<T: std::str::FromStr>(s: &Setting) -> Result<T, CliError> {
    s.value.parse().map_err(|_| bad(s, "not a valid number"))
}

fn flag(s: &Setting) -> Result<bool, CliError> {
    match s.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(s, "expected true or false")),
    }
}

fn path(s: &Setting) -> Option<PathBuf> {
    (!s.value.is_empty()).then(|| PathBuf::from(&s.value))
}

/// Parses a config file body. Blank lines and `#` comments are ignored;
/// repeated and unknown keys are errors.
pub fn parse_file(text: &str, file: &Path) -> Result<Vec<Setting>, CliError> {
    let mut out: Vec<Setting> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let origin = format!("{}:{}", file.display(), n + 1);
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Config(format!("{origin}: expected `key = value`, got {line:?}")));
        };
        let key = k.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("{origin}: unknown key {key:?}")));
        }
        if out.iter().any(|s| s.key == key) {
            return Err(CliError::Config(format!("{origin}: {key:?} is set twice")));
        }
        out.push(Setting { key, value: v.trim().to_string(), origin });
    }
    Ok(out)
}

/// Parses a `key=value` flag argument.
pub fn parse_flag(arg: &str) -> Result<Setting, CliError> {
    let (k, v) = arg.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects key=value, got {arg:?}")))?;
    let key = k.trim().to_string();
    if !KEYS.contains(&key.as_str()) {
        return Err(CliError::Config(format!("--set: unknown key {key:?}")));
    }
    Ok(Setting { key, value: v.trim().to_string(), origin: "--set".into() })
}

impl RunConfig {
    /// Resolves `file` settings, then `flags`, on top of the preset named by
    /// the last `preset` setting (desk by default).
    pub fn resolve(file: &[Setting], flags: &[Setting]) -> Result<Self, CliError> {
        let all: Vec<&Setting> = file.iter().chain(flags).collect();
        let preset = match all.iter().rev().find(|s| s.key == "preset") {
            Some(s) => Preset::parse(&s.value).map_err(|e| bad(s, &e.to_string()))?,
            None => Preset::Desk,
        };
        let mut cfg = RunConfig {
            preset,
            ablation: Ablation::S4,
            hp: preset.hyper_params(),
            d_z: None,
            hidden_generator: 64,
            hidden_inference: 64,
            hidden_critic: 64,
            leaky_slope: 0.2,
            synth: SynthSpec::default(),
            normalize: NormMode::None,
            dataset: None,
            out: None,
            checkpoint: None,
            explicit: BTreeSet::new(),
        };
        for s in &all {
            cfg.set(s)?;
            cfg.explicit.insert(s.key.clone());
        }
        if !cfg.explicit.contains("synth_seed") {
            cfg.synth.seed = cfg.hp.seed;
        }
        cfg.ablation.apply(&mut cfg.hp);
        cfg.hp.validate().map_err(|e| CliError::Config(e.to_string()))?;
        cfg.synth.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn set(&mut self, s: &Setting) -> Result<(), CliError> {
        let hp = &mut self.hp;
        let sy = &mut self.synth;
        match s.key.as_str() {
            "preset" => {}
            "ablation" => self.ablation = Ablation::parse(&s.value).map_err(|e| bad(s, &e.to_string()))?,
            "beta" => hp.beta = num(s)?,
            "lambda" => hp.lambda = num(s)?,
            "gamma" => hp.gamma = num(s)?,
            "alpha1" => hp.alpha1 = num(s)?,
            "alpha2" => hp.alpha2 = num(s)?,
            "epsilon" => hp.epsilon = num(s)?,
            "n_critic" => hp.n_critic = num(s)?,
            "lr" => hp.lr = num(s)?,
            "adam_beta1" => hp.adam_beta1 = num(s)?,
            "adam_beta2" => hp.adam_beta2 = num(s)?,
            "adam_eps" => hp.adam_eps = num(s)?,
            "batch_size" => hp.batch_size = num(s)?,
            "epochs" => hp.epochs = num(s)?,
            "n_syn" => hp.n_syn = num(s)?,
            "seed" => hp.seed = num(s)?,
            "classifier_epochs" => hp.classifier_epochs = num(s)?,
            "classifier_lr" => hp.classifier_lr = num(s)?,
            "recognizer_epochs" => hp.recognizer_epochs = num(s)?,
            "recognizer_lr" => hp.recognizer_lr = num(s)?,
            "sinkhorn_max_iter" => hp.sinkhorn_max_iter = num(s)?,
            "sinkhorn_tol" => hp.sinkhorn_tol = num(s)?,
            "joint_max_ascent" => hp.joint_max_ascent = flag(s)?,
            "d_z" => self.d_z = if s.value == "auto" { None } else { Some(num(s)?) },
            "hidden_generator" => self.hidden_generator = num(s)?,
            "hidden_inference" => self.hidden_inference = num(s)?,
            "hidden_critic" => self.hidden_critic = num(s)?,
            "leaky_slope" => self.leaky_slope = num(s)?,
            "synth_n_seen" => sy.n_seen = num(s)?,
            "synth_n_unseen" => sy.n_unseen = num(s)?,
            "synth_d_x" => sy.d_x = num(s)?,
            "synth_d_h" => sy.d_h = num(s)?,
            "synth_train_per_class" => sy.train_per_class = num(s)?,
            "synth_test_per_class" => sy.test_per_class = num(s)?,
            "synth_attribute_density" => sy.attribute_density = num(s)?,
            "synth_sigma" => sy.sigma = num(s)?,
            "synth_seed" => sy.seed = num(s)?,
            "normalize" => self.normalize = NormMode::parse(&s.value).map_err(|e| bad(s, &e.to_string()))?,
            "dataset" => self.dataset = path(s),
            "out" => self.out = path(s),
            "checkpoint" => self.checkpoint = path(s),
            other => return Err(CliError::Config(format!("{}: unknown key {other:?}", s.origin))),
        }
        Ok(())
    }

    /// Network widths for a dataset with the given feature and attribute
    /// widths.
    pub fn net(&self, d_x: usize, d_h: usize) -> NetConfig {
        NetConfig {
            d_x,
            d_h,
            d_z: self.d_z.unwrap_or(d_h),
            hidden_generator: self.hidden_generator,
            hidden_inference: self.hidden_inference,
            hidden_critic: self.hidden_critic,
            leaky_slope: self.leaky_slope,
        }
    }

    /// The value of `key` as it would be written to a config file.
    pub fn value(&self, key: &str) -> String {
        let hp = &self.hp;
        let sy = &self.synth;
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "preset" => self.preset.name().to_string(),
            "ablation" => self.ablation.name().to_string(),
            "beta" => format!("{:?}", hp.beta),
            "lambda" => format!("{:?}", hp.lambda),
            "gamma" => format!("{:?}", hp.gamma),
            "alpha1" => format!("{:?}", hp.alpha1),
            "alpha2" => format!("{:?}", hp.alpha2),
            "epsilon" => format!("{:?}", hp.epsilon),
            "n_critic" => hp.n_critic.to_string(),
            "lr" => format!("{:?}", hp.lr),
            "adam_beta1" => format!("{:?}", hp.adam_beta1),
            "adam_beta2" => format!("{:?}", hp.adam_beta2),
            "adam_eps" => format!("{:?}", hp.adam_eps),
            "batch_size" => hp.batch_size.to_string(),
            "epochs" => hp.epochs.to_string(),
            "n_syn" => hp.n_syn.to_string(),
            "seed" => hp.seed.to_string(),
            "classifier_epochs" => hp.classifier_epochs.to_string(),
            "classifier_lr" => format!("{:?}", hp.classifier_lr),
            "recognizer_epochs" => hp.recognizer_epochs.to_string(),
            "recognizer_lr" => format!("{:?}", hp.recognizer_lr),
            "sinkhorn_max_iter" => hp.sinkhorn_max_iter.to_string(),
            "sinkhorn_tol" => format!("{:?}", hp.sinkhorn_tol),
            "joint_max_ascent" => hp.joint_max_ascent.to_string(),
            "d_z" => self.d_z.map_or("auto".into(), |d| d.to_string()),
            "hidden_generator" => self.hidden_generator.to_string(),
            "hidden_inference" => self.hidden_inference.to_string(),
            "hidden_critic" => self.hidden_critic.to_string(),
            "leaky_slope" => format!("{:?}", self.leaky_slope),
            "synth_n_seen" => sy.n_seen.to_string(),
            "synth_n_unseen" => sy.n_unseen.to_string(),
            "synth_d_x" => sy.d_x.to_string(),
            "synth_d_h" => sy.d_h.to_string(),
            "synth_train_per_class" => sy.train_per_class.to_string(),
            "synth_test_per_class" => sy.test_per_class.to_string(),
            "synth_attribute_density" => format!("{:?}", sy.attribute_density),
            "synth_sigma" => format!("{:?}", sy.sigma),
            "synth_seed" => sy.seed.to_string(),
            "normalize" => self.normalize.name().to_string(),
            "dataset" => p(&self.dataset),
            "out" => p(&self.out),
            "checkpoint" => p(&self.checkpoint),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Every key with its effective value. Feeding this back as a config
    /// file reproduces the configuration.
    pub fn echo(&self) -> String {
        let mut s = String::from("# effective configuration\n");
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.value(key));
        }
        s
    }
}
