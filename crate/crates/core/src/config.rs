//! Experiment configuration: a flat `key = value` file with dotted keys.
//!
//! ```text
//! # comment
//! run.id = mnist_mlp
//! run.epochs = 10
//! model.kind = mlp
//! model.hidden = 128
//! data.source = synth
//! dp.clip_norm = 1.0
//! dp.noise_multiplier = 1.0
//! sweep.grad_acc = 8, 32, 128
//! ```
//!
//! Lists are comma separated. Values may be wrapped in double quotes. Every
//! error names the offending key; syntax errors name the line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dp_engine::{ClipMode, DpConfig, LrSchedule, NoisePlacement};
use crate::error::{Error, Result};
use crate::models::{DEFAULT_GROUPS, DEFAULT_GROUP_NORM_EPS};

/// Stand-in noise-multiplier axis used by `sweep.sigma = default`.
pub const DEFAULT_SWEEP_SIGMAS: [f64; 7] = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];

const KEYS: &[&str] = &[
    "run.id",
    "run.seed",
    "run.epochs",
    "run.output_dir",
    "run.workers",
    "run.precision",
    "model.kind",
    "model.hidden",
    "model.channels",
    "model.groups",
    "model.norm",
    "model.norm_eps",
    "data.source",
    "data.classes",
    "data.per_class",
    "data.eval_per_class",
    "data.shape",
    "data.spread",
    "data.seed",
    "data.train_images",
    "data.train_labels",
    "data.eval_images",
    "data.eval_labels",
    "data.train_csv",
    "data.eval_csv",
    "data.eval_fraction",
    "dp.enabled",
    "dp.clip_norm",
    "dp.noise_multiplier",
    "dp.mode",
    "dp.stages",
    "dp.stage_boundaries",
    "dp.replicas",
    "dp.grad_acc",
    "dp.noise_placement",
    "dp.delta",
    "optim.momentum",
    "optim.base_lr",
    "optim.lr_scaling",
    "optim.decay_epochs",
    "optim.decay_factor",
    "sweep.grad_acc",
    "sweep.sigma",
    "sweep.clip",
    "sweep.concurrent_points",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Mlp {
        hidden: Vec<usize>,
    },
    Cnn {
        channels: [usize; 4],
        groups: usize,
        eps: f64,
        /// `batch` is accepted so that it can be rejected with a privacy error.
        batch_norm: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataConfig {
    Synth {
        classes: usize,
        per_class: usize,
        eval_per_class: usize,
        shape: Vec<usize>,
        spread: f64,
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        eval: Option<(PathBuf, PathBuf)>,
        eval_fraction: f64,
    },
    Csv {
        train: PathBuf,
        eval: Option<PathBuf>,
        classes: Option<usize>,
        eval_fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepAxes {
    pub grad_acc: Option<Vec<usize>>,
    pub sigma: Option<Vec<f64>>,
    pub clip: Option<Vec<f64>>,
    pub concurrent_points: usize,
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self.grad_acc.is_none() && self.sigma.is_none() && self.clip.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub seed: u64,
    pub epochs: usize,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub precision: Precision,
    pub model: ModelConfig,
    pub data: DataConfig,
    /// `grad_acc` here also sets the schedule's scaling factor.
    pub dp: DpConfig,
    pub delta: f64,
    pub momentum: f64,
    pub schedule: LrSchedule,
    pub sweep: SweepAxes,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_relative(dir);
        }
        Ok(cfg)
    }

    /// Makes data and output paths relative to `base`.
    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        match &mut self.data {
            DataConfig::Synth { .. } => {}
            DataConfig::Idx {
                train_images,
                train_labels,
                eval,
                ..
            } => {
                fix(train_images);
                fix(train_labels);
                if let Some((a, b)) = eval {
                    fix(a);
                    fix(b);
                }
            }
            DataConfig::Csv { train, eval, .. } => {
                fix(train);
                if let Some(e) = eval {
                    fix(e);
                }
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw = Raw::parse(text)?;
        raw.build()
    }

    /// Copy for one sweep point.
    pub fn with_point(&self, grad_acc: usize, sigma: f64, clip: f64, index: usize) -> Self {
        let mut c = self.clone();
        c.dp.grad_acc = grad_acc;
        c.dp.noise_multiplier = sigma;
        c.dp.clip_norm = clip;
        c.schedule.grad_acc = grad_acc;
        c.seed = self.seed.wrapping_add(index as u64);
        c.dp.seed = c.seed;
        c.run_id = format!("{}_p{index:03}", self.run_id);
        c.sweep = SweepAxes::default();
        c
    }
}

struct Raw {
    entries: BTreeMap<String, String>,
}

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::config(key, reason)
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = strip_comment(line).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(&format!("line {}", n + 1), "expected `key = value`"))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(bad(key, "unknown key"));
            }
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(bad(key, "given more than once"));
            }
        }
        Ok(Self { entries })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn value<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => parse_one(key, s),
        }
    }

    fn required<V: FromStr>(&self, key: &str) -> Result<V> {
        let s = self.get(key).ok_or_else(|| bad(key, "required"))?;
        parse_one(key, s)
    }

    fn list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>> {
        let Some(s) = self.get(key) else { return Ok(None) };
        parse_list(key, s).map(Some)
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true" | "on" | "yes") => Ok(true),
            Some("false" | "off" | "no") => Ok(false),
            Some(other) => Err(bad(key, format!("expected true or false, got `{other}`"))),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    fn build(&self) -> Result<ExperimentConfig> {
        let run_id = self.get("run.id").unwrap_or("run").to_string();
        if run_id.is_empty()
            || run_id.starts_with('.')
            || !run_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(bad("run.id", "use letters, digits, `-`, `_` or `.` (not leading)"));
        }
        let seed: u64 = self.value("run.seed", 0)?;
        let epochs: usize = self.value("run.epochs", 1)?;
        let default_workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        let workers: usize = self.value("run.workers", default_workers)?;
        if workers == 0 {
            return Err(bad("run.workers", "must be >= 1"));
        }
        let precision = match self.get("run.precision").unwrap_or("f32") {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            other => return Err(bad("run.precision", format!("expected f32 or f64, got `{other}`"))),
        };
        let output_dir = self.path("run.output_dir").unwrap_or_else(|| PathBuf::from("out"));

        let model = self.model()?;
        let data = self.data()?;

        let replicas: usize = self.value("dp.replicas", 1)?;
        let grad_acc: usize = self.value("dp.grad_acc", 1)?;
        let mode = match self.get("dp.mode").unwrap_or("global") {
            "global" => ClipMode::Global,
            "per_layer" => ClipMode::PerLayer,
            "per_stage" => ClipMode::PerStage {
                stages: self.required("dp.stages")?,
                boundaries: self.list("dp.stage_boundaries")?,
            },
            other => {
                return Err(bad(
                    "dp.mode",
                    format!("expected global, per_layer or per_stage, got `{other}`"),
                ))
            }
        };
        if !matches!(mode, ClipMode::PerStage { .. }) {
            for key in ["dp.stages", "dp.stage_boundaries"] {
                if self.get(key).is_some() {
                    return Err(bad(key, "only valid with dp.mode = per_stage"));
                }
            }
        }
        let noise_placement = match self.get("dp.noise_placement").unwrap_or("per_example") {
            "per_example" => NoisePlacement::PerExample,
            "per_batch" => NoisePlacement::PerBatch,
            other => {
                return Err(bad(
                    "dp.noise_placement",
                    format!("expected per_example or per_batch, got `{other}`"),
                ))
            }
        };
        let dp = if self.flag("dp.enabled", true)? {
            let mut dp = DpConfig::new(
                self.required("dp.clip_norm")?,
                self.required("dp.noise_multiplier")?,
                mode,
            );
            dp.noise_placement = noise_placement;
            dp
        } else {
            DpConfig::non_private()
        }
        .with_batch(replicas, grad_acc)
        .with_seed(seed);
        dp.validate()?;
        let delta: f64 = self.value("dp.delta", 1e-5)?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(bad("dp.delta", "must lie in (0, 1)"));
        }

        let momentum: f64 = self.value("optim.momentum", 0.9)?;
        if !(0.0..1.0).contains(&momentum) {
            return Err(bad("optim.momentum", "must lie in [0, 1)"));
        }
        let base_lr: f64 = self.value("optim.base_lr", 0.01)?;
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(bad("optim.base_lr", "must be finite and > 0"));
        }
        let decay_factor: f64 = self.value("optim.decay_factor", 0.1)?;
        if !(decay_factor > 0.0 && decay_factor.is_finite()) {
            return Err(bad("optim.decay_factor", "must be finite and > 0"));
        }
        let schedule = LrSchedule {
            base_lr,
            grad_acc,
            scaling: self.flag("optim.lr_scaling", true)?,
            decay_epochs: self.list("optim.decay_epochs")?.unwrap_or_default(),
            decay_factor,
        };

        let sigma = match self.get("sweep.sigma") {
            Some("default") => Some(DEFAULT_SWEEP_SIGMAS.to_vec()),
            _ => self.list("sweep.sigma")?,
        };
        let sweep = SweepAxes {
            grad_acc: self.list("sweep.grad_acc")?,
            sigma,
            clip: self.list("sweep.clip")?,
            concurrent_points: self.value("sweep.concurrent_points", 1)?,
        };
        for (key, empty) in [
            ("sweep.grad_acc", sweep.grad_acc.as_ref().is_some_and(Vec::is_empty)),
            ("sweep.sigma", sweep.sigma.as_ref().is_some_and(Vec::is_empty)),
            ("sweep.clip", sweep.clip.as_ref().is_some_and(Vec::is_empty)),
        ] {
            if empty {
                return Err(bad(key, "axis must list at least one value"));
            }
        }
        if sweep.grad_acc.as_ref().is_some_and(|v| v.contains(&0)) {
            return Err(bad("sweep.grad_acc", "values must be >= 1"));
        }
        if sweep.sigma.as_ref().is_some_and(|v| v.iter().any(|&s| !(s >= 0.0 && s.is_finite()))) {
            return Err(bad("sweep.sigma", "values must be finite and >= 0"));
        }
        if sweep.clip.as_ref().is_some_and(|v| v.iter().any(|&c| !(c > 0.0))) {
            return Err(bad("sweep.clip", "values must be > 0"));
        }
        if sweep.concurrent_points == 0 {
            return Err(bad("sweep.concurrent_points", "must be >= 1"));
        }

        Ok(ExperimentConfig {
            run_id,
            seed,
            epochs,
            output_dir,
            workers,
            precision,
            model,
            data,
            dp,
            delta,
            momentum,
            schedule,
            sweep,
        })
    }

    fn model(&self) -> Result<ModelConfig> {
        match self.get("model.kind").unwrap_or("mlp") {
            "mlp" => Ok(ModelConfig::Mlp {
                hidden: self.list("model.hidden")?.unwrap_or_else(|| vec![128]),
            }),
            "cnn" => {
                let channels: Vec<usize> = self.list("model.channels")?.unwrap_or_else(|| vec![32, 32, 64, 64]);
                let channels: [usize; 4] = channels
                    .try_into()
                    .map_err(|_| bad("model.channels", "expected four channel counts"))?;
                let batch_norm = match self.get("model.norm").unwrap_or("group") {
                    "group" => false,
                    "batch" => true,
                    other => return Err(bad("model.norm", format!("expected group, got `{other}`"))),
                };
                Ok(ModelConfig::Cnn {
                    channels,
                    groups: self.value("model.groups", DEFAULT_GROUPS)?,
                    eps: self.value("model.norm_eps", DEFAULT_GROUP_NORM_EPS)?,
                    batch_norm,
                })
            }
            other => Err(bad("model.kind", format!("expected mlp or cnn, got `{other}`"))),
        }
    }

    fn data(&self) -> Result<DataConfig> {
        let eval_fraction: f64 = self.value("data.eval_fraction", 0.1)?;
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(bad("data.eval_fraction", "must lie in [0, 1)"));
        }
        match self.get("data.source").unwrap_or("synth") {
            "synth" => {
                let per_class: usize = self.value("data.per_class", 100)?;
                Ok(DataConfig::Synth {
                    classes: self.value("data.classes", 10)?,
                    per_class,
                    eval_per_class: self.value("data.eval_per_class", (per_class / 10).max(1))?,
                    shape: self.list("data.shape")?.unwrap_or_else(|| vec![20]),
                    spread: self.value("data.spread", 1.0)?,
                    seed: self.value("data.seed", 0)?,
                })
            }
            "idx" => {
                let eval = match (self.path("data.eval_images"), self.path("data.eval_labels")) {
                    (Some(i), Some(l)) => Some((i, l)),
                    (None, None) => None,
                    (Some(_), None) => return Err(bad("data.eval_labels", "required with data.eval_images")),
                    (None, Some(_)) => return Err(bad("data.eval_images", "required with data.eval_labels")),
                };
                Ok(DataConfig::Idx {
                    train_images: self.path("data.train_images").ok_or_else(|| bad("data.train_images", "required"))?,
                    train_labels: self.path("data.train_labels").ok_or_else(|| bad("data.train_labels", "required"))?,
                    eval,
                    eval_fraction,
                })
            }
            "csv" => Ok(DataConfig::Csv {
                train: self.path("data.train_csv").ok_or_else(|| bad("data.train_csv", "required"))?,
                eval: self.path("data.eval_csv"),
                classes: self.list::<usize>("data.classes")?.and_then(|v| v.first().copied()),
                eval_fraction,
            }),
            other => Err(bad("data.source", format!("expected synth, idx or csv, got `{other}`"))),
        }
    }
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(head, _)| head)
}

fn parse_one<V: FromStr>(key: &str, s: &str) -> Result<V> {
    s.trim()
        .parse()
        .map_err(|_| bad(key, format!("cannot parse `{s}` as {}", short_type::<V>())))
}

fn parse_list<V: FromStr>(key: &str, s: &str) -> Result<Vec<V>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|item| parse_one(key, item)).collect()
}

fn short_type<V>() -> &'static str {
    let name = std::any::type_name::<V>();
    name.rsplit("::").next().unwrap_or(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "dp.clip_norm = 1.0\ndp.noise_multiplier = 1.0\n";

    fn key_of(err: Error) -> String {
        match err {
            Error::Config { key, .. } => key,
            other => panic!("not a config error: {other}"),
        }
    }

    #[test]
    fn defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.momentum, 0.9);
        assert_eq!(c.dp.mode, ClipMode::Global);
        assert_eq!(c.precision, Precision::F32);
        assert!(c.schedule.scaling);
        assert!(c.sweep.is_empty());
    }

    #[test]
    fn full_file() {
        let text = r#"
# a comment
run.id = "demo"   # trailing comment
run.seed = 7
run.epochs = 3
model.kind = cnn
model.channels = 8, 8, 16, 16
model.groups = 4
data.source = synth
data.shape = 1, 8, 8
dp.clip_norm = 2.0
dp.noise_multiplier = 0.5
dp.mode = per_stage
dp.stages = 2
dp.stage_boundaries = 3
dp.grad_acc = 32
optim.decay_epochs = 10, 20
sweep.sigma = default
"#;
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.run_id, "demo");
        assert_eq!(c.dp.seed, 7);
        assert_eq!(
            c.dp.mode,
            ClipMode::PerStage {
                stages: 2,
                boundaries: Some(vec![3])
            }
        );
        assert!((c.schedule.lr(0) - 0.32).abs() < 1e-15);
        assert_eq!(c.schedule.decay_epochs, vec![10, 20]);
        assert_eq!(c.sweep.sigma.as_deref(), Some(&DEFAULT_SWEEP_SIGMAS[..]));
        assert!(matches!(c.model, ModelConfig::Cnn { groups: 4, .. }));
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("run.speed = 3\n", "run.speed"),
            ("dp.noise_multiplier = 1\n", "dp.clip_norm"),
            ("dp.clip_norm = -1\ndp.noise_multiplier = 1\n", "dp.clip_norm"),
            ("dp.clip_norm = 1\ndp.noise_multiplier = abc\n", "dp.noise_multiplier"),
            ("dp.clip_norm = 1\ndp.noise_multiplier = 1\ndp.mode = per_stage\n", "dp.stages"),
            ("dp.clip_norm = 1\ndp.noise_multiplier = 1\nmodel.kind = rnn\n", "model.kind"),
            ("dp.clip_norm = 1\ndp.noise_multiplier = 1\nsweep.grad_acc = \n", "sweep.grad_acc"),
            ("dp.clip_norm = 1\ndp.noise_multiplier = 1\nrun.id = ../x\n", "run.id"),
            ("dp.clip_norm = 1\ndp.clip_norm = 2\n", "dp.clip_norm"),
            ("just words\n", "line 1"),
        ];
        for (text, key) in cases {
            assert_eq!(key_of(ExperimentConfig::parse(text).unwrap_err()), key, "{text}");
        }
    }

    #[test]
    fn non_private_needs_no_dp_values() {
        let c = ExperimentConfig::parse("dp.enabled = false\ndp.grad_acc = 4\n").unwrap();
        assert!(!c.dp.private);
        assert_eq!(c.dp.effective_batch(), 4);
    }

    #[test]
    fn point_override() {
        let c = ExperimentConfig::parse(&format!("{MINIMAL}run.seed = 10\nsweep.grad_acc = 1, 2\n")).unwrap();
        let p = c.with_point(8, 2.0, 0.5, 3);
        assert_eq!((p.seed, p.dp.seed, p.schedule.grad_acc), (13, 13, 8));
        assert_eq!(p.run_id, "run_p003");
        assert!(p.sweep.is_empty());
    }

    proptest::proptest! {
        #[test]
        fn parsing_is_total(text in "[a-z._= ,#\"\n0-9-]{0,120}") {
            let _ = ExperimentConfig::parse(&text);
        }
    }
}
