//! Experiment configuration: lenient JSON in, a fully defaulted config out,
//! with every problem reported at its JSON-pointer path.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::attacks::ScoringMode;
use crate::models::CUT_POINTS;
use crate::nn::{OptimizerKind, TrainConfig};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    AttrAttack,
    InversionAttack,
}

impl ExperimentKind {
    pub const NAMES: [&'static str; 2] = ["attr-attack", "inversion-attack"];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::AttrAttack => "attr-attack",
            ExperimentKind::InversionAttack => "inversion-attack",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TabularSource {
    Synthetic { n: usize },
    Files { csv: PathBuf, schema: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    /// Train, query and evaluation sets drawn from the generator with
    /// independent seeds, so they are disjoint.
    Synthetic { side: usize, n_train: usize, n_query: usize, n_eval: usize },
    /// One PGM set split into train (80%) and a remainder halved into query
    /// and evaluation sets.
    Files { images_dir: PathBuf, labels_csv: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttrSettings {
    pub data: TabularSource,
    pub train_fraction: f64,
    pub flip_probabilities: Vec<f64>,
    /// Sensitive attribute names; empty means every sensitive attribute.
    pub targets: Vec<String>,
    pub scoring: ScoringMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionSettings {
    pub data: ImageSource,
    pub hidden_width: usize,
    pub cut_points: Vec<usize>,
    pub sigmas: Vec<f64>,
    /// Inverse-network training (the adversary's side).
    pub inverse_train: TrainConfig,
    /// Number of (original, recovered) pairs in each PGM grid.
    pub grid_images: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Settings {
    Attr(AttrSettings),
    Inversion(InversionSettings),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub repetitions: usize,
    /// Victim model training.
    pub train: TrainConfig,
    pub settings: Settings,
}

impl ExperimentConfig {
    pub fn kind(&self) -> ExperimentKind {
        match self.settings {
            Settings::Attr(_) => ExperimentKind::AttrAttack,
            Settings::Inversion(_) => ExperimentKind::InversionAttack,
        }
    }
}

/// One validation failure.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "{at}: {}", self.message)
    }
}

struct Checker<'a> {
    issues: Vec<ConfigIssue>,
    base: &'a Path,
}

fn ptr(parent: &str, key: &str) -> String {
    format!("{parent}/{}", key.replace('~', "~0").replace('/', "~1"))
}

impl Checker<'_> {
    fn issue(&mut self, pointer: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue { pointer: pointer.to_string(), message: message.into() });
    }

    fn object<'v>(&mut self, v: &'v Value, at: &str) -> Option<&'v Map<String, Value>> {
        match v.as_object() {
            Some(o) => Some(o),
            None => {
                self.issue(at, "expected an object");
                None
            }
        }
    }

    fn known(&mut self, obj: &Map<String, Value>, at: &str, allowed: &[&str]) {
        for k in obj.keys() {
            if !allowed.contains(&k.as_str()) {
                self.issue(&ptr(at, k), format!("unknown field (expected one of {})", allowed.join(", ")));
            }
        }
    }

    fn uint(&mut self, obj: &Map<String, Value>, at: &str, key: &str, default: u64, min: u64) -> u64 {
        match obj.get(key) {
            None => default,
            Some(v) => match v.as_u64() {
                Some(n) if n >= min => n,
                _ => {
                    self.issue(&ptr(at, key), format!("expected an integer >= {min}"));
                    default
                }
            },
        }
    }

    fn real(&mut self, obj: &Map<String, Value>, at: &str, key: &str, default: f64, ok: impl Fn(f64) -> bool, what: &str) -> f64 {
        match obj.get(key) {
            None => default,
            Some(v) => match v.as_f64() {
                Some(x) if ok(x) => x,
                _ => {
                    self.issue(&ptr(at, key), format!("expected {what}"));
                    default
                }
            },
        }
    }

    fn reals(&mut self, obj: &Map<String, Value>, at: &str, key: &str, default: &[f64], ok: impl Fn(f64) -> bool, what: &str) -> Vec<f64> {
        let Some(v) = obj.get(key) else { return default.to_vec() };
        let at = ptr(at, key);
        let Some(items) = v.as_array() else {
            self.issue(&at, "expected a list of numbers");
            return default.to_vec();
        };
        if items.is_empty() {
            self.issue(&at, "list must not be empty");
        }
        let mut out = Vec::new();
        for (i, item) in items.iter().enumerate() {
            match item.as_f64() {
                Some(x) if ok(x) => out.push(x),
                _ => self.issue(&format!("{at}/{i}"), format!("expected {what}")),
            }
        }
        out
    }

    fn path(&mut self, obj: &Map<String, Value>, at: &str, key: &str, must_exist: bool) -> PathBuf {
        match obj.get(key).and_then(Value::as_str) {
            Some(s) => {
                let p = self.base.join(s);
                if must_exist && !p.exists() {
                    self.issue(&ptr(at, key), format!("{} does not exist", p.display()));
                }
                p
            }
            None => {
                self.issue(&ptr(at, key), "expected a path string");
                PathBuf::new()
            }
        }
    }

    fn train(&mut self, v: Option<&Value>, at: &str, defaults: TrainConfig) -> TrainConfig {
        let Some(v) = v else { return defaults };
        let Some(obj) = self.object(v, at) else { return defaults };
        self.known(obj, at, &["batch_size", "epochs", "learning_rate", "optimizer", "beta1", "beta2", "epsilon", "seed"]);
        let optimizer = match obj.get("optimizer") {
            None => defaults.optimizer,
            Some(v) => match v.as_str() {
                Some("adam") => OptimizerKind::Adam,
                Some("sgd") => OptimizerKind::Sgd,
                _ => {
                    self.issue(&ptr(at, "optimizer"), "expected one of adam, sgd");
                    defaults.optimizer
                }
            },
        };
        if obj.contains_key("seed") {
            self.issue(&ptr(at, "seed"), "training seeds derive from the master seed; set the top-level seed instead");
        }
        TrainConfig {
            batch_size: self.uint(obj, at, "batch_size", defaults.batch_size as u64, 1) as usize,
            epochs: self.uint(obj, at, "epochs", defaults.epochs as u64, 0) as usize,
            learning_rate: self.real(obj, at, "learning_rate", defaults.learning_rate, |x| x > 0.0, "a positive number"),
            optimizer,
            beta1: self.real(obj, at, "beta1", defaults.beta1, |x| (0.0..1.0).contains(&x), "a number in [0, 1)"),
            beta2: self.real(obj, at, "beta2", defaults.beta2, |x| (0.0..1.0).contains(&x), "a number in [0, 1)"),
            epsilon: self.real(obj, at, "epsilon", defaults.epsilon, |x| x > 0.0, "a positive number"),
            seed: defaults.seed,
        }
    }
}

pub fn default_attr_train() -> TrainConfig {
    TrainConfig { batch_size: 32, epochs: 200, learning_rate: 0.001, ..TrainConfig::default() }
}

pub fn default_victim_train() -> TrainConfig {
    TrainConfig { batch_size: 32, epochs: 8, learning_rate: 0.001, ..TrainConfig::default() }
}

pub fn default_inverse_train() -> TrainConfig {
    TrainConfig { batch_size: 16, epochs: 20, learning_rate: 0.001, ..TrainConfig::default() }
}

pub const DEFAULT_FLIPS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

/// Fill defaults and collect every problem. Relative paths resolve against
/// `base` (normally the config file's directory).
pub fn normalize(raw: &Value, base: &Path) -> Result<ExperimentConfig, Vec<ConfigIssue>> {
    let mut c = Checker { issues: Vec::new(), base };
    let Some(root) = c.object(raw, "") else { return Err(c.issues) };
    c.known(
        root,
        "",
        &["kind", "seed", "output_dir", "repetitions", "data", "train", "model", "defense", "cut_points", "attack"],
    );
    let kind = match root.get("kind").and_then(Value::as_str) {
        Some("attr-attack") => Some(ExperimentKind::AttrAttack),
        Some("inversion-attack") => Some(ExperimentKind::InversionAttack),
        _ => {
            c.issue("/kind", format!("expected one of {}", ExperimentKind::NAMES.join(", ")));
            None
        }
    };
    let seed = c.uint(root, "", "seed", DEFAULT_SEED, 0);
    let output_dir = match root.get("output_dir") {
        None => base.join("out"),
        Some(Value::String(s)) => base.join(s),
        Some(_) => {
            c.issue("/output_dir", "expected a path string");
            PathBuf::new()
        }
    };
    let empty = Value::Object(Map::new());
    let data = root.get("data").unwrap_or(&empty);
    let defense = root.get("defense").unwrap_or(&empty);
    let attack = root.get("attack").unwrap_or(&empty);
    let model = root.get("model").unwrap_or(&empty);

    let (repetitions, train, settings) = match kind {
        Some(ExperimentKind::AttrAttack) => {
            let reps = c.uint(root, "", "repetitions", 10, 1) as usize;
            let train = c.train(root.get("train"), "/train", default_attr_train());
            if root.contains_key("cut_points") {
                c.issue("/cut_points", "only used by inversion-attack experiments");
            }
            if root.contains_key("model") {
                c.issue("/model", "the tabular classifier has a fixed architecture");
            }
            let data = match c.object(data, "/data") {
                Some(d) => match d.get("source").and_then(Value::as_str).unwrap_or("synthetic") {
                    "synthetic" => {
                        c.known(d, "/data", &["source", "n", "train_fraction"]);
                        TabularSource::Synthetic { n: c.uint(d, "/data", "n", 5000, 2) as usize }
                    }
                    "files" => {
                        c.known(d, "/data", &["source", "csv", "schema", "train_fraction"]);
                        TabularSource::Files {
                            csv: c.path(d, "/data", "csv", true),
                            schema: c.path(d, "/data", "schema", true),
                        }
                    }
                    _ => {
                        c.issue("/data/source", "expected one of synthetic, files");
                        TabularSource::Synthetic { n: 0 }
                    }
                },
                None => TabularSource::Synthetic { n: 0 },
            };
            let train_fraction = data_fraction(&mut c, root.get("data"));
            let flips = match c.object(defense, "/defense") {
                Some(d) => {
                    c.known(d, "/defense", &["flip_probabilities"]);
                    c.reals(d, "/defense", "flip_probabilities", &DEFAULT_FLIPS, |p| (0.0..=1.0).contains(&p), "a probability in [0, 1]")
                }
                None => DEFAULT_FLIPS.to_vec(),
            };
            let (targets, scoring) = match c.object(attack, "/attack") {
                Some(a) => {
                    c.known(a, "/attack", &["targets", "scoring"]);
                    let targets = match a.get("targets") {
                        None => Vec::new(),
                        Some(Value::Array(items)) if !items.is_empty() => items
                            .iter()
                            .enumerate()
                            .filter_map(|(i, t)| match t.as_str() {
                                Some(s) => Some(s.to_string()),
                                None => {
                                    c.issue(&format!("/attack/targets/{i}"), "expected an attribute name");
                                    None
                                }
                            })
                            .collect(),
                        Some(_) => {
                            c.issue("/attack/targets", "expected a nonempty list of attribute names");
                            Vec::new()
                        }
                    };
                    let scoring = match a.get("scoring").map(Value::as_str) {
                        None | Some(Some("soft")) => ScoringMode::Soft,
                        Some(Some("hard")) => ScoringMode::Hard,
                        _ => {
                            c.issue("/attack/scoring", "expected one of soft, hard");
                            ScoringMode::Soft
                        }
                    };
                    (targets, scoring)
                }
                None => (Vec::new(), ScoringMode::Soft),
            };
            let settings = Settings::Attr(AttrSettings { data, train_fraction, flip_probabilities: flips, targets, scoring });
            (reps, train, Some(settings))
        }
        Some(ExperimentKind::InversionAttack) => {
            let reps = c.uint(root, "", "repetitions", 3, 1) as usize;
            let train = c.train(root.get("train"), "/train", default_victim_train());
            let data = match c.object(data, "/data") {
                Some(d) => match d.get("source").and_then(Value::as_str).unwrap_or("synthetic") {
                    "synthetic" => {
                        c.known(d, "/data", &["source", "side", "n_train", "n_query", "n_eval"]);
                        let side = c.uint(d, "/data", "side", 32, 8) as usize;
                        if side % 8 != 0 {
                            c.issue("/data/side", "image side must be a multiple of 8");
                        }
                        ImageSource::Synthetic {
                            side,
                            n_train: c.uint(d, "/data", "n_train", 2000, 1) as usize,
                            n_query: c.uint(d, "/data", "n_query", 500, 1) as usize,
                            n_eval: c.uint(d, "/data", "n_eval", 100, 1) as usize,
                        }
                    }
                    "files" => {
                        c.known(d, "/data", &["source", "images_dir", "labels_csv"]);
                        ImageSource::Files {
                            images_dir: c.path(d, "/data", "images_dir", true),
                            labels_csv: c.path(d, "/data", "labels_csv", true),
                        }
                    }
                    _ => {
                        c.issue("/data/source", "expected one of synthetic, files");
                        ImageSource::Synthetic { side: 32, n_train: 0, n_query: 0, n_eval: 0 }
                    }
                },
                None => ImageSource::Synthetic { side: 32, n_train: 0, n_query: 0, n_eval: 0 },
            };
            let hidden_width = match c.object(model, "/model") {
                Some(m) => {
                    c.known(m, "/model", &["hidden_width"]);
                    c.uint(m, "/model", "hidden_width", 128, 1) as usize
                }
                None => 128,
            };
            let cut_points = match root.get("cut_points") {
                None => CUT_POINTS.to_vec(),
                Some(Value::Array(items)) if !items.is_empty() => items
                    .iter()
                    .enumerate()
                    .filter_map(|(i, v)| match v.as_u64() {
                        Some(cut) if CUT_POINTS.contains(&(cut as usize)) => Some(cut as usize),
                        _ => {
                            c.issue(&format!("/cut_points/{i}"), "expected one of 2, 4, 6");
                            None
                        }
                    })
                    .collect(),
                Some(_) => {
                    c.issue("/cut_points", "expected a nonempty list drawn from 2, 4, 6");
                    Vec::new()
                }
            };
            let sigmas = match c.object(defense, "/defense") {
                Some(d) => {
                    c.known(d, "/defense", &["sigmas"]);
                    c.reals(d, "/defense", "sigmas", &[0.0], |s| s >= 0.0 && s.is_finite(), "a non-negative number")
                }
                None => vec![0.0],
            };
            let (inverse_train, grid_images) = match c.object(attack, "/attack") {
                Some(a) => {
                    c.known(a, "/attack", &["train", "grid_images"]);
                    (
                        c.train(a.get("train"), "/attack/train", default_inverse_train()),
                        c.uint(a, "/attack", "grid_images", 8, 1) as usize,
                    )
                }
                None => (default_inverse_train(), 8),
            };
            if let ImageSource::Synthetic { n_query, n_train, .. } = data {
                if n_query > 0 && inverse_train.batch_size > n_query {
                    c.issue("/attack/train/batch_size", format!("exceeds the query set size {n_query}"));
                }
                if n_train > 0 && train.batch_size > n_train {
                    c.issue("/train/batch_size", format!("exceeds the training set size {n_train}"));
                }
            }
            let settings = Settings::Inversion(InversionSettings {
                data,
                hidden_width,
                cut_points,
                sigmas,
                inverse_train,
                grid_images,
            });
            (reps, train, Some(settings))
        }
        None => (0, TrainConfig::default(), None),
    };
    if let (Some(Settings::Attr(AttrSettings { data: TabularSource::Synthetic { n }, train_fraction, .. })), true) =
        (&settings, c.issues.is_empty())
    {
        let n_train = (train_fraction * *n as f64).round() as usize;
        if train.batch_size > n_train {
            c.issue("/train/batch_size", format!("exceeds the training split size {n_train}"));
        }
    }
    match settings {
        Some(settings) if c.issues.is_empty() => Ok(ExperimentConfig { seed, output_dir, repetitions, train, settings }),
        _ => Err(c.issues),
    }
}

fn data_fraction(c: &mut Checker<'_>, data: Option<&Value>) -> f64 {
    match data.and_then(Value::as_object) {
        Some(d) => c.real(d, "/data", "train_fraction", 0.8, |f| f > 0.0 && f < 1.0, "a fraction strictly between 0 and 1"),
        None => 0.8,
    }
}

/// Read and normalize a config file.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig, Vec<ConfigIssue>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![ConfigIssue { pointer: String::new(), message: format!("{}: {e}", path.display()) }])?;
    let raw: Value = serde_json::from_str(&text)
        .map_err(|e| vec![ConfigIssue { pointer: String::new(), message: format!("invalid JSON: {e}") }])?;
    normalize(&raw, path.parent().unwrap_or(Path::new(".")))
}

fn train_json(t: &TrainConfig) -> Value {
    json!({
        "batch_size": t.batch_size,
        "epochs": t.epochs,
        "learning_rate": t.learning_rate,
        "optimizer": t.optimizer,
        "beta1": t.beta1,
        "beta2": t.beta2,
        "epsilon": t.epsilon,
    })
}

/// The normalized config in the input layout, every default spelled out.
pub fn to_json(cfg: &ExperimentConfig) -> Value {
    let mut v = json!({
        "kind": cfg.kind().name(),
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "repetitions": cfg.repetitions,
        "train": train_json(&cfg.train),
    });
    let o = v.as_object_mut().unwrap();
    match &cfg.settings {
        Settings::Attr(a) => {
            let data = match &a.data {
                TabularSource::Synthetic { n } => json!({"source": "synthetic", "n": n, "train_fraction": a.train_fraction}),
                TabularSource::Files { csv, schema } => {
                    json!({"source": "files", "csv": csv, "schema": schema, "train_fraction": a.train_fraction})
                }
            };
            o.insert("data".into(), data);
            o.insert("defense".into(), json!({"flip_probabilities": a.flip_probabilities}));
            o.insert("attack".into(), json!({"targets": a.targets, "scoring": a.scoring}));
        }
        Settings::Inversion(s) => {
            let data = match &s.data {
                ImageSource::Synthetic { side, n_train, n_query, n_eval } => json!({
                    "source": "synthetic", "side": side, "n_train": n_train, "n_query": n_query, "n_eval": n_eval
                }),
                ImageSource::Files { images_dir, labels_csv } => {
                    json!({"source": "files", "images_dir": images_dir, "labels_csv": labels_csv})
                }
            };
            o.insert("data".into(), data);
            o.insert("model".into(), json!({"hidden_width": s.hidden_width}));
            o.insert("cut_points".into(), json!(s.cut_points));
            o.insert("defense".into(), json!({"sigmas": s.sigmas}));
            o.insert("attack".into(), json!({"train": train_json(&s.inverse_train), "grid_images": s.grid_images}));
        }
    }
    v
}

/// Distinct values in first-seen order.
pub(crate) fn dedup(values: &[f64]) -> Vec<f64> {
    let mut seen = BTreeSet::new();
    values.iter().copied().filter(|v| seen.insert(v.to_bits())).collect()
}
