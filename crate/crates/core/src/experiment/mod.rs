//! JSON-configured experiment pipelines and their file outputs.

mod config;
mod output;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    default_attr_train, default_inverse_train, default_victim_train, normalize, to_json, validate_config, AttrSettings,
    ConfigIssue, ExperimentConfig, ExperimentKind, ImageSource, InversionSettings, Settings, TabularSource,
    DEFAULT_FLIPS, DEFAULT_SEED,
};
pub use output::{csv_text, fmt_num, line_plot, pair_grid, write_atomic, Series};

use crate::attacks::{collect_queries, eval_attr_attack, invert, train_inverse, AttackError, AttrAttackConfig, InversionAttackConfig, WireFront};
use crate::data::{
    load_pgm, load_tabular, split_train_test, synth_images, synth_tabular, DataError, ImageDataset, PriorTable, Subset,
    TabularDataset,
};
use crate::defenses::{perturb_model, DefenseError, LabelPerturbConfig, ModelPerturbConfig};
use crate::metrics::{accuracy, argmax, mean_std, per_image_metrics, MetricsError, MetricsRecord};
use crate::models::{build_split_cnn, predict_classes, EpochStats, ModelError, SplitCnn, TabularClassifier};
use crate::nn::TrainConfig;
use crate::protocol::{collaborative_train, ProtocolError};
use crate::seed::{derive_seed, stream};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<ConfigIssue>),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Report(String),
}

impl ExperimentError {
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_))
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io { path: dir.to_path_buf(), source })
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("summary serializes");
    s.push('\n');
    s.into_bytes()
}

/// The value as it reads back from a CSV cell, so summaries computed in a
/// run and summaries rebuilt from its files agree to the bit.
fn quantize(v: f64) -> f64 {
    fmt_num(v).parse().expect("formatted numbers parse")
}

fn rep_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(seed, &format!("rep{rep}"))
}

fn train_seeded(base: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..base.clone() }
}

// ---------------------------------------------------------------------------
// attribute inference

pub const ATTR_REPORT: &str = "attr_report.csv";
pub const ATTR_BASELINE: &str = "attr_baseline.csv";
pub const ATTR_SUMMARY_CSV: &str = "attr_summary.csv";
pub const ATTR_SUMMARY_JSON: &str = "attr_summary.json";
pub const ATTR_PLOT: &str = "attr_plot.svg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrRow {
    pub target_attr: String,
    pub flip_p: f64,
    pub rep: usize,
    pub attack_acc: f64,
    pub test_acc: f64,
}

/// Share of test records whose sensitive value equals the most probable prior
/// level: what an attacker guessing from the prior alone achieves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub target_attr: String,
    pub rep: usize,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrSummaryRow {
    pub target_attr: String,
    pub flip_p: f64,
    pub attack_mean: f64,
    pub attack_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    pub baseline: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttrOutcome {
    pub rows: Vec<AttrRow>,
    pub baselines: Vec<BaselineRow>,
    pub summary: Vec<AttrSummaryRow>,
}

fn load_tabular_source(cfg: &ExperimentConfig, source: &TabularSource) -> Result<TabularDataset> {
    Ok(match source {
        TabularSource::Synthetic { n } => synth_tabular(*n, derive_seed(cfg.seed, "data")),
        TabularSource::Files { csv, schema } => load_tabular(csv, schema)?,
    })
}

fn resolve_targets(data: &TabularDataset, names: &[String]) -> Result<Vec<usize>> {
    let schema = data.schema();
    if names.is_empty() {
        let all: Vec<usize> = schema.sensitive_attributes().map(|(i, _)| i).collect();
        if all.is_empty() {
            return Err(ExperimentError::Config(vec![ConfigIssue {
                pointer: "/attack/targets".into(),
                message: "the schema marks no attribute as sensitive".into(),
            }]));
        }
        return Ok(all);
    }
    let mut issues = Vec::new();
    let mut out = Vec::new();
    for (i, name) in names.iter().enumerate() {
        match schema.attribute_index(name) {
            Some(a) if schema.attributes[a].sensitive => out.push(a),
            Some(_) => issues.push(ConfigIssue {
                pointer: format!("/attack/targets/{i}"),
                message: format!("'{name}' is not marked sensitive"),
            }),
            None => issues.push(ConfigIssue {
                pointer: format!("/attack/targets/{i}"),
                message: format!("no attribute named '{name}'"),
            }),
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(ExperimentError::Config(issues))
    }
}

fn prior_baseline(test: &TabularDataset, priors: &PriorTable, target: usize) -> f64 {
    let best = argmax(priors.get(target).expect("prior for every sensitive attribute"));
    test.records().iter().filter(|r| r[target] == best).count() as f64 / test.len() as f64
}

/// Train the MLP once per repetition, then sweep the flip probability for
/// every target attribute. Writes the detail, baseline and summary CSVs, a
/// JSON summary and a plot into the output directory.
pub fn run_attr_experiment(cfg: &ExperimentConfig) -> Result<AttrOutcome> {
    let Settings::Attr(settings) = &cfg.settings else {
        return Err(ExperimentError::Report("not an attr-attack configuration".into()));
    };
    let data = load_tabular_source(cfg, &settings.data)?;
    let targets = resolve_targets(&data, &settings.targets)?;
    let classes = data.schema().classes;
    let flips = config::dedup(&settings.flip_probabilities);
    let defenses = flips.iter().map(|&p| LabelPerturbConfig::new(p, classes)).collect::<std::result::Result<Vec<_>, _>>()?;
    ensure_dir(&cfg.output_dir)?;

    let per_rep = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| -> Result<(Vec<AttrRow>, Vec<BaselineRow>)> {
            let rs = rep_seed(cfg.seed, rep);
            let (train, test) = split_train_test(&data, settings.train_fraction, derive_seed(rs, "split"))?;
            let priors = PriorTable::estimate(&train);
            let (clf, _) =
                TabularClassifier::fit(&train, &train_seeded(&cfg.train, derive_seed(rs, "train")), derive_seed(rs, "init"))?;
            let mut rows = Vec::new();
            let mut baselines = Vec::new();
            for &t in &targets {
                let name = data.schema().attributes[t].name.clone();
                baselines.push(BaselineRow { target_attr: name.clone(), rep, baseline: quantize(prior_baseline(&test, &priors, t)) });
                let attack = AttrAttackConfig { target_attr: t, mode: settings.scoring };
                for d in &defenses {
                    let label = format!("attack/{name}/p={}", fmt_num(d.flip_p));
                    let r = eval_attr_attack(&clf, &test, &priors, &attack, Some(d), 1, derive_seed(rs, &label))?;
                    rows.push(AttrRow {
                        target_attr: name.clone(),
                        flip_p: quantize(d.flip_p),
                        rep,
                        attack_acc: quantize(r.attack_acc[0]),
                        test_acc: quantize(r.test_acc[0]),
                    });
                }
            }
            Ok((rows, baselines))
        })
        .collect::<Result<Vec<_>>>()?;

    let (mut rows, mut baselines) = (Vec::new(), Vec::new());
    for (r, b) in per_rep {
        rows.extend(r);
        baselines.extend(b);
    }
    // target, then p, then rep
    let order = |name: &str| targets.iter().position(|&t| data.schema().attributes[t].name == name).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        order(&a.target_attr)
            .cmp(&order(&b.target_attr))
            .then(a.flip_p.total_cmp(&b.flip_p))
            .then(a.rep.cmp(&b.rep))
    });
    baselines.sort_by_key(|b| (order(&b.target_attr), b.rep));

    write_file(&cfg.output_dir.join(ATTR_REPORT), attr_rows_csv(&rows).as_bytes())?;
    write_file(&cfg.output_dir.join(ATTR_BASELINE), baseline_csv(&baselines).as_bytes())?;
    write_file(&cfg.output_dir.join("config.json"), &json_bytes(&to_json(cfg)))?;
    let summary = write_attr_summaries(&cfg.output_dir, &rows, &baselines)?;
    Ok(AttrOutcome { rows, baselines, summary })
}

fn attr_rows_csv(rows: &[AttrRow]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.target_attr.clone(), fmt_num(r.flip_p), r.rep.to_string(), fmt_num(r.attack_acc), fmt_num(r.test_acc)])
        .collect();
    csv_text(&["target_attr", "flip_p", "rep", "attack_acc", "test_acc"], &cells)
}

fn baseline_csv(rows: &[BaselineRow]) -> String {
    let cells: Vec<Vec<String>> =
        rows.iter().map(|r| vec![r.target_attr.clone(), r.rep.to_string(), fmt_num(r.baseline)]).collect();
    csv_text(&["target_attr", "rep", "baseline"], &cells)
}

/// Mean and std per (target, p), in first-seen order of `rows`.
pub fn summarize_attr(rows: &[AttrRow], baselines: &[BaselineRow]) -> Vec<AttrSummaryRow> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(t, p)| *t == r.target_attr && p.to_bits() == r.flip_p.to_bits()) {
            keys.push((r.target_attr.clone(), r.flip_p));
        }
    }
    keys.into_iter()
        .map(|(target, p)| {
            let cell: Vec<&AttrRow> =
                rows.iter().filter(|r| r.target_attr == target && r.flip_p.to_bits() == p.to_bits()).collect();
            let attack: Vec<f64> = cell.iter().map(|r| r.attack_acc).collect();
            let test: Vec<f64> = cell.iter().map(|r| r.test_acc).collect();
            let base: Vec<f64> = baselines.iter().filter(|b| b.target_attr == target).map(|b| b.baseline).collect();
            let (attack_mean, attack_std) = mean_std(&attack).expect("nonempty cell");
            let (test_mean, test_std) = mean_std(&test).expect("nonempty cell");
            AttrSummaryRow {
                target_attr: target,
                flip_p: p,
                attack_mean,
                attack_std,
                test_mean,
                test_std,
                baseline: mean_std(&base).map_or(f64::NAN, |m| m.0),
                repetitions: cell.len(),
            }
        })
        .collect()
}

fn write_attr_summaries(dir: &Path, rows: &[AttrRow], baselines: &[BaselineRow]) -> Result<Vec<AttrSummaryRow>> {
    let summary = summarize_attr(rows, baselines);
    let cells: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            vec![
                s.target_attr.clone(),
                fmt_num(s.flip_p),
                fmt_num(s.attack_mean),
                fmt_num(s.attack_std),
                fmt_num(s.test_mean),
                fmt_num(s.test_std),
                fmt_num(s.baseline),
                s.repetitions.to_string(),
            ]
        })
        .collect();
    let header = ["target_attr", "flip_p", "attack_mean", "attack_std", "test_mean", "test_std", "baseline", "repetitions"];
    write_file(&dir.join(ATTR_SUMMARY_CSV), csv_text(&header, &cells).as_bytes())?;
    write_file(&dir.join(ATTR_SUMMARY_JSON), &json_bytes(&summary))?;

    let mut series = Vec::new();
    let mut targets: Vec<&str> = Vec::new();
    for s in &summary {
        if !targets.contains(&s.target_attr.as_str()) {
            targets.push(&s.target_attr);
        }
    }
    for t in &targets {
        let cell: Vec<&AttrSummaryRow> = summary.iter().filter(|s| s.target_attr == *t).collect();
        series.push(Series {
            label: format!("attack accuracy ({t})"),
            points: cell.iter().map(|s| (s.flip_p, s.attack_mean)).collect(),
            err: Some(cell.iter().map(|s| s.attack_std).collect()),
        });
        series.push(Series {
            label: format!("test accuracy ({t})"),
            points: cell.iter().map(|s| (s.flip_p, s.test_mean)).collect(),
            err: Some(cell.iter().map(|s| s.test_std).collect()),
        });
    }
    let svg = line_plot("Attribute inference under label perturbation", "flip probability", "accuracy", &series);
    write_file(&dir.join(ATTR_PLOT), svg.as_bytes())?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// model inversion

pub const INV_REPORT: &str = "inv_report.csv";
pub const INV_DETAIL: &str = "inv_detail.csv";
pub const INV_IMAGES: &str = "inv_images.csv";
pub const INV_SUMMARY_JSON: &str = "inv_summary.json";
pub const INV_PLOT: &str = "inv_plot.svg";
pub const VICTIM_CHECKPOINT: &str = "victim.nnck";
pub const TRAIN_LOG: &str = "train_log.csv";

/// Train, query and evaluation image sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSplits {
    pub train: ImageDataset,
    pub query: ImageDataset,
    pub eval: ImageDataset,
}

pub fn load_image_splits(cfg: &ExperimentConfig, source: &ImageSource) -> Result<ImageSplits> {
    Ok(match source {
        ImageSource::Synthetic { side, n_train, n_query, n_eval } => ImageSplits {
            train: synth_images(*n_train, *side, derive_seed(cfg.seed, "data/train")),
            query: synth_images(*n_query, *side, derive_seed(cfg.seed, "data/query")),
            eval: synth_images(*n_eval, *side, derive_seed(cfg.seed, "data/eval")),
        },
        ImageSource::Files { images_dir, labels_csv } => {
            let all = load_pgm(images_dir, labels_csv)?;
            if all.side() == 0 || all.side() % 8 != 0 {
                return Err(DataError::Invalid(format!("image side {} is not a positive multiple of 8", all.side())).into());
            }
            let (train, rest) = split_train_test(&all, 0.8, derive_seed(cfg.seed, "data/split"))?;
            let (query, eval) = split_train_test(&rest, 0.5, derive_seed(cfg.seed, "data/split/rest"))?;
            ImageSplits { train, query, eval }
        }
    })
}

fn class_count(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(2, |m| (m + 1).max(2))
}

/// Train the victim split CNN across the two parties. The first configured
/// cut is used during training; the halves are re-split per grid cell.
pub fn train_victim(cfg: &ExperimentConfig, settings: &InversionSettings, train: &ImageDataset) -> Result<(SplitCnn, Vec<EpochStats>)> {
    let classes = class_count(train.labels());
    let cut = settings.cut_points[0];
    let init = build_split_cnn(train.side(), classes, cut, settings.hidden_width, derive_seed(cfg.seed, "victim/init"))?;
    let arch = init.arch();
    let (front, back) = init.into_halves();
    let tc = train_seeded(&cfg.train, derive_seed(cfg.seed, "victim/train"));
    let out = collaborative_train(front, back, &train.all(), train.labels(), &tc, None)?;
    Ok((SplitCnn::from_halves(arch, out.front, out.back)?, out.trace))
}

fn write_train_log(dir: &Path, trace: &[EpochStats]) -> Result<()> {
    let cells: Vec<Vec<String>> = trace
        .iter()
        .enumerate()
        .map(|(e, s)| vec![(e + 1).to_string(), fmt_num(s.loss), fmt_num(s.accuracy)])
        .collect();
    write_file(&dir.join(TRAIN_LOG), csv_text(&["epoch", "loss", "accuracy"], &cells).as_bytes())
}

/// Result of one (cut, sigma, rep) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvRow {
    pub cut_layer: usize,
    pub sigma: f64,
    pub rep: usize,
    pub accuracy: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-cell medians over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvReportRow {
    pub cut_layer: usize,
    pub sigma: f64,
    pub accuracy: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvOutcome {
    pub victim_trace: Vec<EpochStats>,
    pub rows: Vec<InvRow>,
    pub report: Vec<InvReportRow>,
}

struct Cell {
    row: InvRow,
    images: Vec<MetricsRecord>,
    recovered: Vec<Vec<f64>>,
}

fn run_cell(
    cfg: &ExperimentConfig,
    settings: &InversionSettings,
    victim: &SplitCnn,
    data: &ImageSplits,
    (cut, sigma, rep): (usize, f64, usize),
) -> Result<Cell> {
    let rs = rep_seed(cfg.seed, rep);
    let mut deployed = victim.with_cut(cut)?;
    // Same noise for every cut of a repetition: parameters are visited front
    // to back regardless of where the model is split.
    let mut noise = stream(rs, &format!("perturb/sigma={}", fmt_num(sigma)));
    perturb_model(&mut deployed, &ModelPerturbConfig::new(sigma)?, &mut noise)?;
    let acc = accuracy(&predict_classes(&deployed.predict(&data.eval.all())?), data.eval.labels())?;

    let oracle = WireFront(deployed.front());
    let v = collect_queries(&oracle, &data.query)?;
    let attack = InversionAttackConfig {
        train: train_seeded(&settings.inverse_train, derive_seed(rs, &format!("inverse/cut{cut}/shuffle"))),
        init_seed: derive_seed(rs, &format!("inverse/cut{cut}/init")),
    };
    let (g, _) = train_inverse(&v, &data.query.all(), &attack)?;
    let rec = invert(&g, &collect_queries(&oracle, &data.eval)?)?;
    let recovered: Vec<Vec<f64>> = (0..rec.batch_len()).map(|i| rec.sample(i).to_vec()).collect();
    let images = per_image_metrics(data.eval.images(), &recovered)?;
    let n = images.len() as f64;
    let row = InvRow {
        cut_layer: cut,
        sigma: quantize(sigma),
        rep,
        accuracy: quantize(acc),
        mse: quantize(images.iter().map(|m| m.mse).sum::<f64>() / n),
        psnr: quantize(images.iter().map(|m| m.psnr).sum::<f64>() / n),
        ssim: quantize(images.iter().map(|m| m.ssim).sum::<f64>() / n),
    };
    let keep = settings.grid_images.min(recovered.len());
    Ok(Cell { row, images, recovered: if rep == 0 { recovered[..keep].to_vec() } else { Vec::new() } })
}

/// Train the victim, then for every (cut, sigma) cell and repetition deploy
/// the (perturbed) model, train an inverse network from black-box queries and
/// score its reconstructions of the evaluation images.
pub fn run_inversion_experiment(cfg: &ExperimentConfig) -> Result<InvOutcome> {
    let Settings::Inversion(settings) = &cfg.settings else {
        return Err(ExperimentError::Report("not an inversion-attack configuration".into()));
    };
    let data = load_image_splits(cfg, &settings.data)?;
    ensure_dir(&cfg.output_dir)?;
    let (victim, victim_trace) = train_victim(cfg, settings, &data.train)?;
    victim.save(&cfg.output_dir.join(VICTIM_CHECKPOINT))?;
    write_train_log(&cfg.output_dir, &victim_trace)?;

    let mut cuts = settings.cut_points.clone();
    cuts.sort_unstable();
    cuts.dedup();
    let mut sigmas = config::dedup(&settings.sigmas);
    sigmas.sort_by(f64::total_cmp);
    let mut grid = Vec::new();
    for &c in &cuts {
        for &s in &sigmas {
            for r in 0..cfg.repetitions {
                grid.push((c, s, r));
            }
        }
    }
    let cells = grid
        .par_iter()
        .map(|&key| run_cell(cfg, settings, &victim, &data, key))
        .collect::<Result<Vec<_>>>()?;

    let side = data.eval.side();
    let keep = settings.grid_images.min(data.eval.len());
    let mut image_rows = Vec::new();
    for cell in &cells {
        let r = &cell.row;
        if r.rep == 0 {
            let name = format!("grid_cut{}_sigma{}.pgm", r.cut_layer, fmt_num(r.sigma));
            write_file(&cfg.output_dir.join(name), &pair_grid(side, &data.eval.images()[..keep], &cell.recovered))?;
        }
        for (i, m) in cell.images.iter().enumerate() {
            image_rows.push(vec![
                r.cut_layer.to_string(),
                fmt_num(r.sigma),
                r.rep.to_string(),
                data.eval.names()[i].clone(),
                fmt_num(m.mse),
                fmt_num(m.psnr),
                fmt_num(m.ssim),
            ]);
        }
    }
    let header = ["cut_layer", "sigma", "rep", "image", "mse", "psnr", "ssim"];
    write_file(&cfg.output_dir.join(INV_IMAGES), csv_text(&header, &image_rows).as_bytes())?;
    let rows: Vec<InvRow> = cells.into_iter().map(|c| c.row).collect();
    write_file(&cfg.output_dir.join(INV_DETAIL), inv_rows_csv(&rows).as_bytes())?;
    write_file(&cfg.output_dir.join("config.json"), &json_bytes(&to_json(cfg)))?;
    let report = write_inv_summaries(&cfg.output_dir, &rows)?;
    Ok(InvOutcome { victim_trace, rows, report })
}

fn inv_rows_csv(rows: &[InvRow]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.cut_layer.to_string(),
                fmt_num(r.sigma),
                r.rep.to_string(),
                fmt_num(r.accuracy),
                fmt_num(r.mse),
                fmt_num(r.psnr),
                fmt_num(r.ssim),
            ]
        })
        .collect();
    csv_text(&["cut_layer", "sigma", "rep", "accuracy", "mse", "psnr", "ssim"], &cells)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Median of every metric over the repetitions of each (cut, sigma) cell.
pub fn summarize_inv(rows: &[InvRow]) -> Vec<InvReportRow> {
    let mut keys: Vec<(usize, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(c, s)| c == r.cut_layer && s.to_bits() == r.sigma.to_bits()) {
            keys.push((r.cut_layer, r.sigma));
        }
    }
    keys.into_iter()
        .map(|(cut, sigma)| {
            let cell: Vec<&InvRow> = rows.iter().filter(|r| r.cut_layer == cut && r.sigma.to_bits() == sigma.to_bits()).collect();
            let med = |f: fn(&InvRow) -> f64| median(&cell.iter().map(|r| f(r)).collect::<Vec<_>>());
            InvReportRow {
                cut_layer: cut,
                sigma,
                accuracy: med(|r| r.accuracy),
                mse: med(|r| r.mse),
                psnr: med(|r| r.psnr),
                ssim: med(|r| r.ssim),
                repetitions: cell.len(),
            }
        })
        .collect()
}

fn write_inv_summaries(dir: &Path, rows: &[InvRow]) -> Result<Vec<InvReportRow>> {
    let report = summarize_inv(rows);
    let cells: Vec<Vec<String>> = report
        .iter()
        .map(|r| {
            vec![r.cut_layer.to_string(), fmt_num(r.sigma), fmt_num(r.accuracy), fmt_num(r.mse), fmt_num(r.psnr), fmt_num(r.ssim)]
        })
        .collect();
    write_file(&dir.join(INV_REPORT), csv_text(&["cut_layer", "sigma", "accuracy", "mse", "psnr", "ssim"], &cells).as_bytes())?;
    write_file(&dir.join(INV_SUMMARY_JSON), &json_bytes(&report))?;

    let mut cuts: Vec<usize> = report.iter().map(|r| r.cut_layer).collect();
    cuts.dedup();
    let series: Vec<Series> = cuts
        .iter()
        .map(|&c| Series {
            label: format!("cut layer {c}"),
            points: report.iter().filter(|r| r.cut_layer == c).map(|r| (r.sigma, r.ssim)).collect(),
            err: None,
        })
        .collect();
    let svg = line_plot("Reconstruction quality under model perturbation", "sigma", "SSIM", &series);
    write_file(&dir.join(INV_PLOT), svg.as_bytes())?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// training only and report regeneration

/// Train the configured victim model without attacking it. Writes the
/// training log and, for inversion configs, the split CNN checkpoint; for
/// attribute configs the first repetition's MLP is trained and checkpointed.
pub fn run_training(cfg: &ExperimentConfig) -> Result<Vec<EpochStats>> {
    ensure_dir(&cfg.output_dir)?;
    let trace = match &cfg.settings {
        Settings::Inversion(settings) => {
            let data = load_image_splits(cfg, &settings.data)?;
            let (victim, trace) = train_victim(cfg, settings, &data.train)?;
            victim.save(&cfg.output_dir.join(VICTIM_CHECKPOINT))?;
            trace
        }
        Settings::Attr(settings) => {
            let data = load_tabular_source(cfg, &settings.data)?;
            let rs = rep_seed(cfg.seed, 0);
            let (train, _) = split_train_test(&data, settings.train_fraction, derive_seed(rs, "split"))?;
            let (clf, trace) =
                TabularClassifier::fit(&train, &train_seeded(&cfg.train, derive_seed(rs, "train")), derive_seed(rs, "init"))?;
            let path = cfg.output_dir.join("mlp.nnck");
            crate::nn::checkpoint::save(&clf.mlp, &path).map_err(ModelError::from)?;
            trace
        }
    };
    write_train_log(&cfg.output_dir, &trace)?;
    Ok(trace)
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let bad = |e: csv::Error| ExperimentError::Report(format!("{}: {e}", path.display()));
    let header = r.headers().map_err(bad)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()).map_err(bad))
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok((header, rows))
}

fn columns(path: &Path, header: &[String], want: &[&str]) -> Result<Vec<usize>> {
    want.iter()
        .map(|w| {
            header
                .iter()
                .position(|h| h == w)
                .ok_or_else(|| ExperimentError::Report(format!("{}: missing column '{w}'", path.display())))
        })
        .collect()
}

fn num<T: std::str::FromStr>(path: &Path, line: usize, cell: &str) -> Result<T> {
    cell.parse()
        .map_err(|_| ExperimentError::Report(format!("{}: row {line}: cannot parse '{cell}'", path.display())))
}

/// Rebuild summaries and plots from the detail CSVs found in `dir`. Returns
/// the files written.
pub fn regenerate_reports(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let attr = dir.join(ATTR_REPORT);
    if attr.exists() {
        let (header, cells) = read_csv(&attr)?;
        let c = columns(&attr, &header, &["target_attr", "flip_p", "rep", "attack_acc", "test_acc"])?;
        let rows = cells
            .iter()
            .enumerate()
            .map(|(i, r)| {
                Ok(AttrRow {
                    target_attr: r[c[0]].clone(),
                    flip_p: num(&attr, i + 1, &r[c[1]])?,
                    rep: num(&attr, i + 1, &r[c[2]])?,
                    attack_acc: num(&attr, i + 1, &r[c[3]])?,
                    test_acc: num(&attr, i + 1, &r[c[4]])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let base_path = dir.join(ATTR_BASELINE);
        let baselines = if base_path.exists() {
            let (header, cells) = read_csv(&base_path)?;
            let c = columns(&base_path, &header, &["target_attr", "rep", "baseline"])?;
            cells
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    Ok(BaselineRow {
                        target_attr: r[c[0]].clone(),
                        rep: num(&base_path, i + 1, &r[c[1]])?,
                        baseline: num(&base_path, i + 1, &r[c[2]])?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        write_attr_summaries(dir, &rows, &baselines)?;
        written.extend([ATTR_SUMMARY_CSV, ATTR_SUMMARY_JSON, ATTR_PLOT].map(|f| dir.join(f)));
    }
    let inv = dir.join(INV_DETAIL);
    if inv.exists() {
        let (header, cells) = read_csv(&inv)?;
        let c = columns(&inv, &header, &["cut_layer", "sigma", "rep", "accuracy", "mse", "psnr", "ssim"])?;
        let rows = cells
            .iter()
            .enumerate()
            .map(|(i, r)| {
                Ok(InvRow {
                    cut_layer: num(&inv, i + 1, &r[c[0]])?,
                    sigma: num(&inv, i + 1, &r[c[1]])?,
                    rep: num(&inv, i + 1, &r[c[2]])?,
                    accuracy: num(&inv, i + 1, &r[c[3]])?,
                    mse: num(&inv, i + 1, &r[c[4]])?,
                    psnr: num(&inv, i + 1, &r[c[5]])?,
                    ssim: num(&inv, i + 1, &r[c[6]])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_inv_summaries(dir, &rows)?;
        written.extend([INV_REPORT, INV_SUMMARY_JSON, INV_PLOT].map(|f| dir.join(f)));
    }
    if written.is_empty() {
        return Err(ExperimentError::Report(format!("no {ATTR_REPORT} or {INV_DETAIL} in {}", dir.display())));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn small_attr(dir: &Path) -> ExperimentConfig {
        normalize(
            &json!({
                "kind": "attr-attack",
                "output_dir": dir,
                "repetitions": 2,
                "data": {"n": 300},
                "train": {"epochs": 5},
                "defense": {"flip_probabilities": [0, 0.25, 0.5]}
            }),
            Path::new("/"),
        )
        .unwrap()
    }

    #[test]
    fn attr_grid_cardinality_and_regeneration() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_attr_experiment(&small_attr(dir.path())).unwrap();
        assert_eq!(out.rows.len(), 3 * 2);
        assert_eq!(out.summary.len(), 3);
        assert_eq!(out.rows[0].flip_p, 0.0);
        let before = fs::read(dir.path().join(ATTR_SUMMARY_CSV)).unwrap();
        fs::remove_file(dir.path().join(ATTR_SUMMARY_CSV)).unwrap();
        regenerate_reports(dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join(ATTR_SUMMARY_CSV)).unwrap(), before);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn unknown_target_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_attr(dir.path());
        if let Settings::Attr(a) = &mut cfg.settings {
            a.targets = vec!["noise_1".into()];
        }
        assert!(run_attr_experiment(&cfg).unwrap_err().is_config());
    }
}
