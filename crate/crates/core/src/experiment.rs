//! Seed-by-noise-level experiment grids: configuration, execution, run rows
//! and aggregated reports.
//!
//! Every run writes one row to `runs.csv` and `runs.jsonl` and a checkpoint;
//! wall-clock times go to `timings.csv` so the other artifacts stay
//! byte-identical across reruns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, synth_sbm, Dataset, SbmSpec};
use crate::error::{ExperimentError, TrainError};
use crate::eval::{modularity_metric, nmi, pairwise_f1, ranking_metrics, to_deterministic};
use crate::meta_model::Variant;
use crate::noise::{inject_noise, NoisyGraph};
use crate::trainer::{Checkpoint, TrainConfig, TrainReport, Trainer};

/// Environment variable capping the number of parallel runs.
pub const THREADS_ENV: &str = "METACLUST_THREADS";

fn default_name() -> String {
    "dataset".into()
}
fn default_ratios() -> Vec<f64> {
    vec![0.3]
}
fn default_graphs() -> usize {
    1
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_variants() -> Vec<Variant> {
    vec![Variant::MetaGc]
}
fn default_hits_frac() -> f64 {
    0.1
}
fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

/// An experiment grid read from a TOML file.
///
/// The dataset is either three files (`edges`, `attributes`, `labels`) or an
/// `[sbm]` table. Training keys mirror [`TrainConfig`]; omitted ones take its
/// defaults, and `n_clusters` defaults to the number of label classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub edges: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub sbm: Option<SbmSpec>,
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
    /// Noisy graphs drawn per ratio.
    #[serde(default = "default_graphs")]
    pub graphs: usize,
    /// Noisy graph `g` uses seed `noise_seed + g`.
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    pub n_clusters: Option<usize>,
    pub batch_size: Option<usize>,
    pub eta: Option<f64>,
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    pub max_epochs: Option<usize>,
    pub min_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub hidden: Option<usize>,
    pub meta_hidden: Option<usize>,
    pub z_dim: Option<usize>,
    #[serde(default = "default_hits_frac")]
    pub hits_frac: f64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl ExperimentSpec {
    /// Spec for a synthetic block model with everything else at defaults.
    pub fn synthetic(name: impl Into<String>, sbm: SbmSpec) -> Self {
        Self {
            name: name.into(),
            edges: None,
            attributes: None,
            labels: None,
            sbm: Some(sbm),
            ratios: default_ratios(),
            graphs: default_graphs(),
            noise_seed: 0,
            seeds: default_seeds(),
            variants: default_variants(),
            n_clusters: None,
            batch_size: None,
            eta: None,
            mu: None,
            lambda: None,
            max_epochs: None,
            min_epochs: None,
            patience: None,
            hidden: None,
            meta_hidden: None,
            z_dim: None,
            hits_frac: default_hits_frac(),
            out: default_out(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let spec: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec; relative paths inside it resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut spec = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut spec.edges, &mut spec.attributes, &mut spec.labels].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return fail("at least one seed is required");
        }
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return fail("ratios must be a non-empty list of finite values >= 0");
        }
        if self.variants.is_empty() {
            return fail("at least one variant is required");
        }
        if self.graphs == 0 {
            return fail("graphs must be at least 1");
        }
        if !(self.hits_frac > 0.0 && self.hits_frac <= 1.0) {
            return fail("hits_frac must lie in (0, 1]");
        }
        let files = [&self.edges, &self.attributes, &self.labels];
        let n_files = files.iter().filter(|f| f.is_some()).count();
        match (n_files, &self.sbm) {
            (3, None) | (0, Some(_)) => Ok(()),
            _ => fail("give either all of edges/attributes/labels or an [sbm] table"),
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset, ExperimentError> {
        match (&self.sbm, &self.edges, &self.attributes, &self.labels) {
            (Some(sbm), ..) => Ok(synth_sbm(sbm)?),
            (None, Some(e), Some(a), Some(l)) => Ok(load_dataset(e, a, l)?),
            _ => Err(ExperimentError::Config("no dataset configured".into())),
        }
    }

    pub fn train_config(&self, n_classes: usize, seed: u64, variant: Variant) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            n_clusters: self.n_clusters.unwrap_or(n_classes),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            min_epochs: self.min_epochs.unwrap_or(d.min_epochs),
            patience: self.patience.unwrap_or(d.patience),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            eta: self.eta.unwrap_or(d.eta),
            mu: self.mu.unwrap_or(d.mu),
            lambda: self.lambda.unwrap_or(d.lambda),
            hidden: self.hidden.unwrap_or(d.hidden),
            meta_hidden: self.meta_hidden.unwrap_or(d.meta_hidden),
            z_dim: self.z_dim.unwrap_or(d.z_dim),
            seed,
            variant,
        }
    }

    /// All runs in grid order: ratio, then noisy graph, then seed, then variant.
    pub fn jobs(&self) -> Vec<Job> {
        let mut jobs = Vec::new();
        for &ratio in &self.ratios {
            for graph in 0..self.graphs {
                for &seed in &self.seeds {
                    for &variant in &self.variants {
                        jobs.push(Job {
                            ratio,
                            graph,
                            noise_seed: self.noise_seed.wrapping_add(graph as u64),
                            seed,
                            variant,
                        });
                    }
                }
            }
        }
        jobs
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Job {
    pub ratio: f64,
    pub graph: usize,
    pub noise_seed: u64,
    pub seed: u64,
    pub variant: Variant,
}

impl Job {
    pub fn stem(&self, dataset: &str) -> String {
        format!("{dataset}_r{}_g{}_s{}_{}", self.ratio, self.graph, self.seed, self.variant)
    }
}

/// Clustering and edge-ranking scores of one trained model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1: f64,
    pub nmi: f64,
    /// Modularity of the hard assignment on the clean graph.
    pub modularity: f64,
    pub prauc: Option<f64>,
    pub hits: Option<f64>,
}

/// One line of `runs.csv` / `runs.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub dataset: String,
    pub ratio: f64,
    pub graph: usize,
    pub seed: u64,
    pub variant: Variant,
    pub f1: Option<f64>,
    pub nmi: Option<f64>,
    pub modularity: Option<f64>,
    pub prauc: Option<f64>,
    pub hits: Option<f64>,
    pub epochs: Option<usize>,
    pub best_epoch: Option<usize>,
    /// `ok`, or the error that stopped the run.
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub dataset: String,
    pub ratio: f64,
    pub graph: usize,
    pub seed: u64,
    pub variant: Variant,
    pub wall_ms: u128,
}

/// Scores `checkpoint` on the noisy graph it was trained on.
///
/// The model reads the noisy graph; modularity is measured on the clean one.
pub fn evaluate_model(
    clean: &Dataset,
    noisy: &NoisyGraph,
    config: &TrainConfig,
    w: &crate::autodiff::ParamSet,
    theta: &crate::autodiff::ParamSet,
    hits_frac: f64,
) -> Result<Metrics, ExperimentError> {
    let data = clean.with_graph(noisy.graph.clone());
    let trainer = Trainer::new(&data, config.clone())?;
    let p = trainer.assignment(w).map_err(TrainError::from)?;
    let hard = to_deterministic(&p);
    let ranking = match trainer.edge_weights(w, theta).map_err(TrainError::from)? {
        Some(weights) => Some(ranking_metrics(&weights, &noisy.real_mask, hits_frac)?),
        None => None,
    };
    Ok(Metrics {
        f1: pairwise_f1(&clean.labels, &hard)?,
        nmi: nmi(&clean.labels, &hard)?,
        modularity: modularity_metric(&hard, &noisy.clean_graph)?,
        prauc: ranking.map(|r| r.prauc),
        hits: ranking.map(|r| r.hits_at_frac),
    })
}

/// Result of one grid cell, before anything is written.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub job: Job,
    pub row: RunRow,
    pub wall_ms: u128,
    pub checkpoint: Option<Checkpoint>,
    pub report: Option<TrainReport>,
}

fn run_job(spec: &ExperimentSpec, clean: &Dataset, noisy: &NoisyGraph, job: Job) -> RunOutcome {
    let config = spec.train_config(clean.n_classes(), job.seed, job.variant);
    let mut row = RunRow {
        dataset: spec.name.clone(),
        ratio: job.ratio,
        graph: job.graph,
        seed: job.seed,
        variant: job.variant,
        f1: None,
        nmi: None,
        modularity: None,
        prauc: None,
        hits: None,
        epochs: None,
        best_epoch: None,
        status: "ok".into(),
    };
    let data = clean.with_graph(noisy.graph.clone());
    let result = Trainer::new(&data, config.clone())
        .and_then(|t| t.train())
        .map_err(ExperimentError::from)
        .and_then(|report| {
            let metrics = evaluate_model(clean, noisy, &config, &report.w, &report.theta, spec.hits_frac)?;
            Ok((report, metrics))
        });
    match result {
        Ok((report, m)) => {
            row.f1 = Some(m.f1);
            row.nmi = Some(m.nmi);
            row.modularity = Some(m.modularity);
            row.prauc = m.prauc;
            row.hits = m.hits;
            row.epochs = Some(report.epochs_run);
            row.best_epoch = Some(report.best_epoch);
            log::info!("{}: modularity {:.4} nmi {:.4}", job.stem(&spec.name), m.modularity, m.nmi);
            RunOutcome {
                job,
                row,
                wall_ms: report.wall_ms,
                checkpoint: Some(Checkpoint::new(&config, &report)),
                report: Some(report),
            }
        }
        Err(e) => {
            log::warn!("{} failed: {e}", job.stem(&spec.name));
            row.status = format!("error: {e}");
            RunOutcome {
                job,
                row,
                wall_ms: 0,
                checkpoint: None,
                report: None,
            }
        }
    }
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn configured_threads() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// The noisy graphs of the grid, keyed by `(ratio index, graph index)`.
pub fn noisy_graphs(spec: &ExperimentSpec, clean: &Dataset) -> Result<Vec<Vec<NoisyGraph>>, ExperimentError> {
    spec.ratios
        .iter()
        .map(|&ratio| {
            (0..spec.graphs)
                .map(|g| Ok(inject_noise(&clean.graph, &clean.labels, ratio, spec.noise_seed.wrapping_add(g as u64))?))
                .collect()
        })
        .collect()
}

/// Trains every grid cell in parallel; failed runs become rows with an error status.
pub fn run_grid(spec: &ExperimentSpec) -> Result<Vec<RunOutcome>, ExperimentError> {
    spec.validate()?;
    let clean = spec.load_dataset()?;
    let graphs = noisy_graphs(spec, &clean)?;
    let jobs = spec.jobs();
    let ratio_index = |r: f64| spec.ratios.iter().position(|&x| x == r).expect("ratio from spec");
    let work = || -> Vec<RunOutcome> {
        jobs.par_iter()
            .map(|&job| run_job(spec, &clean, &graphs[ratio_index(job.ratio)][job.graph], job))
            .collect()
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = configured_threads() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| ExperimentError::Config(e.to_string()))?;
    Ok(pool.install(work))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> ExperimentError {
    ExperimentError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

/// Runs the grid and writes noisy graphs, checkpoints, run rows and timings under `spec.out`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<RunRow>, ExperimentError> {
    let out = &spec.out;
    for dir in [out.clone(), out.join("checkpoints"), out.join("graphs")] {
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let clean = spec.load_dataset()?;
    for (ratio, per_ratio) in spec.ratios.iter().zip(noisy_graphs(spec, &clean)?) {
        for (g, noisy) in per_ratio.iter().enumerate() {
            let path = out.join("graphs").join(format!("{}_r{ratio}_g{g}.txt", spec.name));
            noisy.write(&path, &clean.node_ids).map_err(io_err(&path))?;
        }
    }
    let outcomes = run_grid(spec)?;
    let mut jsonl = String::new();
    for o in &outcomes {
        if let Some(ckpt) = &o.checkpoint {
            let path = out.join("checkpoints").join(format!("{}.json", o.job.stem(&spec.name)));
            ckpt.save(&path).map_err(io_err(&path))?;
        }
        jsonl.push_str(&serde_json::to_string(&o.row)?);
        jsonl.push('\n');
    }
    let rows: Vec<RunRow> = outcomes.iter().map(|o| o.row.clone()).collect();
    let timings: Vec<TimingRow> = outcomes
        .iter()
        .map(|o| TimingRow {
            dataset: spec.name.clone(),
            ratio: o.job.ratio,
            graph: o.job.graph,
            seed: o.job.seed,
            variant: o.job.variant,
            wall_ms: o.wall_ms,
        })
        .collect();
    write_csv(&out.join("runs.csv"), &rows)?;
    write_csv(&out.join("timings.csv"), &timings)?;
    let path = out.join("runs.jsonl");
    fs::write(&path, jsonl).map_err(io_err(&path))?;
    Ok(rows)
}

/// Metric columns of the aggregated report, in display order.
pub const REPORT_METRICS: [&str; 5] = ["f1", "nmi", "modularity", "prauc", "hits"];

fn metric(row: &RunRow, name: &str) -> Option<f64> {
    match name {
        "f1" => row.f1,
        "nmi" => row.nmi,
        "modularity" => row.modularity,
        "prauc" => row.prauc,
        "hits" => row.hits,
        _ => None,
    }
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One aggregated `(dataset, ratio, variant, metric)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub ratio: f64,
    pub variant: Variant,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean and std per metric over successful runs, grouped by dataset, ratio and variant.
///
/// Metrics absent from every run of a group (ranking scores without a
/// meta-model) produce no cell.
pub fn aggregate(rows: &[RunRow]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(String, u64, Variant), Vec<&RunRow>> = BTreeMap::new();
    let mut ratio_of = BTreeMap::new();
    for r in rows.iter().filter(|r| r.status == "ok") {
        let key = (r.dataset.clone(), r.ratio.to_bits(), r.variant);
        ratio_of.insert(r.ratio.to_bits(), r.ratio);
        groups.entry(key).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((dataset, ratio_bits, variant), members) in groups {
        for name in REPORT_METRICS {
            let values: Vec<f64> = members.iter().filter_map(|r| metric(r, name)).collect();
            if values.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&values);
            out.push(ReportRow {
                dataset: dataset.clone(),
                ratio: ratio_of[&ratio_bits],
                variant,
                metric: name.to_string(),
                mean,
                std,
                n: values.len(),
            });
        }
    }
    out
}

/// Plain-text table with one line per group and `mean±std` per metric.
pub fn render_report(report: &[ReportRow]) -> String {
    let present: Vec<&str> = REPORT_METRICS
        .iter()
        .copied()
        .filter(|m| report.iter().any(|r| r.metric == *m))
        .collect();
    let mut groups: Vec<(String, f64, Variant)> = Vec::new();
    for r in report {
        let key = (r.dataset.clone(), r.ratio, r.variant);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut text = format!("{:<12} {:>6} {:<9} {:>4}", "dataset", "ratio", "variant", "runs");
    for m in &present {
        let _ = write!(text, " {m:>15}");
    }
    text.push('\n');
    for (dataset, ratio, variant) in groups {
        let cells: Vec<&ReportRow> = report
            .iter()
            .filter(|r| r.dataset == dataset && r.ratio == ratio && r.variant == variant)
            .collect();
        let runs = cells.iter().map(|c| c.n).max().unwrap_or(0);
        let _ = write!(text, "{dataset:<12} {ratio:>6} {:<9} {runs:>4}", variant.as_str());
        for m in &present {
            match cells.iter().find(|c| c.metric == *m) {
                Some(c) => {
                    let _ = write!(text, " {:>15}", format!("{:.4}±{:.4}", c.mean, c.std));
                }
                None => {
                    let _ = write!(text, " {:>15}", "-");
                }
            }
        }
        text.push('\n');
    }
    text
}

/// Reads `runs.jsonl` from `run_dir`, writes `report.csv` and `report.txt`, returns the cells.
pub fn write_report(run_dir: &Path) -> Result<Vec<ReportRow>, ExperimentError> {
    let path = run_dir.join("runs.jsonl");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<Vec<RunRow>, _>>()?;
    let report = aggregate(&rows);
    write_csv(&run_dir.join("report.csv"), &report)?;
    let txt = run_dir.join("report.txt");
    fs::write(&txt, render_report(&report)).map_err(io_err(&txt))?;
    Ok(report)
}
