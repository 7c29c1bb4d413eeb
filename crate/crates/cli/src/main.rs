use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use metaclust::dataset::{load_dataset, Dataset};
use metaclust::experiment::{evaluate_model, run_experiment, write_report, render_report, ExperimentSpec};
use metaclust::meta_model::Variant;
use metaclust::noise::{inject_noise, NoisyGraph};
use metaclust::trainer::Checkpoint;
use metaclust::verify::run_suite;

/// Noise-robust graph clustering with meta-learned pair weights.
#[derive(Parser)]
#[command(name = "metaclust", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inject cross-class noise edges and write the edge list with a real-edge flag.
    Noise {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every (ratio, noisy graph, seed, variant) cell of an experiment grid.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run only this noise ratio.
        #[arg(long)]
        ratio: Option<f64>,
        /// Run only this variant (metagc, metagc-x or metagc-a).
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on the noisy graph it was trained on.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Noisy edge list written by `noise` or `train`.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        hits_frac: f64,
        /// Write the metrics as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the loss-property, oracle and gradient checks; exits nonzero on any failure.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Also write the results as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate the runs of a train output directory into mean and std per metric.
    Report {
        /// Directory holding runs.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Dataset given either by an experiment config or by three files.
#[derive(Args)]
struct DataArgs {
    #[arg(long, conflicts_with_all = ["edges", "attributes", "labels"])]
    config: Option<PathBuf>,
    #[arg(long, requires_all = ["attributes", "labels"])]
    edges: Option<PathBuf>,
    #[arg(long, requires = "edges")]
    attributes: Option<PathBuf>,
    #[arg(long, requires = "edges")]
    labels: Option<PathBuf>,
}

impl DataArgs {
    fn spec(&self) -> Result<Option<ExperimentSpec>> {
        self.config
            .as_ref()
            .map(|p| ExperimentSpec::load(p).with_context(|| format!("loading {}", p.display())))
            .transpose()
    }

    fn dataset(&self, spec: Option<&ExperimentSpec>) -> Result<Dataset> {
        if let Some(spec) = spec {
            return Ok(spec.load_dataset()?);
        }
        match (&self.edges, &self.attributes, &self.labels) {
            (Some(e), Some(a), Some(l)) => Ok(load_dataset(e, a, l)?),
            _ => bail!("give --config or all of --edges, --attributes and --labels"),
        }
    }
}

fn cmd_noise(data: &DataArgs, ratio: Option<f64>, seed: Option<u64>, out: &Path) -> Result<()> {
    let spec = data.spec()?;
    let dataset = data.dataset(spec.as_ref())?;
    let ratio = ratio
        .or_else(|| spec.as_ref().map(|s| s.ratios[0]))
        .context("--ratio is required without --config")?;
    let seed = seed.or_else(|| spec.as_ref().map(|s| s.noise_seed)).unwrap_or(0);
    let noisy = inject_noise(&dataset.graph, &dataset.labels, ratio, seed)?;
    noisy
        .write(out, &dataset.node_ids)
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{} edges ({} injected) -> {}",
        noisy.graph.n_edges(),
        noisy.n_injected(),
        out.display()
    );
    Ok(())
}

fn cmd_train(
    config: &Path,
    seed: Option<u64>,
    ratio: Option<f64>,
    variant: Option<Variant>,
    out: Option<PathBuf>,
) -> Result<bool> {
    let mut spec = ExperimentSpec::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(s) = seed {
        spec.seeds = vec![s];
    }
    if let Some(r) = ratio {
        spec.ratios = vec![r];
    }
    if let Some(v) = variant {
        spec.variants = vec![v];
    }
    if let Some(o) = out {
        spec.out = o;
    }
    spec.validate()?;
    let rows = run_experiment(&spec)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!("{} runs, {failed} failed -> {}", rows.len(), spec.out.display());
    Ok(failed == 0)
}

fn cmd_eval(data: &DataArgs, checkpoint: &Path, graph: &Path, hits_frac: f64, out: Option<&Path>) -> Result<()> {
    let spec = data.spec()?;
    let dataset = data.dataset(spec.as_ref())?;
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (noisy, ids) = NoisyGraph::read(graph, dataset.n_nodes())?;
    if ids != dataset.node_ids {
        bail!("{} uses different node ids than the dataset", graph.display());
    }
    if noisy.clean_graph.edges() != dataset.graph.edges() {
        log::warn!("real edges of {} differ from the dataset graph", graph.display());
    }
    let metrics = evaluate_model(&dataset, &noisy, &ckpt.config, &ckpt.w, &ckpt.theta, hits_frac)?;
    let json = serde_json::to_string_pretty(&metrics)?;
    match out {
        Some(path) => fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_verify(seed: u64, trials: usize, out: Option<&Path>) -> Result<bool> {
    let report = run_suite(seed, trials)?;
    for c in &report.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<28} worst={:.3e}  {}", c.name, c.worst, c.detail);
    }
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(report.all_passed())
}

fn cmd_report(dir: &Path) -> Result<()> {
    let report = write_report(dir)?;
    print!("{}", render_report(&report));
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Noise { data, ratio, seed, out } => cmd_noise(&data, ratio, seed, &out).map(|_| true),
        Command::Train {
            config,
            seed,
            ratio,
            variant,
            out,
        } => cmd_train(&config, seed, ratio, variant, out),
        Command::Eval {
            data,
            checkpoint,
            graph,
            hits_frac,
            out,
        } => cmd_eval(&data, &checkpoint, &graph, hits_frac, out.as_deref()).map(|_| true),
        Command::Verify { seed, trials, out } => cmd_verify(seed, trials, out.as_deref()),
        Command::Report { out } => cmd_report(&out).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
