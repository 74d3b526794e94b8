//! Command-line interface.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use condebias_core::losses::CriterionKind;
use condebias_core::synth::{generate_dataset_with, SplitDataset};
use condebias_core::trainer::{preset, Method};

use crate::config::{Overrides, RunConfig};
use crate::dataset_file::{export_csv, read_dataset, write_dataset};
use crate::error::{Error, Result};
use crate::experiment::{grid_markdown, grid_search, run_experiment, Grid};
use crate::report::render_report;
use crate::results::{read_results, ResultRow};
use crate::theorem::{summary, theorem_sweep, to_csv};

#[derive(Debug, Parser)]
#[command(name = "condebias", version, about = "Conditional adversarial debiasing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset file.
    Gen(GenArgs),
    /// Train seeded runs of one method.
    Train(RunArgs),
    /// Train every criterion (and the baseline) with its preset.
    Ablation(RunArgs),
    /// Grid search over hyperparameters, ranked by validation accuracy.
    Grid(GridArgs),
    /// Check the optimal-classifier theorem on random linear models.
    Theorem(TheoremArgs),
    /// Markdown tables from a results CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// 1 (shape label, hue bias) or 2 (hue label, value-difference bias).
    #[arg(long, value_parser = ["1", "2"])]
    pub setup: Option<String>,
    /// baseline, uncond_mi, cond_mi, uncond_hsic, cond_hsic, predictability,
    /// mcc_only, pc_only or cond_mcc.
    #[arg(long)]
    pub method: Option<String>,
    /// Number of seeded runs.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Master seed; run i uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "lr-c")]
    pub lr_c: Option<f64>,
    #[arg(long = "lr-b")]
    pub lr_b: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Balanced mini-batches (`--balanced`, `--balanced=false`).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub balanced: Option<bool>,
    /// conv_features, logits or softmax.
    #[arg(long)]
    pub tap: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// key = value config file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CDDS1 dataset to train on instead of generating one per seed.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Permutations per independence test.
    #[arg(long)]
    pub permutations: Option<usize>,
    /// Significance level of the independence tests.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Colour saturation of generated images.
    #[arg(long)]
    pub saturation: Option<f64>,
}

impl RunArgs {
    fn overrides(&self) -> Result<Overrides> {
        let mut o = Overrides::default();
        let mut set = |k: &str, v: Option<String>| v.map(|v| o.set(k, &v)).transpose();
        set("setup", self.setup.clone())?;
        set("method", self.method.clone())?;
        set("tap", self.tap.clone())?;
        o.seeds = self.seeds;
        o.seed = self.seed;
        o.beta = self.beta;
        o.lr_c = self.lr_c;
        o.lr_b = self.lr_b;
        o.epochs = self.epochs;
        o.batch = self.batch;
        o.balanced = self.balanced;
        o.out = self.out.clone();
        o.data = self.data.clone();
        o.permutations = self.permutations;
        o.alpha = self.alpha;
        o.saturation = self.saturation;
        Ok(o)
    }

    /// File settings layered under flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => Overrides::from_file(p)?,
            None => Overrides::default(),
        };
        RunConfig::resolve(&file.layer(&self.overrides()?))
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = ["1", "2"], default_value = "1")]
    pub setup: String,
    /// Dataset file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "n-train")]
    pub n_train: Option<usize>,
    #[arg(long = "n-val")]
    pub n_val: Option<usize>,
    #[arg(long = "n-test")]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub saturation: Option<f64>,
    /// Also export one CSV row per example.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// `key=v1,v2,...` for lr_c, beta, epochs or balanced; repeatable.
    #[arg(long = "grid", required = true)]
    pub grid: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TheoremArgs {
    /// Samples per model.
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    /// Number of random models.
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixes the bias strength of every model.
    #[arg(long)]
    pub alpha1: Option<f64>,
    /// CSV file to write.
    #[arg(long, default_value = "theorem.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Results CSV.
    pub results: PathBuf,
    /// Markdown file to write; printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn progress_line(out: &mut dyn Write, row: &ResultRow) {
    let _ = match row.test_acc {
        Some(acc) if row.is_ok() => writeln!(
            out,
            "{} {} seed {}: val {:.3} test {:.3}",
            row.setup.name(),
            row.method.name(),
            row.seed,
            row.val_acc.unwrap_or(f64::NAN),
            acc
        ),
        _ => writeln!(out, "{} {} seed {}: {}", row.setup.name(), row.method.name(), row.seed, row.status),
    };
}

fn load_shared(cfg: &RunConfig) -> Result<Option<SplitDataset>> {
    match &cfg.data {
        Some(p) => {
            let d = read_dataset(p)?;
            if d.setup != cfg.setup {
                return Err(Error::Usage(format!(
                    "{} holds a {} dataset but the run is configured for {}",
                    p.display(),
                    d.setup.name(),
                    cfg.setup.name()
                )));
            }
            Ok(Some(d))
        }
        None => Ok(None),
    }
}

fn failures(rows: &[ResultRow]) -> Result<()> {
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.is_ok())
        .map(|r| format!("{} seed {}: {}", r.method.name(), r.seed, r.status))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::RunFailed(failed.join("; ")))
    }
}

pub fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let mut o = Overrides::default();
    o.set("setup", &args.setup)?;
    o.n_train = args.n_train;
    o.n_val = args.n_val;
    o.n_test = args.n_test;
    o.saturation = args.saturation;
    let cfg = RunConfig::resolve(&o)?;
    let data = generate_dataset_with(cfg.setup, cfg.counts, &cfg.render, args.seed)
        .map_err(|e| Error::Usage(e.to_string()))?;
    write_dataset(&data, &args.out)?;
    if let Some(csv) = &args.csv {
        export_csv(&data, csv)?;
    }
    let _ = writeln!(out, "wrote {} ({}, seed {})", args.out.display(), cfg.setup.name(), args.seed);
    for (name, split) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        let t = split.contingency();
        let _ = writeln!(
            out,
            "{name}: {} examples; cross/green {} cross/violet {} square/green {} square/violet {}",
            split.len(),
            t[0][0],
            t[0][1],
            t[1][0],
            t[1][1]
        );
    }
    Ok(())
}

pub fn cmd_train(args: &RunArgs, out: &mut dyn Write) -> Result<Vec<ResultRow>> {
    let cfg = args.resolve()?;
    let shared = load_shared(&cfg)?;
    let rows = run_experiment(&cfg, &[(cfg.method, cfg.hyper)], shared.as_ref(), true, |r| progress_line(out, r))?;
    let _ = writeln!(out, "results in {}", cfg.out.display());
    failures(&rows)?;
    Ok(rows)
}

/// Methods run by the ablation.
pub fn ablation_methods() -> Vec<Method> {
    let mut m = vec![Method::Baseline];
    m.extend(CriterionKind::ALL.iter().map(|&k| Method::Debias(k)));
    m
}

pub fn cmd_ablation(args: &RunArgs, out: &mut dyn Write) -> Result<Vec<ResultRow>> {
    if args.method.is_some() {
        return Err(Error::Usage("ablation runs every method; drop --method".into()));
    }
    let cfg = args.resolve()?;
    let shared = load_shared(&cfg)?;
    // Flags that change hyperparameters apply to every method's preset.
    let methods: Vec<_> = ablation_methods()
        .into_iter()
        .map(|m| {
            let mut h = preset(cfg.setup, m);
            if let Some(v) = args.epochs {
                h.epochs = v;
            }
            if let Some(v) = args.batch {
                h.batch_size = v;
            }
            if let Some(v) = args.balanced {
                h.balanced = v;
            }
            (m, h)
        })
        .collect();
    let rows = run_experiment(&cfg, &methods, shared.as_ref(), true, |r| progress_line(out, r))?;
    let _ = writeln!(out, "\n{}", render_report(&rows));
    failures(&rows)?;
    Ok(rows)
}

pub fn cmd_grid(args: &GridArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.run.resolve()?;
    let mut grid = Grid::default();
    for g in &args.grid {
        grid.add(g)?;
    }
    let cells = grid_search(&cfg, &grid, |_, _| {})?;
    let table = grid_markdown(&cells);
    write_file(&cfg.out.join("grid.md"), table.as_bytes())?;
    let _ = write!(out, "{table}");
    Ok(())
}

pub fn cmd_theorem(args: &TheoremArgs, out: &mut dyn Write) -> Result<()> {
    let rows = theorem_sweep(args.n, args.trials, args.seed, args.alpha1)?;
    write_file(&args.out, &to_csv(&rows))?;
    let _ = write!(out, "{}", summary(&rows));
    Ok(())
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let rows = read_results(&args.results)?;
    let md = render_report(&rows);
    match &args.out {
        Some(p) => write_file(p, md.as_bytes())?,
        None => {
            let _ = write!(out, "{md}");
        }
    }
    Ok(())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, out),
        Command::Train(a) => cmd_train(a, out).map(|_| ()),
        Command::Ablation(a) => cmd_ablation(a, out).map(|_| ()),
        Command::Grid(a) => cmd_grid(a, out),
        Command::Theorem(a) => cmd_theorem(a, out),
        Command::Report(a) => cmd_report(a, out),
    }
}
