//! Seeded multi-run experiments, the on-disk run layout and grid search.
//!
//! Run `i` of an experiment uses seed `master_seed + i` both for its dataset
//! (unless a dataset file is supplied) and for training, so different methods
//! with the same master seed are compared on identical data.

use std::fs;
use std::path::{Path, PathBuf};

use condebias_core::fairness::{fairness_report, FairnessReport, TestOutcome};
use condebias_core::rng::{stream, streams};
use condebias_core::synth::{generate_dataset_with, Setup, SplitDataset};
use condebias_core::trainer::{mean_stderr, preset, train, Hyperparams, Method, TrainOutput};

use crate::checkpoint::write_checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::report::render_report;
use crate::results::{to_csv, write_results, FairnessColumns, ResultRow};

/// Everything one completed run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub row: ResultRow,
    pub output: TrainOutput,
    pub fairness: FairnessReport,
}

/// Dataset for a run: the supplied one, or a fresh one from the run seed.
pub fn dataset_for(cfg: &RunConfig, shared: Option<&SplitDataset>, seed: u64) -> Result<SplitDataset> {
    match shared {
        Some(d) => Ok(d.clone()),
        None => Ok(generate_dataset_with(cfg.setup, cfg.counts, &cfg.render, seed)?),
    }
}

/// Trains one run and applies the independence tests to its test split.
pub fn run_one(cfg: &RunConfig, method: Method, hyper: &Hyperparams, data: &SplitDataset, seed: u64) -> Result<RunArtifacts> {
    let output = train(cfg.setup, method, hyper, data, seed)?;
    let mut rng = stream(seed, streams::PERMUTATIONS);
    let fairness = fairness_report(&output.test_eval, cfg.permutations, cfg.alpha, &mut rng)?;
    let row = ResultRow {
        setup: cfg.setup,
        method,
        seed,
        hyper: *hyper,
        val_acc: Some(output.result.val_accuracy),
        test_acc: Some(output.result.test_accuracy),
        fairness: Some(FairnessColumns::from(&fairness)),
        status: "ok".into(),
    };
    Ok(RunArtifacts { row, output, fairness })
}

/// `<out>/<setup>/<method>/<seed>/`.
pub fn run_dir(out: &Path, setup: Setup, method: Method, seed: u64) -> PathBuf {
    out.join(setup.name()).join(method.name()).join(seed.to_string())
}

fn outcome_line(name: &str, t: &TestOutcome) -> String {
    format!(
        "| {name} | {:.6} | {:.4} | {} | {} |\n",
        t.statistic,
        t.p_value,
        if t.reject { "reject" } else { "pass" },
        t.n_permutations.map(|n| n.to_string()).unwrap_or_else(|| "analytic".into())
    )
}

/// Markdown rendering of one run's independence tests.
pub fn fairness_markdown(r: &FairnessReport, alpha: f64, tap: &str) -> String {
    let mut s = format!(
        "Independence tests on the test split, alpha = {alpha}, representation `{tap}`.\n\n\
         | Test | Statistic | p-value | Result | Permutations |\n|---|---|---|---|---|\n"
    );
    s.push_str(&outcome_line("Demographic parity (HSIC)", &r.demographic_parity));
    s.push_str(&outcome_line("Equalized odds (conditional HSIC)", &r.equalized_odds_hsic));
    s.push_str(&outcome_line("Equalized odds (partial correlation)", &r.equalized_odds_pc));
    s
}

/// Writes the resolved config, checkpoint, result row and fairness report of
/// a run (or only config and the failed row).
pub fn write_run_dir(cfg: &RunConfig, row: &ResultRow, artifacts: Option<&RunArtifacts>) -> Result<PathBuf> {
    let dir = run_dir(&cfg.out, row.setup, row.method, row.seed);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut echo = cfg.clone();
    echo.method = row.method;
    echo.hyper = row.hyper;
    echo.master_seed = row.seed;
    echo.seeds = 1;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write("config.txt", echo.echo().as_bytes())?;
    write("result.csv", &to_csv(std::slice::from_ref(row)))?;
    if let Some(a) = artifacts {
        write_checkpoint(&a.output.model.classifier, &dir.join("checkpoint.cdlb"))?;
        write(
            "fairness.md",
            fairness_markdown(&a.fairness, cfg.alpha, row.hyper.tap.name()).as_bytes(),
        )?;
    }
    Ok(dir)
}

/// Runs `cfg.seeds` seeds of every method. Aborted runs become failed rows.
/// With `persist`, every run directory plus `results.csv` and `report.md`
/// are written under `cfg.out`.
pub fn run_experiment(
    cfg: &RunConfig,
    methods: &[(Method, Hyperparams)],
    shared: Option<&SplitDataset>,
    persist: bool,
    mut progress: impl FnMut(&ResultRow),
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::with_capacity(methods.len() * cfg.seeds);
    for i in 0..cfg.seeds {
        let seed = cfg.run_seed(i);
        let data = dataset_for(cfg, shared, seed)?;
        for (method, hyper) in methods {
            let (row, artifacts) = match run_one(cfg, *method, hyper, &data, seed) {
                Ok(a) => (a.row.clone(), Some(a)),
                Err(e) => (ResultRow::failed(cfg.setup, *method, seed, *hyper, &e.to_string()), None),
            };
            if persist {
                write_run_dir(cfg, &row, artifacts.as_ref())?;
            }
            progress(&row);
            rows.push(row);
        }
    }
    rows.sort_by_key(|r| (Method::ALL.iter().position(|m| *m == r.method), r.seed));
    if persist {
        fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
        write_results(&rows, &cfg.out.join("results.csv"))?;
        let report = cfg.out.join("report.md");
        fs::write(&report, render_report(&rows)).map_err(|e| Error::io(&report, e))?;
    }
    Ok(rows)
}

/// Each method paired with its preset for `setup`.
pub fn presets_for(setup: Setup, methods: &[Method]) -> Vec<(Method, Hyperparams)> {
    methods.iter().map(|&m| (m, preset(setup, m))).collect()
}

/// Value lists to search; empty lists keep the base value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grid {
    pub lr_c: Vec<f64>,
    pub beta: Vec<f64>,
    pub epochs: Vec<usize>,
    pub balanced: Vec<bool>,
}

impl Grid {
    /// Parses `key=v1,v2,...` with key one of lr_c, beta, epochs, balanced.
    pub fn add(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("grid entry {spec:?} must look like key=v1,v2")))?;
        fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Error::Usage(format!("invalid grid value {x:?} for {key}")))
                })
                .collect()
        }
        match k.trim() {
            "lr_c" => self.lr_c.extend(list::<f64>(k, v)?),
            "beta" => self.beta.extend(list::<f64>(k, v)?),
            "epochs" => self.epochs.extend(list::<usize>(k, v)?),
            "balanced" => self.balanced.extend(list::<bool>(k, v)?),
            other => return Err(Error::Usage(format!("unknown grid key {other:?}"))),
        }
        Ok(())
    }

    /// Cartesian product over `base`; the adversary learning rate follows
    /// `lr_c`.
    pub fn cells(&self, base: &Hyperparams) -> Vec<Hyperparams> {
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let mut out = Vec::new();
        for &lr_c in &or(&self.lr_c, base.lr_c) {
            for &beta in &or(&self.beta, base.beta) {
                let epochs = if self.epochs.is_empty() { vec![base.epochs] } else { self.epochs.clone() };
                for &epochs in &epochs {
                    let balanced = if self.balanced.is_empty() { vec![base.balanced] } else { self.balanced.clone() };
                    for &balanced in &balanced {
                        let lr_b = if self.lr_c.is_empty() { base.lr_b } else { lr_c };
                        out.push(Hyperparams {
                            lr_c,
                            lr_b,
                            beta,
                            epochs,
                            balanced,
                            ..*base
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub hyper: Hyperparams,
    pub runs: usize,
    pub failed: usize,
    pub val_mean: f64,
    pub val_stderr: f64,
    pub test_mean: f64,
}

/// Ranks by mean validation accuracy (descending), then lower beta, then
/// lower lr_c. Cells without a completed run sort last.
pub fn rank_cells(cells: &mut [GridCell]) {
    cells.sort_by(|a, b| {
        let key = |c: &GridCell| if c.val_mean.is_nan() { f64::NEG_INFINITY } else { c.val_mean };
        key(b)
            .total_cmp(&key(a))
            .then(a.hyper.beta.total_cmp(&b.hyper.beta))
            .then(a.hyper.lr_c.total_cmp(&b.hyper.lr_c))
    });
}

/// Trains every grid cell `cfg.seeds` times with the configured method and
/// returns the cells ranked; the first is the selection.
pub fn grid_search(cfg: &RunConfig, grid: &Grid, mut progress: impl FnMut(&Hyperparams, usize)) -> Result<Vec<GridCell>> {
    let cells = grid.cells(&cfg.hyper);
    if cells.is_empty() {
        return Err(Error::Usage("grid is empty".into()));
    }
    for h in &cells {
        h.validate().map_err(|e| Error::Usage(e.to_string()))?;
    }
    let datasets = (0..cfg.seeds)
        .map(|i| dataset_for(cfg, None, cfg.run_seed(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(cells.len());
    for hyper in cells {
        let (mut val, mut test, mut failed) = (Vec::new(), Vec::new(), 0);
        for (i, data) in datasets.iter().enumerate() {
            progress(&hyper, i);
            match train(cfg.setup, cfg.method, &hyper, &data.clone(), cfg.run_seed(i)) {
                Ok(o) => {
                    val.push(o.result.val_accuracy);
                    test.push(o.result.test_accuracy);
                }
                Err(_) => failed += 1,
            }
        }
        let (val_mean, val_stderr) = mean_stderr(&val);
        out.push(GridCell {
            hyper,
            runs: val.len(),
            failed,
            val_mean,
            val_stderr,
            test_mean: mean_stderr(&test).0,
        });
    }
    rank_cells(&mut out);
    Ok(out)
}

pub fn grid_markdown(cells: &[GridCell]) -> String {
    let mut s = String::from("| Rank | lr_c | beta | epochs | balanced | Runs | Val mean | Test mean |\n|---|---|---|---|---|---|---|---|\n");
    for (i, c) in cells.iter().enumerate() {
        let val = if c.val_stderr.is_finite() {
            format!("{:.3} ± {:.3}", c.val_mean, c.val_stderr)
        } else {
            format!("{:.3}", c.val_mean)
        };
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {val} | {:.3} |\n",
            i + 1,
            c.hyper.lr_c,
            c.hyper.beta,
            c.hyper.epochs,
            c.hyper.balanced,
            c.runs,
            c.test_mean
        ));
    }
    s
}
