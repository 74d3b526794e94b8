//! Markdown summaries of a results table.
//!
//! Accuracy cells read `mean ± stderr` (stderr omitted for a single run). The
//! best mean in each setup column is bold; means equal at the printed
//! precision count as tied and are all bold.

use std::fmt::Write;

use condebias_core::losses::CriterionKind;
use condebias_core::synth::Setup;
use condebias_core::trainer::{mean_stderr, Method};

use crate::results::ResultRow;

/// Decimal places of accuracy cells; also the tie resolution.
pub const PRECISION: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub setup: Setup,
    pub method: Method,
    /// Completed runs.
    pub runs: usize,
    pub failed: usize,
    pub test_mean: f64,
    /// `NaN` for fewer than two runs.
    pub test_stderr: f64,
    pub val_mean: f64,
    /// Runs carrying fairness columns.
    pub fairness_runs: usize,
    pub dp_pass: usize,
    pub eo_pass: usize,
    pub eo_hsic_pass: usize,
    pub eo_pc_pass: usize,
}

fn method_rank(m: Method) -> usize {
    Method::ALL.iter().position(|&x| x == m).unwrap_or(usize::MAX)
}

fn setups_in(rows: &[ResultRow]) -> Vec<Setup> {
    [Setup::I, Setup::II].into_iter().filter(|s| rows.iter().any(|r| r.setup == *s)).collect()
}

fn methods_in(rows: &[ResultRow]) -> Vec<Method> {
    let mut m: Vec<Method> = Vec::new();
    for r in rows {
        if !m.contains(&r.method) {
            m.push(r.method);
        }
    }
    m.sort_by_key(|&x| method_rank(x));
    m
}

/// Per setup and method aggregates, ordered by setup then method.
pub fn summarize(rows: &[ResultRow]) -> Vec<MethodSummary> {
    let mut out = Vec::new();
    for setup in setups_in(rows) {
        for method in methods_in(rows) {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.setup == setup && r.method == method).collect();
            if group.is_empty() {
                continue;
            }
            let ok: Vec<&&ResultRow> = group.iter().filter(|r| r.is_ok()).collect();
            let test: Vec<f64> = ok.iter().filter_map(|r| r.test_acc).collect();
            let val: Vec<f64> = ok.iter().filter_map(|r| r.val_acc).collect();
            let (test_mean, test_stderr) = mean_stderr(&test);
            let fair: Vec<_> = ok.iter().filter_map(|r| r.fairness).collect();
            let count = |f: &dyn Fn(&crate::results::FairnessColumns) -> bool| fair.iter().filter(|c| f(c)).count();
            out.push(MethodSummary {
                setup,
                method,
                runs: ok.len(),
                failed: group.len() - ok.len(),
                test_mean,
                test_stderr,
                val_mean: mean_stderr(&val).0,
                fairness_runs: fair.len(),
                dp_pass: count(&|c| c.dp_pass),
                eo_pass: count(&|c| c.eo_pass),
                eo_hsic_pass: count(&|c| c.eo_hsic_pass.unwrap_or(c.eo_pass)),
                eo_pc_pass: count(&|c| c.eo_pc_pass.unwrap_or(c.eo_pass)),
            });
        }
    }
    out
}

fn fmt_acc(v: f64) -> String {
    format!("{v:.PRECISION$}")
}

fn cell(s: &MethodSummary) -> String {
    if s.runs == 0 {
        return "failed".into();
    }
    if s.test_stderr.is_finite() {
        format!("{} ± {}", fmt_acc(s.test_mean), fmt_acc(s.test_stderr))
    } else {
        fmt_acc(s.test_mean)
    }
}

fn setup_title(s: Setup) -> &'static str {
    match s {
        Setup::I => "Setup I",
        Setup::II => "Setup II",
    }
}

/// Methods as rows, setups as columns, mean test accuracy ± standard error.
pub fn accuracy_table(summaries: &[MethodSummary]) -> String {
    let setups: Vec<Setup> = [Setup::I, Setup::II]
        .into_iter()
        .filter(|s| summaries.iter().any(|m| m.setup == *s))
        .collect();
    let mut methods: Vec<Method> = Vec::new();
    for s in summaries {
        if !methods.contains(&s.method) {
            methods.push(s.method);
        }
    }
    methods.sort_by_key(|&m| method_rank(m));
    let best: Vec<Option<String>> = setups
        .iter()
        .map(|&setup| {
            summaries
                .iter()
                .filter(|s| s.setup == setup && s.runs > 0)
                .map(|s| s.test_mean)
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
                .map(fmt_acc)
        })
        .collect();
    let mut out = String::new();
    let _ = write!(out, "| Method |");
    for s in &setups {
        let _ = write!(out, " {} |", setup_title(*s));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in &setups {
        out.push_str("---|");
    }
    out.push('\n');
    for m in methods {
        let _ = write!(out, "| {} |", m.name());
        for (i, setup) in setups.iter().enumerate() {
            match summaries.iter().find(|s| s.setup == *setup && s.method == m) {
                Some(s) => {
                    let text = cell(s);
                    let top = s.runs > 0 && best[i].as_deref() == Some(fmt_acc(s.test_mean).as_str());
                    if top {
                        let _ = write!(out, " **{text}** |");
                    } else {
                        let _ = write!(out, " {text} |");
                    }
                }
                None => out.push_str("  |"),
            }
        }
        out.push('\n');
    }
    out
}

/// Pass counts of the independence tests, `passes/runs`.
pub fn fairness_table(summaries: &[MethodSummary]) -> String {
    let mut out = String::from("| Setup | Method | DP (HSIC) | EO (cond. HSIC) | EO (PC) |\n|---|---|---|---|---|\n");
    for s in summaries.iter().filter(|s| s.fairness_runs > 0) {
        let n = s.fairness_runs;
        let _ = writeln!(
            out,
            "| {} | {} | {}/{n} | {}/{n} | {}/{n} |",
            setup_title(s.setup),
            s.method.name(),
            s.dp_pass,
            s.eo_hsic_pass,
            s.eo_pc_pass
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedComparison {
    pub setup: Setup,
    pub first: Method,
    pub second: Method,
    /// Seeds completed by both methods.
    pub pairs: usize,
    pub mean_difference: f64,
    pub stderr: f64,
}

/// Comparisons emitted by the ablation: each conditional criterion against
/// its unconditional or partial counterpart.
pub const ABLATION_PAIRS: [(CriterionKind, CriterionKind); 4] = [
    (CriterionKind::CondHSIC, CriterionKind::UncondHSIC),
    (CriterionKind::CondMI, CriterionKind::UncondMI),
    (CriterionKind::CondMCC, CriterionKind::PCOnly),
    (CriterionKind::PCOnly, CriterionKind::MCCOnly),
];

/// Seed-paired test accuracy differences `first − second`.
pub fn paired_comparison(rows: &[ResultRow], setup: Setup, first: Method, second: Method) -> PairedComparison {
    let acc = |m: Method, seed: u64| {
        rows.iter()
            .find(|r| r.setup == setup && r.method == m && r.seed == seed && r.is_ok())
            .and_then(|r| r.test_acc)
    };
    let mut seeds: Vec<u64> = rows
        .iter()
        .filter(|r| r.setup == setup && r.method == first)
        .map(|r| r.seed)
        .collect();
    seeds.sort_unstable();
    seeds.dedup();
    let diffs: Vec<f64> = seeds
        .into_iter()
        .filter_map(|s| Some(acc(first, s)? - acc(second, s)?))
        .collect();
    let (mean_difference, stderr) = mean_stderr(&diffs);
    PairedComparison {
        setup,
        first,
        second,
        pairs: diffs.len(),
        mean_difference,
        stderr,
    }
}

pub fn paired_table(comparisons: &[PairedComparison]) -> String {
    let mut out = String::from("| Setup | Comparison | Pairs | Mean difference |\n|---|---|---|---|\n");
    for c in comparisons.iter().filter(|c| c.pairs > 0) {
        let diff = if c.stderr.is_finite() {
            format!("{:+.PRECISION$} ± {}", c.mean_difference, fmt_acc(c.stderr))
        } else {
            format!("{:+.PRECISION$}", c.mean_difference)
        };
        let _ = writeln!(
            out,
            "| {} | {} − {} | {} | {diff} |",
            setup_title(c.setup),
            c.first.name(),
            c.second.name(),
            c.pairs
        );
    }
    out
}

/// The full report: accuracy table, failed-run note, paired comparisons
/// among the ablation methods present and fairness pass counts.
pub fn render_report(rows: &[ResultRow]) -> String {
    let summaries = summarize(rows);
    let mut out = String::from("## Test accuracy\n\n");
    out.push_str(&accuracy_table(&summaries));
    let failed: usize = summaries.iter().map(|s| s.failed).sum();
    if failed > 0 {
        let _ = writeln!(out, "\n{failed} run(s) failed and are excluded from the means.");
        for s in summaries.iter().filter(|s| s.failed > 0) {
            let _ = writeln!(out, "- {} {}: {} failed", setup_title(s.setup), s.method.name(), s.failed);
        }
    }
    let comparisons: Vec<PairedComparison> = setups_in(rows)
        .into_iter()
        .flat_map(|setup| {
            ABLATION_PAIRS
                .iter()
                .map(move |&(a, b)| paired_comparison(rows, setup, Method::Debias(a), Method::Debias(b)))
        })
        .filter(|c| c.pairs > 0)
        .collect();
    if !comparisons.is_empty() {
        out.push_str("\n## Paired comparisons\n\n");
        out.push_str(&paired_table(&comparisons));
    }
    if summaries.iter().any(|s| s.fairness_runs > 0) {
        out.push_str("\n## Independence tests passed\n\n");
        out.push_str(&fairness_table(&summaries));
    }
    out
}
