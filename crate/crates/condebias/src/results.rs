//! The results CSV: one row per training run.

use std::fs;
use std::io::Write;
use std::path::Path;

use condebias_core::fairness::FairnessReport;
use condebias_core::nn::Tap;
use condebias_core::synth::Setup;
use condebias_core::trainer::{Hyperparams, Method};

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 20] = [
    "setup",
    "method",
    "seed",
    "lr_c",
    "lr_b",
    "epochs",
    "beta",
    "balanced",
    "tap",
    "val_acc",
    "test_acc",
    "dp_pass",
    "eo_pass",
    "dp_p",
    "eo_hsic_p",
    "eo_pc_p",
    "eo_hsic_pass",
    "eo_pc_pass",
    "batch",
    "status",
];

/// Columns a results file must carry to be reported on.
pub const REQUIRED: [&str; 13] = [
    "setup", "method", "seed", "lr_c", "lr_b", "epochs", "beta", "balanced", "tap", "val_acc", "test_acc", "dp_pass",
    "eo_pass",
];

/// Shortest round-tripping form, switching to exponent notation for very
/// large or small magnitudes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairnessColumns {
    pub dp_pass: bool,
    pub eo_pass: bool,
    pub dp_p: Option<f64>,
    pub eo_hsic_p: Option<f64>,
    pub eo_pc_p: Option<f64>,
    pub eo_hsic_pass: Option<bool>,
    pub eo_pc_pass: Option<bool>,
}

impl From<&FairnessReport> for FairnessColumns {
    fn from(r: &FairnessReport) -> Self {
        FairnessColumns {
            dp_pass: r.dp_pass(),
            eo_pass: r.eo_pass(),
            dp_p: Some(r.demographic_parity.p_value),
            eo_hsic_p: Some(r.equalized_odds_hsic.p_value),
            eo_pc_p: Some(r.equalized_odds_pc.p_value),
            eo_hsic_pass: Some(r.equalized_odds_hsic.passes()),
            eo_pc_pass: Some(r.equalized_odds_pc.passes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub setup: Setup,
    pub method: Method,
    pub seed: u64,
    pub hyper: Hyperparams,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub fairness: Option<FairnessColumns>,
    /// `ok`, or `failed: <reason>` for an aborted run.
    pub status: String,
}

impl ResultRow {
    pub fn failed(setup: Setup, method: Method, seed: u64, hyper: Hyperparams, reason: &str) -> Self {
        ResultRow {
            setup,
            method,
            seed,
            hyper,
            val_acc: None,
            test_acc: None,
            fairness: None,
            status: format!("failed: {}", reason.replace(['\n', '\r'], " ")),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let flag = |v: Option<bool>| v.map(|x| x.to_string()).unwrap_or_default();
        let f = self.fairness.as_ref();
        vec![
            self.setup.tag().to_string(),
            self.method.name().to_string(),
            self.seed.to_string(),
            fmt_f64(self.hyper.lr_c),
            fmt_f64(self.hyper.lr_b),
            self.hyper.epochs.to_string(),
            fmt_f64(self.hyper.beta),
            self.hyper.balanced.to_string(),
            self.hyper.tap.name().to_string(),
            opt(self.val_acc),
            opt(self.test_acc),
            flag(f.map(|f| f.dp_pass)),
            flag(f.map(|f| f.eo_pass)),
            opt(f.and_then(|f| f.dp_p)),
            opt(f.and_then(|f| f.eo_hsic_p)),
            opt(f.and_then(|f| f.eo_pc_p)),
            flag(f.and_then(|f| f.eo_hsic_pass)),
            flag(f.and_then(|f| f.eo_pc_pass)),
            self.hyper.batch_size.to_string(),
            self.status.clone(),
        ]
    }
}

/// Renders rows with a header line.
pub fn to_csv(rows: &[ResultRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record(r.fields()).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&to_csv(rows)))
        .map_err(|e| Error::io(path, e))
}

fn parse_setup(s: &str) -> Option<Setup> {
    match s {
        "1" | "I" | "setup1" => Some(Setup::I),
        "2" | "II" | "setup2" => Some(Setup::II),
        _ => None,
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// Parses a results CSV. Missing required columns are reported together.
pub fn parse_results(text: &[u8], path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(text);
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::format(path, "empty results file"));
    }
    let missing: Vec<&str> = REQUIRED.iter().copied().filter(|c| !headers.iter().any(|h| h == *c)).collect();
    if !missing.is_empty() {
        return Err(Error::format(path, format!("missing columns: {}", missing.join(", "))));
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut rows = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let bad = |field: &str| Error::format(path, format!("row {}: invalid {field}", line + 1));
        let get = |name: &str| col(name).and_then(|i| record.get(i)).unwrap_or("");
        let num = |name: &str| -> Result<Option<f64>> {
            match get(name) {
                "" => Ok(None),
                s => s.parse::<f64>().map(Some).map_err(|_| bad(name)),
            }
        };
        let flag = |name: &str| -> Result<Option<bool>> {
            match get(name) {
                "" => Ok(None),
                s => parse_bool(s).map(Some).ok_or_else(|| bad(name)),
            }
        };
        let setup = parse_setup(get("setup")).ok_or_else(|| bad("setup"))?;
        let method = Method::parse(get("method")).ok_or_else(|| bad("method"))?;
        let hyper = Hyperparams {
            lr_c: num("lr_c")?.ok_or_else(|| bad("lr_c"))?,
            lr_b: num("lr_b")?.ok_or_else(|| bad("lr_b"))?,
            epochs: get("epochs").parse().map_err(|_| bad("epochs"))?,
            beta: num("beta")?.ok_or_else(|| bad("beta"))?,
            balanced: parse_bool(get("balanced")).ok_or_else(|| bad("balanced"))?,
            batch_size: match get("batch") {
                "" => condebias_core::trainer::DEFAULT_BATCH,
                s => s.parse().map_err(|_| bad("batch"))?,
            },
            tap: Tap::parse(get("tap")).ok_or_else(|| bad("tap"))?,
        };
        let fairness = match (flag("dp_pass")?, flag("eo_pass")?) {
            (Some(dp_pass), Some(eo_pass)) => Some(FairnessColumns {
                dp_pass,
                eo_pass,
                dp_p: num("dp_p")?,
                eo_hsic_p: num("eo_hsic_p")?,
                eo_pc_p: num("eo_pc_p")?,
                eo_hsic_pass: flag("eo_hsic_pass")?,
                eo_pc_pass: flag("eo_pc_pass")?,
            }),
            _ => None,
        };
        let test_acc = num("test_acc")?;
        let status = match get("status") {
            "" if test_acc.is_some() => "ok".to_string(),
            "" => "failed: no accuracy recorded".to_string(),
            s => s.to_string(),
        };
        rows.push(ResultRow {
            setup,
            method,
            seed: get("seed").parse().map_err(|_| bad("seed"))?,
            hyper,
            val_acc: num("val_acc")?,
            test_acc,
            fairness,
            status,
        });
    }
    if rows.is_empty() {
        return Err(Error::format(path, "results file has no rows"));
    }
    Ok(rows)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(Error::format(path, "empty results file"));
    }
    parse_results(&bytes, path)
}
