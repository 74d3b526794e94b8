//! Monte-Carlo check of the optimal-classifier result on random linear bias
//! models: `Cov(F*(I), B)` against its closed form, and the partial
//! correlation of `F*(I)` and `B` given `L`.

use std::fmt::Write;

use condebias_core::bias_model::{verify_theorem, LinearBiasModel, TheoremReport};
use condebias_core::rng::{derive_seed, seeded};

use crate::error::{Error, Result};
use crate::results::fmt_f64;

/// Input dimension of the random models.
pub const INPUT_DIM: usize = 4;
pub const MIN_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremRow {
    pub trial: usize,
    pub model: LinearBiasModel,
    pub report: TheoremReport,
}

impl TheoremRow {
    /// `|cov_fb − expected_cov|` in standard errors.
    pub fn cov_z(&self) -> f64 {
        let r = &self.report;
        (r.cov_fb - r.expected_cov).abs() / r.cov_stderr
    }
}

/// Draws `trials` random models and verifies each on `n` samples.
/// `alpha1`, when given, replaces every model's bias strength.
pub fn theorem_sweep(n: usize, trials: usize, seed: u64, alpha1: Option<f64>) -> Result<Vec<TheoremRow>> {
    if n < MIN_SAMPLES {
        return Err(Error::Usage(format!("n must be at least {MIN_SAMPLES}, got {n}")));
    }
    if trials == 0 {
        return Err(Error::Usage("trials must be positive".into()));
    }
    (0..trials)
        .map(|trial| {
            let mut rng = seeded(derive_seed(seed, 2 * trial as u64));
            let mut model = LinearBiasModel::random(INPUT_DIM, &mut rng)?;
            if let Some(a) = alpha1 {
                model.alpha1 = a;
            }
            let report = verify_theorem(&model, n, derive_seed(seed, 2 * trial as u64 + 1))?;
            Ok(TheoremRow { trial, model, report })
        })
        .collect()
}

pub const COLUMNS: [&str; 12] = [
    "trial",
    "alpha1",
    "alpha2",
    "zeta1",
    "signal_var",
    "n",
    "cov_fb",
    "expected_cov",
    "cov_stderr",
    "cov_z",
    "pc_fb_given_l",
    "pc_degenerate",
];

pub fn to_csv(rows: &[TheoremRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for r in rows {
        let m = &r.model;
        let t = &r.report;
        w.write_record([
            r.trial.to_string(),
            fmt_f64(m.alpha1),
            fmt_f64(m.alpha2),
            fmt_f64(m.zeta1),
            fmt_f64(m.signal_var),
            t.n.to_string(),
            fmt_f64(t.cov_fb),
            fmt_f64(t.expected_cov),
            fmt_f64(t.cov_stderr),
            fmt_f64(r.cov_z()),
            fmt_f64(t.pc_fb_given_l),
            t.pc_degenerate.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// One-paragraph summary: worst covariance deviation and worst partial
/// correlation.
pub fn summary(rows: &[TheoremRow]) -> String {
    let max_z = rows.iter().map(TheoremRow::cov_z).fold(0.0, f64::max);
    let max_pc = rows.iter().map(|r| r.report.pc_fb_given_l.abs()).fold(0.0, f64::max);
    let mut s = String::new();
    let _ = writeln!(s, "trials: {}", rows.len());
    let _ = writeln!(s, "max |cov error| / stderr: {max_z:.3}");
    let _ = writeln!(s, "max |pc(F*, B | L)|: {max_pc:.5}");
    s
}
