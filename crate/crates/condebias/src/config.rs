//! Run configuration from `key = value` files and command-line flags.
//!
//! Resolution order, later wins: built-in defaults and the method preset,
//! then the config file, then flags. Unknown keys are errors.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use condebias_core::fairness::{DEFAULT_ALPHA, DEFAULT_PERMUTATIONS};
use condebias_core::nn::Tap;
use condebias_core::synth::{RenderParams, Setup, SplitCounts};
use condebias_core::trainer::{preset, Hyperparams, Method};

use crate::error::{Error, Result};

pub const KEYS: [&str; 19] = [
    "setup",
    "method",
    "seeds",
    "seed",
    "beta",
    "lr_c",
    "lr_b",
    "epochs",
    "batch",
    "balanced",
    "tap",
    "out",
    "data",
    "permutations",
    "alpha",
    "saturation",
    "n_train",
    "n_val",
    "n_test",
];

/// Partially specified settings from one source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub setup: Option<Setup>,
    pub method: Option<Method>,
    pub seeds: Option<usize>,
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub lr_c: Option<f64>,
    pub lr_b: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub balanced: Option<bool>,
    pub tap: Option<Tap>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub permutations: Option<usize>,
    pub alpha: Option<f64>,
    pub saturation: Option<f64>,
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub n_test: Option<usize>,
}

pub fn parse_setup(s: &str) -> Result<Setup> {
    match s.trim() {
        "1" | "I" | "setup1" => Ok(Setup::I),
        "2" | "II" | "setup2" => Ok(Setup::II),
        other => Err(Error::Usage(format!("invalid setup {other:?}, expected 1 or 2"))),
    }
}

pub fn parse_method(s: &str) -> Result<Method> {
    Method::parse(s.trim()).ok_or_else(|| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        Error::Usage(format!("unknown method {s:?}, expected one of {}", names.join(", ")))
    })
}

pub fn parse_tap(s: &str) -> Result<Tap> {
    Tap::parse(s.trim())
        .ok_or_else(|| Error::Usage(format!("unknown tap {s:?}, expected conv_features, logits or softmax")))
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Usage(format!("invalid value {value:?} for {key}")))
}

impl Overrides {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "setup" => self.setup = Some(parse_setup(v)?),
            "method" => self.method = Some(parse_method(v)?),
            "seeds" => self.seeds = Some(parse_value(key, v)?),
            "seed" => self.seed = Some(parse_value(key, v)?),
            "beta" => self.beta = Some(parse_value(key, v)?),
            "lr_c" => self.lr_c = Some(parse_value(key, v)?),
            "lr_b" => self.lr_b = Some(parse_value(key, v)?),
            "epochs" => self.epochs = Some(parse_value(key, v)?),
            "batch" => self.batch = Some(parse_value(key, v)?),
            "balanced" => self.balanced = Some(parse_value(key, v)?),
            "tap" => self.tap = Some(parse_tap(v)?),
            "out" => self.out = Some(PathBuf::from(v)),
            "data" => self.data = Some(PathBuf::from(v)),
            "permutations" => self.permutations = Some(parse_value(key, v)?),
            "alpha" => self.alpha = Some(parse_value(key, v)?),
            "saturation" => self.saturation = Some(parse_value(key, v)?),
            "n_train" => self.n_train = Some(parse_value(key, v)?),
            "n_val" => self.n_val = Some(parse_value(key, v)?),
            "n_test" => self.n_test = Some(parse_value(key, v)?),
            other => return Err(Error::Usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut o = Overrides::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("config line {}: expected key = value", n + 1)))?;
            o.set(k, v).map_err(|e| Error::Usage(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(o)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Fields set in `other` replace those in `self`.
    pub fn layer(mut self, other: &Overrides) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            setup, method, seeds, seed, beta, lr_c, lr_b, epochs, batch, balanced, tap, out, data, permutations, alpha,
            saturation, n_train, n_val, n_test
        );
        self
    }
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub setup: Setup,
    pub method: Method,
    pub seeds: usize,
    pub master_seed: u64,
    pub hyper: Hyperparams,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub permutations: usize,
    pub alpha: f64,
    pub render: RenderParams,
    pub counts: SplitCounts,
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let setup = o.setup.unwrap_or(Setup::I);
        let method = o.method.unwrap_or(Method::Baseline);
        let mut hyper = preset(setup, method);
        if let Some(v) = o.lr_c {
            hyper.lr_c = v;
            hyper.lr_b = v;
        }
        if let Some(v) = o.lr_b {
            hyper.lr_b = v;
        }
        if let Some(v) = o.beta {
            hyper.beta = v;
        }
        if let Some(v) = o.epochs {
            hyper.epochs = v;
        }
        if let Some(v) = o.batch {
            hyper.batch_size = v;
        }
        if let Some(v) = o.balanced {
            hyper.balanced = v;
        }
        if let Some(v) = o.tap {
            hyper.tap = v;
        }
        hyper.validate().map_err(|e| Error::Usage(e.to_string()))?;
        let defaults = SplitCounts::default();
        let counts = SplitCounts {
            train: o.n_train.unwrap_or(defaults.train),
            val: o.n_val.unwrap_or(defaults.val),
            test: o.n_test.unwrap_or(defaults.test),
        };
        let render = RenderParams {
            saturation: o.saturation.unwrap_or(RenderParams::default().saturation),
            ..RenderParams::default()
        };
        if !(0.0..=1.0).contains(&render.saturation) {
            return Err(Error::Usage(format!("saturation must lie in [0, 1], got {}", render.saturation)));
        }
        let alpha = o.alpha.unwrap_or(DEFAULT_ALPHA);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Usage(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let permutations = o.permutations.unwrap_or(DEFAULT_PERMUTATIONS);
        if permutations == 0 {
            return Err(Error::Usage("permutations must be positive".into()));
        }
        let seeds = o.seeds.unwrap_or(1);
        if seeds == 0 {
            return Err(Error::Usage("seeds must be positive".into()));
        }
        Ok(RunConfig {
            setup,
            method,
            seeds,
            master_seed: o.seed.unwrap_or(0),
            hyper,
            out: o.out.clone().unwrap_or_else(|| PathBuf::from("runs")),
            data: o.data.clone(),
            permutations,
            alpha,
            render,
            counts,
        })
    }

    /// Seed of the `i`-th run.
    pub fn run_seed(&self, i: usize) -> u64 {
        self.master_seed.wrapping_add(i as u64)
    }

    /// The resolved settings as a config file that resolves to the same run.
    pub fn echo(&self) -> String {
        let h = &self.hyper;
        let mut s = String::new();
        let _ = writeln!(s, "setup = {}", self.setup.tag());
        let _ = writeln!(s, "method = {}", self.method.name());
        let _ = writeln!(s, "seeds = {}", self.seeds);
        let _ = writeln!(s, "seed = {}", self.master_seed);
        let _ = writeln!(s, "lr_c = {}", h.lr_c);
        let _ = writeln!(s, "lr_b = {}", h.lr_b);
        let _ = writeln!(s, "beta = {}", h.beta);
        let _ = writeln!(s, "epochs = {}", h.epochs);
        let _ = writeln!(s, "batch = {}", h.batch_size);
        let _ = writeln!(s, "balanced = {}", h.balanced);
        let _ = writeln!(s, "tap = {}", h.tap.name());
        let _ = writeln!(s, "out = {}", self.out.display());
        if let Some(d) = &self.data {
            let _ = writeln!(s, "data = {}", d.display());
        }
        let _ = writeln!(s, "permutations = {}", self.permutations);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "saturation = {}", self.render.saturation);
        let _ = writeln!(s, "n_train = {}", self.counts.train);
        let _ = writeln!(s, "n_val = {}", self.counts.val);
        let _ = writeln!(s, "n_test = {}", self.counts.test);
        s
    }
}
