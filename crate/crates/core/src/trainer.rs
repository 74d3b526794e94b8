//! Training loop, evaluation, presets and result aggregation.

use alloc::vec::Vec;

use crate::autodiff::{AdamState, Graph};
use crate::losses::{self, CriterionKind, DebiasCriterion};
use crate::nn::{self, Classifier, Tap};
use crate::rng::{stream, streams};
use crate::synth::{self, LabeledExample, Setup, Split, SplitDataset};
use crate::{Error, Result, Tensor};

pub const DEFAULT_BATCH: usize = 64;

/// Baseline or one of the debiasing criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Baseline,
    Debias(CriterionKind),
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Baseline,
        Method::Debias(CriterionKind::UncondMI),
        Method::Debias(CriterionKind::CondMI),
        Method::Debias(CriterionKind::UncondHSIC),
        Method::Debias(CriterionKind::CondHSIC),
        Method::Debias(CriterionKind::Predictability),
        Method::Debias(CriterionKind::MCCOnly),
        Method::Debias(CriterionKind::PCOnly),
        Method::Debias(CriterionKind::CondMCC),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Debias(k) => k.name(),
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        if s == "baseline" {
            Some(Method::Baseline)
        } else {
            CriterionKind::parse(s).map(Method::Debias)
        }
    }

    pub fn default_tap(self) -> Tap {
        match self {
            Method::Baseline => Tap::Softmax,
            Method::Debias(k) => k.default_tap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub lr_c: f64,
    pub lr_b: f64,
    pub epochs: usize,
    pub beta: f64,
    pub balanced: bool,
    pub batch_size: usize,
    pub tap: Tap,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(alloc::format!("{name} must be positive, got {v}")))
            }
        };
        positive("lr_c", self.lr_c)?;
        if !(self.lr_b >= 0.0 && self.lr_b.is_finite()) {
            return Err(Error::Config(alloc::format!("lr_b must be non-negative, got {}", self.lr_b)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(alloc::format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size < losses::MIN_BATCH {
            return Err(Error::Config(alloc::format!(
                "batch size must be at least {}, got {}",
                losses::MIN_BATCH,
                self.batch_size
            )));
        }
        if self.balanced && self.batch_size % 2 == 1 {
            return Err(Error::Config("balanced batches need an even batch size".into()));
        }
        Ok(())
    }
}

/// Grid-searched settings per setup and method: `(lr_c, epochs, beta,
/// balanced)`, with the adversary learning rate equal to `lr_c`.
pub fn preset(setup: Setup, method: Method) -> Hyperparams {
    use CriterionKind::*;
    let (lr_c, epochs, beta, balanced) = match (setup, method) {
        (Setup::I, Method::Baseline) => (3e-5, 30, 0.0, false),
        (Setup::I, Method::Debias(Predictability)) => (3e-4, 1000, 1.0, false),
        (Setup::I, Method::Debias(CondMI)) => (1e-5, 100, 0.0625, false),
        (Setup::I, Method::Debias(CondMCC)) => (3e-5, 30, 0.0625, false),
        (Setup::I, Method::Debias(CondHSIC)) => (3e-5, 30, 0.0625, true),
        (Setup::I, Method::Debias(UncondHSIC)) => (3e-5, 30, 0.003, true),
        (Setup::I, Method::Debias(UncondMI)) => (1e-5, 100, 0.0625, false),
        (Setup::I, Method::Debias(MCCOnly)) => (3e-4, 1000, 1.0, false),
        (Setup::I, Method::Debias(PCOnly)) => (3e-5, 30, 0.0625, false),
        (Setup::II, Method::Baseline) => (3e-5, 100, 0.0, false),
        (Setup::II, Method::Debias(Predictability)) => (3e-5, 100, 1.0, false),
        (Setup::II, Method::Debias(CondMI)) => (1e-5, 100, 0.05, false),
        (Setup::II, Method::Debias(CondMCC)) => (3e-5, 30, 0.0625, false),
        (Setup::II, Method::Debias(CondHSIC)) => (3e-5, 30, 0.0625, true),
        (Setup::II, Method::Debias(UncondHSIC)) => (3e-5, 30, 0.0625, true),
        (Setup::II, Method::Debias(UncondMI)) => (1e-5, 100, 0.05, false),
        (Setup::II, Method::Debias(MCCOnly)) => (3e-5, 30, 0.0625, false),
        (Setup::II, Method::Debias(PCOnly)) => (3e-5, 30, 0.0625, false),
    };
    Hyperparams {
        lr_c,
        lr_b: lr_c,
        epochs,
        beta,
        balanced,
        batch_size: DEFAULT_BATCH,
        tap: method.default_tap(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub classification_loss: f64,
    /// Mean debiasing term before weighting by `beta` (0 when inactive).
    pub debias_loss: f64,
}

/// Accuracy plus everything the fairness tests need.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// Tapped representation, one row per example.
    pub representation: Tensor,
    /// Class probabilities, one row per example.
    pub softmax: Tensor,
    pub labels: Vec<usize>,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub classifier: Classifier,
    pub criterion: Option<DebiasCriterion>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub method: Method,
    pub setup: Setup,
    pub hyper: Hyperparams,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub history: Vec<EpochStats>,
}

/// Evaluates `model` on a list of examples.
pub fn evaluate(model: &Classifier, examples: &[LabeledExample], tap: Tap) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::TooFewSamples { got: 0, min: 1 });
    }
    let idx: Vec<usize> = (0..examples.len()).collect();
    let images = synth::image_batch(examples, &idx);
    let out = model.predict(&images)?;
    let predictions = out.classes();
    let labels = synth::label_batch(examples, &idx);
    let correct = predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        accuracy: correct as f64 / examples.len() as f64,
        representation: out.tap(tap).clone(),
        softmax: out.softmax.clone(),
        predictions,
        labels,
        bias: synth::bias_batch(examples, &idx),
    })
}

/// Evaluates a split (counted as one read of that split).
pub fn evaluate_split(model: &Classifier, split: &Split, tap: Tap) -> Result<Evaluation> {
    evaluate(model, split.examples(), tap)
}

/// Everything produced by [`train`]; the test evaluation is kept for the
/// fairness tests so the test split is read exactly once.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: TrainedModel,
    pub result: RunResult,
    pub test_eval: Evaluation,
}

/// Trains one seeded run and evaluates it on the validation and test splits.
pub fn train(setup: Setup, method: Method, hyper: &Hyperparams, data: &SplitDataset, seed: u64) -> Result<TrainOutput> {
    hyper.validate()?;
    let mut classifier = Classifier::new(&mut stream(seed, streams::INIT_CLASSIFIER));
    let mut criterion = match method {
        Method::Baseline => None,
        Method::Debias(kind) => Some(DebiasCriterion::new(kind, hyper.beta, hyper.tap, 1, seed)?),
    };
    let debias_active = criterion.is_some() && hyper.beta > 0.0;
    let mut adam = AdamState::new(&classifier.params);
    let mut batch_rng = stream(seed, streams::BATCHES);
    let train = data.train.examples();
    let train_labels: Vec<usize> = train.iter().map(|e| e.label).collect();
    let mut history = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        let batches = synth::make_batches(&train_labels, hyper.batch_size, hyper.balanced, &mut batch_rng)?;
        let (mut ce_sum, mut db_sum) = (0.0, 0.0);
        for (b_idx, idx) in batches.iter().enumerate() {
            let labels = synth::label_batch(train, idx);
            let mut g = Graph::new();
            let params = nn::register(&mut g, &classifier.params, true);
            let images = g.constant(synth::image_batch(train, idx));
            let out = Classifier::forward(&mut g, &params, images)?;
            let ce = g.softmax_cross_entropy(out.logits, &labels)?;
            let ce_value = g.value(ce).data()[0];
            let (loss, db_value) = match criterion.as_mut() {
                Some(c) if debias_active => {
                    let r = out.tap(hyper.tap);
                    let bias = synth::bias_batch(train, idx);
                    if c.kind.is_adversarial() {
                        let r_value = g.value(r).clone();
                        losses::adversary_step(c, &r_value, &bias, &labels, hyper.lr_b)?;
                    }
                    let b = g.constant(bias);
                    let db = losses::debias_loss(&mut g, c, r, b, &labels)?;
                    let db_value = g.value(db).data()[0];
                    let weighted = g.scale(db, hyper.beta);
                    (g.add(ce, weighted)?, db_value)
                }
                _ => (ce, 0.0),
            };
            if !g.value(loss).data()[0].is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b_idx,
                    classification: ce_value,
                    debias: db_value,
                });
            }
            let grads = g.backward(loss)?;
            let gp: Vec<Tensor> = params.iter().map(|&p| grads.wrt(p)).collect();
            adam.step(&mut classifier.params, &gp, hyper.lr_c)?;
            ce_sum += ce_value;
            db_sum += db_value;
        }
        let n = batches.len().max(1) as f64;
        history.push(EpochStats {
            epoch,
            classification_loss: ce_sum / n,
            debias_loss: db_sum / n,
        });
    }

    let train_eval = evaluate(&classifier, train, hyper.tap)?;
    let val_eval = evaluate_split(&classifier, &data.val, hyper.tap)?;
    let test_eval = evaluate_split(&classifier, &data.test, hyper.tap)?;
    Ok(TrainOutput {
        result: RunResult {
            seed,
            method,
            setup,
            hyper: *hyper,
            train_accuracy: train_eval.accuracy,
            val_accuracy: val_eval.accuracy,
            test_accuracy: test_eval.accuracy,
            history,
        },
        model: TrainedModel { classifier, criterion },
        test_eval,
    })
}

/// Mean and standard error (sample standard deviation over `√n`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, libm::sqrt(var / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SplitCounts};

    fn small() -> SplitDataset {
        generate_dataset(Setup::I, SplitCounts { train: 64, val: 32, test: 32 }, 5).unwrap()
    }

    fn quick(method: Method, beta: f64) -> Hyperparams {
        Hyperparams {
            beta,
            epochs: 2,
            batch_size: 16,
            ..preset(Setup::I, method)
        }
    }

    #[test]
    fn presets_cover_every_method() {
        for setup in [Setup::I, Setup::II] {
            for m in Method::ALL {
                let h = preset(setup, m);
                h.validate().unwrap();
                assert_eq!(h.lr_b, h.lr_c);
                assert_eq!(Method::parse(m.name()), Some(m));
            }
        }
        assert_eq!(preset(Setup::I, Method::Debias(CriterionKind::UncondHSIC)).beta, 0.003);
        assert_eq!(preset(Setup::II, Method::Baseline).epochs, 100);
        assert_eq!(preset(Setup::I, Method::Debias(CriterionKind::Predictability)).tap, Tap::ConvFeatures);
    }

    #[test]
    fn zero_beta_is_bitwise_baseline() {
        let data = small();
        let base = train(Setup::I, Method::Baseline, &quick(Method::Baseline, 0.0), &data, 9).unwrap();
        // Same hyperparameters for every kind; only the criterion differs.
        let h = quick(Method::Baseline, 0.0);
        for kind in CriterionKind::ALL {
            let m = Method::Debias(kind);
            let run = train(Setup::I, m, &h, &data, 9).unwrap();
            assert_eq!(run.model.classifier, base.model.classifier, "{kind:?}");
            assert_eq!(run.result.test_accuracy, base.result.test_accuracy);
        }
    }

    #[test]
    fn every_kind_trains_and_reads_test_once() {
        for kind in CriterionKind::ALL {
            let data = small();
            let m = Method::Debias(kind);
            let run = train(Setup::I, m, &quick(m, 0.5), &data, 3).unwrap();
            assert_eq!(data.test.reads(), 1);
            assert_eq!(run.result.history.len(), 2);
            assert!(run.result.history.iter().all(|e| e.debias_loss.is_finite()));
            assert!((0.0..=1.0).contains(&run.result.test_accuracy));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = small();
        let m = Method::Debias(CriterionKind::CondMCC);
        let a = train(Setup::I, m, &quick(m, 0.5), &data, 4).unwrap();
        let b = train(Setup::I, m, &quick(m, 0.5), &data, 4).unwrap();
        assert_eq!(a.result, b.result);
        assert_eq!(a.model.classifier, b.model.classifier);
    }

    #[test]
    fn evaluation_examples() {
        let data = small();
        let c = Classifier::new(&mut crate::rng::seeded(1));
        let ex = data.val.examples();
        let e1 = evaluate(&c, ex, Tap::Softmax).unwrap();
        let e2 = evaluate(&c, ex, Tap::Softmax).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.representation.shape(), &[32, 2]);
        assert!(evaluate(&c, &[], Tap::Softmax).is_err());
    }

    #[test]
    fn aggregation_matches_hand_computation() {
        // mean 0.8; deviations -0.1, 0, 0.1, -0.05, 0.05 -> SS 0.025
        let (m, se) = mean_stderr(&[0.7, 0.8, 0.9, 0.75, 0.85]);
        assert!((m - 0.8).abs() < 1e-15);
        let expected = libm::sqrt(0.025 / 4.0 / 5.0);
        assert!((se - expected).abs() < 1e-15);
        assert_eq!(mean_stderr(&[0.5, 0.5]), (0.5, 0.0));
        assert!(mean_stderr(&[0.5]).1.is_nan());
    }

    #[test]
    fn invalid_hyperparams_rejected() {
        let mut h = preset(Setup::I, Method::Baseline);
        h.batch_size = 7;
        assert!(h.validate().is_err());
        h.batch_size = 9;
        h.balanced = true;
        assert!(h.validate().is_err());
        let mut h = preset(Setup::I, Method::Baseline);
        h.lr_c = 0.0;
        assert!(h.validate().is_err());
    }
}
