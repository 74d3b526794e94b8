use condebias_core::losses::CriterionKind;
use condebias_core::nn::{Classifier, Tap};
use condebias_core::rng::{stream, streams};
use condebias_core::synth::{generate_dataset, Setup, SplitCounts};
use condebias_core::trainer::{evaluate_split, preset, train, Hyperparams, Method};

/// A random network can separate the shapes by accident, but which class it
/// calls which is a coin flip, so chance level holds on average over seeds.
#[test]
fn untrained_models_sit_at_chance() {
    let data = generate_dataset(Setup::I, SplitCounts { train: 8, val: 8, test: 400 }, 21).unwrap();
    let accs: Vec<f64> = (0..20)
        .map(|seed| {
            let model = Classifier::new(&mut stream(seed, streams::INIT_CLASSIFIER));
            evaluate_split(&model, &data.test, Tap::Softmax).unwrap().accuracy
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.5).abs() <= 0.08, "{accs:?}");
}

#[test]
fn baseline_fits_the_biased_training_split() {
    let data = generate_dataset(Setup::I, SplitCounts::default(), 22).unwrap();
    let hyper = Hyperparams {
        lr_c: 1e-3,
        epochs: 10,
        ..preset(Setup::I, Method::Baseline)
    };
    let out = train(Setup::I, Method::Baseline, &hyper, &data, 22).unwrap();
    let h = &out.result.history;
    assert_eq!(h.len(), 10);
    assert!(h[9].classification_loss < h[0].classification_loss);
    assert!(out.result.train_accuracy > 0.95, "{}", out.result.train_accuracy);
    assert_eq!(data.test.reads(), 1);
    assert_eq!(out.test_eval.labels.len(), 400);
    assert_eq!(out.test_eval.accuracy, out.result.test_accuracy);
}

#[test]
fn runs_repeat_exactly_and_differ_across_seeds() {
    let data = generate_dataset(Setup::II, SplitCounts { train: 96, val: 32, test: 32 }, 23).unwrap();
    let m = Method::Debias(CriterionKind::CondHSIC);
    let hyper = Hyperparams {
        epochs: 2,
        batch_size: 32,
        ..preset(Setup::II, m)
    };
    let a = train(Setup::II, m, &hyper, &data, 1).unwrap();
    let b = train(Setup::II, m, &hyper, &data, 1).unwrap();
    let c = train(Setup::II, m, &hyper, &data, 2).unwrap();
    assert_eq!(a.result, b.result);
    assert_eq!(a.model.classifier, b.model.classifier);
    assert_ne!(a.model.classifier, c.model.classifier);
}

#[test]
fn invalid_hyperparameters_are_rejected_before_training() {
    let data = generate_dataset(Setup::I, SplitCounts { train: 16, val: 8, test: 8 }, 24).unwrap();
    let base = preset(Setup::I, Method::Baseline);
    for bad in [
        Hyperparams { lr_c: 0.0, ..base },
        Hyperparams { epochs: 0, ..base },
        Hyperparams { beta: -1.0, ..base },
        Hyperparams { batch_size: 4, ..base },
    ] {
        assert!(train(Setup::I, Method::Baseline, &bad, &data, 0).is_err());
    }
    assert_eq!(data.test.reads(), 0);
}
