use condebias::config::{Overrides, RunConfig};
use condebias::experiment::{rank_cells, Grid, GridCell};
use condebias::Error;
use condebias_core::losses::CriterionKind;
use condebias_core::nn::Tap;
use condebias_core::synth::Setup;
use condebias_core::trainer::{preset, Method};

#[test]
fn flags_override_file_which_overrides_presets() {
    let file = Overrides::parse("# comment\nsetup = 2\nmethod = cond_mcc\nbeta = 0.5\nlr_c = 1e-4  # trailing\nepochs = 3\n").unwrap();
    let mut flags = Overrides::default();
    flags.set("beta", "0.25").unwrap();
    let cfg = RunConfig::resolve(&file.layer(&flags)).unwrap();
    let base = preset(Setup::II, Method::Debias(CriterionKind::CondMCC));
    assert_eq!(cfg.setup, Setup::II);
    assert_eq!(cfg.hyper.beta, 0.25);
    assert_eq!(cfg.hyper.lr_c, 1e-4);
    assert_eq!(cfg.hyper.lr_b, 1e-4);
    assert_eq!(cfg.hyper.epochs, 3);
    assert_eq!(cfg.hyper.balanced, base.balanced);
    assert_eq!(cfg.hyper.tap, base.tap);
}

#[test]
fn explicit_lr_b_beats_lr_c() {
    let o = Overrides::parse("lr_c = 0.01\nlr_b = 0.02\n").unwrap();
    let cfg = RunConfig::resolve(&o).unwrap();
    assert_eq!((cfg.hyper.lr_c, cfg.hyper.lr_b), (0.01, 0.02));
}

#[test]
fn defaults_resolve_to_setup_one_baseline() {
    let cfg = RunConfig::resolve(&Overrides::default()).unwrap();
    assert_eq!(cfg.setup, Setup::I);
    assert_eq!(cfg.method, Method::Baseline);
    assert_eq!(cfg.hyper, preset(Setup::I, Method::Baseline));
    assert_eq!((cfg.seeds, cfg.permutations, cfg.alpha), (1, 500, 0.01));
    assert_eq!((cfg.counts.train, cfg.counts.val, cfg.counts.test), (600, 400, 400));
    assert_eq!(cfg.run_seed(3), 3);
}

#[test]
fn unknown_keys_and_bad_values_are_usage_errors() {
    for text in ["colour = red\n", "beta = lots\n", "no equals sign\n", "setup = 3\n", "tap = pixels\n"] {
        let e = Overrides::parse(text).unwrap_err();
        assert!(matches!(e, Error::Usage(_)), "{text}: {e:?}");
        assert_eq!(e.exit_code(), 2);
    }
    let e = Overrides::parse("x = 1\n").unwrap_err().to_string();
    assert!(e.contains("line 1") && e.contains("\"x\""), "{e}");
    for text in ["epochs = 0\n", "alpha = 1.5\n", "permutations = 0\n", "saturation = 2\n", "seeds = 0\n"] {
        assert!(matches!(RunConfig::resolve(&Overrides::parse(text).unwrap()), Err(Error::Usage(_))), "{text}");
    }
}

#[test]
fn echo_resolves_to_the_same_config() {
    let o = Overrides::parse("setup = 2\nmethod = cond_hsic\nseeds = 4\nseed = 9\ntap = logits\nbalanced = false\nn_train = 100\n").unwrap();
    let cfg = RunConfig::resolve(&o).unwrap();
    assert_eq!(cfg.hyper.tap, Tap::Logits);
    let again = RunConfig::resolve(&Overrides::parse(&cfg.echo()).unwrap()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn grid_cells_cover_the_product() {
    let base = preset(Setup::I, Method::Debias(CriterionKind::CondHSIC));
    assert_eq!(Grid::default().cells(&base), vec![base]);
    let mut g = Grid::default();
    g.add("lr_c=1e-4,1e-3").unwrap();
    g.add("beta = 0.1, 0.2, 0.3").unwrap();
    g.add("balanced=true,false").unwrap();
    let cells = g.cells(&base);
    assert_eq!(cells.len(), 12);
    assert!(cells.iter().all(|h| h.lr_b == h.lr_c && h.epochs == base.epochs));
    assert!(matches!(g.add("depth=3"), Err(Error::Usage(_))));
    assert!(matches!(g.add("beta=x"), Err(Error::Usage(_))));
    assert!(matches!(g.add("beta"), Err(Error::Usage(_))));
}

#[test]
fn ranking_prefers_validation_then_smaller_beta_then_smaller_lr() {
    let base = preset(Setup::I, Method::Baseline);
    let cell = |lr_c: f64, beta: f64, val: f64| GridCell {
        hyper: condebias_core::trainer::Hyperparams { lr_c, beta, ..base },
        runs: if val.is_nan() { 0 } else { 2 },
        failed: 0,
        val_mean: val,
        val_stderr: 0.0,
        test_mean: val,
    };
    let mut cells = vec![
        cell(1e-3, 0.1, f64::NAN),
        cell(1e-3, 0.2, 0.8),
        cell(1e-4, 0.2, 0.8),
        cell(1e-3, 0.1, 0.8),
        cell(1e-5, 0.0, 0.7),
        cell(1e-5, 0.0, 0.9),
    ];
    rank_cells(&mut cells);
    let order: Vec<(f64, f64, f64)> = cells.iter().map(|c| (c.val_mean, c.hyper.beta, c.hyper.lr_c)).collect();
    assert_eq!(&order[..5], &[(0.9, 0.0, 1e-5), (0.8, 0.1, 1e-3), (0.8, 0.2, 1e-4), (0.8, 0.2, 1e-3), (0.7, 0.0, 1e-5)]);
    assert!(order[5].0.is_nan());
}
