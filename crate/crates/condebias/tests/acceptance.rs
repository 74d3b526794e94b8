//! Acceptance suite. Every test prints one `PASS`/`FAIL` line for its
//! criterion on stderr (bypassing the test harness capture) and then asserts.
//!
//! The training criteria share two 20-seed experiments, one per setup, built
//! once on first use.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use condebias::config::{Overrides, RunConfig};
use condebias::experiment::{presets_for, run_experiment};
use condebias::results::ResultRow;
use condebias::theorem::theorem_sweep;
use condebias_core::autodiff::Graph;
use condebias_core::fairness::{cond_hsic_perm_test, hsic_perm_test, DEFAULT_PERMUTATIONS};
use condebias_core::kernel;
use condebias_core::losses::{debias_loss, label_column, CriterionKind, DebiasCriterion};
use condebias_core::nn::{self, Classifier, Tap};
use condebias_core::rng::{normal, seeded, stream};
use condebias_core::synth::{self, generate_dataset, Setup, SplitCounts};
use condebias_core::trainer::{mean_stderr, Method};
use condebias_core::Tensor;
use rand::Rng;

const SEEDS: usize = 20;

fn report(id: u32, title: &str, pass: bool, detail: &str) {
    let mark = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[{mark}] criterion {id}: {title}: {detail}");
}

fn experiment(setup: Setup, methods: &[Method]) -> Vec<ResultRow> {
    let mut o = Overrides::default();
    o.setup = Some(setup);
    o.seeds = Some(SEEDS);
    o.seed = Some(0);
    let cfg = RunConfig::resolve(&o).expect("default config resolves");
    let start = Instant::now();
    let rows = run_experiment(&cfg, &presets_for(setup, methods), None, false, |_| {}).expect("experiment runs");
    let _ = writeln!(
        std::io::stderr(),
        "  ({} {} runs in {:.0} s)",
        setup.name(),
        rows.len(),
        start.elapsed().as_secs_f64()
    );
    rows
}

fn setup_one() -> &'static [ResultRow] {
    static ROWS: OnceLock<Vec<ResultRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        use CriterionKind::*;
        let methods = [Method::Baseline, Method::Debias(UncondMI), Method::Debias(CondMI), Method::Debias(UncondHSIC), Method::Debias(CondHSIC), Method::Debias(CondMCC)];
        experiment(Setup::I, &methods)
    })
}

fn setup_two() -> &'static [ResultRow] {
    static ROWS: OnceLock<Vec<ResultRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        use CriterionKind::*;
        let methods = [Method::Baseline, Method::Debias(CondMI), Method::Debias(CondHSIC), Method::Debias(CondMCC)];
        experiment(Setup::II, &methods)
    })
}

/// Mean test accuracy of a method; failed runs count as errors.
fn mean_acc(rows: &[ResultRow], method: Method) -> f64 {
    let acc: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method)
        .map(|r| r.test_acc.unwrap_or_else(|| panic!("{} seed {} {}", method.name(), r.seed, r.status)))
        .collect();
    assert_eq!(acc.len(), SEEDS, "{} runs", method.name());
    mean_stderr(&acc).0
}

fn kind(k: CriterionKind) -> Method {
    Method::Debias(k)
}

#[test]
fn criterion_1_theorem_reproduction() {
    let start = Instant::now();
    let rows = theorem_sweep(100_000, 50, 2024, None).unwrap();
    let max_z = rows.iter().map(|r| r.cov_z()).fold(0.0, f64::max);
    let max_pc = rows.iter().map(|r| r.report.pc_fb_given_l.abs()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let pass = rows.len() == 50 && max_z <= 5.0 && max_pc <= 0.02 && secs <= 60.0;
    report(
        1,
        "optimal classifier covariance and conditional independence",
        pass,
        &format!("max |cov − closed form| = {max_z:.2} stderr (≤ 5), max |pc| = {max_pc:.2e} (≤ 0.02), {secs:.1} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_conditional_beats_unconditional() {
    use CriterionKind::*;
    let rows = setup_one();
    let (ch, uh) = (mean_acc(rows, kind(CondHSIC)), mean_acc(rows, kind(UncondHSIC)));
    let (cm, um) = (mean_acc(rows, kind(CondMI)), mean_acc(rows, kind(UncondMI)));
    let pass = ch >= uh + 0.05 && cm >= um + 0.15;
    report(
        2,
        "conditional vs unconditional, setup I",
        pass,
        &format!("cond_hsic {ch:.3} vs uncond_hsic {uh:.3} (need +0.05); cond_mi {cm:.3} vs uncond_mi {um:.3} (need +0.15)"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_conditional_beats_baseline_setup_one() {
    use CriterionKind::*;
    let rows = setup_one();
    let base = mean_acc(rows, Method::Baseline);
    let targets = [(CondMI, 0.840), (CondHSIC, 0.846), (CondMCC, 0.854)];
    let mut pass = true;
    let mut detail = format!("baseline {base:.3}");
    for (k, target) in targets {
        let m = mean_acc(rows, kind(k));
        let ok = m >= base && (m - target).abs() <= 0.05;
        pass &= ok;
        detail.push_str(&format!("; {} {m:.3} (≥ baseline, within 0.05 of {target})", k.name()));
    }
    report(3, "conditional methods vs baseline, setup I", pass, &detail);
    assert!(pass);
}

#[test]
fn criterion_4_setup_two() {
    use CriterionKind::*;
    let rows = setup_two();
    let base = mean_acc(rows, Method::Baseline);
    let cm = mean_acc(rows, kind(CondMI));
    let mut pass = (cm - 0.871).abs() <= 0.05;
    let mut detail = format!("baseline {base:.3}; cond_mi {cm:.3} (within 0.05 of 0.871)");
    for k in [CondMI, CondHSIC, CondMCC] {
        let m = mean_acc(rows, kind(k));
        pass &= m > base;
        detail.push_str(&format!("; {} {m:.3} > baseline", k.name()));
    }
    report(4, "setup II replication", pass, &detail);
    assert!(pass);
}

/// Independent HSIC: explicit `H`, explicit `K` and `L`, quadruple sum.
fn naive_hsic(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let m = x.len();
    let bw = |v: &[Vec<f64>]| {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                total += v[i].iter().zip(&v[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                pairs += 1.0;
            }
        }
        total / pairs / 4.0
    };
    let gram = |v: &[Vec<f64>], s: f64| -> Vec<Vec<f64>> {
        (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| (-v[i].iter().zip(&v[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * s)).exp())
                    .collect()
            })
            .collect()
    };
    let k = gram(x, bw(x));
    let l = gram(y, bw(y));
    let h = |i: usize, j: usize| f64::from(u8::from(i == j)) - 1.0 / m as f64;
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            for a in 0..m {
                for b in 0..m {
                    total += k[i][j] * h(j, a) * l[a][b] * h(b, i);
                }
            }
        }
    }
    total / ((m - 1) * (m - 1)) as f64
}

#[test]
fn criterion_5_hsic_trace_matches_double_sum() {
    let mut rng = seeded(55);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(4..=12);
        let (dx, dy) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let x: Vec<Vec<f64>> = (0..m).map(|_| (0..dx).map(|_| normal(&mut rng)).collect()).collect();
        let y: Vec<Vec<f64>> = (0..m).map(|_| (0..dy).map(|_| normal(&mut rng)).collect()).collect();
        let tx = Tensor::from_rows(&x).unwrap();
        let ty = Tensor::from_rows(&y).unwrap();
        let fast = kernel::hsic(&tx, &ty).unwrap();
        worst = worst.max((fast - naive_hsic(&x, &y)).abs());
    }
    let pass = worst <= 1e-12;
    report(5, "HSIC trace formula vs naive sum", pass, &format!("max abs difference {worst:.2e} over 100 instances (≤ 1e-12)"));
    assert!(pass);
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// 25 random (tensor, flat index) pairs over `params`.
fn random_coordinates(params: &[Tensor], rng: &mut impl Rng) -> Vec<(usize, usize)> {
    (0..25)
        .map(|_| {
            let t = rng.random_range(0..params.len());
            (t, rng.random_range(0..params[t].len()))
        })
        .collect()
}

/// Worst relative error between `grad` and central differences of `loss`.
fn check_gradients(
    params: &[Tensor],
    coords: &[(usize, usize)],
    grad: &[Tensor],
    mut loss: impl FnMut(&[Tensor]) -> f64,
) -> f64 {
    let h = 1e-6;
    coords
        .iter()
        .map(|&(t, i)| {
            let mut plus = params.to_vec();
            plus[t].data_mut()[i] += h;
            let mut minus = params.to_vec();
            minus[t].data_mut()[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            rel_err(grad[t].data()[i], fd)
        })
        .fold(0.0, f64::max)
}

struct GradientBatch {
    images: Tensor,
    labels: Vec<usize>,
    bias: Tensor,
}

fn gradient_batch() -> GradientBatch {
    let data = generate_dataset(Setup::I, SplitCounts { train: 16, val: 4, test: 4 }, 5).unwrap();
    let train = data.train.examples();
    let idx: Vec<usize> = (0..16).collect();
    GradientBatch {
        images: synth::image_batch(train, &idx),
        labels: synth::label_batch(train, &idx),
        bias: synth::bias_batch(train, &idx),
    }
}

/// Value and parameter gradients of `build(graph, params, batch)`.
fn eval<F>(params: &[Tensor], batch: &GradientBatch, build: &F) -> (f64, Vec<Tensor>)
where
    F: Fn(&mut Graph, &[condebias_core::autodiff::Var], &GradientBatch) -> condebias_core::autodiff::Var,
{
    let mut g = Graph::new();
    let vars = nn::register(&mut g, params, true);
    let loss = build(&mut g, &vars, batch);
    let value = g.value(loss).data()[0];
    let grads = g.backward(loss).unwrap();
    (value, vars.iter().map(|&v| grads.wrt(v)).collect())
}

#[test]
fn criterion_6_gradients_match_finite_differences() {
    let batch = gradient_batch();
    let mut rng = seeded(66);
    let classifier = Classifier::new(&mut stream(6, 1));
    let params = classifier.params.clone();

    // Full CNN classification loss.
    let ce = |g: &mut Graph, p: &[condebias_core::autodiff::Var], b: &GradientBatch| {
        let x = g.constant(b.images.clone());
        let out = Classifier::forward(g, p, x).unwrap();
        g.softmax_cross_entropy(out.logits, &b.labels).unwrap()
    };
    let coords = random_coordinates(&params, &mut rng);
    let (_, grad) = eval(&params, &batch, &ce);
    let cnn_err = check_gradients(&params, &coords, &grad, |p| eval(p, &batch, &ce).0);

    // Conditional HSIC loss on the softmax output; bandwidths are fixed at
    // their values for the unperturbed parameters, as in training.
    let softmax = classifier.predict(&batch.images).unwrap().softmax;
    let lcol = label_column(&batch.labels);
    let (sr, sb, sl) = (
        kernel::bandwidth_heuristic(&softmax).unwrap(),
        kernel::bandwidth_heuristic(&batch.bias).unwrap(),
        kernel::bandwidth_heuristic(&lcol).unwrap(),
    );
    let chsic = move |g: &mut Graph, p: &[condebias_core::autodiff::Var], b: &GradientBatch| {
        let x = g.constant(b.images.clone());
        let out = Classifier::forward(g, p, x).unwrap();
        let bias = g.constant(b.bias.clone());
        let l = g.constant(label_column(&b.labels));
        kernel::cond_hsic_var(g, out.softmax, bias, l, sr, sb, Some(sl)).unwrap()
    };
    let coords = random_coordinates(&params, &mut rng);
    let (_, grad) = eval(&params, &batch, &chsic);
    let hsic_err = check_gradients(&params, &coords, &grad, |p| eval(p, &batch, &chsic).0);

    // Derivative through the solve with respect to the conditioning matrix.
    let l_cont = Tensor::column((0..16).map(|_| normal(&mut rng)).collect());
    let r0 = Tensor::new(vec![16, 2], (0..32).map(|_| normal(&mut rng)).collect()).unwrap();
    let sl_cont = kernel::bandwidth_heuristic(&l_cont).unwrap();
    let sr0 = kernel::bandwidth_heuristic(&r0).unwrap();
    let solve_loss = |l: &Tensor| -> (f64, Tensor) {
        let mut g = Graph::new();
        let lv = g.param(l.clone());
        let rv = g.constant(r0.clone());
        let bv = g.constant(batch.bias.clone());
        let v = kernel::cond_hsic_var(&mut g, rv, bv, lv, sr0, sb, Some(sl_cont)).unwrap();
        let val = g.value(v).data()[0];
        (val, g.backward(v).unwrap().wrt(lv))
    };
    let (_, gl) = solve_loss(&l_cont);
    let solve_coords: Vec<(usize, usize)> = (0..16).map(|i| (0, i)).collect();
    let solve_err = check_gradients(std::slice::from_ref(&l_cont), &solve_coords, &[gl], |p| solve_loss(&p[0]).0);

    // Conditional maximum-correlation loss through both adversaries.
    let criterion = DebiasCriterion::new(CriterionKind::CondMCC, 1.0, Tap::Softmax, 1, 7).unwrap();
    let mcc = move |g: &mut Graph, p: &[condebias_core::autodiff::Var], b: &GradientBatch| {
        let x = g.constant(b.images.clone());
        let out = Classifier::forward(g, p, x).unwrap();
        let bias = g.constant(b.bias.clone());
        debias_loss(g, &criterion, out.softmax, bias, &b.labels).unwrap()
    };
    let coords = random_coordinates(&params, &mut rng);
    let (_, grad) = eval(&params, &batch, &mcc);
    let mcc_err = check_gradients(&params, &coords, &grad, |p| eval(p, &batch, &mcc).0);

    let pass = cnn_err <= 1e-4 && hsic_err <= 1e-4 && solve_err <= 1e-4 && mcc_err <= 1e-4;
    report(
        6,
        "autodiff vs central differences",
        pass,
        &format!(
            "max rel err: CNN loss {cnn_err:.1e}, conditional HSIC {hsic_err:.1e} (through solve {solve_err:.1e}), conditional MCC {mcc_err:.1e} (≤ 1e-4)"
        ),
    );
    assert!(pass);
}

fn shifted_gaussian(rng: &mut impl Rng, m: usize, shift: &[f64]) -> Tensor {
    Tensor::column((0..m).map(|i| shift.get(i).copied().unwrap_or(0.0) + normal(rng)).collect())
}

#[test]
fn criterion_7_permutation_tests_are_calibrated() {
    const TRIALS: usize = 2000;
    const M: usize = 100;
    let alpha = 0.01;
    let mut rng = seeded(77);
    let mut rejects_hsic = 0;
    for _ in 0..TRIALS {
        let x = shifted_gaussian(&mut rng, M, &[]);
        let y = shifted_gaussian(&mut rng, M, &[]);
        if hsic_perm_test(&x, &y, DEFAULT_PERMUTATIONS, alpha, &mut rng).unwrap().reject {
            rejects_hsic += 1;
        }
    }
    // X and Y both depend on L, independent given L.
    let mut rejects_cond = 0;
    for _ in 0..TRIALS {
        let labels: Vec<usize> = (0..M).map(|i| i % 2).collect();
        let shift: Vec<f64> = labels.iter().map(|&l| 2.0 * l as f64).collect();
        let x = shifted_gaussian(&mut rng, M, &shift);
        let y = shifted_gaussian(&mut rng, M, &shift);
        if cond_hsic_perm_test(&x, &y, &labels, DEFAULT_PERMUTATIONS, alpha, &mut rng).unwrap().reject {
            rejects_cond += 1;
        }
    }
    let (rh, rc) = (rejects_hsic as f64 / TRIALS as f64, rejects_cond as f64 / TRIALS as f64);
    let inside = |r: f64| (0.002..=0.03).contains(&r);
    let pass = inside(rh) && inside(rc);
    report(
        7,
        "permutation test type-I error at alpha 0.01",
        pass,
        &format!("hsic {rh:.4}, conditional hsic {rc:.4} over {TRIALS} null trials (within [0.002, 0.03])"),
    );
    assert!(pass);
}

#[test]
fn criterion_8_fairness_pattern() {
    use CriterionKind::*;
    let two = setup_two();
    let mut pass = true;
    let mut detail = String::new();
    for k in [CondMI, CondHSIC, CondMCC] {
        let passes = two
            .iter()
            .filter(|r| r.method == kind(k))
            .filter(|r| r.fairness.and_then(|f| f.eo_pc_pass).unwrap_or(false))
            .count();
        pass &= passes >= 19;
        detail.push_str(&format!("setup II {} EO (PC) {passes}/{SEEDS} (≥ 19); ", k.name()));
    }
    let base_passes = setup_one()
        .iter()
        .filter(|r| r.method == Method::Baseline)
        .filter(|r| r.fairness.and_then(|f| f.eo_hsic_pass).unwrap_or(false))
        .count();
    pass &= base_passes <= 2;
    detail.push_str(&format!("setup I baseline EO (conditional HSIC) {base_passes}/{SEEDS} (≤ 2)"));
    report(8, "fairness test pass counts", pass, &detail);
    assert!(pass);
}

/// `x, y, z` over `m` points whose sample correlations are exactly `ρ`.
fn exact_correlations(m: usize, rho: f64, rng: &mut impl Rng) -> [Vec<f64>; 3] {
    // Orthonormal, centred columns by Gram-Schmidt.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < 3 {
        let mut v: Vec<f64> = (0..m).map(|_| normal(rng)).collect();
        let mean = v.iter().sum::<f64>() / m as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            v.iter_mut().zip(b).for_each(|(x, c)| *x -= d * c);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    // Cholesky factor of the equicorrelation matrix.
    let l11 = 1.0;
    let l21 = rho;
    let l22 = (1.0 - rho * rho).sqrt();
    let l31 = rho;
    let l32 = (rho - l31 * l21) / l22;
    let l33 = (1.0 - l31 * l31 - l32 * l32).sqrt();
    let comb = |c: [f64; 3]| (0..m).map(|i| c[0] * basis[0][i] + c[1] * basis[1][i] + c[2] * basis[2][i]).collect();
    [comb([l11, 0.0, 0.0]), comb([l21, l22, 0.0]), comb([l31, l32, l33])]
}

#[test]
fn criterion_9_estimator_sanity() {
    let mut rng = seeded(99);
    let m = 500;
    let a = Tensor::column((0..m).map(|_| normal(&mut rng)).collect());
    let b = Tensor::column((0..m).map(|_| normal(&mut rng)).collect());
    let mi_indep = kernel::mutual_information(&a, &b).unwrap();
    let coin = Tensor::column((0..m).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect());
    let mi_same = kernel::mutual_information(&coin, &coin).unwrap();
    let ln2 = std::f64::consts::LN_2;
    let [x, y, z] = exact_correlations(200, 0.5, &mut rng);
    let pc = kernel::partial_correlation(&x, &y, &Tensor::column(z)).unwrap();
    let pass = mi_indep.abs() <= 0.05 && (mi_same - ln2).abs() <= 0.15 * ln2 && (pc.value - 1.0 / 3.0).abs() <= 1e-12;
    report(
        9,
        "estimator sanity",
        pass,
        &format!(
            "MI independent {mi_indep:.4} (|·| ≤ 0.05), MI identical coins {mi_same:.4} vs ln 2 = {ln2:.4} (±15%), partial correlation {:.15} vs 1/3 (1e-12)",
            pc.value
        ),
    );
    assert!(pass);
}
