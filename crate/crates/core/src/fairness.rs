//! Independence tests for demographic parity (`R ⊥ B`) and equalized odds
//! (`R ⊥ B | L`).
//!
//! The kernel tests are permutation tests with p-value
//! `(1 + #{permuted ≥ observed}) / (1 + n_perm)`. The conditional test
//! permutes `B` only within label strata. The partial-correlation test uses the
//! Fisher z-transform against a standard normal.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::kernel::{self, ConditioningBasis};
use crate::losses::label_column;
use crate::tensor::Tensor;
use crate::trainer::Evaluation;
use crate::{Error, Result};

pub const DEFAULT_PERMUTATIONS: usize = 500;
pub const DEFAULT_ALPHA: f64 = 0.01;
/// Smallest sample accepted by every test.
pub const MIN_SAMPLES: usize = 20;
/// Smallest label stratum accepted by the conditional kernel test.
pub const MIN_TEST_STRATUM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    /// `p_value < alpha`.
    pub reject: bool,
    pub alpha: f64,
    /// `None` for the analytic partial-correlation test.
    pub n_permutations: Option<usize>,
    /// The statistic could not be formed (constant input or residual); such
    /// outcomes never reject.
    pub degenerate: bool,
}

impl TestOutcome {
    fn new(statistic: f64, p_value: f64, alpha: f64, n_permutations: Option<usize>) -> Self {
        TestOutcome {
            statistic,
            p_value,
            reject: p_value < alpha,
            alpha,
            n_permutations,
            degenerate: false,
        }
    }

    fn degenerate(alpha: f64, n_permutations: Option<usize>) -> Self {
        TestOutcome {
            statistic: 0.0,
            p_value: 1.0,
            reject: false,
            alpha,
            n_permutations,
            degenerate: true,
        }
    }

    /// The independence hypothesis survives.
    pub fn passes(&self) -> bool {
        !self.reject
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(alloc::format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn check_rows(op: &'static str, x: &Tensor, y: &Tensor) -> Result<usize> {
    let (m, _) = x.dims2()?;
    let (my, _) = y.dims2()?;
    if m != my {
        return Err(Error::ShapeMismatch {
            op,
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    if m < MIN_SAMPLES {
        return Err(Error::TooFewSamples { got: m, min: MIN_SAMPLES });
    }
    Ok(m)
}

fn check_permutations(n_perm: usize) -> Result<()> {
    if n_perm == 0 {
        return Err(Error::Config("n_perm must be positive".into()));
    }
    Ok(())
}

/// `Σᵢⱼ A[i][j] · B[π(i)][π(j)]`.
fn permuted_inner(a: &Tensor, b: &Tensor, perm: &[usize]) -> f64 {
    let m = perm.len();
    let (ad, bd) = (a.data(), b.data());
    let mut total = 0.0;
    for i in 0..m {
        let arow = &ad[i * m..(i + 1) * m];
        let brow = &bd[perm[i] * m..(perm[i] + 1) * m];
        total += arow.iter().zip(perm).map(|(x, &pj)| x * brow[pj]).sum::<f64>();
    }
    total
}

/// Permutation p-value where `shuffle` draws the next permutation in place.
fn permutation_p_value<R: Rng + ?Sized>(
    a: &Tensor,
    b: &Tensor,
    observed: f64,
    n_perm: usize,
    rng: &mut R,
    mut shuffle: impl FnMut(&mut [usize], &mut R),
) -> f64 {
    let m = a.dims2().map(|(m, _)| m).unwrap_or(0);
    let mut perm: Vec<usize> = (0..m).collect();
    // Guards against rounding making identical statistics look larger.
    let tol = 1e-12 * observed.abs().max(1e-300);
    let mut exceed = 0usize;
    for _ in 0..n_perm {
        shuffle(&mut perm, rng);
        if permuted_inner(a, b, &perm) >= observed - tol {
            exceed += 1;
        }
    }
    (1 + exceed) as f64 / (1 + n_perm) as f64
}

/// HSIC permutation test of `X ⊥ Y`, permuting the rows of `Y`.
pub fn hsic_perm_test<R: Rng + ?Sized>(x: &Tensor, y: &Tensor, n_perm: usize, alpha: f64, rng: &mut R) -> Result<TestOutcome> {
    let m = check_rows("hsic_perm_test", x, y)?;
    check_permutations(n_perm)?;
    check_alpha(alpha)?;
    let kx = kernel::rbf_gram(x, kernel::bandwidth_heuristic(x)?)?.values;
    let gy = kernel::centered_rbf(y)?.values;
    let scale = ((m - 1) * (m - 1)) as f64;
    let identity: Vec<usize> = (0..m).collect();
    let observed = permuted_inner(&kx, &gy, &identity);
    let p = permutation_p_value(&kx, &gy, observed, n_perm, rng, |perm, rng| perm.shuffle(rng));
    Ok(TestOutcome::new(observed / scale, p, alpha, Some(n_perm)))
}

/// Conditional HSIC permutation test of `X ⊥ Y | L`. The statistic is
/// `tr(G_X S_L G_Y S_L) / (m−1)²`; the null permutes `Y` within each label
/// stratum.
pub fn cond_hsic_perm_test<R: Rng + ?Sized>(
    x: &Tensor,
    y: &Tensor,
    labels: &[usize],
    n_perm: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<TestOutcome> {
    let m = check_rows("cond_hsic_perm_test", x, y)?;
    if labels.len() != m {
        return Err(Error::ShapeMismatch {
            op: "cond_hsic_perm_test labels",
            left: x.shape().to_vec(),
            right: alloc::vec![labels.len()],
        });
    }
    check_permutations(n_perm)?;
    check_alpha(alpha)?;
    let strata = kernel::checked_strata(labels, MIN_TEST_STRATUM)?;
    let gx = kernel::centered_rbf(x)?.values;
    let gy = kernel::centered_rbf(y)?.values;
    let s = kernel::label_smoother(&label_column(labels))?;
    let sgs = s.matmul(&gx)?.matmul(&s)?;
    let scale = ((m - 1) * (m - 1)) as f64;
    let identity: Vec<usize> = (0..m).collect();
    let observed = permuted_inner(&sgs, &gy, &identity);
    let mut scratch: Vec<usize> = Vec::with_capacity(m);
    let p = permutation_p_value(&sgs, &gy, observed, n_perm, rng, |perm, rng| {
        for (_, idx) in &strata {
            scratch.clear();
            scratch.extend_from_slice(idx);
            scratch.shuffle(rng);
            for (&i, &j) in idx.iter().zip(&scratch) {
                perm[i] = j;
            }
        }
    });
    Ok(TestOutcome::new(observed / scale, p, alpha, Some(n_perm)))
}

/// Two-sided Fisher z test of the partial correlation of `x` and `y` given
/// `z` (`m x k`). The z-score is `atanh(ρ) · √(m − 3 − k')`, `k'` being the
/// number of independent conditioning columns.
pub fn pc_test(x: &[f64], y: &[f64], z: &Tensor, alpha: f64) -> Result<TestOutcome> {
    let basis = ConditioningBasis::new(z)?;
    pc_test_with(&basis, x, y, alpha)
}

/// [`pc_test`] against an explicit basis; [`ConditioningBasis::intercept`]
/// gives the unconditional correlation test.
pub fn pc_test_with(basis: &ConditioningBasis, x: &[f64], y: &[f64], alpha: f64) -> Result<TestOutcome> {
    let m = basis.len();
    if x.len() != m || y.len() != m {
        return Err(Error::ShapeMismatch {
            op: "pc_test",
            left: alloc::vec![x.len(), y.len()],
            right: alloc::vec![m],
        });
    }
    if m < MIN_SAMPLES {
        return Err(Error::TooFewSamples { got: m, min: MIN_SAMPLES });
    }
    check_alpha(alpha)?;
    let pc = kernel::partial_correlation_with(basis, x, y)?;
    if pc.degenerate {
        return Ok(TestOutcome::degenerate(alpha, None));
    }
    let conditioning = basis.matrix().dims2()?.1 - 1;
    let dof = m as f64 - 3.0 - conditioning as f64;
    if dof <= 0.0 {
        return Err(Error::TooFewSamples {
            got: m,
            min: 4 + conditioning,
        });
    }
    let z = libm::atanh(pc.value) * libm::sqrt(dof);
    let p = libm::erfc(libm::fabs(z) / core::f64::consts::SQRT_2).clamp(0.0, 1.0);
    Ok(TestOutcome::new(pc.value, p, alpha, None))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairnessReport {
    /// HSIC test of `R ⊥ B`.
    pub demographic_parity: TestOutcome,
    /// Conditional HSIC test of `R ⊥ B | L`.
    pub equalized_odds_hsic: TestOutcome,
    /// Partial correlation of the class-1 probability with `B` given `L`.
    pub equalized_odds_pc: TestOutcome,
}

impl FairnessReport {
    pub fn dp_pass(&self) -> bool {
        self.demographic_parity.passes()
    }

    /// Equalized odds holds under both conditional tests.
    pub fn eo_pass(&self) -> bool {
        self.equalized_odds_hsic.passes() && self.equalized_odds_pc.passes()
    }
}

/// Runs the three tests on an evaluated split. A constant representation is
/// reported as a degenerate, non-rejecting outcome for the kernel tests.
pub fn fairness_report<R: Rng + ?Sized>(eval: &Evaluation, n_perm: usize, alpha: f64, rng: &mut R) -> Result<FairnessReport> {
    let r = &eval.representation;
    let b = &eval.bias;
    let constant = kernel::is_constant(r) || kernel::is_constant(b);
    let demographic_parity = if constant {
        check_permutations(n_perm)?;
        TestOutcome::degenerate(alpha, Some(n_perm))
    } else {
        hsic_perm_test(r, b, n_perm, alpha, rng)?
    };
    let equalized_odds_hsic = if constant {
        TestOutcome::degenerate(alpha, Some(n_perm))
    } else {
        cond_hsic_perm_test(r, b, &eval.labels, n_perm, alpha, rng)?
    };
    let (m, classes) = eval.softmax.dims2()?;
    let p1: Vec<f64> = (0..m).map(|i| eval.softmax.get2(i, classes - 1)).collect();
    let bias: Vec<f64> = (0..m).map(|i| b.get2(i, 0)).collect();
    let equalized_odds_pc = pc_test(&p1, &bias, &label_column(&eval.labels), alpha)?;
    Ok(FairnessReport {
        demographic_parity,
        equalized_odds_hsic,
        equalized_odds_pc,
    })
}
