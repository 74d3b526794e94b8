//! The linear data-generating process behind the optimal-classifier argument.
//!
//! A signal `S` determines the label `L = ζ₁S`; the bias variable
//! `B = α₁S + α₂B*` mixes the signal with independent noise `B*`; the input is
//! `I = Ψ (S, B)`. The optimal classifier recovers `S` through the left
//! pseudo-inverse of `Ψ` and scales it by `ζ₁`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::kernel::{self, PartialCorrelation};
use crate::linalg::{dot, left_pseudo_inverse};
use crate::rng::{normal, seeded};
use crate::{Error, Result, Tensor};

pub const DEFAULT_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearBiasModel {
    pub alpha1: f64,
    pub alpha2: f64,
    pub zeta1: f64,
    /// `d x 2` mixing matrix; column 0 multiplies `S`, column 1 multiplies `B`.
    pub psi: Tensor,
    pub signal_var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSample {
    pub s: Vec<f64>,
    pub b_star: Vec<f64>,
    pub b: Vec<f64>,
    pub l: Vec<f64>,
    /// `n x d` inputs.
    pub i: Tensor,
}

/// A linear read-out `F(i) = w · i`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalClassifier {
    pub weights: Vec<f64>,
}

impl OptimalClassifier {
    pub fn apply(&self, inputs: &Tensor) -> Result<Vec<f64>> {
        let (n, d) = inputs.dims2()?;
        if d != self.weights.len() {
            return Err(Error::ShapeMismatch {
                op: "optimal_classifier",
                left: inputs.shape().to_vec(),
                right: vec![self.weights.len()],
            });
        }
        Ok((0..n).map(|r| dot(inputs.row(r), &self.weights)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremReport {
    pub n: usize,
    /// Sample covariance of `F*(I)` and `B`.
    pub cov_fb: f64,
    /// `ζ₁ α₁ Var(S)`.
    pub expected_cov: f64,
    /// Standard error of `cov_fb` estimated from the per-sample products.
    pub cov_stderr: f64,
    pub pc_fb_given_l: f64,
    /// The residual of `F*(I)` given `L` vanished (so `pc_fb_given_l` is 0).
    pub pc_degenerate: bool,
}

impl LinearBiasModel {
    pub fn new(alpha1: f64, alpha2: f64, zeta1: f64, psi: Tensor, signal_var: f64) -> Result<Self> {
        let m = LinearBiasModel {
            alpha1,
            alpha2,
            zeta1,
            psi,
            signal_var,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.alpha1, self.alpha2, self.zeta1, self.signal_var].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("coefficients must be finite"));
        }
        if self.zeta1 == 0.0 {
            return Err(Error::InvalidModel("zeta1 must be non-zero"));
        }
        if self.signal_var <= 0.0 {
            return Err(Error::InvalidModel("signal variance must be positive"));
        }
        match self.psi.dims2() {
            Ok((_, 2)) => {}
            _ => return Err(Error::InvalidModel("psi must have two columns")),
        }
        left_pseudo_inverse(&self.psi).map(|_| ())
    }

    /// Coefficients uniform on `[-2, -0.1] ∪ [0.1, 2]`, `Var(S)` uniform on
    /// `[0.5, 2]` and a Gaussian `d x 2` mixing matrix.
    pub fn random(d: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut coef = || {
            let v: f64 = rng.random_range(0.1..2.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        };
        let (alpha1, alpha2, zeta1) = (coef(), coef(), coef());
        let signal_var = rng.random_range(0.5..2.0);
        let psi = Tensor::new(vec![d, 2], (0..2 * d).map(|_| normal(rng)).collect())?;
        Self::new(alpha1, alpha2, zeta1, psi, signal_var)
    }

    pub fn dim(&self) -> usize {
        self.psi.shape()[0]
    }
}

pub fn sample_linear_world(model: &LinearBiasModel, n: usize, seed: u64) -> Result<WorldSample> {
    model.validate()?;
    if n < 2 {
        return Err(Error::TooFewSamples { got: n, min: 2 });
    }
    let mut rng = seeded(seed);
    let sd = libm::sqrt(model.signal_var);
    let d = model.dim();
    let mut s = Vec::with_capacity(n);
    let mut b_star = Vec::with_capacity(n);
    for _ in 0..n {
        s.push(sd * normal(&mut rng));
        b_star.push(normal(&mut rng));
    }
    let b: Vec<f64> = s.iter().zip(&b_star).map(|(s, e)| model.alpha1 * s + model.alpha2 * e).collect();
    let l: Vec<f64> = s.iter().map(|s| model.zeta1 * s).collect();
    let psi = model.psi.data();
    let mut i = Vec::with_capacity(n * d);
    for k in 0..n {
        for r in 0..d {
            i.push(psi[r * 2] * s[k] + psi[r * 2 + 1] * b[k]);
        }
    }
    Ok(WorldSample {
        s,
        b_star,
        b,
        l,
        i: Tensor::new(vec![n, d], i)?,
    })
}

/// `ζ₁` times the `S` row of the left pseudo-inverse of `Ψ`.
pub fn optimal_classifier(model: &LinearBiasModel) -> Result<OptimalClassifier> {
    let pinv = left_pseudo_inverse(&model.psi)?;
    Ok(OptimalClassifier {
        weights: pinv.row(0).iter().map(|w| model.zeta1 * w).collect(),
    })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample covariance (divisor `n − 1`) and the standard error of that
/// estimate.
pub fn covariance_with_stderr(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let products: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let cov = products.iter().sum::<f64>() / (n - 1.0);
    let mp = mean(&products);
    let var_p = products.iter().map(|p| (p - mp) * (p - mp)).sum::<f64>() / (n - 1.0);
    (cov, libm::sqrt(var_p / n))
}

pub fn verify_theorem(model: &LinearBiasModel, n: usize, seed: u64) -> Result<TheoremReport> {
    let world = sample_linear_world(model, n, seed)?;
    let f = optimal_classifier(model)?.apply(&world.i)?;
    let (cov_fb, cov_stderr) = covariance_with_stderr(&f, &world.b);
    let PartialCorrelation { value, degenerate } =
        kernel::partial_correlation(&f, &world.b, &Tensor::column(world.l.clone()))?;
    Ok(TheoremReport {
        n,
        cov_fb,
        expected_cov: model.zeta1 * model.alpha1 * model.signal_var,
        cov_stderr,
        pc_fb_given_l: value,
        pc_degenerate: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(alpha1: f64, alpha2: f64, zeta1: f64) -> LinearBiasModel {
        let psi = Tensor::new(
            vec![4, 2],
            vec![1.0, 0.5, -0.3, 2.0, 0.7, 0.1, 0.0, -1.2],
        )
        .unwrap();
        LinearBiasModel::new(alpha1, alpha2, zeta1, psi, 1.0).unwrap()
    }

    #[test]
    fn sample_follows_equations() {
        let w = sample_linear_world(&model(1.0, 0.0, 2.0), 500, 1).unwrap();
        assert_eq!(w.b, w.s);
        assert!(w.l.iter().zip(&w.s).all(|(l, s)| *l == 2.0 * s));
        let again = sample_linear_world(&model(1.0, 0.0, 2.0), 500, 1).unwrap();
        assert_eq!(w, again);
        let n = 20_000;
        let w = sample_linear_world(&model(0.0, 1.0, 1.5), n, 2).unwrap();
        let rho = kernel::correlation(&w.b, &w.l).unwrap();
        assert!(rho.abs() <= 3.0 / libm::sqrt(n as f64));
        let rho = kernel::correlation(&w.s, &w.b_star).unwrap();
        assert!(rho.abs() <= 3.0 / libm::sqrt(n as f64));
    }

    #[test]
    fn invalid_models_rejected() {
        let psi = Tensor::new(vec![3, 2], vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        assert!(matches!(LinearBiasModel::new(1.0, 1.0, 1.0, psi, 1.0), Err(Error::InvalidModel(_))));
        let ok = model(1.0, 1.0, 1.0);
        assert!(LinearBiasModel::new(1.0, 1.0, 0.0, ok.psi.clone(), 1.0).is_err());
        assert!(LinearBiasModel::new(1.0, 1.0, 1.0, ok.psi.clone(), 0.0).is_err());
        assert!(sample_linear_world(&ok, 1, 0).is_err());
    }

    #[test]
    fn optimal_classifier_recovers_label() {
        let m = model(0.8, 0.6, -1.3);
        let w = sample_linear_world(&m, 1000, 3).unwrap();
        let f = optimal_classifier(&m).unwrap().apply(&w.i).unwrap();
        let err = f.iter().zip(&w.l).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-10);

        let id = LinearBiasModel::new(0.5, 1.0, 3.0, Tensor::identity(2), 1.0).unwrap();
        let f = optimal_classifier(&id).unwrap();
        assert!((f.weights[0] - 3.0).abs() < 1e-14 && f.weights[1].abs() < 1e-14);

        // Rescaling the columns of psi changes the inputs but not the output.
        let mut scaled = m.clone();
        for r in 0..4 {
            scaled.psi.data_mut()[r * 2] *= 7.0;
            scaled.psi.data_mut()[r * 2 + 1] *= 0.01;
        }
        let ws = sample_linear_world(&scaled, 1000, 3).unwrap();
        let fs = optimal_classifier(&scaled).unwrap().apply(&ws.i).unwrap();
        let diff = f_diff(&fs, &optimal_classifier(&m).unwrap().apply(&w.i).unwrap());
        assert!(diff <= 1e-9);
    }

    fn f_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn theorem_examples() {
        let psi = Tensor::new(vec![3, 2], vec![1.0, 0.2, 0.3, 1.0, -0.5, 0.4]).unwrap();
        let m = LinearBiasModel::new(0.5, 1.0, 2.0, psi.clone(), 1.0).unwrap();
        let r = verify_theorem(&m, 100_000, 4).unwrap();
        assert!((r.cov_fb - 1.0).abs() <= 0.03, "{r:?}");
        assert_eq!(r.expected_cov, 1.0);
        assert!(r.pc_fb_given_l.abs() <= 0.01);
        let unbiased = LinearBiasModel::new(0.0, 1.0, 2.0, psi, 1.0).unwrap();
        let r = verify_theorem(&unbiased, 100_000, 5).unwrap();
        assert!(r.cov_fb.abs() <= 0.02, "{r:?}");
    }

    #[test]
    fn covariance_stderr_matches_gaussian_formula() {
        // For zero-mean jointly Gaussian (X, Y): Var(XY) = σx²σy² + c².
        let m = model(0.9, 0.7, 1.1);
        let n = 50_000;
        let w = sample_linear_world(&m, n, 6).unwrap();
        let (_, se) = covariance_with_stderr(&w.l, &w.b);
        let vl = 1.1 * 1.1;
        let vb = 0.81 + 0.49;
        let c = 1.1 * 0.9;
        let expected = libm::sqrt((vl * vb + c * c) / n as f64);
        assert!((se / expected - 1.0).abs() < 0.05);
    }
}
