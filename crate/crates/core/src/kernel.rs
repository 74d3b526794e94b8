//! Kernel matrices and (conditional) dependence estimators.
//!
//! Every estimator exists twice: a plain function on [`Tensor`]s used for
//! statistics and tests, and a `*_var` function that records the same
//! computation into a [`Graph`] so it can serve as a training loss. Bandwidths
//! enter the graph versions as plain numbers: they are re-estimated on every
//! batch but never differentiated.
//!
//! Samples are always rows: an `m x d` tensor holds `m` samples of a
//! `d`-dimensional variable. Rank-1 tensors are read as `m x 1`.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::{Error, Result, Tensor};

/// Floor applied to density estimates before taking logarithms.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Residual variance below which a partial correlation is reported as
/// degenerate.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// How the kernel variance is derived from the pairwise distances of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandwidthRule {
    /// `σ² = mean ‖xᵢ − xⱼ‖ / 4`
    #[default]
    MeanDistance,
    /// `σ² = mean ‖xᵢ − xⱼ‖² / 4`
    MeanSquaredDistance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: Tensor,
    pub bandwidth_sq: f64,
    pub source_dim: usize,
}

/// A doubly centred kernel matrix `HKH`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredGram {
    pub values: Tensor,
}

fn as_matrix(x: &Tensor) -> Result<(usize, usize)> {
    x.dims2()
}

fn same_rows(op: &'static str, a: &Tensor, b: &Tensor) -> Result<usize> {
    let (m, _) = as_matrix(a)?;
    let (n, _) = as_matrix(b)?;
    if m != n {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(m)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One quarter of the mean Euclidean distance over unordered distinct pairs.
pub fn bandwidth_heuristic(x: &Tensor) -> Result<f64> {
    bandwidth_with_rule(x, BandwidthRule::MeanDistance)
}

pub fn bandwidth_with_rule(x: &Tensor, rule: BandwidthRule) -> Result<f64> {
    let (m, d) = as_matrix(x)?;
    if m < 2 {
        return Err(Error::TooFewSamples { got: m, min: 2 });
    }
    let data = x.data();
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let s = sq_dist(&data[i * d..(i + 1) * d], &data[j * d..(j + 1) * d]);
            total += match rule {
                BandwidthRule::MeanDistance => libm::sqrt(s),
                BandwidthRule::MeanSquaredDistance => s,
            };
        }
    }
    let mean = total / (m * (m - 1) / 2) as f64;
    if mean <= f64::MIN_POSITIVE || !mean.is_finite() {
        return Err(Error::DegenerateBatch("all samples are identical"));
    }
    Ok(mean / 4.0)
}

/// Whether every row of `x` is identical.
pub fn is_constant(x: &Tensor) -> bool {
    let (m, _) = match as_matrix(x) {
        Ok(d) => d,
        Err(_) => return false,
    };
    (1..m).all(|i| x.row(i) == x.row(0))
}

/// Gaussian kernel matrix `K[i][j] = exp(−‖xᵢ−xⱼ‖² / (2σ²))`.
pub fn rbf_gram(x: &Tensor, bandwidth_sq: f64) -> Result<GramMatrix> {
    if bandwidth_sq <= 0.0 || !bandwidth_sq.is_finite() {
        return Err(Error::InvalidBandwidth(bandwidth_sq));
    }
    let (m, d) = as_matrix(x)?;
    let data = x.data();
    let mut k = vec![1.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let v = libm::exp(-sq_dist(&data[i * d..(i + 1) * d], &data[j * d..(j + 1) * d]) / (2.0 * bandwidth_sq));
            k[i * m + j] = v;
            k[j * m + i] = v;
        }
    }
    Ok(GramMatrix {
        values: Tensor::new(vec![m, m], k)?,
        bandwidth_sq,
        source_dim: d,
    })
}

/// `H = I − (1/m) 11ᵀ`.
pub fn centering_matrix(m: usize) -> Tensor {
    let mut h = Tensor::full(&[m, m], -1.0 / m as f64);
    for i in 0..m {
        h.data_mut()[i * m + i] += 1.0;
    }
    h
}

/// `HKH`, computed as a double centring of rows and columns.
pub fn center_gram(k: &Tensor) -> Result<CenteredGram> {
    let (m, c) = as_matrix(k)?;
    if m != c {
        return Err(Error::ShapeMismatch {
            op: "center_gram",
            left: k.shape().to_vec(),
            right: vec![m, m],
        });
    }
    let data = k.data();
    let row_means: Vec<f64> = (0..m).map(|i| data[i * m..(i + 1) * m].iter().sum::<f64>() / m as f64).collect();
    let col_means: Vec<f64> = (0..m).map(|j| (0..m).map(|i| data[i * m + j]).sum::<f64>() / m as f64).collect();
    let total = row_means.iter().sum::<f64>() / m as f64;
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = data[i * m + j] - row_means[i] - col_means[j] + total;
        }
    }
    Ok(CenteredGram {
        values: Tensor::new(vec![m, m], out)?,
    })
}

/// Centred Gram matrix of `x` with the heuristic bandwidth.
pub fn centered_rbf(x: &Tensor) -> Result<CenteredGram> {
    let s = bandwidth_heuristic(x)?;
    center_gram(&rbf_gram(x, s)?.values)
}

/// `Σᵢⱼ AᵢⱼBᵢⱼ`, i.e. `tr(A Bᵀ)`.
pub(crate) fn frobenius_inner(a: &Tensor, b: &Tensor) -> f64 {
    crate::linalg::dot(a.data(), b.data())
}

/// `(m−1)⁻² tr(K_X H K_Y H)` with heuristic bandwidths.
pub fn hsic(x: &Tensor, y: &Tensor) -> Result<f64> {
    let m = same_rows("hsic", x, y)?;
    if m < 4 {
        return Err(Error::TooFewSamples { got: m, min: 4 });
    }
    let kx = rbf_gram(x, bandwidth_heuristic(x)?)?;
    let gy = centered_rbf(y)?;
    // tr(K_X H K_Y H) = tr(K_X G_Y) and both are symmetric.
    Ok(frobenius_inner(&kx.values, &gy.values) / ((m - 1) * (m - 1)) as f64)
}

/// `S_L = (I + G_L / m)⁻¹`; the identity when `L` is constant.
pub fn label_smoother(l: &Tensor) -> Result<Tensor> {
    let (m, _) = as_matrix(l)?;
    if is_constant(l) {
        return Ok(Tensor::identity(m));
    }
    let gl = centered_rbf(l)?;
    let mut a = gl.values.map(|v| v / m as f64);
    for i in 0..m {
        a.data_mut()[i * m + i] += 1.0;
    }
    crate::linalg::solve(&a, &Tensor::identity(m))
}

/// `tr(G_R S_L G_B S_L)`.
pub fn cond_hsic(r: &Tensor, b: &Tensor, l: &Tensor) -> Result<f64> {
    let m = same_rows("cond_hsic", r, b)?;
    same_rows("cond_hsic", r, l)?;
    if m < 8 {
        return Err(Error::TooFewSamples { got: m, min: 8 });
    }
    let gr = centered_rbf(r)?;
    let gb = centered_rbf(b)?;
    let s = label_smoother(l)?;
    let left = s.matmul(&gr.values)?.matmul(&s)?;
    Ok(frobenius_inner(&left, &gb.values))
}

fn gaussian_norm(bandwidth_sq: f64, dim: usize) -> f64 {
    libm::pow(2.0 * core::f64::consts::PI * bandwidth_sq, -(dim as f64) / 2.0)
}

/// Gaussian kernel density estimate of `train_pts` evaluated at `queries`.
pub fn kde_density(train_pts: &Tensor, queries: &Tensor, bandwidth_sq: f64) -> Result<Vec<f64>> {
    if bandwidth_sq <= 0.0 || !bandwidth_sq.is_finite() {
        return Err(Error::InvalidBandwidth(bandwidth_sq));
    }
    let (m, d) = as_matrix(train_pts)?;
    let (q, dq) = as_matrix(queries)?;
    if d != dq {
        return Err(Error::ShapeMismatch {
            op: "kde_density",
            left: train_pts.shape().to_vec(),
            right: queries.shape().to_vec(),
        });
    }
    let norm = gaussian_norm(bandwidth_sq, d) / m as f64;
    let (t, qd) = (train_pts.data(), queries.data());
    Ok((0..q)
        .map(|i| {
            let row = &qd[i * d..(i + 1) * d];
            norm * (0..m)
                .map(|j| libm::exp(-sq_dist(row, &t[j * d..(j + 1) * d]) / (2.0 * bandwidth_sq)))
                .sum::<f64>()
        })
        .collect())
}

/// Plug-in KDE estimate of `MI(R; B)` in nats.
pub fn mutual_information(r: &Tensor, b: &Tensor) -> Result<f64> {
    let m = same_rows("mutual_information", r, b)?;
    if m < 8 {
        return Err(Error::TooFewSamples { got: m, min: 8 });
    }
    let (sr, sb) = (bandwidth_heuristic(r)?, bandwidth_heuristic(b)?);
    eval_scalar(|g| {
        let (rv, bv) = (g.constant(r.clone()), g.constant(b.clone()));
        mutual_information_var(g, rv, bv, sr, sb)
    })
}

/// Groups sample indices by label value, ascending.
pub fn strata(labels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match out.iter_mut().find(|(v, _)| *v == l) {
            Some((_, idx)) => idx.push(i),
            None => out.push((l, vec![i])),
        }
    }
    out.sort_by_key(|(v, _)| *v);
    out
}

pub const MIN_STRATUM: usize = 4;

/// Strata of a batch, rejecting any with fewer than `min` samples.
pub fn checked_strata(labels: &[usize], min: usize) -> Result<Vec<(usize, Vec<usize>)>> {
    let s = strata(labels);
    if let Some((label, idx)) = s.iter().find(|(_, idx)| idx.len() < min) {
        return Err(Error::StratumTooSmall {
            label: *label,
            count: idx.len(),
            min,
        });
    }
    Ok(s)
}

/// Per-stratum bandwidths `(σ²_R, σ²_B)` for the conditional MI.
pub fn stratum_bandwidths(r: &Tensor, b: &Tensor, strata: &[(usize, Vec<usize>)]) -> Result<Vec<(f64, f64)>> {
    strata
        .iter()
        .map(|(_, idx)| Ok((bandwidth_heuristic(&r.select_rows(idx))?, bandwidth_heuristic(&b.select_rows(idx))?)))
        .collect()
}

/// `Σ_l p̂(l) · MI(R; B | L = l)` with stratum-local KDE bandwidths.
pub fn conditional_mutual_information(r: &Tensor, b: &Tensor, labels: &[usize]) -> Result<f64> {
    let m = same_rows("conditional_mutual_information", r, b)?;
    if labels.len() != m {
        return Err(Error::ShapeMismatch {
            op: "conditional_mutual_information labels",
            left: r.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let strata = checked_strata(labels, MIN_STRATUM)?;
    let bw = stratum_bandwidths(r, b, &strata)?;
    eval_scalar(|g| {
        let (rv, bv) = (g.constant(r.clone()), g.constant(b.clone()));
        conditional_mutual_information_var(g, rv, bv, &strata, &bw)
    })
}

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

/// Pearson correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            op: "correlation",
            left: vec![x.len()],
            right: vec![y.len()],
        });
    }
    if x.len() < 2 {
        return Err(Error::TooFewSamples { got: x.len(), min: 2 });
    }
    let (xc, yc) = (centered(x), centered(y));
    let sxx = crate::linalg::dot(&xc, &xc);
    let syy = crate::linalg::dot(&yc, &yc);
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::ZeroVariance("correlation"));
    }
    Ok((crate::linalg::dot(&xc, &yc) / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Orthonormal basis of the span of `[1, z]` (columns of `z` that add no new
/// direction are skipped, so one-hot encodings with all categories are fine).
#[derive(Debug, Clone)]
pub struct ConditioningBasis {
    m: usize,
    /// Basis vectors, each of length `m`.
    basis: Vec<Vec<f64>>,
}

impl ConditioningBasis {
    pub fn new(z: &Tensor) -> Result<Self> {
        let (m, k) = as_matrix(z)?;
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
        let mut candidates: Vec<Vec<f64>> = vec![vec![1.0; m]];
        for c in 0..k {
            candidates.push((0..m).map(|i| z.data()[i * k + c]).collect());
        }
        for mut v in candidates {
            let norm0 = libm::sqrt(crate::linalg::dot(&v, &v));
            // Two passes of modified Gram-Schmidt for stability.
            for _ in 0..2 {
                for q in &basis {
                    let p = crate::linalg::dot(&v, q);
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= p * qi;
                    }
                }
            }
            let norm = libm::sqrt(crate::linalg::dot(&v, &v));
            if norm > 1e-10 * norm0.max(1.0) {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        Ok(ConditioningBasis { m, basis })
    }

    /// Conditioning on nothing: only the intercept is removed.
    pub fn intercept(m: usize) -> Self {
        let v = 1.0 / libm::sqrt(m as f64);
        ConditioningBasis {
            m,
            basis: vec![vec![v; m]],
        }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    /// Least-squares residual of `x` after regression on `[1, z]`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = x.to_vec();
        for q in &self.basis {
            let p = crate::linalg::dot(&r, q);
            for (ri, qi) in r.iter_mut().zip(q) {
                *ri -= p * qi;
            }
        }
        r
    }

    /// The basis as an `m x k` matrix `Q`, so residuals are `x − Q Qᵀ x`.
    pub fn matrix(&self) -> Tensor {
        let k = self.basis.len();
        let mut data = vec![0.0; self.m * k];
        for (c, q) in self.basis.iter().enumerate() {
            for i in 0..self.m {
                data[i * k + c] = q[i];
            }
        }
        Tensor::new(vec![self.m, k], data).expect("basis is non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialCorrelation {
    pub value: f64,
    /// A residual variance fell below [`DEGENERATE_VARIANCE`]; `value` is 0.
    pub degenerate: bool,
}

/// Correlation of the residuals of `x` and `y` after least-squares regression
/// on `[1, z]`. `z` is `m x k` (a scalar covariate or a one-hot encoding).
pub fn partial_correlation(x: &[f64], y: &[f64], z: &Tensor) -> Result<PartialCorrelation> {
    let basis = ConditioningBasis::new(z)?;
    if x.len() != basis.len() || y.len() != basis.len() {
        return Err(Error::ShapeMismatch {
            op: "partial_correlation",
            left: vec![x.len(), y.len()],
            right: z.shape().to_vec(),
        });
    }
    partial_correlation_with(&basis, x, y)
}

pub fn partial_correlation_with(basis: &ConditioningBasis, x: &[f64], y: &[f64]) -> Result<PartialCorrelation> {
    let m = x.len() as f64;
    let (rx, ry) = (basis.residual(x), basis.residual(y));
    let sxx = crate::linalg::dot(&rx, &rx);
    let syy = crate::linalg::dot(&ry, &ry);
    if sxx / m < DEGENERATE_VARIANCE || syy / m < DEGENERATE_VARIANCE {
        return Ok(PartialCorrelation {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(PartialCorrelation {
        value: (crate::linalg::dot(&rx, &ry) / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// First-order partial correlation from the three pairwise correlations.
pub fn partial_correlation_from_correlations(rxy: f64, rxz: f64, ryz: f64) -> f64 {
    (rxy - rxz * ryz) / libm::sqrt((1.0 - rxz * rxz) * (1.0 - ryz * ryz))
}

fn eval_scalar(build: impl FnOnce(&mut Graph) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let v = build(&mut g)?;
    Ok(g.value(v).data()[0])
}

// ---------------------------------------------------------------------------
// Loss-mode (graph) versions
// ---------------------------------------------------------------------------

/// Gaussian Gram matrix of the rows of `x`.
pub fn rbf_gram_var(g: &mut Graph, x: Var, bandwidth_sq: f64) -> Result<Var> {
    if bandwidth_sq <= 0.0 || !bandwidth_sq.is_finite() {
        return Err(Error::InvalidBandwidth(bandwidth_sq));
    }
    let d = g.pairwise_sq_dist(x)?;
    let s = g.scale(d, -1.0 / (2.0 * bandwidth_sq));
    Ok(g.exp(s))
}

fn center_var(g: &mut Graph, k: Var) -> Result<Var> {
    let (m, _) = g.value(k).dims2()?;
    let h = g.constant(centering_matrix(m));
    let hk = g.matmul(h, k)?;
    g.matmul(hk, h)
}

/// `(m−1)⁻² tr(K_X H K_Y H)`.
pub fn hsic_var(g: &mut Graph, x: Var, y: Var, sx: f64, sy: f64) -> Result<Var> {
    let (m, _) = g.value(x).dims2()?;
    let kx = rbf_gram_var(g, x, sx)?;
    let ky = rbf_gram_var(g, y, sy)?;
    let gy = center_var(g, ky)?;
    let p = g.matmul(kx, gy)?;
    let t = g.trace(p)?;
    Ok(g.scale(t, 1.0 / ((m - 1) * (m - 1)) as f64))
}

/// `tr(G_R S_L G_B S_L)` with `S_L = (I + G_L/m)⁻¹` obtained from a
/// differentiable solve. `sl = None` marks a constant `L` (`S_L = I`).
pub fn cond_hsic_var(g: &mut Graph, r: Var, b: Var, l: Var, sr: f64, sb: f64, sl: Option<f64>) -> Result<Var> {
    let (m, _) = g.value(r).dims2()?;
    let kr = rbf_gram_var(g, r, sr)?;
    let gr = center_var(g, kr)?;
    let kb = rbf_gram_var(g, b, sb)?;
    let gb = center_var(g, kb)?;
    let (left, right) = match sl {
        Some(sl) => {
            let kl = rbf_gram_var(g, l, sl)?;
            let gl = center_var(g, kl)?;
            let scaled = g.scale(gl, 1.0 / m as f64);
            let id = g.constant(Tensor::identity(m));
            let a = g.add(id, scaled)?;
            // S G_R S = solve(A, solve(A, G_R)ᵀ)ᵀ; A and G_R are symmetric so
            // both transposes vanish.
            let sgr = g.solve(a, gr)?;
            let sgrt = g.transpose(sgr)?;
            let sgrs = g.solve(a, sgrt)?;
            (sgrs, gb)
        }
        None => (gr, gb),
    };
    let p = g.matmul(left, right)?;
    g.trace(p)
}

/// Plug-in KDE mutual information `mean log[p̂(r,b) / (p̂(r) p̂(b))]`.
pub fn mutual_information_var(g: &mut Graph, r: Var, b: Var, sr: f64, sb: f64) -> Result<Var> {
    let (m, dr) = g.value(r).dims2()?;
    let (_, db) = g.value(b).dims2()?;
    let (cr, cb) = (gaussian_norm(sr, dr) / m as f64, gaussian_norm(sb, db) / m as f64);
    let kr = rbf_gram_var(g, r, sr)?;
    let kb = rbf_gram_var(g, b, sb)?;
    let joint = g.mul(kr, kb)?;
    let js = g.row_sums(joint)?;
    let rs = g.row_sums(kr)?;
    let bs = g.row_sums(kb)?;
    let pj = g.scale(js, cr * cb * m as f64);
    let pr = g.scale(rs, cr);
    let pb = g.scale(bs, cb);
    let lj = g.log_floor(pj, DENSITY_FLOOR);
    let lr = g.log_floor(pr, DENSITY_FLOOR);
    let lb = g.log_floor(pb, DENSITY_FLOOR);
    // lr + lb commutes exactly, so swapping R and B gives the same bits.
    let marg = g.add(lr, lb)?;
    let t = g.sub(lj, marg)?;
    Ok(g.mean(t))
}

/// `Σ_l p̂(l) · MI(R; B | L = l)`.
pub fn conditional_mutual_information_var(
    g: &mut Graph,
    r: Var,
    b: Var,
    strata: &[(usize, Vec<usize>)],
    bandwidths: &[(f64, f64)],
) -> Result<Var> {
    let m: usize = strata.iter().map(|(_, idx)| idx.len()).sum();
    let mut total: Option<Var> = None;
    for ((_, idx), &(sr, sb)) in strata.iter().zip(bandwidths) {
        let rs = g.select_rows(r, idx);
        let bs = g.select_rows(b, idx);
        let mi = mutual_information_var(g, rs, bs, sr, sb)?;
        let weighted = g.scale(mi, idx.len() as f64 / m as f64);
        total = Some(match total {
            Some(t) => g.add(t, weighted)?,
            None => weighted,
        });
    }
    total.ok_or(Error::DegenerateBatch("no label strata"))
}

fn center_column_var(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let mean = g.mean(x);
    let mb = g.broadcast(mean, &shape)?;
    g.sub(x, mb)
}

fn correlation_of_centered_var(g: &mut Graph, xc: Var, yc: Var) -> Result<Var> {
    let xy = g.mul(xc, yc)?;
    let num = g.sum(xy);
    let xx = g.mul(xc, xc)?;
    let sxx = g.sum(xx);
    let yy = g.mul(yc, yc)?;
    let syy = g.sum(yy);
    let den = g.mul(sxx, syy)?;
    let den = g.sqrt(den);
    g.div(num, den)
}

/// Pearson correlation of two `m x 1` columns.
pub fn correlation_var(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    let sx = g.value(x).shape().to_vec();
    let sy = g.value(y).shape().to_vec();
    if sx != sy {
        return Err(Error::ShapeMismatch {
            op: "correlation",
            left: sx,
            right: sy,
        });
    }
    for (v, name) in [(x, "correlation x"), (y, "correlation y")] {
        let c = centered(g.value(v).data());
        if crate::linalg::dot(&c, &c) <= 0.0 {
            return Err(Error::ZeroVariance(name));
        }
    }
    let xc = center_column_var(g, x)?;
    let yc = center_column_var(g, y)?;
    correlation_of_centered_var(g, xc, yc)
}

/// Partial correlation of two `m x 1` columns given a conditioning basis.
/// Degenerate residuals yield a constant zero node.
pub fn partial_correlation_var(g: &mut Graph, x: Var, y: Var, basis: &ConditioningBasis) -> Result<(Var, bool)> {
    let q = basis.matrix();
    let qt = q.transpose()?;
    let (qv, qtv) = (g.constant(q), g.constant(qt));
    let mut residuals = [x, y];
    for r in residuals.iter_mut() {
        let coef = g.matmul(qtv, *r)?;
        let fit = g.matmul(qv, coef)?;
        *r = g.sub(*r, fit)?;
    }
    let m = basis.len() as f64;
    for r in residuals {
        let d = g.value(r).data();
        if crate::linalg::dot(d, d) / m < DEGENERATE_VARIANCE {
            return Ok((g.constant(Tensor::scalar(0.0)), true));
        }
    }
    Ok((correlation_of_centered_var(g, residuals[0], residuals[1])?, false))
}
