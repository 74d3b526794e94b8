//! Small dense linear algebra: matrix products, LU solves and a left
//! pseudo-inverse. Everything works on row-major slices.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

/// `out += op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
///
/// With `a_t` set, `a` is stored as `k x m`; with `b_t` set, `b` is stored
/// as `n x k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    match (a_t, b_t) {
        (false, false) => {
            for i in 0..m {
                let out_row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let b_row = &b[p * n..(p + 1) * n];
                    for (o, &bv) in out_row.iter_mut().zip(b_row) {
                        *o += aip * bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let b_row = &b[j * k..(j + 1) * k];
                    out[i * n + j] += dot(a_row, b_row);
                }
            }
        }
        (true, false) => {
            for p in 0..k {
                let b_row = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let api = a[p * m + i];
                    if api == 0.0 {
                        continue;
                    }
                    let out_row = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in out_row.iter_mut().zip(b_row) {
                        *o += api * bv;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += a[p * m + i] * b[j * k + p];
                    }
                    out[i * n + j] += s;
                }
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorise without reassociating.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// LU factorisation with partial pivoting of a square matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Tensor) -> Result<Lu> {
        let (n, c) = a.dims2()?;
        if n != c {
            return Err(Error::ShapeMismatch {
                op: "lu",
                left: a.shape().to_vec(),
                right: vec![n, n],
            });
        }
        if !a.all_finite() {
            return Err(Error::Factorization("non-finite matrix entries"));
        }
        let mut lu = a.data().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        for col in 0..n {
            let mut piv = col;
            let mut best = lu[col * n + col].abs();
            for r in col + 1..n {
                let v = lu[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best <= scale * 1e-14 {
                return Err(Error::Factorization("singular matrix"));
            }
            if piv != col {
                for j in 0..n {
                    lu.swap(col * n + j, piv * n + j);
                }
                perm.swap(col, piv);
            }
            let d = lu[col * n + col];
            for r in col + 1..n {
                let f = lu[r * n + col] / d;
                lu[r * n + col] = f;
                if f != 0.0 {
                    for j in col + 1..n {
                        lu[r * n + j] -= f * lu[col * n + j];
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &Tensor) -> Result<Tensor> {
        let (rows, k) = b.dims2()?;
        self.check_rhs(b, rows)?;
        let n = self.n;
        let mut x = vec![0.0; n * k];
        for i in 0..n {
            let src = self.perm[i];
            x[i * k..(i + 1) * k].copy_from_slice(&b.data()[src * k..(src + 1) * k]);
        }
        // forward substitution, unit lower triangle
        for i in 0..n {
            for p in 0..i {
                let l = self.lu[i * n + p];
                if l != 0.0 {
                    for j in 0..k {
                        x[i * k + j] -= l * x[p * k + j];
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for p in i + 1..n {
                let u = self.lu[i * n + p];
                if u != 0.0 {
                    for j in 0..k {
                        x[i * k + j] -= u * x[p * k + j];
                    }
                }
            }
            let d = self.lu[i * n + i];
            for j in 0..k {
                x[i * k + j] /= d;
            }
        }
        finite_or_err(Tensor::new(b.shape().to_vec(), x)?)
    }

    /// Solves `Aᵀ X = B`.
    pub fn solve_transpose(&self, b: &Tensor) -> Result<Tensor> {
        let (rows, k) = b.dims2()?;
        self.check_rhs(b, rows)?;
        let n = self.n;
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ y = b, Lᵀ z = y, x = Pᵀ z.
        let mut y = b.data().to_vec();
        for i in 0..n {
            for p in 0..i {
                let u = self.lu[p * n + i];
                if u != 0.0 {
                    for j in 0..k {
                        y[i * k + j] -= u * y[p * k + j];
                    }
                }
            }
            let d = self.lu[i * n + i];
            for j in 0..k {
                y[i * k + j] /= d;
            }
        }
        for i in (0..n).rev() {
            for p in i + 1..n {
                let l = self.lu[p * n + i];
                if l != 0.0 {
                    for j in 0..k {
                        y[i * k + j] -= l * y[p * k + j];
                    }
                }
            }
        }
        let mut x = vec![0.0; n * k];
        for i in 0..n {
            let dst = self.perm[i];
            x[dst * k..(dst + 1) * k].copy_from_slice(&y[i * k..(i + 1) * k]);
        }
        finite_or_err(Tensor::new(b.shape().to_vec(), x)?)
    }

    fn check_rhs(&self, b: &Tensor, rows: usize) -> Result<()> {
        if rows != self.n {
            return Err(Error::ShapeMismatch {
                op: "solve",
                left: vec![self.n, self.n],
                right: b.shape().to_vec(),
            });
        }
        if !b.all_finite() {
            return Err(Error::Factorization("non-finite right-hand side"));
        }
        Ok(())
    }
}

fn finite_or_err(t: Tensor) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::Factorization("solution is not finite"))
    }
}

/// Solves `A X = B` for square `A`.
pub fn solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Lu::factor(a)?.solve(b)
}

/// Left pseudo-inverse `(AᵀA)⁻¹Aᵀ` of a tall matrix with full column rank.
pub fn left_pseudo_inverse(a: &Tensor) -> Result<Tensor> {
    let (rows, cols) = a.dims2()?;
    if rows < cols {
        return Err(Error::InvalidModel("matrix has more columns than rows"));
    }
    let at = a.transpose()?;
    let gram = at.matmul(a)?;
    // Rank check relative to the column norms so rescaled columns are fine.
    let norms: Vec<f64> = (0..cols).map(|j| libm::sqrt(gram.get2(j, j))).collect();
    if norms.iter().any(|&n| n == 0.0) {
        return Err(Error::InvalidModel("matrix is rank deficient"));
    }
    let mut corr = gram.clone();
    for i in 0..cols {
        for j in 0..cols {
            corr.data_mut()[i * cols + j] /= norms[i] * norms[j];
        }
    }
    let lu = Lu::factor(&corr).map_err(|_| Error::InvalidModel("matrix is rank deficient"))?;
    let det: f64 = (0..cols).map(|i| lu.lu[i * cols + i]).product();
    if det.abs() < 1e-10 {
        return Err(Error::InvalidModel("matrix is rank deficient"));
    }
    Lu::factor(&gram)?.solve(&at)
}
