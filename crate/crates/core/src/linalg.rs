//! Small linear-algebra kit: a CSR matrix for stencils, a Thomas solver and a
//! block-tridiagonal solver whose coupling blocks are multiples of the identity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Compressed sparse row matrix. Only what the stencils need.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists. Duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            *o = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.apply_into(x, &mut out);
        out
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    /// Largest absolute row sum, i.e. the ∞-norm of the operator.
    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                m[(i, c)] += v;
            }
        }
        m
    }
}

/// Solves a tridiagonal system by the Thomas algorithm. `lower[0]` and
/// `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::SingularSystem("tridiagonal solve"));
    }
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i - 1];
        if beta == 0.0 {
            return Err(Error::SingularSystem("tridiagonal solve"));
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Block tridiagonal matrix with dense diagonal blocks and coupling blocks
/// `lower[j]·I` (row j to j−1) and `upper[j]·I` (row j to j+1).
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<DMatrix<f64>>,
    pub upper: Vec<f64>,
}

impl BlockTridiagonal {
    /// Block Thomas elimination. `rhs` holds the stacked block vectors.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.factor()?.solve(rhs)
    }

    /// Forward elimination, reusable across right-hand sides.
    pub fn factor(&self) -> Result<BlockFactor> {
        let nb = self.diag.len();
        let mut inv: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
        for j in 0..nb {
            let mut d = self.diag[j].clone();
            if j > 0 {
                d -= &inv[j - 1] * (self.lower[j] * self.upper[j - 1]);
            }
            inv.push(
                d.try_inverse()
                    .ok_or(Error::SingularSystem("block tridiagonal solve"))?,
            );
        }
        Ok(BlockFactor {
            inv,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        })
    }

    /// Matrix-vector product, used to check solves.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let nb = self.diag.len();
        let m = if nb > 0 { self.diag[0].nrows() } else { 0 };
        let mut out = vec![0.0; nb * m];
        for j in 0..nb {
            let xj = DVector::from_column_slice(&x[j * m..(j + 1) * m]);
            let mut y = &self.diag[j] * xj;
            if j > 0 {
                for k in 0..m {
                    y[k] += self.lower[j] * x[(j - 1) * m + k];
                }
            }
            if j + 1 < nb {
                for k in 0..m {
                    y[k] += self.upper[j] * x[(j + 1) * m + k];
                }
            }
            out[j * m..(j + 1) * m].copy_from_slice(y.as_slice());
        }
        out
    }
}

/// Inverted Schur complements of a [`BlockTridiagonal`].
#[derive(Debug, Clone)]
pub struct BlockFactor {
    inv: Vec<DMatrix<f64>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BlockFactor {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let nb = self.inv.len();
        if nb == 0 {
            return Ok(Vec::new());
        }
        let m = self.inv[0].nrows();
        if rhs.len() != nb * m {
            return Err(Error::ShapeMismatch {
                expected: nb * m,
                got: rhs.len(),
            });
        }
        let mut r: Vec<DVector<f64>> = Vec::with_capacity(nb);
        for j in 0..nb {
            let mut rj = DVector::from_column_slice(&rhs[j * m..(j + 1) * m]);
            if j > 0 {
                rj -= (&self.inv[j - 1] * &r[j - 1]) * self.lower[j];
            }
            r.push(rj);
        }
        let mut x = vec![DVector::zeros(m); nb];
        x[nb - 1] = &self.inv[nb - 1] * &r[nb - 1];
        for j in (0..nb - 1).rev() {
            let t = &r[j] - &x[j + 1] * self.upper[j];
            x[j] = &self.inv[j] * t;
        }
        let mut out = Vec::with_capacity(nb * m);
        for xj in x {
            out.extend(xj.iter());
        }
        Ok(out)
    }
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ordinary least squares for `y ≈ X β`, returning `(β, residual sum of squares)`.
pub fn least_squares(design: &DMatrix<f64>, y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let yv = DVector::from_column_slice(y);
    let xtx = design.transpose() * design;
    let xty = design.transpose() * &yv;
    let beta = xtx
        .lu()
        .solve(&xty)
        .ok_or(Error::SingularSystem("least squares"))?;
    let resid = &yv - design * &beta;
    Ok((beta.iter().copied().collect(), resid.norm_squared()))
}
