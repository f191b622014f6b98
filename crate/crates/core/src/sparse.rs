//! Compressed sparse row matrices and the iterative solvers used by the
//! parameterization.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix from `(row, col, value)` triplets.
    /// Duplicate entries are summed; columns within a row end up sorted.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.n) {
            *out = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// Pattern and values are symmetric to within `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, v)| (self.get(c, r) - v).abs() <= tol))
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Relative 2-norm residual at which iteration stops.
    pub tolerance: f64,
    /// Iteration cap as a multiple of the system size.
    pub max_iter_factor: usize,
    /// Systems smaller than this are factorized densely.
    pub dense_below: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tolerance: 1e-10,
            max_iter_factor: 10,
            dense_below: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    DenseLu,
    ConjugateGradient,
    BiCgStab,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    pub method: SolveMethod,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn jacobi(a: &CsrMatrix) -> Result<Vec<f64>> {
    a.diagonal()
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            if d.abs() > 0.0 && d.is_finite() {
                Ok(1.0 / d)
            } else {
                Err(Error::SolverNonConvergence(format!("zero diagonal in row {i}")))
            }
        })
        .collect()
}

/// Jacobi-preconditioned conjugate gradient for symmetric positive definite `a`.
pub fn pcg(a: &CsrMatrix, b: &[f64], settings: &SolverSettings) -> Result<(Vec<f64>, usize)> {
    let n = a.dim();
    let inv_diag = jacobi(a)?;
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let max_iter = settings.max_iter_factor * n.max(1);
    for it in 1..=max_iter {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::SolverNonConvergence(format!(
                "matrix not positive definite (p'Ap = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= settings.tolerance * bnorm {
            return Ok((x, it));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverNonConvergence(format!(
        "conjugate gradient hit {max_iter} iterations"
    )))
}

/// Jacobi-preconditioned BiCGSTAB for general nonsingular `a`.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], settings: &SolverSettings) -> Result<(Vec<f64>, usize)> {
    let n = a.dim();
    let inv_diag = jacobi(a)?;
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&inv_diag).map(|(v, d)| v * d).collect() };
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let max_iter = settings.max_iter_factor * n.max(1);
    for it in 1..=max_iter {
        let rho_next = dot(&r_hat, &r);
        if rho_next == 0.0 || omega == 0.0 {
            return Err(Error::SolverNonConvergence("BiCGSTAB breakdown".into()));
        }
        let beta = (rho_next / rho) * (alpha / omega);
        rho = rho_next;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = precond(&p);
        a.mul_vec(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= settings.tolerance * bnorm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok((x, it));
        }
        let z = precond(&s);
        a.mul_vec(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= settings.tolerance * bnorm {
            return Ok((x, it));
        }
        if !alpha.is_finite() || !omega.is_finite() {
            return Err(Error::SolverNonConvergence("BiCGSTAB produced non-finite step".into()));
        }
    }
    Err(Error::SolverNonConvergence(format!("BiCGSTAB hit {max_iter} iterations")))
}

/// Solves `a x = b` for every column of `rhs`, picking dense LU for small
/// systems, CG for symmetric ones and BiCGSTAB otherwise.
pub fn solve_columns(
    a: &CsrMatrix,
    rhs: &[Vec<f64>],
    symmetric: bool,
    settings: &SolverSettings,
) -> Result<(Vec<Vec<f64>>, SolveInfo)> {
    let n = a.dim();
    if n < settings.dense_below {
        let lu = a.to_dense().lu();
        let mut out = Vec::with_capacity(rhs.len());
        for b in rhs {
            let x = lu
                .solve(&nalgebra::DVector::from_column_slice(b))
                .ok_or_else(|| Error::SolverNonConvergence("singular system".into()))?;
            out.push(x.as_slice().to_vec());
        }
        return Ok((
            out,
            SolveInfo {
                method: SolveMethod::DenseLu,
                iterations: 0,
            },
        ));
    }
    let mut out = Vec::with_capacity(rhs.len());
    let mut iterations = 0;
    for b in rhs {
        let (x, it) = if symmetric {
            pcg(a, b, settings)?
        } else {
            bicgstab(a, b, settings)?
        };
        iterations = iterations.max(it);
        out.push(x);
    }
    let method = if symmetric {
        SolveMethod::ConjugateGradient
    } else {
        SolveMethod::BiCgStab
    };
    Ok((out, SolveInfo { method, iterations }))
}

/// `||a x - b||_inf / ||b||_inf`, or the absolute residual when `b` is zero.
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let mut ax = vec![0.0; a.dim()];
    a.mul_vec(x, &mut ax);
    let res = ax
        .iter()
        .zip(b)
        .map(|(l, r)| (l - r).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        res / scale
    } else {
        res
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// 1D Poisson matrix, diagonally dominant after a shift.
    fn poisson(n: usize, shift: f64, skew: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i > 0 {
                t.push((i, i - 1, -1.0 + skew));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0 - skew));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(1, 0), 2.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn cg_and_bicgstab_match_dense() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 300;
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let settings = SolverSettings::default();

        let sym = poisson(n, 0.01, 0.0);
        assert!(sym.is_symmetric(0.0));
        let dense = sym.to_dense().lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
        let (x, _) = pcg(&sym, &b, &settings).unwrap();
        for i in 0..n {
            assert!((x[i] - dense[i]).abs() < 1e-8 * dense.amax());
        }

        let nonsym = poisson(n, 0.5, 0.3);
        assert!(!nonsym.is_symmetric(1e-12));
        let dense = nonsym.to_dense().lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
        let (x, _) = bicgstab(&nonsym, &b, &settings).unwrap();
        for i in 0..n {
            assert!((x[i] - dense[i]).abs() < 1e-8 * dense.amax());
        }
        assert!(relative_residual(&nonsym, &x, &b) < 1e-9);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = poisson(5, 0.0, 0.0);
        let (x, it) = pcg(&a, &[0.0; 5], &SolverSettings::default()).unwrap();
        assert_eq!(x, vec![0.0; 5]);
        assert_eq!(it, 0);
    }

    #[test]
    fn indefinite_matrix_rejected_by_cg() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (1, 1, -1.0)]);
        let err = pcg(&a, &[1.0, 1.0], &SolverSettings::default()).unwrap_err();
        assert!(matches!(err, Error::SolverNonConvergence(_)));
    }
}
