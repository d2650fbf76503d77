//! Small dense and matrix-free linear solvers.
//!
//! The systems in this crate are either tiny and dense (spline fits, ridge
//! normal equations) or large, sparse and symmetric positive definite
//! (gradient-domain compositing). Those two cases are covered by a dense LU
//! with partial pivoting and by conjugate gradient on an operator closure.

use crate::error::{Error, Result};

/// Below this ratio of smallest to largest pivot magnitude a matrix is treated as singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape("square matrix", n * n, data.len()));
        }
        Ok(Self { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.n + c] = v;
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.n + c] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        self.data
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Factors a copy of the matrix. See [`LuFactorization`].
    pub fn lu(&self) -> Result<LuFactorization> {
        LuFactorization::new(self.clone())
    }
}

/// `P A = L U` with partial (row) pivoting; `L` has a unit diagonal and shares storage with `U`.
#[derive(Debug, Clone)]
pub struct LuFactorization {
    lu: SquareMatrix,
    /// `perm[i]` is the original row that ended up in row `i`.
    perm: Vec<usize>,
    pivot_ratio: f64,
}

impl LuFactorization {
    /// Fails with [`Error::SingularSystem`] when `min |pivot| / max |pivot|` drops
    /// below [`SINGULAR_PIVOT_RATIO`]. No regularization is ever added.
    pub fn new(mut a: SquareMatrix) -> Result<Self> {
        let n = a.n;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for k in 0..n {
            let (p, pmag) =
                (k..n)
                    .map(|r| (r, a.get(r, k).abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !pmag.is_finite() {
                return Err(Error::NonFinite("linear system"));
            }
            if p != k {
                for c in 0..n {
                    a.data.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            min_pivot = min_pivot.min(pmag);
            max_pivot = max_pivot.max(pmag);
            if pmag == 0.0 {
                return Err(Error::SingularSystem {
                    size: n,
                    pivot_ratio: 0.0,
                });
            }
            let pivot = a.get(k, k);
            for r in k + 1..n {
                let factor = a.get(r, k) / pivot;
                a.set(r, k, factor);
                if factor != 0.0 {
                    for c in k + 1..n {
                        let v = a.get(k, c);
                        a.add(r, c, -factor * v);
                    }
                }
            }
        }
        let pivot_ratio = if n == 0 { 1.0 } else { min_pivot / max_pivot };
        if pivot_ratio < SINGULAR_PIVOT_RATIO {
            return Err(Error::SingularSystem { size: n, pivot_ratio });
        }
        Ok(Self {
            lu: a,
            perm,
            pivot_ratio,
        })
    }

    pub fn size(&self) -> usize {
        self.lu.n
    }

    /// Smallest over largest pivot magnitude.
    pub fn pivot_ratio(&self) -> f64 {
        self.pivot_ratio
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.n;
        assert_eq!(b.len(), n, "right-hand side length");
        let mut x: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for r in 0..n {
            let mut acc = x[r];
            for c in 0..r {
                acc -= self.lu.get(r, c) * x[c];
            }
            x[r] = acc;
        }
        for r in (0..n).rev() {
            let mut acc = x[r];
            for c in r + 1..n {
                acc -= self.lu.get(r, c) * x[c];
            }
            x[r] = acc / self.lu.get(r, r);
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.n;
        assert_eq!(b.len(), n, "right-hand side length");
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ z = b, then Lᵀ y = z, then x = Pᵀ y.
        let mut z = b.to_vec();
        for r in 0..n {
            let mut acc = z[r];
            for c in 0..r {
                acc -= self.lu.get(c, r) * z[c];
            }
            z[r] = acc / self.lu.get(r, r);
        }
        for r in (0..n).rev() {
            let mut acc = z[r];
            for c in r + 1..n {
                acc -= self.lu.get(c, r) * z[c];
            }
            z[r] = acc;
        }
        let mut x = vec![0.0; n];
        for (i, &orig) in self.perm.iter().enumerate() {
            x[orig] = z[i];
        }
        x
    }
}

/// Outcome of a conjugate-gradient run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// `‖b − A x‖ / ‖b‖` at exit (0 when `b = 0`).
    pub relative_residual: f64,
}

/// Conjugate gradient for a symmetric positive definite operator.
///
/// `apply(x, out)` must write `A x` into `out`. `x` holds the initial guess and
/// receives the solution. Stops when the relative residual drops below `tol`;
/// fails with [`Error::NoConvergence`] after `max_iter` iterations.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgReport> {
    let n = b.len();
    assert_eq!(x.len(), n);
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let rel = rr.sqrt() / b_norm;
        if !rel.is_finite() {
            return Err(Error::NonFinite("conjugate gradient residual"));
        }
        if rel < tol {
            return Ok(CgReport {
                iterations,
                relative_residual: rel,
            });
        }
        if iterations >= max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: rel,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NoConvergence {
                iterations,
                residual: rel,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        // Recompute the true residual now and then to stop drift on long runs.
        if iterations % 50 == 49 {
            apply(x, &mut ax);
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iterations += 1;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
