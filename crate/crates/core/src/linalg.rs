//! Dense linear-algebra helpers shared by the model: jittered Cholesky,
//! inverses from factors and small reductions.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// First jitter level, relative to the mean of the diagonal.
pub const JITTER_START: f64 = 1e-8;
/// Last jitter level tried before giving up.
pub const JITTER_MAX: f64 = 1e-2;

/// A covariance matrix together with the jitter that was added to its diagonal.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    pub entries: DMatrix<f64>,
    pub jitter_applied: f64,
}

impl CovMatrix {
    pub fn new(entries: DMatrix<f64>) -> Self {
        CovMatrix {
            entries,
            jitter_applied: 0.0,
        }
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }
}

/// Cholesky factor of a jittered covariance plus the jittered matrix itself.
#[derive(Debug, Clone)]
pub struct Factored {
    pub cov: CovMatrix,
    pub chol: Cholesky<f64, Dyn>,
}

impl Factored {
    pub fn dim(&self) -> usize {
        self.cov.entries.nrows()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = self.chol.inverse();
        symmetrize(&mut inv);
        inv
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn log_det(&self) -> f64 {
        log_det_from_lower(self.chol.l_dirty())
    }
}

/// Factorizes `k + jitter·I` using the escalation policy: start at
/// `1e-8·mean(diag)` and multiply by ten up to `1e-2·mean(diag)`.
pub fn factor_with_jitter(k: &DMatrix<f64>) -> Result<Factored> {
    if k.nrows() != k.ncols() {
        return Err(Error::shape(format!(
            "expected square matrix, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    let n = k.nrows();
    let mean_diag = if n == 0 {
        1.0
    } else {
        k.diagonal().iter().sum::<f64>() / n as f64
    };
    let scale = if mean_diag.is_finite() && mean_diag > 0.0 {
        mean_diag
    } else {
        1.0
    };
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut jittered = k.clone();
        for i in 0..n {
            jittered[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(jittered.clone()) {
            if chol.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok(Factored {
                    cov: CovMatrix {
                        entries: jittered,
                        jitter_applied: jitter,
                    },
                    chol,
                });
            }
        }
        rel *= 10.0;
    }
    Err(Error::IllConditioned {
        max_jitter: JITTER_MAX * scale,
    })
}

/// Cholesky without jitter; `None` when the matrix is not positive definite.
pub fn cholesky_exact(k: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(k.clone())
        .filter(|c| c.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0))
}

/// `ln|LLᵀ|` from a lower-triangular factor.
pub fn log_det_from_lower(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Row-wise quadratic form: entry `n` is `a[n,:] · b · a[n,:]ᵀ`.
pub fn rowwise_quad(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    let ab = a * b;
    DVector::from_iterator(
        a.nrows(),
        (0..a.nrows()).map(|n| ab.row(n).dot(&a.row(n))),
    )
}

/// `aᵀ diag(w) a`.
pub fn weighted_gram(a: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (n, mut row) in scaled.row_iter_mut().enumerate() {
        row *= w[n];
    }
    let mut out = a.transpose() * scaled;
    symmetrize(&mut out);
    out
}

/// Lower triangle (including the diagonal) of a square matrix.
pub fn lower_triangle(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.lower_triangle()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Symmetric eigenvalues, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}
