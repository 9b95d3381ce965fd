//! Exponentiated-quadratic kernel and the covariance assemblies used by the
//! LMC and convolution-process priors.
//!
//! The EQ kernel is the normalized Gaussian form
//! `|L|^{-1/2} (2π)^{-P/2} exp(-½ τᵀ L⁻¹ τ)` with `L` diagonal, so its
//! zero-lag value depends on the lengthscales. Convolving two EQ smoothing
//! kernels with an EQ latent kernel stays in the family with the diagonal
//! covariances added, which is what [`cpm_cov`] evaluates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use crate::linalg::CovMatrix;
use crate::error::{Error, Result};
use crate::linalg::{factor_with_jitter, Factored};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal of the EQ covariance matrix `L` (one entry per input dimension).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqLengthscales(Vec<f64>);

impl EqLengthscales {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("lengthscale vector is empty"));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::domain(format!("lengthscale must be positive, got {bad}")));
        }
        Ok(EqLengthscales(values))
    }

    pub fn uniform(p: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; p])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Smoothing-kernel parameters for one latent parameter function: the
/// diagonal `κ` (length P) and one weight per latent process (length Q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingKernelParams {
    pub kappa: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SmoothingKernelParams {
    pub fn new(kappa: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if let Some(bad) = kappa.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::domain(format!(
                "smoothing lengthscale must be positive, got {bad}"
            )));
        }
        Ok(SmoothingKernelParams { kappa, weights })
    }
}

/// Linear combination coefficients `a[lpf, q]`, stored as `w = [W_1; …; W_Q]`
/// so that the flat index is `q·J + lpf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LccMatrix {
    q: usize,
    j: usize,
    w: Vec<f64>,
}

impl LccMatrix {
    pub fn from_flat(q: usize, j: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != q * j {
            return Err(Error::shape(format!(
                "LCC vector has {} entries, expected Q·J = {}",
                w.len(),
                q * j
            )));
        }
        Ok(LccMatrix { q, j, w })
    }

    pub fn zeros(q: usize, j: usize) -> Self {
        LccMatrix {
            q,
            j,
            w: vec![0.0; q * j],
        }
    }

    pub fn get(&self, lpf: usize, q: usize) -> f64 {
        self.w[q * self.j + lpf]
    }

    pub fn set(&mut self, lpf: usize, q: usize, value: f64) {
        self.w[q * self.j + lpf] = value;
    }

    /// Coefficients of one LPF across the latent processes.
    pub fn row(&self, lpf: usize) -> Vec<f64> {
        (0..self.q).map(|q| self.get(lpf, q)).collect()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.w
    }

    pub fn num_latent(&self) -> usize {
        self.q
    }

    pub fn num_lpf(&self) -> usize {
        self.j
    }
}

/// Which multi-output prior generates the latent parameter functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Lmc,
    Cpm,
}

/// How LPFs couple to the latent processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Coupling {
    Lmc(LccMatrix),
    /// One entry per LPF.
    Cpm(Vec<SmoothingKernelParams>),
}

/// Kernel hyper-parameters: one EQ covariance per latent process plus the coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    pub lengthscales: Vec<EqLengthscales>,
    pub coupling: Coupling,
}

impl KernelHyper {
    pub fn prior(&self) -> PriorKind {
        match self.coupling {
            Coupling::Lmc(_) => PriorKind::Lmc,
            Coupling::Cpm(_) => PriorKind::Cpm,
        }
    }

    pub fn num_latent(&self) -> usize {
        self.lengthscales.len()
    }
}

/// Inducing inputs: `Q` blocks for LMC, `J` blocks for CPM, each `M×P`.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingSet {
    pub blocks: Vec<DMatrix<f64>>,
}

impl InducingSet {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if let Some(first) = blocks.first() {
            let (m, p) = first.shape();
            if blocks.iter().any(|b| b.shape() != (m, p)) {
                return Err(Error::shape("inducing blocks differ in shape"));
            }
            if blocks.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
                return Err(Error::domain("inducing inputs must be finite"));
            }
        }
        Ok(InducingSet { blocks })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

#[inline]
fn log_norm(cov: &[f64]) -> f64 {
    -0.5 * cov.iter().map(|c| c.ln()).sum::<f64>() - 0.5 * cov.len() as f64 * LN_2PI
}

/// EQ kernel at lag `tau`.
pub fn eq_kernel(tau: &[f64], l: &EqLengthscales) -> Result<f64> {
    if tau.len() != l.dim() {
        return Err(Error::shape(format!(
            "lag has dimension {}, lengthscales {}",
            tau.len(),
            l.dim()
        )));
    }
    Ok(eq_value(tau, l.values()))
}

/// EQ kernel for a raw diagonal covariance; the caller guarantees positivity.
#[inline]
pub(crate) fn eq_value(tau: &[f64], cov: &[f64]) -> f64 {
    let quad: f64 = tau.iter().zip(cov).map(|(t, c)| t * t / c).sum();
    (log_norm(cov) - 0.5 * quad).exp()
}

/// Zero-lag EQ value.
#[inline]
pub(crate) fn eq_zero_lag(cov: &[f64]) -> f64 {
    log_norm(cov).exp()
}

/// Unit-weight EQ gram between the rows of `x` and `z`.
pub(crate) fn eq_cross(x: &DMatrix<f64>, z: &DMatrix<f64>, cov: &[f64]) -> DMatrix<f64> {
    let p = cov.len();
    let norm = log_norm(cov);
    let inv: Vec<f64> = cov.iter().map(|c| 1.0 / c).collect();
    DMatrix::from_fn(x.nrows(), z.nrows(), |a, b| {
        let mut quad = 0.0;
        for d in 0..p {
            let t = x[(a, d)] - z[(b, d)];
            quad += t * t * inv[d];
        }
        (norm - 0.5 * quad).exp()
    })
}

/// Symmetric unit-weight EQ gram of the rows of `z`.
pub(crate) fn eq_self(z: &DMatrix<f64>, cov: &[f64]) -> DMatrix<f64> {
    let mut k = eq_cross(z, z, cov);
    crate::linalg::symmetrize(&mut k);
    k
}

/// Back-propagates `G = ∂ℓ/∂K` through `K = weight · eq_cross(x, z, cov)`,
/// where `e` is the unit-weight gram already evaluated. Accumulates into the
/// gradients of `z`, optionally `x`, and the diagonal covariance; returns
/// `∂ℓ/∂weight`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn eq_cross_backward(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    cov: &[f64],
    e: &DMatrix<f64>,
    weight: f64,
    g: &DMatrix<f64>,
    mut dx: Option<&mut DMatrix<f64>>,
    dz: &mut DMatrix<f64>,
    dcov: &mut [f64],
) -> f64 {
    let p = cov.len();
    let inv: Vec<f64> = cov.iter().map(|c| 1.0 / c).collect();
    let mut dweight = 0.0;
    for a in 0..x.nrows() {
        for b in 0..z.nrows() {
            let ge = g[(a, b)] * e[(a, b)];
            if ge == 0.0 {
                continue;
            }
            dweight += ge;
            let wge = weight * ge;
            for d in 0..p {
                let t = x[(a, d)] - z[(b, d)];
                let s = wge * t * inv[d];
                dz[(b, d)] += s;
                if let Some(dx) = dx.as_deref_mut() {
                    dx[(a, d)] -= s;
                }
                dcov[d] += 0.5 * wge * (t * t * inv[d] * inv[d] - inv[d]);
            }
        }
    }
    dweight
}

/// `∂ eq(0; cov) / ∂cov_p`.
pub(crate) fn eq_zero_lag_dcov(cov: &[f64]) -> Vec<f64> {
    let k0 = eq_zero_lag(cov);
    cov.iter().map(|c| -0.5 * k0 / c).collect()
}

fn check_inputs(x: &DMatrix<f64>, x2: &DMatrix<f64>, p: usize) -> Result<()> {
    if x.ncols() != p || x2.ncols() != p {
        return Err(Error::shape(format!(
            "inputs have {} and {} columns, lengthscales have dimension {p}",
            x.ncols(),
            x2.ncols()
        )));
    }
    Ok(())
}

/// LMC covariance between LPFs with coefficient rows `a_row` and `a_row2`:
/// `Σ_q a_row[q]·a_row2[q]·k_q(x_n, x2_m)`.
pub fn lmc_cov_ff(
    x: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    a_row: &[f64],
    a_row2: &[f64],
    ls: &[EqLengthscales],
) -> Result<CovMatrix> {
    if a_row.len() != ls.len() || a_row2.len() != ls.len() {
        return Err(Error::shape(format!(
            "coefficient rows of length {} and {} for Q = {}",
            a_row.len(),
            a_row2.len(),
            ls.len()
        )));
    }
    let p = ls.first().map(|l| l.dim()).unwrap_or(x.ncols());
    check_inputs(x, x2, p)?;
    let mut k = DMatrix::zeros(x.nrows(), x2.nrows());
    for (q, l) in ls.iter().enumerate() {
        let c = a_row[q] * a_row2[q];
        if c != 0.0 {
            k += eq_cross(x, x2, l.values()) * c;
        }
    }
    Ok(CovMatrix::new(k))
}

/// Cross-covariance between one LPF and `u_q` evaluated at `zq`.
pub fn lmc_cov_fu(
    x: &DMatrix<f64>,
    zq: &DMatrix<f64>,
    a_djq: f64,
    lq: &EqLengthscales,
) -> Result<CovMatrix> {
    check_inputs(x, zq, lq.dim())?;
    Ok(CovMatrix::new(eq_cross(x, zq, lq.values()) * a_djq))
}

/// Convolution-process covariance between two LPFs at lag `tau`:
/// `Σ_q S1_q S2_q eq(τ; κ1 + κ2 + L_q)`.
pub fn cpm_cov(
    tau: &[f64],
    sk1: &SmoothingKernelParams,
    sk2: &SmoothingKernelParams,
    ls: &[EqLengthscales],
) -> Result<f64> {
    let p = tau.len();
    if sk1.kappa.len() != p || sk2.kappa.len() != p {
        return Err(Error::shape("smoothing lengthscales do not match lag dimension"));
    }
    if sk1.weights.len() != ls.len() || sk2.weights.len() != ls.len() {
        return Err(Error::shape("smoothing weights do not match Q"));
    }
    for k in sk1.kappa.iter().chain(&sk2.kappa) {
        if !(k.is_finite() && *k > 0.0) {
            return Err(Error::domain(format!("smoothing lengthscale must be positive, got {k}")));
        }
    }
    let mut total = 0.0;
    for (q, l) in ls.iter().enumerate() {
        if l.dim() != p {
            return Err(Error::shape("lengthscales do not match lag dimension"));
        }
        let cov = cpm_component_cov(&sk1.kappa, &sk2.kappa, l.values());
        total += sk1.weights[q] * sk2.weights[q] * eq_value(tau, &cov);
    }
    Ok(total)
}

#[inline]
pub(crate) fn cpm_component_cov(k1: &[f64], k2: &[f64], l: &[f64]) -> Vec<f64> {
    k1.iter().zip(k2).zip(l).map(|((a, b), c)| a + b + c).collect()
}

/// Convolution-process gram between LPFs `sk1` (rows of `x`) and `sk2` (rows of `x2`).
pub fn cpm_gram(
    x: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    sk1: &SmoothingKernelParams,
    sk2: &SmoothingKernelParams,
    ls: &[EqLengthscales],
) -> Result<CovMatrix> {
    let p = sk1.kappa.len();
    check_inputs(x, x2, p)?;
    // validates shapes and positivity once
    cpm_cov(&vec![0.0; p], sk1, sk2, ls)?;
    let mut k = DMatrix::zeros(x.nrows(), x2.nrows());
    for (q, l) in ls.iter().enumerate() {
        let c = sk1.weights[q] * sk2.weights[q];
        if c != 0.0 {
            let cov = cpm_component_cov(&sk1.kappa, &sk2.kappa, l.values());
            k += eq_cross(x, x2, &cov) * c;
        }
    }
    Ok(CovMatrix::new(k))
}

/// Factorized diagonal blocks of `K_uu`.
#[derive(Debug, Clone)]
pub struct BlockDiagCov {
    pub blocks: Vec<Factored>,
}

impl BlockDiagCov {
    /// Dense block-diagonal matrix (jitter included).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n: usize = self.blocks.iter().map(|b| b.dim()).sum();
        let mut out = DMatrix::zeros(n, n);
        let mut off = 0;
        for b in &self.blocks {
            let m = b.dim();
            out.view_mut((off, off), (m, m)).copy_from(&b.cov.entries);
            off += m;
        }
        out
    }

    pub fn max_jitter(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.cov.jitter_applied)
            .fold(0.0, f64::max)
    }
}

/// Unjittered prior covariance of one inducing block.
pub(crate) fn kuu_block_raw(z: &DMatrix<f64>, hyper: &KernelHyper, block: usize) -> DMatrix<f64> {
    match &hyper.coupling {
        Coupling::Lmc(_) => eq_self(z, hyper.lengthscales[block].values()),
        Coupling::Cpm(sk) => {
            let s = &sk[block];
            let mut k = DMatrix::zeros(z.nrows(), z.nrows());
            for (q, l) in hyper.lengthscales.iter().enumerate() {
                let c = s.weights[q] * s.weights[q];
                if c != 0.0 {
                    let cov = cpm_component_cov(&s.kappa, &s.kappa, l.values());
                    k += eq_self(z, &cov) * c;
                }
            }
            k
        }
    }
}

/// Assembles and factorizes every block of `K_uu`: `Q` EQ grams for LMC,
/// `J` convolved grams for CPM.
pub fn assemble_kuu(z: &InducingSet, hyper: &KernelHyper) -> Result<BlockDiagCov> {
    let expected = match &hyper.coupling {
        Coupling::Lmc(_) => hyper.lengthscales.len(),
        Coupling::Cpm(sk) => sk.len(),
    };
    if z.len() != expected {
        return Err(Error::shape(format!(
            "{} inducing blocks, prior needs {expected}",
            z.len()
        )));
    }
    for blk in &z.blocks {
        let p = hyper.lengthscales.first().map(|l| l.dim()).unwrap_or(0);
        if blk.ncols() != p {
            return Err(Error::shape("inducing inputs do not match lengthscale dimension"));
        }
    }
    let blocks = z
        .blocks
        .iter()
        .enumerate()
        .map(|(b, zb)| factor_with_jitter(&kuu_block_raw(zb, hyper, b)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockDiagCov { blocks })
}
