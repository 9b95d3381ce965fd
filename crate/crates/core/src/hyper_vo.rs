//! The hyper-parameter vector θ (inducing inputs plus kernel parameters with
//! their links), the exploratory distribution `q(θ) = N(μ, diag σ²)` and the
//! variational-optimization bound built on it.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_io::{Dataset, MiniBatch};
use crate::error::{Error, Result};
use crate::kernels::{
    Coupling, EqLengthscales, InducingSet, KernelHyper, LccMatrix, PriorKind, SmoothingKernelParams,
};
use crate::mogp::{
    evaluate, CouplingGrad, Evaluation, GradRequest, ModelConfig, ParamGrads, Params,
    VariationalPosterior,
};

/// Segment boundaries of θ. LMC: `[Z, L, w]`; CPM: `[Z, L, κ, S]`. `Z` is
/// stored block by block, row-major within a block; `w` and `S` use the
/// LCC flat layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaLayout {
    pub prior: PriorKind,
    pub num_latent: usize,
    pub num_lpf: usize,
    pub num_inducing: usize,
    pub input_dim: usize,
    pub num_blocks: usize,
}

impl ThetaLayout {
    pub fn new(config: &ModelConfig) -> Self {
        ThetaLayout {
            prior: config.prior,
            num_latent: config.num_latent,
            num_lpf: config.num_lpf(),
            num_inducing: config.num_inducing,
            input_dim: config.input_dim,
            num_blocks: config.num_blocks(),
        }
    }

    pub fn inducing(&self) -> Range<usize> {
        0..self.num_blocks * self.num_inducing * self.input_dim
    }

    pub fn lengthscales(&self) -> Range<usize> {
        let s = self.inducing().end;
        s..s + self.num_latent * self.input_dim
    }

    /// Smoothing-kernel lengthscales; empty for LMC.
    pub fn kappa(&self) -> Range<usize> {
        let s = self.lengthscales().end;
        match self.prior {
            PriorKind::Lmc => s..s,
            PriorKind::Cpm => s..s + self.num_lpf * self.input_dim,
        }
    }

    /// LCCs (LMC) or smoothing weights (CPM).
    pub fn coupling(&self) -> Range<usize> {
        let s = self.kappa().end;
        s..s + self.num_latent * self.num_lpf
    }

    pub fn len(&self) -> usize {
        self.coupling().end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether coordinate `i` goes through the exp link.
    pub fn is_log_linked(&self, i: usize) -> bool {
        self.lengthscales().contains(&i) || self.kappa().contains(&i)
    }
}

/// `ln v`, nudged by a few ulps so that `exp` maps it back to `v` exactly
/// whenever such a float exists.
fn log_exact(v: f64) -> f64 {
    let t = v.ln();
    if t.exp() == v {
        return t;
    }
    let mut best = t;
    let mut best_err = (t.exp() - v).abs();
    for dir in [1.0f64, -1.0] {
        let mut c = t;
        for _ in 0..4 {
            c = if dir > 0.0 { c.next_up() } else { c.next_down() };
            let e = c.exp();
            if e == v {
                return c;
            }
            if (e - v).abs() < best_err {
                best = c;
                best_err = (e - v).abs();
            }
        }
    }
    best
}

/// Flattens parameters into θ, applying `log` to lengthscales and κ.
pub fn pack(layout: &ThetaLayout, params: &Params) -> Result<Vec<f64>> {
    let mut theta = Vec::with_capacity(layout.len());
    if params.inducing.len() != layout.num_blocks {
        return Err(Error::shape("inducing block count does not match the layout"));
    }
    for z in &params.inducing.blocks {
        if z.shape() != (layout.num_inducing, layout.input_dim) {
            return Err(Error::shape("inducing block shape does not match the layout"));
        }
        for r in 0..z.nrows() {
            theta.extend(z.row(r).iter());
        }
    }
    if params.hyper.lengthscales.len() != layout.num_latent {
        return Err(Error::shape("lengthscale count does not match the layout"));
    }
    for l in &params.hyper.lengthscales {
        if l.dim() != layout.input_dim {
            return Err(Error::shape("lengthscale dimension does not match the layout"));
        }
        theta.extend(l.values().iter().map(|&v| log_exact(v)));
    }
    match (&params.hyper.coupling, layout.prior) {
        (Coupling::Lmc(a), PriorKind::Lmc) => {
            if a.num_latent() != layout.num_latent || a.num_lpf() != layout.num_lpf {
                return Err(Error::shape("LCC matrix does not match the layout"));
            }
            theta.extend_from_slice(a.as_flat());
        }
        (Coupling::Cpm(sk), PriorKind::Cpm) => {
            if sk.len() != layout.num_lpf {
                return Err(Error::shape("smoothing kernel count does not match the layout"));
            }
            for s in sk {
                if s.kappa.len() != layout.input_dim || s.weights.len() != layout.num_latent {
                    return Err(Error::shape("smoothing kernel does not match the layout"));
                }
                for &k in &s.kappa {
                    if !(k > 0.0 && k.is_finite()) {
                        return Err(Error::domain(format!("κ must be positive, got {k}")));
                    }
                    theta.push(log_exact(k));
                }
            }
            let mut s_flat = LccMatrix::zeros(layout.num_latent, layout.num_lpf);
            for (l, s) in sk.iter().enumerate() {
                for (q, &w) in s.weights.iter().enumerate() {
                    s_flat.set(l, q, w);
                }
            }
            theta.extend_from_slice(s_flat.as_flat());
        }
        _ => return Err(Error::shape("coupling does not match the layout prior")),
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("packed θ".into()));
    }
    Ok(theta)
}

/// Inverse of [`pack`].
pub fn unpack(layout: &ThetaLayout, theta: &[f64]) -> Result<Params> {
    if theta.len() != layout.len() {
        return Err(Error::shape(format!(
            "θ has length {}, layout needs {}",
            theta.len(),
            layout.len()
        )));
    }
    let (m, p) = (layout.num_inducing, layout.input_dim);
    let zs = &theta[layout.inducing()];
    let blocks = zs
        .chunks(m * p)
        .map(|c| nalgebra::DMatrix::from_row_slice(m, p, c))
        .collect();
    let inducing = InducingSet::new(blocks)?;
    let lengthscales = theta[layout.lengthscales()]
        .chunks(p)
        .map(|c| EqLengthscales::new(c.iter().map(|t| t.exp()).collect()))
        .collect::<Result<Vec<_>>>()?;
    let flat = theta[layout.coupling()].to_vec();
    let coupling = match layout.prior {
        PriorKind::Lmc => Coupling::Lmc(LccMatrix::from_flat(layout.num_latent, layout.num_lpf, flat)?),
        PriorKind::Cpm => {
            let s = LccMatrix::from_flat(layout.num_latent, layout.num_lpf, flat)?;
            let kappa = &theta[layout.kappa()];
            Coupling::Cpm(
                (0..layout.num_lpf)
                    .map(|l| {
                        SmoothingKernelParams::new(
                            kappa[l * p..(l + 1) * p].iter().map(|t| t.exp()).collect(),
                            s.row(l),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        }
    };
    Ok(Params {
        inducing,
        hyper: KernelHyper {
            lengthscales,
            coupling,
        },
    })
}

/// Chains parameter gradients through the links into θ-space.
pub fn theta_grad_from_params(layout: &ThetaLayout, params: &Params, g: &ParamGrads) -> Vec<f64> {
    let mut out = Vec::with_capacity(layout.len());
    for dz in &g.inducing {
        for r in 0..dz.nrows() {
            out.extend(dz.row(r).iter());
        }
    }
    for (l, dl) in params.hyper.lengthscales.iter().zip(&g.lengthscales) {
        out.extend(l.values().iter().zip(dl).map(|(v, d)| v * d));
    }
    match (&g.coupling, &params.hyper.coupling) {
        (CouplingGrad::Lmc(da), _) => out.extend_from_slice(da.as_flat()),
        (CouplingGrad::Cpm { kappa, weights }, Coupling::Cpm(sk)) => {
            for (s, dk) in sk.iter().zip(kappa) {
                out.extend(s.kappa.iter().zip(dk).map(|(v, d)| v * d));
            }
            out.extend_from_slice(weights.as_flat());
        }
        (CouplingGrad::Cpm { .. }, Coupling::Lmc(_)) => unreachable!("gradient and parameters share a prior"),
    }
    out
}

/// Negative ELBO at θ with its θ-gradient and the variational gradients.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_theta<R: Rng + ?Sized>(
    config: &ModelConfig,
    layout: &ThetaLayout,
    data: &Dataset,
    batch: &MiniBatch,
    post: &VariationalPosterior,
    theta: &[f64],
    rng: &mut R,
    req: GradRequest,
) -> Result<(Evaluation, Option<Vec<f64>>)> {
    let params = unpack(layout, theta)?;
    let eval = evaluate(config, data, batch, post, &params, rng, req)?;
    let g = eval
        .params
        .as_ref()
        .map(|pg| theta_grad_from_params(layout, &params, pg));
    if let Some(g) = &g {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("θ-gradient".into()));
        }
    }
    Ok((eval, g))
}

/// Central finite-difference θ-gradient with step `1e-5·(1+|θ_i|)`. Every
/// evaluation reuses `seed`, so Monte Carlo noise is common to both sides.
pub fn fd_theta_gradient(
    config: &ModelConfig,
    layout: &ThetaLayout,
    data: &Dataset,
    batch: &MiniBatch,
    post: &VariationalPosterior,
    theta: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::SeedableRng;
    let f = |t: &[f64]| -> Result<f64> {
        let params = unpack(layout, t)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Ok(evaluate(config, data, batch, post, &params, &mut rng, GradRequest::default())?.nelbo)
    };
    let mut t = theta.to_vec();
    let mut g = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let h = 1e-5 * (1.0 + theta[i].abs());
        t[i] = theta[i] + h;
        let up = f(&t)?;
        t[i] = theta[i] - h;
        let down = f(&t)?;
        t[i] = theta[i];
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// Prior `p(θ) = N(0, λ₁⁻¹ I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorPrecision {
    lambda1: f64,
}

impl PriorPrecision {
    pub fn new(lambda1: f64) -> Result<Self> {
        if !(lambda1 > 0.0 && lambda1.is_finite()) {
            return Err(Error::domain(format!("λ₁ must be positive, got {lambda1}")));
        }
        Ok(PriorPrecision { lambda1 })
    }

    pub fn value(&self) -> f64 {
        self.lambda1
    }
}

impl Default for PriorPrecision {
    fn default() -> Self {
        PriorPrecision { lambda1: 1e-3 }
    }
}

/// `q(θ) = N(μ, diag σ²)` with `p = σ⁻² − λ₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploratoryDist {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub p: Vec<f64>,
}

impl ExploratoryDist {
    /// From a mean and a common initial variance `σ² ≤ 1/λ₁`.
    pub fn new(mu: Vec<f64>, sigma2: f64, lambda1: PriorPrecision) -> Result<Self> {
        let p = 1.0 / sigma2 - lambda1.value();
        if !(sigma2 > 0.0) || p < 0.0 {
            return Err(Error::domain(format!(
                "initial variance must lie in (0, 1/λ₁], got {sigma2}"
            )));
        }
        let n = mu.len();
        Ok(ExploratoryDist {
            mu,
            sigma2: vec![sigma2; n],
            p: vec![p; n],
        })
    }

    /// From a mean and precision offsets `p ≥ 0`.
    pub fn from_precision_offset(mu: Vec<f64>, p: Vec<f64>, lambda1: PriorPrecision) -> Result<Self> {
        if mu.len() != p.len() {
            return Err(Error::shape("μ and p differ in length"));
        }
        if p.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::domain("precision offsets must be nonnegative"));
        }
        let sigma2 = p.iter().map(|v| 1.0 / (v + lambda1.value())).collect();
        Ok(ExploratoryDist { mu, sigma2, p })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma2)
            .map(|(m, s2)| m + s2.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// `KL(q(θ) ‖ p(θ))` for diagonal Gaussians.
pub fn kl_exploratory(q: &ExploratoryDist, lambda1: PriorPrecision) -> f64 {
    let l = lambda1.value();
    0.5 * q
        .mu
        .iter()
        .zip(&q.sigma2)
        .map(|(m, s2)| l * s2 + l * m * m - 1.0 - (l * s2).ln())
        .sum::<f64>()
}

/// Monte Carlo VO bound: mean negative ELBO over `s_theta` draws of θ plus
/// `KL(q(θ) ‖ p(θ))`.
#[allow(clippy::too_many_arguments)]
pub fn vo_bound<R: Rng + ?Sized>(
    config: &ModelConfig,
    layout: &ThetaLayout,
    data: &Dataset,
    batch: &MiniBatch,
    post: &VariationalPosterior,
    qtheta: &ExploratoryDist,
    lambda1: PriorPrecision,
    rng: &mut R,
    s_theta: usize,
) -> Result<f64> {
    if s_theta == 0 {
        return Err(Error::domain("need at least one θ sample"));
    }
    let mut acc = 0.0;
    for _ in 0..s_theta {
        let theta = qtheta.sample(rng);
        let params = unpack(layout, &theta)?;
        acc += evaluate(config, data, batch, post, &params, rng, GradRequest::default())?.nelbo;
    }
    Ok(acc / s_theta as f64 + kl_exploratory(qtheta, lambda1))
}

/// `∇_μ F = mean of the sampled θ-gradients + λ₁ μ`.
pub fn grad_mu_f(samples: &[Vec<f64>], mu: &[f64], lambda1: PriorPrecision) -> Vec<f64> {
    let mut g = mean_of(samples, mu.len(), |v| v);
    for (gi, m) in g.iter_mut().zip(mu) {
        *gi += lambda1.value() * m;
    }
    g
}

/// Gauss-Newton diagonal: mean of the elementwise squared θ-gradients.
pub fn gn_hessian_diag(samples: &[Vec<f64>]) -> Vec<f64> {
    let n = samples.first().map_or(0, |s| s.len());
    mean_of(samples, n, |v| v * v)
}

fn mean_of(samples: &[Vec<f64>], n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if samples.is_empty() {
        return out;
    }
    for s in samples {
        for (o, v) in out.iter_mut().zip(s) {
            *o += f(*v);
        }
    }
    let k = samples.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}
