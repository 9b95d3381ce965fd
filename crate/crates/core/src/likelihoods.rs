//! Heterogeneous likelihood kit.
//!
//! Every output `d` has a [`LikelihoodSpec`] whose `J_d` parameters are
//! tied to latent parameter functions through link functions. The NLL
//! `g = -log p(y | ψ(f))` and its first and diagonal second derivatives with
//! respect to `f` feed the variational gradients; [`expected_nll`] averages
//! them over the Gaussian marginals `q(f_{d,j,n})`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Exp-link arguments are clamped to `[-EXP_CLAMP, EXP_CLAMP]`.
pub const EXP_CLAMP: f64 = 30.0;
/// Monte Carlo samples for expectations over `q(f)`.
pub const DEFAULT_EXPECTATION_SAMPLES: usize = 20;
/// Monte Carlo samples for the predictive density.
pub const DEFAULT_NLPD_SAMPLES: usize = 1000;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const MAX_LATENT: usize = 2;

/// Distribution family of one output together with any fixed parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum LikelihoodSpec {
    /// Mean `f₁`, variance `exp(f₂)`.
    HetGaussian,
    /// Mean `f₁`, fixed standard deviation.
    Gaussian { sigma: f64 },
    /// `p = sigmoid(f₁)`.
    Bernoulli,
    /// `a = exp(f₁)`, `b = exp(f₂)`.
    Beta,
    /// Shape `exp(f₁)`, rate `exp(f₂)`.
    Gamma,
    /// Rate `exp(f₁)`.
    Exponential,
    /// Rate `exp(f₁)`.
    Poisson,
}

impl LikelihoodSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::domain(format!("Gaussian sigma must be positive, got {sigma}")));
        }
        Ok(LikelihoodSpec::Gaussian { sigma })
    }

    /// Number of latent parameter functions `J_d`.
    pub fn num_latent(&self) -> usize {
        match self {
            LikelihoodSpec::HetGaussian | LikelihoodSpec::Beta | LikelihoodSpec::Gamma => 2,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LikelihoodSpec::Gaussian { sigma } = self {
            LikelihoodSpec::gaussian(*sigma)?;
        }
        Ok(())
    }

    /// Checks that `y` lies in the family's support.
    pub fn check_support(&self, y: f64) -> Result<()> {
        let ok = match self {
            LikelihoodSpec::HetGaussian | LikelihoodSpec::Gaussian { .. } => y.is_finite(),
            LikelihoodSpec::Bernoulli => y == 0.0 || y == 1.0,
            LikelihoodSpec::Beta => y > 0.0 && y < 1.0,
            LikelihoodSpec::Gamma => y.is_finite() && y > 0.0,
            LikelihoodSpec::Exponential => y.is_finite() && y >= 0.0,
            LikelihoodSpec::Poisson => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("observation {y} outside the support of {self}")))
        }
    }

    /// Whether Gaussian expectations of the NLL are available in closed form.
    pub fn has_closed_form_expectation(&self) -> bool {
        matches!(self, LikelihoodSpec::HetGaussian | LikelihoodSpec::Gaussian { .. })
    }
}

impl fmt::Display for LikelihoodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LikelihoodSpec::HetGaussian => write!(f, "hetgaussian"),
            LikelihoodSpec::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            LikelihoodSpec::Bernoulli => write!(f, "bernoulli"),
            LikelihoodSpec::Beta => write!(f, "beta"),
            LikelihoodSpec::Gamma => write!(f, "gamma"),
            LikelihoodSpec::Exponential => write!(f, "exponential"),
            LikelihoodSpec::Poisson => write!(f, "poisson"),
        }
    }
}

impl FromStr for LikelihoodSpec {
    type Err = Error;

    /// Parses names such as `bernoulli` or `gaussian:0.1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s.as_str(), None),
        };
        let spec = match name {
            "hetgaussian" | "het_gaussian" => LikelihoodSpec::HetGaussian,
            "gaussian" => {
                let sigma = match arg {
                    Some(a) => a
                        .parse::<f64>()
                        .map_err(|_| Error::domain(format!("bad Gaussian sigma `{a}`")))?,
                    None => 1.0,
                };
                return LikelihoodSpec::gaussian(sigma);
            }
            "bernoulli" => LikelihoodSpec::Bernoulli,
            "beta" => LikelihoodSpec::Beta,
            "gamma" => LikelihoodSpec::Gamma,
            "exponential" => LikelihoodSpec::Exponential,
            "poisson" => LikelihoodSpec::Poisson,
            other => return Err(Error::domain(format!("unknown likelihood `{other}`"))),
        };
        if arg.is_some() {
            return Err(Error::domain(format!("likelihood `{name}` takes no parameter")));
        }
        Ok(spec)
    }
}

/// Gaussian marginal `q(f_{d,j,n})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMarginal1D {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianMarginal1D {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) || !mean.is_finite() {
            return Err(Error::domain(format!(
                "marginal needs finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        Ok(GaussianMarginal1D { mean, variance })
    }
}

/// Linked likelihood parameters `ψ = φ(f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linked {
    params: [f64; MAX_LATENT],
    len: usize,
    /// Whether any exp argument hit the clamp.
    pub clamped: bool,
}

impl Linked {
    pub fn params(&self) -> &[f64] {
        &self.params[..self.len]
    }
}

#[inline]
fn clamp_arg(x: f64) -> (f64, bool) {
    if x > EXP_CLAMP {
        (EXP_CLAMP, true)
    } else if x < -EXP_CLAMP {
        (-EXP_CLAMP, true)
    } else {
        (x, false)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Trigamma via upward recurrence and the asymptotic expansion.
pub(crate) fn trigamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    acc + r
        + 0.5 * r2
        + r * r2
            * (1.0 / 6.0
                + r2 * (-1.0 / 30.0 + r2 * (1.0 / 42.0 + r2 * (-1.0 / 30.0 + r2 * 5.0 / 66.0))))
}

fn check_latent(spec: &LikelihoodSpec, f: &[f64]) -> Result<()> {
    if f.len() != spec.num_latent() {
        return Err(Error::shape(format!(
            "{spec} needs {} latent values, got {}",
            spec.num_latent(),
            f.len()
        )));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("latent values must be finite"));
    }
    Ok(())
}

/// Maps latent function values to likelihood parameters.
pub fn link(spec: &LikelihoodSpec, f: &[f64]) -> Result<Linked> {
    check_latent(spec, f)?;
    let mut params = [0.0; MAX_LATENT];
    let mut clamped = false;
    let mut exp_link = |params: &mut [f64; MAX_LATENT], i: usize| {
        let (c, hit) = clamp_arg(f[i]);
        clamped |= hit;
        params[i] = c.exp();
    };
    match spec {
        LikelihoodSpec::HetGaussian => {
            params[0] = f[0];
            exp_link(&mut params, 1);
        }
        LikelihoodSpec::Gaussian { .. } => params[0] = f[0],
        LikelihoodSpec::Bernoulli => params[0] = sigmoid(f[0]),
        LikelihoodSpec::Beta | LikelihoodSpec::Gamma => {
            exp_link(&mut params, 0);
            exp_link(&mut params, 1);
        }
        LikelihoodSpec::Exponential | LikelihoodSpec::Poisson => exp_link(&mut params, 0),
    }
    Ok(Linked {
        params,
        len: spec.num_latent(),
        clamped,
    })
}

/// NLL with its gradient and diagonal Hessian with respect to `f`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct NllDerivs {
    pub value: f64,
    pub grad: [f64; MAX_LATENT],
    pub hess: [f64; MAX_LATENT],
    pub clamped: bool,
}

/// Core evaluation; `y` is assumed in support and `f` of the right length.
pub(crate) fn nll_derivs(spec: &LikelihoodSpec, y: f64, f: &[f64]) -> NllDerivs {
    let mut out = NllDerivs::default();
    match *spec {
        LikelihoodSpec::HetGaussian => {
            let (f2, c2) = clamp_arg(f[1]);
            let inv_var = (-f2).exp();
            let r = y - f[0];
            out.value = HALF_LN_2PI + 0.5 * f2 + 0.5 * r * r * inv_var;
            out.grad[0] = -r * inv_var;
            out.hess[0] = inv_var;
            if !c2 {
                out.grad[1] = 0.5 - 0.5 * r * r * inv_var;
                out.hess[1] = 0.5 * r * r * inv_var;
            }
            out.clamped = c2;
        }
        LikelihoodSpec::Gaussian { sigma } => {
            let s2 = sigma * sigma;
            let r = y - f[0];
            out.value = HALF_LN_2PI + sigma.ln() + 0.5 * r * r / s2;
            out.grad[0] = -r / s2;
            out.hess[0] = 1.0 / s2;
        }
        LikelihoodSpec::Bernoulli => {
            let p = sigmoid(f[0]);
            out.value = softplus(f[0]) - y * f[0];
            out.grad[0] = p - y;
            out.hess[0] = p * (1.0 - p);
        }
        LikelihoodSpec::Beta => {
            let (f1, c1) = clamp_arg(f[0]);
            let (f2, c2) = clamp_arg(f[1]);
            let a = f1.exp();
            let b = f2.exp();
            let ln_y = y.ln();
            let ln_1y = (-y).ln_1p();
            out.value = -(a - 1.0) * ln_y - (b - 1.0) * ln_1y + ln_gamma(a) + ln_gamma(b)
                - ln_gamma(a + b);
            let dab = digamma(a + b);
            let tab = trigamma(a + b);
            if !c1 {
                let t = -ln_y + digamma(a) - dab;
                out.grad[0] = a * t;
                out.hess[0] = a * t + a * a * (trigamma(a) - tab);
            }
            if !c2 {
                let t = -ln_1y + digamma(b) - dab;
                out.grad[1] = b * t;
                out.hess[1] = b * t + b * b * (trigamma(b) - tab);
            }
            out.clamped = c1 || c2;
        }
        LikelihoodSpec::Gamma => {
            let (f1, c1) = clamp_arg(f[0]);
            let (f2, c2) = clamp_arg(f[1]);
            let a = f1.exp();
            let b = f2.exp();
            let ln_y = y.ln();
            out.value = -a * f2 - (a - 1.0) * ln_y + b * y + ln_gamma(a);
            if !c1 {
                let t = -f2 - ln_y + digamma(a);
                out.grad[0] = a * t;
                out.hess[0] = a * t + a * a * trigamma(a);
            }
            if !c2 {
                out.grad[1] = -a + y * b;
                out.hess[1] = y * b;
            }
            out.clamped = c1 || c2;
        }
        LikelihoodSpec::Exponential => {
            let (f1, c1) = clamp_arg(f[0]);
            let rate = f1.exp();
            out.value = -f1 + rate * y;
            if !c1 {
                out.grad[0] = -1.0 + y * rate;
                out.hess[0] = y * rate;
            }
            out.clamped = c1;
        }
        LikelihoodSpec::Poisson => {
            let (f1, c1) = clamp_arg(f[0]);
            let rate = f1.exp();
            out.value = rate - y * f1 + ln_gamma(y + 1.0);
            if !c1 {
                out.grad[0] = rate - y;
                out.hess[0] = rate;
            }
            out.clamped = c1;
        }
    }
    out
}

fn checked(spec: &LikelihoodSpec, y: f64, f: &[f64]) -> Result<NllDerivs> {
    check_latent(spec, f)?;
    spec.check_support(y)?;
    Ok(nll_derivs(spec, y, f))
}

/// Negative log density (or mass) of `y` at the linked parameters.
pub fn nll(spec: &LikelihoodSpec, y: f64, f: &[f64]) -> Result<f64> {
    Ok(checked(spec, y, f)?.value)
}

/// `∂g/∂f_j` for each latent value.
pub fn dnll_df(spec: &LikelihoodSpec, y: f64, f: &[f64]) -> Result<Vec<f64>> {
    let d = checked(spec, y, f)?;
    Ok(d.grad[..spec.num_latent()].to_vec())
}

/// `∂²g/∂f_j²` for each latent value.
pub fn d2nll_df2(spec: &LikelihoodSpec, y: f64, f: &[f64]) -> Result<Vec<f64>> {
    let d = checked(spec, y, f)?;
    Ok(d.hess[..spec.num_latent()].to_vec())
}

/// Expectation of the NLL over independent Gaussian marginals, together with
/// `g_m = E[∇g]` and `g_v = ½E[∇²g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedNll {
    pub value: f64,
    pub g_m: Vec<f64>,
    pub g_v: Vec<f64>,
    /// Number of exp-link clamp events seen while estimating.
    pub clamp_events: u32,
}

fn check_marginals(spec: &LikelihoodSpec, marginals: &[GaussianMarginal1D]) -> Result<()> {
    if marginals.len() != spec.num_latent() {
        return Err(Error::shape(format!(
            "{spec} needs {} marginals, got {}",
            spec.num_latent(),
            marginals.len()
        )));
    }
    if marginals.iter().any(|m| !(m.variance > 0.0) || !m.mean.is_finite()) {
        return Err(Error::domain("marginal variances must be positive"));
    }
    Ok(())
}

/// Expected NLL; closed form for the Gaussian families, Monte Carlo with
/// `samples` draws otherwise.
pub fn expected_nll<R: Rng + ?Sized>(
    spec: &LikelihoodSpec,
    y: f64,
    marginals: &[GaussianMarginal1D],
    rng: &mut R,
    samples: usize,
) -> Result<ExpectedNll> {
    check_marginals(spec, marginals)?;
    spec.check_support(y)?;
    Ok(expected_nll_unchecked(spec, y, marginals, rng, samples))
}

pub(crate) fn expected_nll_unchecked<R: Rng + ?Sized>(
    spec: &LikelihoodSpec,
    y: f64,
    marginals: &[GaussianMarginal1D],
    rng: &mut R,
    samples: usize,
) -> ExpectedNll {
    match *spec {
        LikelihoodSpec::HetGaussian => {
            let (m1, v1) = (marginals[0].mean, marginals[0].variance);
            let (m2, v2) = (marginals[1].mean, marginals[1].variance);
            let (arg, clamped) = clamp_arg(-m2 + 0.5 * v2);
            let e = arg.exp();
            let sq = (y - m1) * (y - m1) + v1;
            let (gm2, gv2) = if clamped {
                (0.5, 0.0)
            } else {
                (0.5 - 0.5 * sq * e, 0.25 * sq * e)
            };
            ExpectedNll {
                value: HALF_LN_2PI + 0.5 * m2 + 0.5 * sq * e,
                g_m: vec![-(y - m1) * e, gm2],
                g_v: vec![0.5 * e, gv2],
                clamp_events: u32::from(clamped),
            }
        }
        LikelihoodSpec::Gaussian { sigma } => {
            let (m, v) = (marginals[0].mean, marginals[0].variance);
            let s2 = sigma * sigma;
            ExpectedNll {
                value: HALF_LN_2PI + sigma.ln() + 0.5 * ((y - m) * (y - m) + v) / s2,
                g_m: vec![-(y - m) / s2],
                g_v: vec![0.5 / s2],
                clamp_events: 0,
            }
        }
        _ => expected_nll_mc_unchecked(spec, y, marginals, rng, samples),
    }
}

/// Monte Carlo estimate of the expected NLL, used for every family without
/// a closed form. Exposed so the closed forms can be checked against it.
pub fn expected_nll_mc<R: Rng + ?Sized>(
    spec: &LikelihoodSpec,
    y: f64,
    marginals: &[GaussianMarginal1D],
    rng: &mut R,
    samples: usize,
) -> Result<ExpectedNll> {
    check_marginals(spec, marginals)?;
    spec.check_support(y)?;
    if samples == 0 {
        return Err(Error::domain("need at least one Monte Carlo sample"));
    }
    Ok(expected_nll_mc_unchecked(spec, y, marginals, rng, samples))
}

fn expected_nll_mc_unchecked<R: Rng + ?Sized>(
    spec: &LikelihoodSpec,
    y: f64,
    marginals: &[GaussianMarginal1D],
    rng: &mut R,
    samples: usize,
) -> ExpectedNll {
    let jd = spec.num_latent();
    let sd: Vec<f64> = marginals.iter().map(|m| m.variance.sqrt()).collect();
    let mut f = [0.0; MAX_LATENT];
    let mut value = 0.0;
    let mut gm = [0.0; MAX_LATENT];
    let mut gh = [0.0; MAX_LATENT];
    let mut clamp_events = 0;
    for _ in 0..samples {
        for j in 0..jd {
            let eps: f64 = rng.sample(StandardNormal);
            f[j] = marginals[j].mean + sd[j] * eps;
        }
        let d = nll_derivs(spec, y, &f[..jd]);
        value += d.value;
        for j in 0..jd {
            gm[j] += d.grad[j];
            gh[j] += d.hess[j];
        }
        clamp_events += u32::from(d.clamped);
    }
    let s = samples as f64;
    ExpectedNll {
        value: value / s,
        g_m: gm[..jd].iter().map(|v| v / s).collect(),
        g_v: gh[..jd].iter().map(|v| 0.5 * v / s).collect(),
        clamp_events,
    }
}

/// Negative log predictive density of `y_star` under the predictive mixture
/// `∫ p(y*|ψ(f)) q(f) df`, estimated with `samples` draws and log-sum-exp.
pub fn nlpd<R: Rng + ?Sized>(
    spec: &LikelihoodSpec,
    y_star: f64,
    marginals: &[GaussianMarginal1D],
    rng: &mut R,
    samples: usize,
) -> Result<f64> {
    check_marginals(spec, marginals)?;
    spec.check_support(y_star)?;
    if samples == 0 {
        return Err(Error::domain("need at least one predictive sample"));
    }
    let jd = spec.num_latent();
    let sd: Vec<f64> = marginals.iter().map(|m| m.variance.sqrt()).collect();
    let mut f = [0.0; MAX_LATENT];
    let mut log_p = Vec::with_capacity(samples);
    for _ in 0..samples {
        for j in 0..jd {
            let eps: f64 = rng.sample(StandardNormal);
            f[j] = marginals[j].mean + sd[j] * eps;
        }
        log_p.push(-nll_derivs(spec, y_star, &f[..jd]).value);
    }
    Ok(-(log_sum_exp(&log_p) - (samples as f64).ln()))
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
