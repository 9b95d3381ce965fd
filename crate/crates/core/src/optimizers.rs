//! Optimizers: the fully natural gradient (FNG) scheme, the NG+Adam hybrid,
//! plain SGD and Adam, plus the one-dimensional VO demonstrator.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_io::{Dataset, MiniBatch};
use crate::error::{Error, Result};
use crate::hyper_vo::{evaluate_theta, gn_hessian_diag, ExploratoryDist, PriorPrecision, ThetaLayout};
use crate::linalg::{cholesky_exact, symmetrize};
use crate::mogp::{GradRequest, ModelConfig, VariationalBlock, VariationalGrads, VariationalPosterior};

/// FNG step sizes: `alpha` for q(θ), `beta` for q(u), and the momentum
/// weights `gamma` (q(θ)) and `upsilon` (q(u)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub upsilon: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        StepSizes {
            alpha: 0.01,
            beta: 0.01,
            gamma: 0.9,
            upsilon: 0.9,
        }
    }
}

impl StepSizes {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::domain("alpha and beta must be positive"));
        }
        if !((0.0..1.0).contains(&self.gamma) && (0.0..1.0).contains(&self.upsilon)) {
            return Err(Error::domain("gamma and upsilon must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// How the precision offsets precondition the μ update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionMode {
    /// Precondition by `√p + λ₁`.
    #[default]
    Sqrt,
    /// Precondition by `p + λ₁`.
    Raw,
}

/// Everything a step needs to evaluate the model.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub config: &'a ModelConfig,
    pub layout: &'a ThetaLayout,
    pub data: &'a Dataset,
}

/// What one optimizer step observed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    /// Minibatch negative ELBO the step descended (mean over θ samples).
    pub nelbo: f64,
    pub clamp_events: u32,
    /// Rejected precision updates (each halving counts once).
    pub rejections: u32,
}

/// Mean update of `q(θ)` from the sampled gradient moments
/// `mean_grad = E[∇L̃]` and `mean_sq_grad = E[∇L̃ ∘ ∇L̃]`. `mu_prev` holds
/// `μ_{t−1}` and is advanced to `μ_t`.
pub fn fng_theta_update(
    q: &mut ExploratoryDist,
    mu_prev: &mut [f64],
    mean_grad: &[f64],
    mean_sq_grad: &[f64],
    steps: &StepSizes,
    lambda1: PriorPrecision,
    mode: PrecisionMode,
) -> Result<()> {
    let n = q.len();
    if mu_prev.len() != n || mean_grad.len() != n || mean_sq_grad.len() != n {
        return Err(Error::shape("θ update vectors differ in length"));
    }
    let (a, g, l) = (steps.alpha, steps.gamma, lambda1.value());
    let pre = |p: f64| match mode {
        PrecisionMode::Sqrt => p.sqrt() + l,
        PrecisionMode::Raw => p + l,
    };
    for i in 0..n {
        let p_old = q.p[i];
        let p_new = (1.0 - a) * p_old + a * mean_sq_grad[i];
        if !(p_new >= 0.0) {
            return Err(Error::NonFinite(format!("precision offset p[{i}]")));
        }
        let mu = q.mu[i];
        let momentum = g * pre(p_old) / pre(p_new) * (mu - mu_prev[i]);
        let mu_new = mu - a / pre(p_new) * (mean_grad[i] + l * mu) + momentum;
        if !mu_new.is_finite() {
            return Err(Error::NonFinite(format!("μ[{i}]")));
        }
        mu_prev[i] = mu;
        q.mu[i] = mu_new;
        q.p[i] = p_new;
        q.sigma2[i] = 1.0 / (p_new + l);
    }
    Ok(())
}

/// Natural-gradient update of one variational block:
/// `V⁻¹ ← V⁻¹ + 2β∇_V`, `m ← m − βV_new∇_m + υV_newV_old⁻¹(m − m_prev)`.
/// Fails with a domain error when the new precision is not positive definite.
pub fn ng_variational_step(
    block: &VariationalBlock,
    m_prev: &DVector<f64>,
    grad_m: &DVector<f64>,
    grad_v: &DMatrix<f64>,
    beta: f64,
    upsilon: f64,
) -> Result<VariationalBlock> {
    let prec_old = block.precision();
    let mut prec_new = &prec_old + grad_v * (2.0 * beta);
    symmetrize(&mut prec_new);
    let chol = cholesky_exact(&prec_new).ok_or_else(|| Error::domain("updated precision is not positive definite"))?;
    let mut v_new = chol.inverse();
    symmetrize(&mut v_new);
    let mut step = grad_m * beta;
    if upsilon != 0.0 {
        step -= &prec_old * (&block.mean - m_prev) * upsilon;
    }
    let m_new = &block.mean - &v_new * step;
    if m_new.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("variational mean".into()));
    }
    VariationalBlock::from_covariance(m_new, &v_new)
}

/// Limit on β halvings before a block update is skipped for this step.
pub const MAX_HALVINGS: u32 = 20;

/// [`ng_variational_step`] with β halved on every rejection. Returns the new
/// block (the old one if every attempt failed) and the rejection count.
pub fn ng_step_with_rejection(
    block: &VariationalBlock,
    m_prev: &DVector<f64>,
    grad_m: &DVector<f64>,
    grad_v: &DMatrix<f64>,
    beta: f64,
    upsilon: f64,
) -> (VariationalBlock, u32) {
    let mut b = beta;
    for rejections in 0..=MAX_HALVINGS {
        if let Ok(nb) = ng_variational_step(block, m_prev, grad_m, grad_v, b, upsilon) {
            return (nb, rejections);
        }
        b *= 0.5;
    }
    (block.clone(), MAX_HALVINGS + 1)
}

/// State carried between FNG steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FngState {
    pub mu_prev: Vec<f64>,
    pub m_prev: Vec<DVector<f64>>,
    pub rejections: u64,
}

impl FngState {
    /// Zero momentum: previous iterates equal the current ones.
    pub fn new(q: &ExploratoryDist, post: &VariationalPosterior) -> Self {
        FngState {
            mu_prev: q.mu.clone(),
            m_prev: post.blocks.iter().map(|b| b.mean.clone()).collect(),
            rejections: 0,
        }
    }
}

/// FNG hyper-settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FngSettings {
    pub steps: StepSizes,
    pub lambda1: PriorPrecision,
    pub theta_samples: usize,
    pub mode: PrecisionMode,
}

impl Default for FngSettings {
    fn default() -> Self {
        FngSettings {
            steps: StepSizes::default(),
            lambda1: PriorPrecision::default(),
            theta_samples: 1,
            mode: PrecisionMode::Sqrt,
        }
    }
}

fn average_grads(acc: &mut Option<VariationalGrads>, g: VariationalGrads) {
    match acc {
        None => *acc = Some(g),
        Some(a) => {
            for (x, y) in a.mean.iter_mut().zip(&g.mean) {
                *x += y;
            }
            for (x, y) in a.cov.iter_mut().zip(&g.cov) {
                *x += y;
            }
        }
    }
}

/// One FNG iteration: sample θ from q(θ), update q(θ) with the variational
/// RMSprop-with-momentum rule, then take natural-gradient steps with momentum
/// on every q(u) block.
pub fn fng_step<R: Rng + ?Sized>(
    problem: &Problem,
    batch: &MiniBatch,
    post: &mut VariationalPosterior,
    qtheta: &mut ExploratoryDist,
    state: &mut FngState,
    settings: &FngSettings,
    rng: &mut R,
) -> Result<StepReport> {
    settings.steps.validate()?;
    if settings.theta_samples == 0 {
        return Err(Error::domain("need at least one θ sample"));
    }
    let req = GradRequest {
        variational: true,
        params: true,
    };
    let mut theta_grads = Vec::with_capacity(settings.theta_samples);
    let mut vgrads = None;
    let mut report = StepReport::default();
    for _ in 0..settings.theta_samples {
        let theta = qtheta.sample(rng);
        let (eval, g) = evaluate_theta(problem.config, problem.layout, problem.data, batch, post, &theta, rng, req)?;
        report.nelbo += eval.nelbo;
        report.clamp_events += eval.clamp_events;
        theta_grads.push(g.expect("requested"));
        average_grads(&mut vgrads, eval.variational.expect("requested"));
    }
    let s = settings.theta_samples as f64;
    report.nelbo /= s;
    let mut vgrads = vgrads.expect("at least one sample");
    if settings.theta_samples > 1 {
        vgrads.mean.iter_mut().for_each(|x| *x /= s);
        vgrads.cov.iter_mut().for_each(|x| *x /= s);
    }

    let mean_grad = mean_vec(&theta_grads);
    let mean_sq = gn_hessian_diag(&theta_grads);
    fng_theta_update(qtheta, &mut state.mu_prev, &mean_grad, &mean_sq, &settings.steps, settings.lambda1, settings.mode)?;

    for (b, block) in post.blocks.iter_mut().enumerate() {
        let (nb, rej) = ng_step_with_rejection(
            block,
            &state.m_prev[b],
            &vgrads.mean[b],
            &vgrads.cov[b],
            settings.steps.beta,
            settings.steps.upsilon,
        );
        report.rejections += rej;
        state.m_prev[b] = if rej > MAX_HALVINGS { nb.mean.clone() } else { block.mean.clone() };
        *block = nb;
    }
    state.rejections += u64::from(report.rejections);
    check_exploratory(qtheta)?;
    Ok(report)
}

fn mean_vec(samples: &[Vec<f64>]) -> Vec<f64> {
    let n = samples[0].len();
    let mut out = vec![0.0; n];
    for s in samples {
        for (o, v) in out.iter_mut().zip(s) {
            *o += v;
        }
    }
    let k = samples.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}

fn check_exploratory(q: &ExploratoryDist) -> Result<()> {
    if q.p.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::NonFinite("precision offsets went negative".into()));
    }
    if q.sigma2.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::NonFinite("exploratory variances".into()));
    }
    Ok(())
}

/// Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// Bias-corrected Adam step.
pub fn adam_step(x: &mut [f64], g: &[f64], state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..x.len() {
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        x[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
}

pub fn sgd_step(x: &mut [f64], g: &[f64], lr: f64) {
    for (xi, gi) in x.iter_mut().zip(g) {
        *xi -= lr * gi;
    }
}

/// NG+Adam hybrid: NG (no momentum) on q(u), Adam on a θ point estimate.
#[allow(clippy::too_many_arguments)]
pub fn hyb_step<R: Rng + ?Sized>(
    problem: &Problem,
    batch: &MiniBatch,
    post: &mut VariationalPosterior,
    theta: &mut [f64],
    adam: &mut AdamState,
    beta: f64,
    adam_lr: f64,
    rng: &mut R,
) -> Result<StepReport> {
    let req = GradRequest {
        variational: true,
        params: true,
    };
    let (eval, g) = evaluate_theta(problem.config, problem.layout, problem.data, batch, post, theta, rng, req)?;
    let vg = eval.variational.expect("requested");
    let mut report = StepReport {
        nelbo: eval.nelbo,
        clamp_events: eval.clamp_events,
        rejections: 0,
    };
    for (b, block) in post.blocks.iter_mut().enumerate() {
        let (nb, rej) = ng_step_with_rejection(block, &block.mean, &vg.mean[b], &vg.cov[b], beta, 0.0);
        report.rejections += rej;
        *block = nb;
    }
    adam_step(theta, &g.expect("requested"), adam, adam_lr);
    Ok(report)
}

/// Packs θ and every block's mean and Cholesky factor (lower triangle,
/// column-major, log diagonal) into one vector for first-order optimizers.
pub fn flatten_free(theta: &[f64], post: &VariationalPosterior) -> Vec<f64> {
    let mut x = theta.to_vec();
    for b in &post.blocks {
        x.extend(b.mean.iter());
        let l = b.chol();
        for c in 0..l.ncols() {
            for r in c..l.nrows() {
                x.push(if r == c { l[(r, c)].ln() } else { l[(r, c)] });
            }
        }
    }
    x
}

/// Inverse of [`flatten_free`].
pub fn unflatten_free(x: &[f64], theta_len: usize, blocks: usize, m: usize) -> Result<(Vec<f64>, VariationalPosterior)> {
    let per = m + m * (m + 1) / 2;
    if x.len() != theta_len + blocks * per {
        return Err(Error::shape("free-parameter vector has the wrong length"));
    }
    let theta = x[..theta_len].to_vec();
    let mut out = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let s = &x[theta_len + b * per..theta_len + (b + 1) * per];
        let mean = DVector::from_column_slice(&s[..m]);
        let mut l = DMatrix::zeros(m, m);
        let mut k = m;
        for c in 0..m {
            for r in c..m {
                l[(r, c)] = if r == c { s[k].exp() } else { s[k] };
                k += 1;
            }
        }
        out.push(VariationalBlock::new(mean, l)?);
    }
    Ok((theta, VariationalPosterior { blocks: out }))
}

/// Gradient in the [`flatten_free`] coordinates.
pub fn free_gradient(theta_grad: &[f64], post: &VariationalPosterior, vg: &VariationalGrads) -> Vec<f64> {
    let mut g = theta_grad.to_vec();
    for (b, blk) in post.blocks.iter().enumerate() {
        g.extend(vg.mean[b].iter());
        let l = blk.chol();
        let dl = &vg.cov[b] * l * 2.0;
        for c in 0..l.ncols() {
            for r in c..l.nrows() {
                g.push(if r == c { dl[(r, c)] * l[(r, c)] } else { dl[(r, c)] });
            }
        }
    }
    g
}

/// First-order optimizers over all free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstOrder {
    Sgd,
    Adam,
}

#[allow(clippy::too_many_arguments)]
pub fn first_order_step<R: Rng + ?Sized>(
    problem: &Problem,
    batch: &MiniBatch,
    post: &mut VariationalPosterior,
    theta: &mut Vec<f64>,
    kind: FirstOrder,
    adam: &mut AdamState,
    lr: f64,
    rng: &mut R,
) -> Result<StepReport> {
    let req = GradRequest {
        variational: true,
        params: true,
    };
    let (eval, g) = evaluate_theta(problem.config, problem.layout, problem.data, batch, post, theta, rng, req)?;
    let grad = free_gradient(&g.expect("requested"), post, eval.variational.as_ref().expect("requested"));
    let mut x = flatten_free(theta, post);
    match kind {
        FirstOrder::Sgd => sgd_step(&mut x, &grad, lr),
        FirstOrder::Adam => adam_step(&mut x, &grad, adam, lr),
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameters after a first-order step".into()));
    }
    let (t, p) = unflatten_free(&x, theta.len(), post.blocks.len(), problem.config.num_inducing)?;
    *theta = t;
    *post = p;
    Ok(StepReport {
        nelbo: eval.nelbo,
        clamp_events: eval.clamp_events,
        rejections: 0,
    })
}

/// Optimizer choice for a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Hyb,
    Fng,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "hyb" => Ok(OptimizerKind::Hyb),
            "fng" => Ok(OptimizerKind::Fng),
            other => Err(Error::domain(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Hyb => "hyb",
            OptimizerKind::Fng => "fng",
        })
    }
}

/// Settings shared by every optimizer kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub fng: FngSettings,
    pub adam_lr: f64,
    pub sgd_lr: f64,
    /// Initial exploratory variance for FNG.
    pub init_sigma2: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            kind: OptimizerKind::Fng,
            fng: FngSettings::default(),
            adam_lr: 0.01,
            sgd_lr: 1e-5,
            init_sigma2: 0.1,
        }
    }
}

/// A model under training: the variational posterior, θ (the mean of q(θ)
/// for FNG, a point estimate otherwise) and optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub settings: OptimizerSettings,
    pub post: VariationalPosterior,
    pub theta: Vec<f64>,
    pub qtheta: Option<ExploratoryDist>,
    fng: Option<FngState>,
    adam: AdamState,
    pub total_rejections: u64,
    pub total_clamp_events: u64,
}

impl Trainer {
    pub fn new(settings: OptimizerSettings, post: VariationalPosterior, theta: Vec<f64>) -> Result<Self> {
        settings.fng.steps.validate()?;
        let (qtheta, fng) = if settings.kind == OptimizerKind::Fng {
            let q = ExploratoryDist::new(theta.clone(), settings.init_sigma2, settings.fng.lambda1)?;
            let st = FngState::new(&q, &post);
            (Some(q), Some(st))
        } else {
            (None, None)
        };
        let n_free = match settings.kind {
            OptimizerKind::Hyb => theta.len(),
            _ => flatten_free(&theta, &post).len(),
        };
        Ok(Trainer {
            settings,
            post,
            theta,
            qtheta,
            fng,
            adam: AdamState::new(n_free),
            total_rejections: 0,
            total_clamp_events: 0,
        })
    }

    /// θ used for prediction: μ for FNG, the point estimate otherwise.
    pub fn map_theta(&self) -> &[f64] {
        match &self.qtheta {
            Some(q) => &q.mu,
            None => &self.theta,
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, problem: &Problem, batch: &MiniBatch, rng: &mut R) -> Result<StepReport> {
        let s = &self.settings;
        let report = match s.kind {
            OptimizerKind::Fng => {
                let q = self.qtheta.as_mut().expect("FNG keeps q(θ)");
                let st = self.fng.as_mut().expect("FNG keeps its state");
                let r = fng_step(problem, batch, &mut self.post, q, st, &s.fng, rng)?;
                self.theta.clone_from(&q.mu);
                r
            }
            OptimizerKind::Hyb => hyb_step(
                problem,
                batch,
                &mut self.post,
                &mut self.theta,
                &mut self.adam,
                s.fng.steps.beta,
                s.adam_lr,
                rng,
            )?,
            OptimizerKind::Adam => first_order_step(
                problem,
                batch,
                &mut self.post,
                &mut self.theta,
                FirstOrder::Adam,
                &mut self.adam,
                s.adam_lr,
                rng,
            )?,
            OptimizerKind::Sgd => first_order_step(
                problem,
                batch,
                &mut self.post,
                &mut self.theta,
                FirstOrder::Sgd,
                &mut self.adam,
                s.sgd_lr,
                rng,
            )?,
        };
        self.total_rejections += u64::from(report.rejections);
        self.total_clamp_events += u64::from(report.clamp_events);
        Ok(report)
    }
}

/// A scalar objective with first and second derivatives.
pub trait Objective1D {
    fn value(&self, x: f64) -> f64;
    fn grad(&self, x: f64) -> f64;
    fn hess(&self, x: f64) -> f64;
}

/// `g(θ) = 2·exp(−0.09θ²)·sin(4.5θ)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PaperObjective;

const DEMO_A: f64 = 0.09;
const DEMO_B: f64 = 4.5;

impl Objective1D for PaperObjective {
    fn value(&self, x: f64) -> f64 {
        2.0 * (-DEMO_A * x * x).exp() * (DEMO_B * x).sin()
    }

    fn grad(&self, x: f64) -> f64 {
        let h = (-DEMO_A * x * x).exp();
        2.0 * h * (DEMO_B * (DEMO_B * x).cos() - 2.0 * DEMO_A * x * (DEMO_B * x).sin())
    }

    fn hess(&self, x: f64) -> f64 {
        let h = (-DEMO_A * x * x).exp();
        let dh = -2.0 * DEMO_A * x * h;
        let d2h = (4.0 * DEMO_A * DEMO_A * x * x - 2.0 * DEMO_A) * h;
        let (s, c) = (DEMO_B * x).sin_cos();
        2.0 * (d2h * s + 2.0 * dh * DEMO_B * c - h * DEMO_B * DEMO_B * s)
    }
}

/// Settings for the 1-D VO demonstrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoDemoConfig {
    pub init_mu: f64,
    pub init_sigma: f64,
    /// Prior precision of `p(θ) = N(0, λ⁻¹)`.
    pub lambda: f64,
    pub use_kl: bool,
    pub max_iters: usize,
    pub alpha: f64,
    /// Monte Carlo draws per expectation.
    pub samples: usize,
    pub seed: u64,
}

impl Default for VoDemoConfig {
    fn default() -> Self {
        VoDemoConfig {
            init_mu: -3.0,
            init_sigma: 3.0,
            lambda: 1.5,
            use_kl: true,
            max_iters: 300,
            alpha: 0.9,
            samples: 256,
            seed: 0,
        }
    }
}

/// One point of a demo trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoPoint {
    pub iter: usize,
    pub mu: f64,
    pub sigma: f64,
    pub g_mu: f64,
}

/// Natural-gradient VO on a scalar objective:
/// `σ⁻²_{t+1} = σ⁻²_t + 2α∇_{σ²}F`, `μ_{t+1} = μ_t − ασ²_{t+1}∇_μF`, with
/// `∇_μ E[g] = E[g']`, `∇_{σ²} E[g] = ½E[g'']` and, when enabled, the KL
/// penalty against `N(0, λ⁻¹)`. A step that would make the precision
/// nonpositive is retried with α halved. Returns the trajectory including the
/// initial point.
pub fn vo_demo(obj: &dyn Objective1D, cfg: &VoDemoConfig) -> Result<Vec<DemoPoint>> {
    if !(cfg.init_sigma > 0.0) {
        return Err(Error::domain("initial σ must be positive"));
    }
    if cfg.samples < 64 {
        return Err(Error::domain("the demo needs at least 64 Monte Carlo samples"));
    }
    if cfg.use_kl && !(cfg.lambda > 0.0) {
        return Err(Error::domain("λ must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mu = cfg.init_mu;
    let mut prec = 1.0 / (cfg.init_sigma * cfg.init_sigma);
    let mut out = Vec::with_capacity(cfg.max_iters + 1);
    out.push(DemoPoint {
        iter: 0,
        mu,
        sigma: prec.recip().sqrt(),
        g_mu: obj.value(mu),
    });
    let mut eps = vec![0.0; cfg.samples];
    for t in 1..=cfg.max_iters {
        eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
        let sd = prec.recip().sqrt();
        let (mut e1, mut e2) = (0.0, 0.0);
        for e in &eps {
            let x = mu + sd * e;
            e1 += obj.grad(x);
            e2 += obj.hess(x);
        }
        let s = cfg.samples as f64;
        let mut g_mu = e1 / s;
        let mut g_s2 = 0.5 * e2 / s;
        if cfg.use_kl {
            g_mu += cfg.lambda * mu;
            g_s2 += 0.5 * (cfg.lambda - prec);
        }
        let mut a = cfg.alpha;
        let mut new_prec = prec + 2.0 * a * g_s2;
        let mut halvings = 0;
        while !(new_prec > 0.0) {
            halvings += 1;
            if halvings > MAX_HALVINGS {
                return Err(Error::NonFinite("demo precision".into()));
            }
            a *= 0.5;
            new_prec = prec + 2.0 * a * g_s2;
        }
        prec = new_prec;
        mu -= a / prec * g_mu;
        out.push(DemoPoint {
            iter: t,
            mu,
            sigma: prec.recip().sqrt(),
            g_mu: obj.value(mu),
        });
    }
    Ok(out)
}

/// Plain gradient descent on the objective itself; `σ` is reported as 0.
pub fn descent_baseline(obj: &dyn Objective1D, init: f64, step: f64, iters: usize) -> Vec<DemoPoint> {
    let mut x = init;
    let mut out = Vec::with_capacity(iters + 1);
    out.push(DemoPoint {
        iter: 0,
        mu: x,
        sigma: 0.0,
        g_mu: obj.value(x),
    });
    for t in 1..=iters {
        x -= step * obj.grad(x);
        out.push(DemoPoint {
            iter: t,
            mu: x,
            sigma: 0.0,
            g_mu: obj.value(x),
        });
    }
    out
}
