//! Sparse heterogeneous multi-output GP: marginal posteriors of the latent
//! parameter functions (LPFs), the negative ELBO, KL terms and analytic
//! gradients with respect to the variational blocks and the kernel
//! hyper-parameters / inducing inputs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_io::{Dataset, MiniBatch};
use crate::error::{Error, Result};
use crate::kernels::{
    assemble_kuu, cpm_component_cov, eq_cross, eq_cross_backward, eq_self, eq_zero_lag,
    eq_zero_lag_dcov, Coupling, EqLengthscales, InducingSet, KernelHyper, LccMatrix, PriorKind,
    SmoothingKernelParams,
};
use crate::likelihoods::{
    expected_nll, GaussianMarginal1D, LikelihoodSpec, DEFAULT_EXPECTATION_SAMPLES,
};
use crate::linalg::{
    cholesky_exact, log_det_from_lower, rowwise_quad, symmetrize,
    weighted_gram, Factored,
};

/// Marginal variances are floored here to stay strictly positive under
/// round-off.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Static model structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub prior: PriorKind,
    pub likelihoods: Vec<LikelihoodSpec>,
    /// `Q`, the number of latent processes.
    pub num_latent: usize,
    /// `M`, inducing points per block.
    pub num_inducing: usize,
    /// `P`, the input dimension.
    pub input_dim: usize,
    /// Monte Carlo draws per expectation for families without a closed form.
    pub expectation_samples: usize,
}

impl ModelConfig {
    pub fn new(
        prior: PriorKind,
        likelihoods: Vec<LikelihoodSpec>,
        num_latent: usize,
        num_inducing: usize,
        input_dim: usize,
    ) -> Result<Self> {
        let cfg = ModelConfig {
            prior,
            likelihoods,
            num_latent,
            num_inducing,
            input_dim,
            expectation_samples: DEFAULT_EXPECTATION_SAMPLES,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.likelihoods.is_empty() {
            return Err(Error::domain("model needs at least one output"));
        }
        if self.num_latent == 0 || self.num_inducing == 0 || self.input_dim == 0 {
            return Err(Error::domain("Q, M and P must all be at least 1"));
        }
        if self.expectation_samples == 0 {
            return Err(Error::domain("expectation_samples must be at least 1"));
        }
        for l in &self.likelihoods {
            l.validate()?;
        }
        Ok(())
    }

    /// `D`.
    pub fn num_outputs(&self) -> usize {
        self.likelihoods.len()
    }

    /// `J = Σ_d J_d`.
    pub fn num_lpf(&self) -> usize {
        self.likelihoods.iter().map(|l| l.num_latent()).sum()
    }

    /// Index of LPF `(d, 0)` in the flat LPF ordering.
    pub fn lpf_offset(&self, d: usize) -> usize {
        self.likelihoods[..d].iter().map(|l| l.num_latent()).sum()
    }

    /// Number of inducing blocks: `Q` for LMC, `J` for CPM.
    pub fn num_blocks(&self) -> usize {
        match self.prior {
            PriorKind::Lmc => self.num_latent,
            PriorKind::Cpm => self.num_lpf(),
        }
    }

    /// Checks that `params` match this structure.
    pub fn check_params(&self, params: &Params) -> Result<()> {
        let (q, j, m, p) = (self.num_latent, self.num_lpf(), self.num_inducing, self.input_dim);
        if params.inducing.len() != self.num_blocks() {
            return Err(Error::shape(format!(
                "{} inducing blocks, model needs {}",
                params.inducing.len(),
                self.num_blocks()
            )));
        }
        if params.inducing.blocks.iter().any(|z| z.shape() != (m, p)) {
            return Err(Error::shape(format!("inducing blocks must be {m}x{p}")));
        }
        let hyper = &params.hyper;
        if hyper.lengthscales.len() != q || hyper.lengthscales.iter().any(|l| l.dim() != p) {
            return Err(Error::shape(format!("need {q} lengthscale vectors of length {p}")));
        }
        match (&hyper.coupling, self.prior) {
            (Coupling::Lmc(a), PriorKind::Lmc) => {
                if a.num_latent() != q || a.num_lpf() != j {
                    return Err(Error::shape(format!("LCC matrix must be {j}x{q}")));
                }
            }
            (Coupling::Cpm(sk), PriorKind::Cpm) => {
                if sk.len() != j || sk.iter().any(|s| s.kappa.len() != p || s.weights.len() != q) {
                    return Err(Error::shape(format!(
                        "need {j} smoothing kernels with {p} lengthscales and {q} weights"
                    )));
                }
            }
            _ => return Err(Error::shape("coupling does not match the configured prior")),
        }
        Ok(())
    }
}

/// Everything the hyper-parameter vector θ encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub inducing: InducingSet,
    pub hyper: KernelHyper,
}

/// `q(u_b) = N(m, LLᵀ)` for one inducing block.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalBlock {
    pub mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl VariationalBlock {
    /// From a mean and a lower-triangular factor with positive diagonal.
    pub fn new(mean: DVector<f64>, chol: DMatrix<f64>) -> Result<Self> {
        let m = mean.len();
        if chol.shape() != (m, m) {
            return Err(Error::shape("factor must be square and match the mean"));
        }
        if chol.upper_triangle().iter().enumerate().any(|(k, v)| {
            let (r, c) = (k % m, k / m);
            r < c && *v != 0.0
        }) {
            return Err(Error::domain("factor must be lower triangular"));
        }
        if chol.diagonal().iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::domain("factor diagonal must be positive"));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("variational mean".into()));
        }
        Ok(VariationalBlock { mean, chol })
    }

    /// From a mean and a covariance, which must be positive definite.
    pub fn from_covariance(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let mut c = cov.clone();
        symmetrize(&mut c);
        let chol = cholesky_exact(&c)
            .ok_or_else(|| Error::domain("variational covariance is not positive definite"))?;
        Self::new(mean, chol.l())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mut v = &self.chol * self.chol.transpose();
        symmetrize(&mut v);
        v
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let m = self.dim();
        let linv = self
            .chol
            .solve_lower_triangular(&DMatrix::identity(m, m))
            .expect("factor has positive diagonal");
        let mut p = linv.transpose() * linv;
        symmetrize(&mut p);
        p
    }

    pub fn log_det(&self) -> f64 {
        log_det_from_lower(&self.chol)
    }
}

/// Variational posterior over all inducing blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPosterior {
    pub blocks: Vec<VariationalBlock>,
}

impl VariationalPosterior {
    /// `m ~ N(0, 0.1²)`, `V = 0.1·I` in every block.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let m = config.num_inducing;
        let blocks = (0..config.num_blocks())
            .map(|_| {
                let mean = DVector::from_fn(m, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
                let chol = DMatrix::identity(m, m) * 0.1f64.sqrt();
                VariationalBlock { mean, chol }
            })
            .collect();
        VariationalPosterior { blocks }
    }

    fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.blocks.len() != config.num_blocks()
            || self.blocks.iter().any(|b| b.dim() != config.num_inducing)
        {
            return Err(Error::shape(format!(
                "posterior needs {} blocks of size {}",
                config.num_blocks(),
                config.num_inducing
            )));
        }
        Ok(())
    }
}

/// Per-point Gaussian marginals of one LPF over a batch of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPosterior {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

impl MarginalPosterior {
    pub fn point(&self, n: usize) -> GaussianMarginal1D {
        GaussianMarginal1D {
            mean: self.mean[n],
            variance: self.variance[n],
        }
    }
}

/// `KL(N(m, V) ‖ N(0, K))`.
pub fn kl_gaussian(block: &VariationalBlock, kuu: &Factored) -> Result<f64> {
    let m = block.dim();
    if kuu.dim() != m {
        return Err(Error::shape("KL blocks differ in size"));
    }
    let lk = kuu.chol.l();
    let x = lk
        .solve_lower_triangular(block.chol())
        .ok_or_else(|| Error::domain("prior factor is singular"))?;
    let y = lk
        .solve_lower_triangular(&block.mean)
        .ok_or_else(|| Error::domain("prior factor is singular"))?;
    let kl = 0.5 * (x.norm_squared() + y.norm_squared() - m as f64 + kuu.log_det() - block.log_det());
    if !kl.is_finite() {
        return Err(Error::NonFinite("KL divergence".into()));
    }
    Ok(kl.max(0.0))
}

/// Which gradients [`evaluate`] should produce.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GradRequest {
    pub variational: bool,
    pub params: bool,
}

/// `∇_m` and `∇_V` of the negative ELBO per block.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalGrads {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

/// Gradient of the coupling parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingGrad {
    Lmc(LccMatrix),
    Cpm {
        /// `∂/∂κ_{lpf}`, one vector of length `P` per LPF.
        kappa: Vec<Vec<f64>>,
        /// `∂/∂S`, laid out like an LCC matrix.
        weights: LccMatrix,
    },
}

/// Negative-ELBO gradient with respect to the (unlinked) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub inducing: Vec<DMatrix<f64>>,
    pub lengthscales: Vec<Vec<f64>>,
    pub coupling: CouplingGrad,
}

/// Result of one negative-ELBO evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub nelbo: f64,
    /// Scaled expected-NLL sum.
    pub data_term: f64,
    pub kl_term: f64,
    pub clamp_events: u32,
    pub variational: Option<VariationalGrads>,
    pub params: Option<ParamGrads>,
}

struct Component {
    q: usize,
    cov: Vec<f64>,
    weight: f64,
    exz: DMatrix<f64>,
    ezz: DMatrix<f64>,
}

struct BlockForward {
    kuu: Factored,
    kinv: DMatrix<f64>,
    alpha: DVector<f64>,
    v: DMatrix<f64>,
    /// `K⁻¹VK⁻¹ − K⁻¹`.
    bmat: DMatrix<f64>,
    kxz: DMatrix<f64>,
    comps: Vec<Component>,
    k0: f64,
    proj_mean: DVector<f64>,
    proj_var: DVector<f64>,
}

struct Forward {
    blocks: Vec<BlockForward>,
    /// `coef[lpf][block]`: LCCs for LMC, identity for CPM.
    coef: DMatrix<f64>,
    lpf_mean: Vec<DVector<f64>>,
    lpf_var: Vec<DVector<f64>>,
}

fn components(params: &Params, block: usize, keep_ezz: bool, z: &DMatrix<f64>, x: &DMatrix<f64>) -> Vec<Component> {
    let hyper = &params.hyper;
    let make = |q: usize, cov: Vec<f64>, weight: f64| Component {
        q,
        exz: eq_cross(x, z, &cov),
        ezz: if keep_ezz { eq_self(z, &cov) } else { DMatrix::zeros(0, 0) },
        cov,
        weight,
    };
    match &hyper.coupling {
        Coupling::Lmc(_) => vec![make(block, hyper.lengthscales[block].values().to_vec(), 1.0)],
        Coupling::Cpm(sk) => {
            let s = &sk[block];
            hyper
                .lengthscales
                .iter()
                .enumerate()
                .map(|(q, l)| {
                    let cov = cpm_component_cov(&s.kappa, &s.kappa, l.values());
                    make(q, cov, s.weights[q] * s.weights[q])
                })
                .collect()
        }
    }
}

fn forward(
    config: &ModelConfig,
    x: &DMatrix<f64>,
    post: &VariationalPosterior,
    params: &Params,
    keep_ezz: bool,
) -> Result<Forward> {
    config.check_params(params)?;
    post.check(config)?;
    if x.ncols() != config.input_dim {
        return Err(Error::shape(format!(
            "inputs have {} columns, model expects {}",
            x.ncols(),
            config.input_dim
        )));
    }
    let kuu = assemble_kuu(&params.inducing, &params.hyper)?;
    let mut blocks = Vec::with_capacity(kuu.blocks.len());
    for (b, kb) in kuu.blocks.into_iter().enumerate() {
        let z = &params.inducing.blocks[b];
        let comps = components(params, b, keep_ezz, z, x);
        let mut kxz = DMatrix::zeros(x.nrows(), z.nrows());
        let mut k0 = 0.0;
        for c in &comps {
            if c.weight != 0.0 {
                kxz += &c.exz * c.weight;
                k0 += c.weight * eq_zero_lag(&c.cov);
            }
        }
        let kinv = kb.inverse();
        let vb = &post.blocks[b];
        let alpha = &kinv * &vb.mean;
        let v = vb.covariance();
        let mut bmat = &kinv * &v * &kinv - &kinv;
        symmetrize(&mut bmat);
        let proj_mean = &kxz * &alpha;
        let proj_var = rowwise_quad(&kxz, &bmat);
        blocks.push(BlockForward {
            kuu: kb,
            kinv,
            alpha,
            v,
            bmat,
            kxz,
            comps,
            k0,
            proj_mean,
            proj_var,
        });
    }

    let j = config.num_lpf();
    let coef = match &params.hyper.coupling {
        Coupling::Lmc(a) => DMatrix::from_fn(j, config.num_latent, |l, q| a.get(l, q)),
        Coupling::Cpm(_) => DMatrix::identity(j, j),
    };
    let n = x.nrows();
    let mut lpf_mean = Vec::with_capacity(j);
    let mut lpf_var = Vec::with_capacity(j);
    for l in 0..j {
        let mut mean = DVector::zeros(n);
        let mut var = DVector::zeros(n);
        for (b, bf) in blocks.iter().enumerate() {
            let c = coef[(l, b)];
            if c == 0.0 {
                continue;
            }
            mean.axpy(c, &bf.proj_mean, 1.0);
            for i in 0..n {
                var[i] += c * c * (bf.k0 + bf.proj_var[i]);
            }
        }
        var.apply(|v: &mut f64| *v = v.max(VARIANCE_FLOOR));
        if mean.iter().chain(var.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("marginal posterior".into()));
        }
        lpf_mean.push(mean);
        lpf_var.push(var);
    }
    Ok(Forward {
        blocks,
        coef,
        lpf_mean,
        lpf_var,
    })
}

/// Marginals of LPF `(d, j)` at the rows of `xb`.
pub fn marginal_posterior(
    config: &ModelConfig,
    xb: &DMatrix<f64>,
    post: &VariationalPosterior,
    params: &Params,
    d: usize,
    j: usize,
) -> Result<MarginalPosterior> {
    if d >= config.num_outputs() || j >= config.likelihoods[d].num_latent() {
        return Err(Error::shape(format!("no LPF ({d}, {j}) in this model")));
    }
    let mut fw = forward(config, xb, post, params, false)?;
    let l = config.lpf_offset(d) + j;
    Ok(MarginalPosterior {
        mean: std::mem::replace(&mut fw.lpf_mean[l], DVector::zeros(0)),
        variance: std::mem::replace(&mut fw.lpf_var[l], DVector::zeros(0)),
    })
}

/// Marginals of every LPF at `xstar`, grouped by output: `out[d][j]`.
pub fn predict(
    config: &ModelConfig,
    xstar: &DMatrix<f64>,
    post: &VariationalPosterior,
    params: &Params,
) -> Result<Vec<Vec<MarginalPosterior>>> {
    let fw = forward(config, xstar, post, params, false)?;
    let mut means = fw.lpf_mean.into_iter();
    let mut vars = fw.lpf_var.into_iter();
    Ok(config
        .likelihoods
        .iter()
        .map(|spec| {
            (0..spec.num_latent())
                .map(|_| MarginalPosterior {
                    mean: means.next().expect("one mean per LPF"),
                    variance: vars.next().expect("one variance per LPF"),
                })
                .collect()
        })
        .collect())
}

/// Negative ELBO on a minibatch.
pub fn nelbo<R: Rng + ?Sized>(
    config: &ModelConfig,
    data: &Dataset,
    batch: &MiniBatch,
    post: &VariationalPosterior,
    params: &Params,
    rng: &mut R,
) -> Result<f64> {
    Ok(evaluate(config, data, batch, post, params, rng, GradRequest::default())?.nelbo)
}

/// `∇_m` and `∇_V` of the minibatch negative ELBO.
pub fn grad_variational<R: Rng + ?Sized>(
    config: &ModelConfig,
    data: &Dataset,
    batch: &MiniBatch,
    post: &VariationalPosterior,
    params: &Params,
    rng: &mut R,
) -> Result<VariationalGrads> {
    let req = GradRequest {
        variational: true,
        params: false,
    };
    Ok(evaluate(config, data, batch, post, params, rng, req)?
        .variational
        .expect("requested"))
}

/// Minibatch negative ELBO `(N/B)·Σ E[g] + Σ KL`, with the requested
/// gradients. Monte Carlo draws are consumed from `rng` in a fixed order, so
/// equal seeds give common random numbers across parameter values.
pub fn evaluate<R: Rng + ?Sized>(
    config: &ModelConfig,
    data: &Dataset,
    batch: &MiniBatch,
    post: &VariationalPosterior,
    params: &Params,
    rng: &mut R,
    req: GradRequest,
) -> Result<Evaluation> {
    if batch.is_empty() {
        return Err(Error::domain("minibatch is empty"));
    }
    if data.likelihoods != config.likelihoods {
        return Err(Error::shape("dataset likelihoods differ from the model's"));
    }
    if batch.indices.iter().any(|&i| i >= data.len()) {
        return Err(Error::domain("minibatch index out of range"));
    }
    let xb = data.x.select_rows(&batch.indices);
    let fw = forward(config, &xb, post, params, req.params)?;
    let nb = batch.len();
    let j_total = config.num_lpf();
    let s = batch.scale;

    let mut data_term = 0.0;
    let mut clamp_events = 0;
    let mut dmean = vec![DVector::zeros(nb); j_total];
    let mut dvar = vec![DVector::zeros(nb); j_total];
    let mut marg = Vec::with_capacity(4);
    for (i, &row) in batch.indices.iter().enumerate() {
        for (d, spec) in config.likelihoods.iter().enumerate() {
            let Some(y) = data.outputs[d][row] else {
                continue;
            };
            let off = config.lpf_offset(d);
            marg.clear();
            marg.extend((0..spec.num_latent()).map(|j| GaussianMarginal1D {
                mean: fw.lpf_mean[off + j][i],
                variance: fw.lpf_var[off + j][i],
            }));
            let e = expected_nll(spec, y, &marg, rng, config.expectation_samples).map_err(|err| match err {
                Error::Domain(m) => Error::Support {
                    row,
                    output: d + 1,
                    message: m,
                },
                other => other,
            })?;
            data_term += s * e.value;
            clamp_events += e.clamp_events;
            for j in 0..spec.num_latent() {
                dmean[off + j][i] = s * e.g_m[j];
                dvar[off + j][i] = s * e.g_v[j];
            }
        }
    }

    let mut kl_term = 0.0;
    for (bf, vb) in fw.blocks.iter().zip(&post.blocks) {
        kl_term += kl_gaussian(vb, &bf.kuu)?;
    }
    let nelbo = data_term + kl_term;
    if !nelbo.is_finite() {
        return Err(Error::NonFinite("negative ELBO".into()));
    }

    // Per-block sensitivities of the data term to the projected means and
    // variances.
    let nblocks = fw.blocks.len();
    let mut u = vec![DVector::zeros(nb); nblocks];
    let mut w = vec![DVector::zeros(nb); nblocks];
    if req.variational || req.params {
        for l in 0..j_total {
            for b in 0..nblocks {
                let c = fw.coef[(l, b)];
                if c != 0.0 {
                    u[b].axpy(c, &dmean[l], 1.0);
                    w[b].axpy(c * c, &dvar[l], 1.0);
                }
            }
        }
    }

    let variational = req.variational.then(|| {
        let mut gm = Vec::with_capacity(nblocks);
        let mut gv = Vec::with_capacity(nblocks);
        for ((bf, vb), (ub, wb)) in fw.blocks.iter().zip(&post.blocks).zip(u.iter().zip(&w)) {
            gm.push(&bf.kinv * (bf.kxz.transpose() * ub) + &bf.alpha);
            let gb = weighted_gram(&bf.kxz, wb);
            let mut g = &bf.kinv * gb * &bf.kinv + (&bf.kinv - vb.precision()) * 0.5;
            symmetrize(&mut g);
            gv.push(g);
        }
        VariationalGrads { mean: gm, cov: gv }
    });

    let params_grad = if req.params {
        Some(param_backward(config, params, &xb, &fw, &u, &w, &dmean, &dvar))
    } else {
        None
    };

    Ok(Evaluation {
        nelbo,
        data_term,
        kl_term,
        clamp_events,
        variational,
        params: params_grad,
    })
}

#[allow(clippy::too_many_arguments)]
fn param_backward(
    config: &ModelConfig,
    params: &Params,
    xb: &DMatrix<f64>,
    fw: &Forward,
    u: &[DVector<f64>],
    w: &[DVector<f64>],
    dmean: &[DVector<f64>],
    dvar: &[DVector<f64>],
) -> ParamGrads {
    let (q_total, j_total, m, p) = (
        config.num_latent,
        config.num_lpf(),
        config.num_inducing,
        config.input_dim,
    );
    let mut dz_all = Vec::with_capacity(fw.blocks.len());
    let mut dls = vec![vec![0.0; p]; q_total];
    let mut dkappa = vec![vec![0.0; p]; j_total];
    let mut dweights = LccMatrix::zeros(q_total, j_total);

    for (b, bf) in fw.blocks.iter().enumerate() {
        let z = &params.inducing.blocks[b];
        let kinv = &bf.kinv;
        let (ub, wb) = (&u[b], &w[b]);

        // ∂/∂K_xz: mean is K_xz α, variance quad is K_xz B K_xzᵀ.
        let mut dkxz = ub * bf.alpha.transpose();
        let kb = &bf.kxz * &bf.bmat;
        for i in 0..kb.nrows() {
            let s = 2.0 * wb[i];
            for c in 0..m {
                dkxz[(i, c)] += s * kb[(i, c)];
            }
        }

        // ∂/∂K_uu from the data term and the KL term.
        let g_alpha = bf.kxz.transpose() * ub;
        let g_b = weighted_gram(&bf.kxz, wb);
        let kvk = kinv * &bf.v * kinv;
        let kgk = kinv * &g_b * kinv;
        let ka = kinv * g_alpha;
        let mut dk = -(&ka * bf.alpha.transpose()) - &kgk * &bf.v * kinv - kinv * &bf.v * &kgk + &kgk;
        dk += (-&kvk - &bf.alpha * bf.alpha.transpose() + kinv) * 0.5;

        let dk0: f64 = wb.sum();

        let mut dz = DMatrix::zeros(m, p);
        let mut dz_side = DMatrix::zeros(m, p);
        for c in &bf.comps {
            let mut dcov = vec![0.0; p];
            let mut dweight = eq_cross_backward(xb, z, &c.cov, &c.exz, c.weight, &dkxz, None, &mut dz, &mut dcov);
            dweight += eq_cross_backward(z, z, &c.cov, &c.ezz, c.weight, &dk, Some(&mut dz_side), &mut dz, &mut dcov);
            let e0 = eq_zero_lag(&c.cov);
            dweight += dk0 * e0;
            for (dc, g) in dcov.iter_mut().zip(eq_zero_lag_dcov(&c.cov)) {
                *dc += dk0 * c.weight * g;
            }
            match &params.hyper.coupling {
                Coupling::Lmc(_) => {
                    for (a, g) in dls[c.q].iter_mut().zip(&dcov) {
                        *a += g;
                    }
                }
                Coupling::Cpm(sk) => {
                    for k in 0..p {
                        dls[c.q][k] += dcov[k];
                        dkappa[b][k] += 2.0 * dcov[k];
                    }
                    let sw = sk[b].weights[c.q];
                    let cur = dweights.get(b, c.q);
                    dweights.set(b, c.q, cur + 2.0 * sw * dweight);
                }
            }
        }
        dz += dz_side;
        dz_all.push(dz);
    }

    let coupling = match &params.hyper.coupling {
        Coupling::Lmc(a) => {
            let mut da = LccMatrix::zeros(q_total, j_total);
            for l in 0..j_total {
                for (q, bf) in fw.blocks.iter().enumerate() {
                    let aq = a.get(l, q);
                    let mut g = dmean[l].dot(&bf.proj_mean);
                    let gv: f64 = dvar[l].iter().zip(&bf.proj_var).map(|(d, p)| d * (bf.k0 + p)).sum();
                    g += 2.0 * aq * gv;
                    da.set(l, q, g);
                }
            }
            CouplingGrad::Lmc(da)
        }
        Coupling::Cpm(_) => CouplingGrad::Cpm {
            kappa: dkappa,
            weights: dweights,
        },
    };
    ParamGrads {
        inducing: dz_all,
        lengthscales: dls,
        coupling,
    }
}

/// Initial kernel lengthscale (and smoothing-kernel lengthscale) value.
pub const INIT_LENGTHSCALE: f64 = 0.1;

/// Seeded initial parameters: inducing inputs uniform over `bounds`,
/// lengthscales and κ at [`INIT_LENGTHSCALE`], LCCs and smoothing weights
/// drawn from `N(0, 1)`.
pub fn init_params<R: Rng + ?Sized>(config: &ModelConfig, bounds: &[(f64, f64)], rng: &mut R) -> Result<Params> {
    config.validate()?;
    if bounds.len() != config.input_dim {
        return Err(Error::shape("bounds do not match the input dimension"));
    }
    let (q, j, m, p) = (config.num_latent, config.num_lpf(), config.num_inducing, config.input_dim);
    let blocks = (0..config.num_blocks())
        .map(|_| {
            DMatrix::from_fn(m, p, |_, c| {
                let (lo, hi) = bounds[c];
                lo + (hi - lo) * rng.random::<f64>()
            })
        })
        .collect();
    let inducing = InducingSet::new(blocks)?;
    let lengthscales = (0..q)
        .map(|_| EqLengthscales::uniform(p, INIT_LENGTHSCALE))
        .collect::<Result<Vec<_>>>()?;
    let coupling = match config.prior {
        PriorKind::Lmc => Coupling::Lmc(LccMatrix::from_flat(
            q,
            j,
            (0..q * j).map(|_| rng.sample(StandardNormal)).collect(),
        )?),
        PriorKind::Cpm => {
            let s = LccMatrix::from_flat(q, j, (0..q * j).map(|_| rng.sample(StandardNormal)).collect())?;
            Coupling::Cpm(
                (0..j)
                    .map(|l| SmoothingKernelParams::new(vec![INIT_LENGTHSCALE; p], s.row(l)))
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

/// Factorized prior blocks for the given parameters (exposed for tests and
/// the optimizers' KL-only checks).
pub fn prior_blocks(params: &Params) -> Result<Vec<Factored>> {
    Ok(assemble_kuu(&params.inducing, &params.hyper)?.blocks)
}

/// A posterior whose blocks equal the prior: `m = 0`, `V = K_uu`.
pub fn posterior_at_prior(params: &Params) -> Result<VariationalPosterior> {
    let blocks = prior_blocks(params)?
        .iter()
        .map(|k| VariationalBlock::new(DVector::zeros(k.dim()), k.chol.l()))
        .collect::<Result<Vec<_>>>()?;
    Ok(VariationalPosterior { blocks })
}
