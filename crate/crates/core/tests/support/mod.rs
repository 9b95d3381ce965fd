//! Oracle measurements shared by the unit suites and the acceptance report.
//! Each function returns the worst error it observed so callers can either
//! assert on it or print it.
#![allow(dead_code)]

use hetmogp_core::data_io::{Dataset, MiniBatch};
use hetmogp_core::hyper_vo::{pack, ExploratoryDist, PriorPrecision, ThetaLayout};
use hetmogp_core::kernels::{
    cpm_cov, cpm_gram, eq_kernel, lmc_cov_ff, Coupling, EqLengthscales, InducingSet, KernelHyper, LccMatrix,
    PriorKind, SmoothingKernelParams,
};
use hetmogp_core::likelihoods::{d2nll_df2, dnll_df, nll, LikelihoodSpec};
use hetmogp_core::linalg::sym_eigenvalues;
use hetmogp_core::mogp::{
    evaluate, grad_variational, prior_blocks, CouplingGrad, GradRequest, ModelConfig, Params, VariationalBlock,
    VariationalPosterior,
};
use hetmogp_core::optimizers::{fng_step, ng_variational_step, FngSettings, FngState, PrecisionMode, Problem, StepSizes};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub fn ls(v: &[f64]) -> EqLengthscales {
    EqLengthscales::new(v.to_vec()).unwrap()
}

pub fn random_inputs(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.random::<f64>())
}

fn random_chol(m: usize, off: f64, diag: (f64, f64), rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |r, c| match r.cmp(&c) {
        std::cmp::Ordering::Greater => off * rng.sample::<f64, _>(StandardNormal),
        std::cmp::Ordering::Equal => diag.0 + diag.1 * rng.random::<f64>(),
        std::cmp::Ordering::Less => 0.0,
    })
}

// ---------------------------------------------------------------------------
// Finite-difference gradients of the negative ELBO.

const FD_SEED: u64 = 17;

/// `D = 2`, `Q = 2`, `M = 3`, `N = 6`, `P = 2`, with one missing observation.
pub fn gradient_instance(prior: PriorKind) -> (ModelConfig, Dataset, VariationalPosterior, Params) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, q, m, p) = (6, 2, 3, 2);
    let x = random_inputs(n, p, &mut rng);
    let y1 = (0..n).map(|_| Some(rng.sample::<f64, _>(StandardNormal))).collect();
    let y2 = (0..n)
        .map(|i| if i == 2 { None } else { Some(rng.sample::<f64, _>(StandardNormal)) })
        .collect();
    let data = Dataset::new(
        x,
        vec![y1, y2],
        vec![LikelihoodSpec::HetGaussian, LikelihoodSpec::Gaussian { sigma: 0.7 }],
    )
    .unwrap();
    let cfg = ModelConfig::new(prior, data.likelihoods.clone(), q, m, p).unwrap();
    let j = cfg.num_lpf();
    let inducing = InducingSet::new((0..cfg.num_blocks()).map(|_| random_inputs(m, p, &mut rng)).collect()).unwrap();
    let lengthscales = (0..q)
        .map(|_| ls(&(0..p).map(|_| 0.1 + 0.3 * rng.random::<f64>()).collect::<Vec<_>>()))
        .collect();
    let coupling = match prior {
        PriorKind::Lmc => Coupling::Lmc(
            LccMatrix::from_flat(q, j, (0..q * j).map(|_| rng.sample(StandardNormal)).collect()).unwrap(),
        ),
        PriorKind::Cpm => Coupling::Cpm(
            (0..j)
                .map(|_| {
                    SmoothingKernelParams::new(
                        (0..p).map(|_| 0.05 + 0.1 * rng.random::<f64>()).collect(),
                        (0..q).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect(),
                    )
                    .unwrap()
                })
                .collect(),
        ),
    };
    let params = Params {
        inducing,
        hyper: KernelHyper { lengthscales, coupling },
    };
    let blocks = (0..cfg.num_blocks())
        .map(|_| {
            let mean = DVector::from_fn(m, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
            VariationalBlock::new(mean, random_chol(m, 0.05, (0.2, 0.2), &mut rng)).unwrap()
        })
        .collect();
    (cfg, data, VariationalPosterior { blocks }, params)
}

fn nelbo_at(cfg: &ModelConfig, data: &Dataset, post: &VariationalPosterior, params: &Params) -> f64 {
    let b = MiniBatch::full(data.len());
    evaluate(cfg, data, &b, post, params, &mut ChaCha8Rng::seed_from_u64(FD_SEED), GradRequest::default())
        .unwrap()
        .nelbo
}

fn central(f: impl Fn(f64) -> f64) -> f64 {
    let h = 1e-6;
    (f(h) - f(-h)) / (2.0 * h)
}

/// Relative error with a floor of `1e-2` on the reference.
fn fd_rel(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-2)
}

/// Worst relative error of `∇_m` and `∇_V` against central differences.
pub fn variational_gradient_error(prior: PriorKind) -> f64 {
    let (cfg, data, post, params) = gradient_instance(prior);
    let req = GradRequest {
        variational: true,
        params: false,
    };
    let b = MiniBatch::full(data.len());
    let g = evaluate(&cfg, &data, &b, &post, &params, &mut ChaCha8Rng::seed_from_u64(FD_SEED), req)
        .unwrap()
        .variational
        .unwrap();
    let mut worst = 0.0f64;
    for (bi, blk) in post.blocks.iter().enumerate() {
        for k in 0..blk.dim() {
            let num = central(|e| {
                let mut p2 = post.clone();
                p2.blocks[bi].mean[k] += e;
                nelbo_at(&cfg, &data, &p2, &params)
            });
            worst = worst.max(fd_rel(g.mean[bi][k], num));
        }
        let v = blk.covariance();
        for r in 0..blk.dim() {
            for c in 0..=r {
                let num = central(|e| {
                    let mut vv = v.clone();
                    vv[(r, c)] += e;
                    if r != c {
                        vv[(c, r)] += e;
                    }
                    let mut p2 = post.clone();
                    p2.blocks[bi] = VariationalBlock::from_covariance(blk.mean.clone(), &vv).unwrap();
                    nelbo_at(&cfg, &data, &p2, &params)
                });
                // A symmetric perturbation moves both mirrored entries.
                let analytic = if r == c { g.cov[bi][(r, c)] } else { 2.0 * g.cov[bi][(r, c)] };
                worst = worst.max(fd_rel(analytic, num));
            }
        }
    }
    worst
}

/// Worst relative error of the `Z`, lengthscale and coupling gradients.
pub fn parameter_gradient_error(prior: PriorKind) -> f64 {
    let (cfg, data, post, params) = gradient_instance(prior);
    let req = GradRequest {
        variational: false,
        params: true,
    };
    let b = MiniBatch::full(data.len());
    let g = evaluate(&cfg, &data, &b, &post, &params, &mut ChaCha8Rng::seed_from_u64(FD_SEED), req)
        .unwrap()
        .params
        .unwrap();
    let f = |p2: &Params| nelbo_at(&cfg, &data, &post, p2);
    let mut worst = 0.0f64;
    for (bi, z) in params.inducing.blocks.iter().enumerate() {
        for r in 0..z.nrows() {
            for c in 0..z.ncols() {
                let num = central(|e| {
                    let mut p2 = params.clone();
                    p2.inducing.blocks[bi][(r, c)] += e;
                    f(&p2)
                });
                worst = worst.max(fd_rel(g.inducing[bi][(r, c)], num));
            }
        }
    }
    for q in 0..cfg.num_latent {
        for k in 0..cfg.input_dim {
            let num = central(|e| {
                let mut p2 = params.clone();
                let mut v = p2.hyper.lengthscales[q].values().to_vec();
                v[k] += e;
                p2.hyper.lengthscales[q] = ls(&v);
                f(&p2)
            });
            worst = worst.max(fd_rel(g.lengthscales[q][k], num));
        }
    }
    match (&g.coupling, &params.hyper.coupling) {
        (CouplingGrad::Lmc(da), Coupling::Lmc(a)) => {
            for l in 0..a.num_lpf() {
                for q in 0..a.num_latent() {
                    let num = central(|e| {
                        let mut a2 = a.clone();
                        a2.set(l, q, a.get(l, q) + e);
                        let mut p2 = params.clone();
                        p2.hyper.coupling = Coupling::Lmc(a2);
                        f(&p2)
                    });
                    worst = worst.max(fd_rel(da.get(l, q), num));
                }
            }
        }
        (CouplingGrad::Cpm { kappa, weights }, Coupling::Cpm(sk)) => {
            for l in 0..sk.len() {
                for (k, &dk) in kappa[l].iter().enumerate() {
                    let num = central(|e| {
                        let mut s2 = sk.clone();
                        s2[l].kappa[k] += e;
                        let mut p2 = params.clone();
                        p2.hyper.coupling = Coupling::Cpm(s2);
                        f(&p2)
                    });
                    worst = worst.max(fd_rel(dk, num));
                }
                for q in 0..cfg.num_latent {
                    let num = central(|e| {
                        let mut s2 = sk.clone();
                        s2[l].weights[q] += e;
                        let mut p2 = params.clone();
                        p2.hyper.coupling = Coupling::Cpm(s2);
                        f(&p2)
                    });
                    worst = worst.max(fd_rel(weights.get(l, q), num));
                }
            }
        }
        _ => unreachable!("gradient and parameter couplings differ"),
    }
    worst
}

// ---------------------------------------------------------------------------
// Conjugate Gaussian toy and natural-gradient oracles.

/// One Gaussian output, `Q = 1`, LMC: the variational problem is conjugate and
/// its objective has a closed form in `(m, V)`.
pub struct Conjugate {
    pub cfg: ModelConfig,
    pub layout: ThetaLayout,
    pub data: Dataset,
    pub params: Params,
    pub sigma: f64,
    /// Rows of `K_fu K_uu⁻¹`.
    pub a_rows: DMatrix<f64>,
    pub kuu: DMatrix<f64>,
}

pub fn conjugate(m: usize, seed: u64) -> Conjugate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, sigma, a, l) = (6, 0.3, 1.2, 0.1);
    let likelihoods = vec![LikelihoodSpec::Gaussian { sigma }];
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y = (0..n).map(|_| Some(rng.sample::<f64, _>(StandardNormal))).collect();
    let data = Dataset::new(DMatrix::from_column_slice(n, 1, &x), vec![y], likelihoods.clone()).unwrap();
    let cfg = ModelConfig::new(PriorKind::Lmc, likelihoods, 1, m, 1).unwrap();
    let z = DMatrix::from_fn(m, 1, |r, _| (r as f64 + 0.5) / m as f64);
    let params = Params {
        inducing: InducingSet::new(vec![z.clone()]).unwrap(),
        hyper: KernelHyper {
            lengthscales: vec![ls(&[l])],
            coupling: Coupling::Lmc(LccMatrix::from_flat(1, 1, vec![a]).unwrap()),
        },
    };
    let kuu = prior_blocks(&params).unwrap()[0].cov.entries.clone();
    let kinv = kuu.clone().try_inverse().unwrap();
    let eq = |u: f64, v: f64| (-(u - v) * (u - v) / (2.0 * l)).exp() / (2.0 * std::f64::consts::PI * l).sqrt();
    let kfu = DMatrix::from_fn(n, m, |i, r| a * eq(x[i], z[(r, 0)]));
    let layout = ThetaLayout::new(&cfg);
    Conjugate {
        cfg,
        layout,
        data,
        params,
        sigma,
        a_rows: kfu * kinv,
        kuu,
    }
}

impl Conjugate {
    /// `(∇_m, ∇_V)` of the full-batch negative ELBO, written out by hand.
    pub fn grads(&self, mean: &DVector<f64>, v: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let s2 = self.sigma * self.sigma;
        let kinv = self.kuu.clone().try_inverse().unwrap();
        let vinv = v.clone().try_inverse().unwrap();
        let y = DVector::from_iterator(self.data.len(), self.data.outputs[0].iter().map(|v| v.unwrap()));
        let a = &self.a_rows;
        let gm = -(a.transpose() * (y - a * mean)) / s2 + &kinv * mean;
        let gv = a.transpose() * a / (2.0 * s2) + (kinv - vinv) * 0.5;
        (gm, gv)
    }

    pub fn theta(&self) -> Vec<f64> {
        pack(&self.layout, &self.params).unwrap()
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem {
            config: &self.cfg,
            layout: &self.layout,
            data: &self.data,
        }
    }

    pub fn model_grads(&self, blk: &VariationalBlock) -> (DVector<f64>, DMatrix<f64>) {
        let post = VariationalPosterior {
            blocks: vec![blk.clone()],
        };
        let batch = MiniBatch::full(self.data.len());
        let mut g = grad_variational(&self.cfg, &self.data, &batch, &post, &self.params, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        (g.mean.remove(0), g.cov.remove(0))
    }
}

pub fn block(mean: &[f64], v: &DMatrix<f64>) -> VariationalBlock {
    VariationalBlock::from_covariance(DVector::from_column_slice(mean), v).unwrap()
}

/// Max absolute difference relative to `max(|b|, 1)`.
pub fn mat_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max().max(1.0)
}

pub fn vec_rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Natural parameters of `N(m, V)` for the statistics `(u_i, u_i u_j for i ≤ j)`.
pub struct Natural {
    dim: usize,
    pairs: Vec<(usize, usize)>,
}

impl Natural {
    pub fn new(dim: usize) -> Self {
        let pairs = (0..dim).flat_map(|i| (i..dim).map(move |j| (i, j))).collect();
        Natural { dim, pairs }
    }

    fn len(&self) -> usize {
        self.dim + self.pairs.len()
    }

    pub fn natural_of(&self, m: &DVector<f64>, v: &DMatrix<f64>) -> DVector<f64> {
        let p = v.clone().try_inverse().unwrap();
        let l1 = &p * m;
        let mut th = DVector::zeros(self.len());
        th.rows_mut(0, self.dim).copy_from(&l1);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            th[self.dim + k] = if i == j { -0.5 * p[(i, i)] } else { -p[(i, j)] };
        }
        th
    }

    fn lambda2(&self, th: &DVector<f64>) -> DMatrix<f64> {
        let mut l2 = DMatrix::zeros(self.dim, self.dim);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let t = th[self.dim + k];
            if i == j {
                l2[(i, i)] = t;
            } else {
                l2[(i, j)] = 0.5 * t;
                l2[(j, i)] = 0.5 * t;
            }
        }
        l2
    }

    pub fn to_moments(&self, th: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let v = (self.lambda2(th) * -2.0).try_inverse().unwrap();
        let m = &v * th.rows(0, self.dim);
        (m, v)
    }

    /// Covariance of the sufficient statistics, the Fisher matrix of this family.
    pub fn fisher(&self, m: &DVector<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.len();
        let d = self.dim;
        let mut f = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                f[(a, b)] = match (a < d, b < d) {
                    (true, true) => v[(a, b)],
                    (true, false) | (false, true) => {
                        let (i, (j, k)) = if a < d { (a, self.pairs[b - d]) } else { (b, self.pairs[a - d]) };
                        m[j] * v[(i, k)] + m[k] * v[(i, j)]
                    }
                    (false, false) => {
                        let (i, j) = self.pairs[a - d];
                        let (k, l) = self.pairs[b - d];
                        v[(i, k)] * v[(j, l)]
                            + v[(i, l)] * v[(j, k)]
                            + m[i] * m[k] * v[(j, l)]
                            + m[i] * m[l] * v[(j, k)]
                            + m[j] * m[k] * v[(i, l)]
                            + m[j] * m[l] * v[(i, k)]
                    }
                };
            }
        }
        f
    }

    /// Gradient with respect to the natural parameters by the chain rule
    /// through `V = (−2Λ₂)⁻¹` and `m = Vλ₁`.
    pub fn grad(&self, th: &DVector<f64>, gm: &DVector<f64>, gv: &DMatrix<f64>) -> DVector<f64> {
        let (_, v) = self.to_moments(th);
        let l1 = th.rows(0, self.dim).into_owned();
        let mut g = DVector::zeros(self.len());
        for k in 0..self.dim {
            g[k] = gm.dot(&v.column(k));
        }
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let mut dl = DMatrix::zeros(self.dim, self.dim);
            if i == j {
                dl[(i, i)] = 1.0;
            } else {
                dl[(i, j)] = 0.5;
                dl[(j, i)] = 0.5;
            }
            let dv = &v * dl * &v * 2.0;
            let dm = &dv * &l1;
            g[self.dim + k] = gm.dot(&dm) + gv.component_mul(&dv).sum();
        }
        g
    }
}

/// One `fng_step` with `γ = υ = 0` against `θ − β F⁻¹ ∇` in natural
/// coordinates; returns the worst relative error over `m` and `V`.
pub fn ng_oracle_error() -> f64 {
    let toy = conjugate(2, 2);
    let v0 = DMatrix::from_row_slice(2, 2, &[0.6, 0.15, 0.15, 0.35]);
    let m0 = DVector::from_vec(vec![0.4, -0.3]);
    let mut post = VariationalPosterior {
        blocks: vec![block(m0.as_slice(), &v0)],
    };
    let step = 0.05;
    let settings = FngSettings {
        steps: StepSizes {
            alpha: step,
            beta: step,
            gamma: 0.0,
            upsilon: 0.0,
        },
        lambda1: PriorPrecision::default(),
        theta_samples: 1,
        mode: PrecisionMode::Sqrt,
    };
    // A vanishing exploratory variance pins the sampled θ to μ.
    let mut q = ExploratoryDist::new(toy.theta(), 1e-30, settings.lambda1).unwrap();
    let mut state = FngState::new(&q, &post);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    fng_step(&toy.problem(), &MiniBatch::full(6), &mut post, &mut q, &mut state, &settings, &mut rng).unwrap();

    let nat = Natural::new(2);
    let th = nat.natural_of(&m0, &v0);
    let (gm, gv) = toy.grads(&m0, &v0);
    let direction = nat.fisher(&m0, &v0).lu().solve(&nat.grad(&th, &gm, &gv)).unwrap();
    let (m1, v1) = nat.to_moments(&(th - direction * step));
    let got = &post.blocks[0];
    vec_rel(&got.mean, &m1).max(mat_rel(&got.covariance(), &v1))
}

/// Momentum steps of `ng_variational_step` against the mirror-descent
/// recursion `λ_{t+1} = λ_t − β∇_η + υ(λ_t − λ_{t−1})` on a 1-D Gaussian.
/// Two-step cases start at the stationary variance, where the precision does
/// not move, so only the mean carries momentum; a one-step case starts away
/// from it.
pub fn mirror_descent_error() -> f64 {
    let toy = conjugate(1, 4);
    let (beta, upsilon) = (0.1, 0.6);
    let s2 = toy.sigma * toy.sigma;
    let k = toy.kuu[(0, 0)];
    let a2: f64 = toy.a_rows.iter().map(|a| a * a).sum();
    let v_star = 1.0 / (1.0 / k + a2 / s2);

    let scalar_grads = |m: f64, v: f64| {
        let (gm, gv) = toy.grads(&DVector::from_element(1, m), &DMatrix::from_element(1, 1, v));
        (gm[0], gv[(0, 0)])
    };
    // λ = (m/v, −1/(2v)); the gradient in η = (m, v + m²) is (g_m − 2m g_v, g_v).
    let to_nat = |m: f64, v: f64| (m / v, -0.5 / v);
    let from_nat = |l: (f64, f64)| {
        let v = -0.5 / l.1;
        (l.0 * v, v)
    };
    let mirror = |l: (f64, f64), l_prev: (f64, f64)| {
        let (m, v) = from_nat(l);
        let (gm, gv) = scalar_grads(m, v);
        (
            l.0 - beta * (gm - 2.0 * m * gv) + upsilon * (l.0 - l_prev.0),
            l.1 - beta * gv + upsilon * (l.1 - l_prev.1),
        )
    };

    let mut worst = 0.0f64;
    for (m0, v0, steps) in [(0.8, v_star, 2usize), (-0.4, v_star, 2), (0.5, 3.0 * v_star, 1)] {
        let mut l_prev = to_nat(m0, v0);
        let mut l = l_prev;
        let mut blk = block(&[m0], &DMatrix::from_element(1, 1, v0));
        let mut m_prev = blk.mean.clone();
        for _ in 0..steps {
            let next = mirror(l, l_prev);
            l_prev = l;
            l = next;
            let (gm, gv) = toy.model_grads(&blk);
            let nb = ng_variational_step(&blk, &m_prev, &gm, &gv, beta, upsilon).unwrap();
            m_prev = blk.mean.clone();
            blk = nb;
        }
        let (m_or, v_or) = from_nat(l);
        let (m_got, v_got) = (blk.mean[0], blk.covariance()[(0, 0)]);
        worst = worst
            .max((m_got - m_or).abs() / m_or.abs().max(1.0))
            .max((v_got - v_or).abs() / v_or.abs().max(1.0));
    }
    worst
}

// ---------------------------------------------------------------------------
// Likelihood families.

pub fn families() -> Vec<LikelihoodSpec> {
    vec![
        LikelihoodSpec::HetGaussian,
        LikelihoodSpec::Gaussian { sigma: 0.1 },
        LikelihoodSpec::Bernoulli,
        LikelihoodSpec::Beta,
        LikelihoodSpec::Gamma,
        LikelihoodSpec::Exponential,
        LikelihoodSpec::Poisson,
    ]
}

pub fn random_observation(spec: &LikelihoodSpec, rng: &mut ChaCha8Rng) -> f64 {
    match spec {
        LikelihoodSpec::HetGaussian | LikelihoodSpec::Gaussian { .. } => rng.random_range(-3.0..3.0),
        LikelihoodSpec::Bernoulli => f64::from(rng.random_bool(0.5)),
        LikelihoodSpec::Beta => rng.random_range(0.01..0.99),
        LikelihoodSpec::Gamma | LikelihoodSpec::Exponential => rng.random_range(0.05..5.0),
        LikelihoodSpec::Poisson => f64::from(rng.random_range(0u32..12)),
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Worst absolute error of closed-form NLL values at simple points.
pub fn likelihood_spot_error() -> f64 {
    let ln2 = std::f64::consts::LN_2;
    let cases = [
        (LikelihoodSpec::Bernoulli, 1.0, vec![0.0], ln2),
        (LikelihoodSpec::Bernoulli, 0.0, vec![0.0], ln2),
        (LikelihoodSpec::HetGaussian, 0.0, vec![0.0, 0.0], HALF_LN_2PI),
        (LikelihoodSpec::Gamma, 1.0, vec![0.0, 0.0], 1.0),
        (LikelihoodSpec::Exponential, 1.0, vec![0.0], 1.0),
        (LikelihoodSpec::Poisson, 0.0, vec![0.0], 1.0),
        (LikelihoodSpec::Gaussian { sigma: 1.0 }, 0.0, vec![0.0], HALF_LN_2PI),
        // Beta(1, 1) is uniform on (0, 1).
        (LikelihoodSpec::Beta, 0.3, vec![0.0, 0.0], 0.0),
    ];
    cases
        .iter()
        .map(|(spec, y, f, want)| (nll(spec, *y, f).unwrap() - want).abs())
        .fold(0.0, f64::max)
}

/// Worst relative error of first and second NLL derivatives against central
/// differences over `points` random `(y, f)` per family.
pub fn likelihood_fd_error(points: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for spec in families() {
        let jd = spec.num_latent();
        for _ in 0..points {
            let y = random_observation(&spec, &mut rng);
            let f: Vec<f64> = (0..jd).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = dnll_df(&spec, y, &f).unwrap();
            let hs = d2nll_df2(&spec, y, &f).unwrap();
            for j in 0..jd {
                let mut fp = f.clone();
                let mut fm = f.clone();
                fp[j] += h;
                fm[j] -= h;
                let num_g = (nll(&spec, y, &fp).unwrap() - nll(&spec, y, &fm).unwrap()) / (2.0 * h);
                let num_h = (dnll_df(&spec, y, &fp).unwrap()[j] - dnll_df(&spec, y, &fm).unwrap()[j]) / (2.0 * h);
                worst = worst.max(rel_err(g[j], num_g)).max(rel_err(hs[j], num_h));
            }
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Kernels.

/// Worst gap between a CPM covariance with `κ = 1e-10`, `S = e₁` and the EQ
/// kernel of the first latent process.
pub fn cpm_eq_reduction_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = 2;
        let tau: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let l1: Vec<f64> = (0..p).map(|_| rng.random_range(0.05..1.0)).collect();
        let l2: Vec<f64> = (0..p).map(|_| rng.random_range(0.05..1.0)).collect();
        let delta = SmoothingKernelParams::new(vec![1e-10; p], vec![1.0, 0.0]).unwrap();
        let got = cpm_cov(&tau, &delta, &delta, &[ls(&l1), ls(&l2)]).unwrap();
        let want = eq_kernel(&tau, &ls(&l1)).unwrap();
        worst = worst.max((got - want).abs());
    }
    worst
}

fn min_eig_ratio(k: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(k);
    let max = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    min / max
}

/// Over random LMC grams and joint two-LPF CPM grams: the worst asymmetry
/// relative to the largest entry and the smallest eigenvalue relative to the
/// largest.
pub fn gram_psd_report() -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut asym, mut min_ratio) = (0.0f64, f64::INFINITY);
    for trial in 0..10 {
        let p = 1 + trial % 3;
        let x = random_inputs(10, p, &mut rng);
        let lq: Vec<EqLengthscales> = (0..2)
            .map(|_| ls(&(0..p).map(|_| rng.random_range(0.05..0.5)).collect::<Vec<_>>()))
            .collect();
        let a: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        let lmc = lmc_cov_ff(&x, &x, &a, &a, &lq).unwrap().entries;
        let sks: Vec<SmoothingKernelParams> = (0..2)
            .map(|_| {
                SmoothingKernelParams::new(
                    (0..p).map(|_| rng.random_range(0.01..0.3)).collect(),
                    (0..2).map(|_| rng.sample(StandardNormal)).collect(),
                )
                .unwrap()
            })
            .collect();
        let mut joint = DMatrix::zeros(20, 20);
        for (i, si) in sks.iter().enumerate() {
            for (j, sj) in sks.iter().enumerate() {
                let blk = cpm_gram(&x, &x, si, sj, &lq).unwrap().entries;
                joint.view_mut((10 * i, 10 * j), (10, 10)).copy_from(&blk);
            }
        }
        for k in [&lmc, &joint] {
            let max = k.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            asym = asym.max((k - k.transpose()).abs().max() / max);
            min_ratio = min_ratio.min(min_eig_ratio(k));
        }
    }
    (asym, min_ratio)
}

/// One Gaussian output with a single LPF, shared by both priors: LMC with
/// `Q = 2` and `a = e₁` against CPM with `S = e₁` and vanishing smoothing.
/// Returns the worst relative gap over the data term and `(∇_m, ∇_V)`.
pub fn lmc_cpm_parity_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (q, m, n) = (2, 3, 5);
    let likelihoods = vec![LikelihoodSpec::Gaussian { sigma: 0.5 }];
    let x = random_inputs(n, 1, &mut rng);
    let y = (0..n).map(|_| Some(rng.sample::<f64, _>(StandardNormal))).collect();
    let data = Dataset::new(x, vec![y], likelihoods.clone()).unwrap();
    let lq = vec![ls(&[0.15]), ls(&[0.4])];
    let z1 = random_inputs(m, 1, &mut rng);
    let z2 = random_inputs(m, 1, &mut rng);
    let mean = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let shared = VariationalBlock::new(mean, random_chol(m, 0.1, (0.3, 0.2), &mut rng)).unwrap();
    let other = VariationalBlock::new(DVector::zeros(m), DMatrix::identity(m, m)).unwrap();

    let lmc_cfg = ModelConfig::new(PriorKind::Lmc, likelihoods.clone(), q, m, 1).unwrap();
    let lmc_params = Params {
        inducing: InducingSet::new(vec![z1.clone(), z2]).unwrap(),
        hyper: KernelHyper {
            lengthscales: lq.clone(),
            coupling: Coupling::Lmc(LccMatrix::from_flat(q, 1, vec![1.0, 0.0]).unwrap()),
        },
    };
    let lmc_post = VariationalPosterior {
        blocks: vec![shared.clone(), other],
    };
    let cpm_cfg = ModelConfig::new(PriorKind::Cpm, likelihoods, q, m, 1).unwrap();
    let cpm_params = Params {
        inducing: InducingSet::new(vec![z1]).unwrap(),
        hyper: KernelHyper {
            lengthscales: lq,
            coupling: Coupling::Cpm(vec![SmoothingKernelParams::new(vec![1e-10], vec![1.0, 0.0]).unwrap()]),
        },
    };
    let cpm_post = VariationalPosterior { blocks: vec![shared] };

    let batch = MiniBatch::full(n);
    let req = GradRequest {
        variational: true,
        params: false,
    };
    let a = evaluate(&lmc_cfg, &data, &batch, &lmc_post, &lmc_params, &mut ChaCha8Rng::seed_from_u64(0), req).unwrap();
    let c = evaluate(&cpm_cfg, &data, &batch, &cpm_post, &cpm_params, &mut ChaCha8Rng::seed_from_u64(0), req).unwrap();
    let ga = a.variational.unwrap();
    let gc = c.variational.unwrap();
    let rel = |u: f64, v: f64| (u - v).abs() / u.abs().max(1.0);
    let mut worst = rel(a.data_term, c.data_term);
    for i in 0..m {
        worst = worst.max(rel(ga.mean[0][i], gc.mean[0][i]));
        for j in 0..m {
            worst = worst.max(rel(ga.cov[0][(i, j)], gc.cov[0][(i, j)]));
        }
    }
    worst
}
