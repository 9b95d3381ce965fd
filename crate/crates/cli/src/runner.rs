//! Multi-seed training runs, test-set evaluation and run-directory output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hetmogp_core::data_io::{Dataset, MiniBatch, MiniBatcher};
use hetmogp_core::hyper_vo::{pack, unpack, ThetaLayout};
use hetmogp_core::likelihoods::nlpd;
use hetmogp_core::mogp::{
    init_params, nelbo, posterior_at_prior, predict, ModelConfig, Params, VariationalPosterior,
};
use hetmogp_core::optimizers::{OptimizerKind, Problem, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, VariationalInit};
use crate::error::{CliError, CliResult};
use crate::state::TrainedState;

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Init = 0,
    Batch = 1,
    Step = 2,
    Eval = 3,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

/// One row of `metrics.csv`. `nlpd` is `None` on iterations without an
/// evaluation; inside it, `None` marks an output with no test observations.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub nelbo: f64,
    pub nlpd: Option<Vec<Option<f64>>>,
}

/// Invariants checked after every optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub checks: u64,
    pub violations: u64,
    /// Smallest precision offset `p` seen (FNG only).
    pub min_precision_offset: Option<f64>,
    /// Smallest exploratory variance seen (FNG only).
    pub min_sigma2: Option<f64>,
    /// Smallest diagonal entry of any Cholesky factor of `V`.
    pub min_chol_diag: f64,
    pub first_violation: Option<String>,
}

impl Default for InvariantReport {
    fn default() -> Self {
        InvariantReport {
            checks: 0,
            violations: 0,
            min_precision_offset: None,
            min_sigma2: None,
            min_chol_diag: f64::INFINITY,
            first_violation: None,
        }
    }
}

impl InvariantReport {
    fn observe(&mut self, iter: usize, trainer: &Trainer) {
        self.checks += 1;
        let mut problems = Vec::new();
        if let Some(q) = &trainer.qtheta {
            let min_p = q.p.iter().copied().fold(f64::INFINITY, f64::min);
            let min_s = q.sigma2.iter().copied().fold(f64::INFINITY, f64::min);
            self.min_precision_offset = Some(self.min_precision_offset.map_or(min_p, |v| v.min(min_p)));
            self.min_sigma2 = Some(self.min_sigma2.map_or(min_s, |v| v.min(min_s)));
            if q.p.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                problems.push("p < 0 or non-finite");
            }
            if q.sigma2.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                problems.push("σ² ≤ 0 or non-finite");
            }
            if q.mu.iter().any(|v| !v.is_finite()) {
                problems.push("μ non-finite");
            }
        }
        for b in &trainer.post.blocks {
            let l = b.chol();
            let d = (0..b.dim()).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
            self.min_chol_diag = self.min_chol_diag.min(d);
            if !(d > 0.0) || l.iter().any(|v| !v.is_finite()) {
                problems.push("V not positive definite");
            }
            if b.mean.iter().any(|v| !v.is_finite()) {
                problems.push("m non-finite");
            }
        }
        if !problems.is_empty() {
            self.violations += 1;
            if self.first_violation.is_none() {
                self.first_violation = Some(format!("iteration {iter}: {}", problems.join(", ")));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub status: SeedStatus,
    pub error: Option<String>,
    pub iterations: usize,
    /// Full-training-set negative ELBO at the MAP θ after the last step.
    pub final_nelbo: Option<f64>,
    /// Per-output test NLPD at the MAP θ after the last step.
    pub final_nlpd: Vec<Option<f64>>,
    pub rejections: u64,
    pub clamp_events: u64,
    pub wall_clock_secs: f64,
    pub invariants: InvariantReport,
    pub metrics: Vec<MetricsRow>,
    pub state: Option<TrainedState>,
}

/// Mean per-output NLPD over the test points, predicting with θ fixed.
pub fn test_nlpd(
    config: &ModelConfig,
    test: &Dataset,
    post: &VariationalPosterior,
    params: &Params,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> CliResult<Vec<Option<f64>>> {
    if test.is_empty() {
        return Ok(vec![None; config.num_outputs()]);
    }
    let pred = predict(config, &test.x, post, params)?;
    let mut out = Vec::with_capacity(config.num_outputs());
    for (d, (spec, lpfs)) in config.likelihoods.iter().zip(&pred).enumerate() {
        let (mut total, mut count) = (0.0, 0usize);
        for (n, y) in test.outputs[d].iter().enumerate() {
            if let Some(y) = y {
                let marg: Vec<_> = lpfs.iter().map(|mp| mp.point(n)).collect();
                total += nlpd(spec, *y, &marg, rng, samples)?;
                count += 1;
            }
        }
        out.push((count > 0).then(|| total / count as f64));
    }
    Ok(out)
}

fn state_of(config: &ModelConfig, trainer: &Trainer, params: &Params, iterations: usize) -> TrainedState {
    TrainedState {
        prior: config.prior,
        optimizer: trainer.settings.kind,
        likelihoods: config.likelihoods.clone(),
        num_latent: config.num_latent,
        num_inducing: config.num_inducing,
        input_dim: config.input_dim,
        iterations: iterations as u64,
        mu: trainer.map_theta().to_vec(),
        sigma2: trainer.qtheta.as_ref().map(|q| q.sigma2.clone()),
        post: trainer.post.clone(),
        inducing: params.inducing.blocks.clone(),
    }
}

/// Trains one seed. Numerical failures end the seed and are reported in the
/// outcome; only configuration problems return an error.
pub fn train_seed(cfg: &RunConfig, train: &Dataset, test: &Dataset, seed: u64) -> CliResult<SeedOutcome> {
    let start = Instant::now();
    let config = cfg.model_config(train.input_dim())?;
    let settings = cfg.optimizer_settings()?;
    let layout = ThetaLayout::new(&config);
    let problem = Problem {
        config: &config,
        layout: &layout,
        data: train,
    };
    let mut outcome = SeedOutcome {
        seed,
        status: SeedStatus::Failed,
        error: None,
        iterations: 0,
        final_nelbo: None,
        final_nlpd: vec![None; config.num_outputs()],
        rejections: 0,
        clamp_events: 0,
        wall_clock_secs: 0.0,
        invariants: InvariantReport::default(),
        metrics: Vec::with_capacity(cfg.run.max_iters),
        state: None,
    };

    let mut init_rng = stream(seed, Stream::Init);
    let mut batch_rng = stream(seed, Stream::Batch);
    let mut step_rng = stream(seed, Stream::Step);
    let mut eval_rng = stream(seed, Stream::Eval);

    let result = (|| -> CliResult<Trainer> {
        let params = init_params(&config, &train.input_bounds(), &mut init_rng)?;
        let post = match cfg.model.variational_init {
            VariationalInit::Prior => posterior_at_prior(&params)?,
            VariationalInit::Isotropic => VariationalPosterior::init(&config, &mut init_rng),
        };
        let theta = pack(&layout, &params)?;
        let mut trainer = Trainer::new(settings, post, theta)?;
        let mut batcher = MiniBatcher::new(train.len(), cfg.run.batch_size)?;
        for iter in 1..=cfg.run.max_iters {
            let batch = batcher.next_batch(&mut batch_rng);
            let report = trainer.step(&problem, &batch, &mut step_rng)?;
            outcome.invariants.observe(iter, &trainer);
            if !report.nelbo.is_finite() {
                return Err(hetmogp_core::Error::NonFinite(format!("NELBO at iteration {iter}")).into());
            }
            let nlpd = if iter % cfg.run.eval_every == 0 {
                let params = unpack(&layout, trainer.map_theta())?;
                Some(test_nlpd(
                    &config,
                    test,
                    &trainer.post,
                    &params,
                    cfg.run.nlpd_samples,
                    &mut eval_rng,
                )?)
            } else {
                None
            };
            outcome.metrics.push(MetricsRow {
                iter,
                nelbo: report.nelbo,
                nlpd,
            });
            outcome.iterations = iter;
            outcome.rejections = trainer.total_rejections;
            outcome.clamp_events = trainer.total_clamp_events;
        }
        Ok(trainer)
    })();

    match result {
        Ok(trainer) => {
            let finish = (|| -> CliResult<()> {
                let params = unpack(&layout, trainer.map_theta())?;
                let full = MiniBatch::full(train.len());
                let value = nelbo(&config, train, &full, &trainer.post, &params, &mut eval_rng)?;
                outcome.final_nelbo = Some(value);
                outcome.final_nlpd =
                    test_nlpd(&config, test, &trainer.post, &params, cfg.run.nlpd_samples, &mut eval_rng)?;
                outcome.state = Some(state_of(&config, &trainer, &params, outcome.iterations));
                Ok(())
            })();
            match finish {
                Ok(()) => outcome.status = SeedStatus::Completed,
                Err(e) => outcome.error = Some(e.to_string()),
            }
        }
        Err(e) => outcome.error = Some(e.to_string()),
    }
    outcome.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(outcome)
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// `metrics.csv` contents: `iter, nelbo, nlpd_out_1..D`. NLPD cells are
/// empty on iterations without an evaluation and `NA` for outputs with no
/// test observations.
pub fn metrics_csv(rows: &[MetricsRow], num_outputs: usize) -> String {
    let mut s = String::from("iter,nelbo");
    for d in 1..=num_outputs {
        let _ = write!(s, ",nlpd_out_{d}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{}", r.iter, r.nelbo);
        match &r.nlpd {
            Some(v) => v.iter().for_each(|x| {
                let _ = write!(s, ",{}", fmt_cell(*x));
            }),
            None => s.push_str(&",".repeat(num_outputs)),
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedManifest {
    pub seed: u64,
    pub status: SeedStatus,
    pub error: Option<String>,
    pub iterations: usize,
    pub final_nelbo: Option<f64>,
    /// `null` entries mark outputs without test observations (or a failed seed).
    pub final_nlpd: Vec<Option<f64>>,
    pub rejections: u64,
    pub clamp_events: u64,
    pub wall_clock_secs: f64,
    pub invariants: InvariantReport,
    pub metrics: String,
    pub state: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: String,
    pub optimizer: OptimizerKind,
    pub prior: String,
    pub likelihoods: Vec<String>,
    pub train_size: usize,
    pub test_size: usize,
    pub seeds: Vec<SeedManifest>,
    pub wall_clock_secs: f64,
}

pub struct RunSummary {
    pub dir: PathBuf,
    pub outcomes: Vec<SeedOutcome>,
    pub manifest: Manifest,
}

/// Runs every seed in parallel on the same data split, then writes the run
/// directory: `config.echo`, `manifest.json` and `seed_<s>/{metrics.csv,
/// state.bin}`. Fails with [`CliError::AllSeedsFailed`] (after writing the
/// manifest) when no seed completes.
pub fn run(cfg: &RunConfig, dir: &Path) -> CliResult<RunSummary> {
    let start = Instant::now();
    cfg.validate()?;
    let (train, test) = cfg.load_data()?;
    cfg.model_config(train.input_dim())?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.echo"), cfg.echo())?;

    let outcomes = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| train_seed(cfg, &train, &test, seed))
        .collect::<CliResult<Vec<_>>>()?;

    let likelihoods = cfg.likelihoods()?;
    let mut seeds = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        let sub = format!("seed_{}", o.seed);
        std::fs::create_dir_all(dir.join(&sub))?;
        let metrics = format!("{sub}/metrics.csv");
        std::fs::write(dir.join(&metrics), metrics_csv(&o.metrics, likelihoods.len()))?;
        let state = match &o.state {
            Some(st) => {
                let rel = format!("{sub}/state.bin");
                st.save(&dir.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        seeds.push(SeedManifest {
            seed: o.seed,
            status: o.status,
            error: o.error.clone(),
            iterations: o.iterations,
            final_nelbo: o.final_nelbo,
            final_nlpd: o.final_nlpd.clone(),
            rejections: o.rejections,
            clamp_events: o.clamp_events,
            wall_clock_secs: o.wall_clock_secs,
            invariants: o.invariants.clone(),
            metrics,
            state,
        });
    }
    let manifest = Manifest {
        format_version: 1,
        config: "config.echo".into(),
        optimizer: cfg.optimizer.kind,
        prior: format!("{:?}", cfg.model.prior).to_lowercase(),
        likelihoods: likelihoods.iter().map(ToString::to_string).collect(),
        train_size: train.len(),
        test_size: test.len(),
        seeds,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    let file = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &manifest)?;

    if outcomes.iter().all(|o| o.status == SeedStatus::Failed) {
        return Err(CliError::AllSeedsFailed(outcomes.len()));
    }
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        outcomes,
        manifest,
    })
}

/// Per-output test NLPD of a saved state under `cfg`'s data split.
pub fn evaluate_state(cfg: &RunConfig, state: &TrainedState, seed: u64) -> CliResult<Vec<Option<f64>>> {
    let (train, test) = cfg.load_data()?;
    let config = cfg.model_config(train.input_dim())?;
    if state.prior != config.prior
        || state.likelihoods != config.likelihoods
        || state.num_latent != config.num_latent
        || state.num_inducing != config.num_inducing
        || state.input_dim != config.input_dim
    {
        return Err(CliError::config("state does not match the configured model"));
    }
    let layout = ThetaLayout::new(&config);
    let params = unpack(&layout, &state.mu)?;
    config.check_params(&params)?;
    test_nlpd(
        &config,
        &test,
        &state.post,
        &params,
        cfg.run.nlpd_samples,
        &mut stream(seed, Stream::Eval),
    )
}
