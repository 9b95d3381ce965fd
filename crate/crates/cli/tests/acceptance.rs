//! Acceptance report: one PASS/FAIL line per headline criterion, each followed
//! by the measurements behind it.
//!
//! By default the report never fails the test run, so that a known miss stays
//! visible without masking the rest of the workspace. Set
//! `ACCEPTANCE_STRICT=1` to exit non-zero when any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::time::Instant;

use hetmogp_cli::demo::{trajectory, DemoMode};
use hetmogp_cli::runner::{metrics_csv, train_seed, SeedOutcome, SeedStatus};
use hetmogp_cli::RunConfig;
use hetmogp_core::kernels::PriorKind;
use hetmogp_core::optimizers::{OptimizerKind, VoDemoConfig};
use rayon::prelude::*;

struct Verdict {
    name: &'static str,
    pass: bool,
    details: Vec<String>,
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISS"
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

fn final_mu(mode: DemoMode) -> f64 {
    trajectory(mode).expect("demo runs").last().expect("non-empty trajectory").mu
}

fn vo_demo() -> Verdict {
    let base = VoDemoConfig::default();
    let kl_off = VoDemoConfig { use_kl: false, ..base };
    let (on, t_on) = timed(|| final_mu(DemoMode::Vo(base)));
    let (off, t_off) = timed(|| final_mu(DemoMode::Vo(kl_off)));
    let (descent, t_desc) = timed(|| {
        final_mu(DemoMode::Descent {
            init: base.init_mu,
            step: 0.01,
            iters: 2000,
        })
    });
    let on_ok = (on + 0.346).abs() <= 0.05;
    let off_ok = (off + 1.729).abs() <= 0.05;
    let desc_ok = descent > -4.0 && descent < -3.0;
    let time_ok = t_on.max(t_off).max(t_desc) < 10.0;

    // How often each run lands on its target across Monte Carlo seeds.
    let hits = |cfg: VoDemoConfig, target: f64| {
        (0..100u64)
            .filter(|&seed| {
                trajectory(DemoMode::Vo(VoDemoConfig { seed, ..cfg }))
                    .ok()
                    .and_then(|t| t.last().map(|p| (p.mu - target).abs() <= 0.05))
                    .unwrap_or(false)
            })
            .count()
    };
    Verdict {
        name: "VO demo (KL on, KL off, plain descent)",
        pass: on_ok && off_ok && desc_ok && time_ok,
        details: vec![
            format!("[{}] KL on: final μ = {on:.6}, target −0.346 ± 0.05 ({t_on:.3} s)", mark(on_ok)),
            format!("[{}] KL off: final μ = {off:.6}, target −1.729 ± 0.05 ({t_off:.3} s)", mark(off_ok)),
            format!("[{}] descent: final θ = {descent:.6}, target in (−4, −3) ({t_desc:.3} s)", mark(desc_ok)),
            format!(
                "seeds 0..99 within tolerance: KL on {}/100, KL off {}/100",
                hits(base, -0.346),
                hits(kl_off, -1.729)
            ),
        ],
    }
}

fn gradient_suite() -> Verdict {
    let ((lmc, cpm), secs) = timed(|| {
        (
            support::variational_gradient_error(PriorKind::Lmc),
            support::variational_gradient_error(PriorKind::Cpm),
        )
    });
    let (lp, cp) = (
        support::parameter_gradient_error(PriorKind::Lmc),
        support::parameter_gradient_error(PriorKind::Cpm),
    );
    Verdict {
        name: "Gradient suite (∇m, ∇V vs finite differences, both priors)",
        pass: lmc < 1e-4 && cpm < 1e-4 && secs < 60.0,
        details: vec![
            format!("worst relative error: LMC {lmc:.2e}, CPM {cpm:.2e} (limit 1e-4), {secs:.2} s"),
            format!("hyperparameter gradients for reference: LMC {lp:.2e}, CPM {cp:.2e}"),
        ],
    }
}

fn ng_oracle() -> Verdict {
    let err = support::ng_oracle_error();
    Verdict {
        name: "NG oracle (fng_step vs explicit Fisher step)",
        pass: err < 1e-8,
        details: vec![format!("worst relative error {err:.2e} (limit 1e-8)")],
    }
}

fn mirror_descent() -> Verdict {
    let err = support::mirror_descent_error();
    Verdict {
        name: "Mirror-descent equivalence (momentum NG steps vs recursion)",
        pass: err < 1e-10,
        details: vec![format!("worst relative error {err:.2e} (limit 1e-10)")],
    }
}

fn likelihood_suite() -> Verdict {
    let spot = support::likelihood_spot_error();
    let fd = support::likelihood_fd_error(100);
    Verdict {
        name: "Likelihood suite (spot values, derivative checks)",
        pass: spot < 1e-12 && fd < 1e-5,
        details: vec![
            format!("worst spot error {spot:.2e} (limit 1e-12)"),
            format!("worst derivative error over 100 points per family {fd:.2e} (limit 1e-5)"),
        ],
    }
}

fn kernel_suite() -> Verdict {
    let reduction = support::cpm_eq_reduction_error();
    let (asym, min_ratio) = support::gram_psd_report();
    let parity = support::lmc_cpm_parity_error();
    let psd = asym < 1e-12 && min_ratio >= -1e-8;
    Verdict {
        name: "Kernel suite (CPM→EQ, PSD grams, LMC/CPM parity)",
        pass: reduction < 1e-8 && psd && parity < 1e-6,
        details: vec![
            format!("CPM→EQ gap {reduction:.2e} (limit 1e-8)"),
            format!("gram asymmetry {asym:.2e}, smallest eigenvalue ratio {min_ratio:.2e}"),
            format!("LMC/CPM gradient parity gap {parity:.2e} (limit 1e-6)"),
        ],
    }
}

struct Batch {
    kind: OptimizerKind,
    cfg: RunConfig,
    outcomes: Vec<SeedOutcome>,
}

impl Batch {
    fn completed(&self) -> impl Iterator<Item = &SeedOutcome> {
        self.outcomes.iter().filter(|o| o.status == SeedStatus::Completed)
    }

    fn failures(&self) -> usize {
        self.outcomes.len() - self.completed().count()
    }

    /// Failed seeds count as `+∞`.
    fn mean_nelbo(&self) -> f64 {
        let total: f64 = self.outcomes.iter().map(|o| o.final_nelbo.unwrap_or(f64::INFINITY)).sum();
        total / self.outcomes.len() as f64
    }

    /// Mean over seeds and outputs of the final test NLPD; failed seeds count as `+∞`.
    fn mean_nlpd(&self) -> f64 {
        let vals: Vec<f64> = self
            .outcomes
            .iter()
            .flat_map(|o| o.final_nlpd.iter().map(|v| v.unwrap_or(f64::INFINITY)))
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    fn mean_over_completed(&self, f: impl Fn(&SeedOutcome) -> f64) -> f64 {
        let n = self.completed().count();
        self.completed().map(f).sum::<f64>() / n as f64
    }

    fn label(&self) -> String {
        match self.kind {
            OptimizerKind::Sgd => format!("Sgd (rate {:e})", self.cfg.optimizer.sgd_lr),
            k => format!("{k:?}"),
        }
    }

    fn summary(&self) -> String {
        format!(
            "{}: mean final NELBO {:.4e}, mean NLPD {:.4}, failed seeds {}/{}",
            self.label(),
            self.mean_nelbo(),
            self.mean_nlpd(),
            self.failures(),
            self.outcomes.len()
        )
    }
}

fn t1_config(kind: OptimizerKind) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.optimizer.kind = kind;
    cfg
}

fn train_all(cfg: &RunConfig) -> Batch {
    let (train, test) = cfg.load_data().expect("T1 data");
    let outcomes = cfg
        .run
        .seeds
        .par_iter()
        .map(|&s| train_seed(cfg, &train, &test, s).expect("valid configuration"))
        .collect();
    Batch {
        kind: cfg.optimizer.kind,
        cfg: cfg.clone(),
        outcomes,
    }
}

fn t1_ordering(batches: &mut Vec<Batch>) -> Verdict {
    let (runs, secs) = timed(|| {
        [OptimizerKind::Fng, OptimizerKind::Adam, OptimizerKind::Sgd]
            .into_iter()
            .map(|k| train_all(&t1_config(k)))
            .collect::<Vec<_>>()
    });
    let (fng, adam, sgd) = (&runs[0], &runs[1], &runs[2]);
    let nelbo_ok = fng.mean_nelbo() <= adam.mean_nelbo() && fng.mean_nelbo() <= sgd.mean_nelbo();
    let nlpd_ok = fng.mean_nlpd() <= sgd.mean_nlpd();
    let cfg = t1_config(OptimizerKind::Fng);
    let mut details = vec![
        format!(
            "T1, N = {}, P = {}, M = {}, Q = {}, {} iterations, seeds {:?}, {secs:.1} s",
            cfg.data.n, cfg.data.p, cfg.model.num_inducing, cfg.model.num_latent, cfg.run.max_iters, cfg.run.seeds
        ),
        format!("[{}] FNG ≤ Adam and FNG ≤ SGD on mean final NELBO", mark(nelbo_ok)),
        format!("[{}] FNG ≤ SGD on mean test NLPD", mark(nlpd_ok)),
    ];
    details.extend(runs.iter().map(Batch::summary));
    for b in &runs {
        if let Some(o) = b.outcomes.iter().find(|o| o.status == SeedStatus::Failed) {
            details.push(format!(
                "{:?} seed {} stopped at iteration {}: {}",
                b.kind,
                o.seed,
                o.iterations,
                o.error.as_deref().unwrap_or("")
            ));
        }
    }

    // Plain SGD diverges at its default rate on this problem; a smaller rate
    // gives a finite comparison over the seeds that complete.
    let mut small = t1_config(OptimizerKind::Sgd);
    small.optimizer.sgd_lr = 1e-9;
    let sgd_small = train_all(&small);
    let seeds: Vec<u64> = sgd_small.completed().map(|o| o.seed).collect();
    let matched = |b: &Batch, f: &dyn Fn(&SeedOutcome) -> f64| {
        let v: Vec<f64> = b.outcomes.iter().filter(|o| seeds.contains(&o.seed)).map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let nelbo = |o: &SeedOutcome| o.final_nelbo.unwrap_or(f64::INFINITY);
    let nlpd = |o: &SeedOutcome| {
        o.final_nlpd.iter().map(|v| v.unwrap_or(f64::INFINITY)).sum::<f64>() / o.final_nlpd.len() as f64
    };
    details.push(format!(
        "supplementary, SGD at rate 1e-9 on its {} completed seeds {:?}: NELBO FNG {:.4e} vs SGD {:.4e}, NLPD FNG {:.4} vs SGD {:.4}",
        seeds.len(),
        seeds,
        matched(fng, &nelbo),
        sgd_small.mean_over_completed(nelbo),
        matched(fng, &nlpd),
        sgd_small.mean_over_completed(nlpd),
    ));
    let time_ok = secs < 900.0;
    let pass = nelbo_ok && nlpd_ok && time_ok;
    batches.extend(runs);
    batches.push(sgd_small);
    Verdict {
        name: "T1 optimizer ordering (FNG vs Adam and SGD)",
        pass,
        details,
    }
}

fn invariant_sweep(batches: &[Batch]) -> Verdict {
    let mut details = Vec::new();
    let mut clean = true;
    for b in batches {
        let violations: u64 = b.outcomes.iter().map(|o| o.invariants.violations).sum();
        let checks: u64 = b.outcomes.iter().map(|o| o.invariants.checks).sum();
        let min_chol = b
            .outcomes
            .iter()
            .map(|o| o.invariants.min_chol_diag)
            .fold(f64::INFINITY, f64::min);
        let min_p = b.outcomes.iter().filter_map(|o| o.invariants.min_precision_offset).reduce(f64::min);
        let min_s2 = b.outcomes.iter().filter_map(|o| o.invariants.min_sigma2).reduce(f64::min);
        clean &= violations == 0;
        let q = match (min_p, min_s2) {
            (Some(p), Some(s)) => format!(", min p {p:.3e}, min σ² {s:.3e}"),
            _ => String::new(),
        };
        details.push(format!(
            "{}: {violations} violations in {checks} step checks, min chol(V) diagonal {min_chol:.3e}{q}",
            b.label()
        ));
    }

    // Rerun seed 0 of every configuration and compare logs and states bitwise.
    let mut identical = true;
    for b in batches {
        let (train, test) = b.cfg.load_data().expect("T1 data");
        let first = &b.outcomes[0];
        let again = train_seed(&b.cfg, &train, &test, first.seed).expect("valid configuration");
        let same_log = metrics_csv(&first.metrics, 3) == metrics_csv(&again.metrics, 3)
            && first.final_nelbo.map(f64::to_bits) == again.final_nelbo.map(f64::to_bits)
            && first.error == again.error;
        let state_bytes = |o: &SeedOutcome| {
            o.state.as_ref().map(|s| {
                let mut v = Vec::new();
                s.write_to(&mut v).expect("state serializes");
                v
            })
        };
        let same_state = state_bytes(first) == state_bytes(&again);
        identical &= same_log && same_state;
        details.push(format!(
            "[{}] {} seed {} rerun: metrics {}, state {}",
            mark(same_log && same_state),
            b.label(),
            first.seed,
            if same_log { "identical" } else { "DIFFER" },
            if same_state { "identical" } else { "DIFFER" },
        ));
    }
    Verdict {
        name: "Invariant sweep (p ≥ 0, σ² > 0, V PD, bit-identical reruns)",
        pass: clean && identical,
        details,
    }
}

fn main() {
    // Libtest-style flags such as `--nocapture` are accepted and ignored.
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let start = Instant::now();
    let mut batches = Vec::new();
    let verdicts = vec![
        vo_demo(),
        gradient_suite(),
        ng_oracle(),
        mirror_descent(),
        likelihood_suite(),
        kernel_suite(),
        t1_ordering(&mut batches),
        invariant_sweep(&batches),
    ];
    println!();
    println!("acceptance report");
    for v in &verdicts {
        println!("{} {}", if v.pass { "PASS" } else { "FAIL" }, v.name);
        for d in &v.details {
            println!("    {d}");
        }
    }
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!(
        "{passed}/{} criteria passed in {:.1} s",
        verdicts.len(),
        start.elapsed().as_secs_f64()
    );
    if strict && passed < verdicts.len() {
        std::process::exit(1);
    }
}
