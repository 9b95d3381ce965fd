//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use hetmogp_core::data_io::{generate_toy, load_csv, split, Dataset, SplitSpec, ToyKind};
use hetmogp_core::hyper_vo::PriorPrecision;
use hetmogp_core::kernels::PriorKind;
use hetmogp_core::likelihoods::{LikelihoodSpec, DEFAULT_EXPECTATION_SAMPLES, DEFAULT_NLPD_SAMPLES};
use hetmogp_core::mogp::ModelConfig;
use hetmogp_core::optimizers::{FngSettings, OptimizerKind, OptimizerSettings, PrecisionMode, StepSizes};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Starting point of the variational posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariationalInit {
    /// `m = 0`, `V = K_uu` at the initial θ, so every KL term starts at zero.
    #[default]
    Prior,
    /// `m ~ N(0, 0.1²)`, `V = 0.1·I`.
    Isotropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub prior: PriorKind,
    /// Number of latent processes `Q`.
    pub num_latent: usize,
    /// Inducing points `M` per block.
    pub num_inducing: usize,
    /// Monte Carlo draws `S_f` for expectations without a closed form.
    pub expectation_samples: usize,
    pub variational_init: VariationalInit,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            prior: PriorKind::Lmc,
            num_latent: 3,
            num_inducing: 20,
            expectation_samples: DEFAULT_EXPECTATION_SAMPLES,
            variational_init: VariationalInit::Prior,
        }
    }
}

/// Either a toy generator (`toy`, `n`, `p`) or a CSV file with one
/// likelihood name per output. With neither set the T1 toy is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    #[serde(default)]
    pub toy: Option<ToyKind>,
    pub csv: Option<PathBuf>,
    pub likelihoods: Option<Vec<String>>,
    pub n: usize,
    pub p: usize,
    /// Seeds both the toy generator and the train/test split.
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            toy: Some(ToyKind::T1),
            csv: None,
            likelihoods: None,
            n: 400,
            p: 1,
            seed: 0,
            train_fraction: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub upsilon: f64,
    pub adam_lr: f64,
    pub sgd_lr: f64,
    pub lambda1: f64,
    /// θ draws per FNG step.
    pub theta_samples: usize,
    pub precision_mode: PrecisionMode,
    pub init_sigma2: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerSettings::default();
        OptimizerSection {
            kind: d.kind,
            alpha: d.fng.steps.alpha,
            beta: d.fng.steps.beta,
            gamma: d.fng.steps.gamma,
            upsilon: d.fng.steps.upsilon,
            adam_lr: d.adam_lr,
            sgd_lr: d.sgd_lr,
            lambda1: d.fng.lambda1.value(),
            theta_samples: d.fng.theta_samples,
            precision_mode: d.fng.mode,
            init_sigma2: d.init_sigma2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub batch_size: usize,
    pub max_iters: usize,
    pub eval_every: usize,
    pub nlpd_samples: usize,
    pub seeds: Vec<u64>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            batch_size: 50,
            max_iters: 500,
            eval_every: 10,
            nlpd_samples: DEFAULT_NLPD_SAMPLES,
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub data: DataSection,
    pub optimizer: OptimizerSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        if cfg.data.toy.is_none() && cfg.data.csv.is_none() {
            cfg.data.toy = Some(ToyKind::T1);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The full effective configuration, defaults included.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let positive = [
            ("model.num_latent", self.model.num_latent),
            ("model.num_inducing", self.model.num_inducing),
            ("model.expectation_samples", self.model.expectation_samples),
            ("run.batch_size", self.run.batch_size),
            ("run.max_iters", self.run.max_iters),
            ("run.eval_every", self.run.eval_every),
            ("run.nlpd_samples", self.run.nlpd_samples),
            ("optimizer.theta_samples", self.optimizer.theta_samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CliError::config(format!("{name} must be positive")));
            }
        }
        if self.run.seeds.is_empty() {
            return Err(CliError::config("run.seeds must list at least one seed"));
        }
        let mut seeds = self.run.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::config("run.seeds contains duplicates"));
        }
        match (&self.data.toy, &self.data.csv) {
            (Some(_), Some(_)) => return Err(CliError::config("set either data.toy or data.csv, not both")),
            (None, None) => return Err(CliError::config("set data.toy or data.csv")),
            (Some(_), None) => {
                if self.data.n == 0 || self.data.p == 0 {
                    return Err(CliError::config("data.n and data.p must be positive"));
                }
                if self.data.likelihoods.is_some() {
                    return Err(CliError::config("data.likelihoods applies only to CSV data"));
                }
            }
            (None, Some(_)) => {
                if self.data.likelihoods.as_ref().is_none_or(|l| l.is_empty()) {
                    return Err(CliError::config("CSV data needs data.likelihoods"));
                }
            }
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(CliError::config("data.train_fraction must lie in (0, 1)"));
        }
        for (name, v) in [
            ("optimizer.adam_lr", self.optimizer.adam_lr),
            ("optimizer.sgd_lr", self.optimizer.sgd_lr),
            ("optimizer.init_sigma2", self.optimizer.init_sigma2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::config(format!("{name} must be positive")));
            }
        }
        self.optimizer_settings()?;
        self.likelihoods()?;
        Ok(())
    }

    pub fn likelihoods(&self) -> CliResult<Vec<LikelihoodSpec>> {
        match (&self.data.toy, &self.data.likelihoods) {
            (Some(t), _) => Ok(t.likelihoods()),
            (None, Some(names)) => names
                .iter()
                .map(|s| s.parse().map_err(|e: hetmogp_core::Error| CliError::config(e.to_string())))
                .collect(),
            (None, None) => Err(CliError::config("no likelihoods configured")),
        }
    }

    pub fn optimizer_settings(&self) -> CliResult<OptimizerSettings> {
        let o = &self.optimizer;
        let steps = StepSizes {
            alpha: o.alpha,
            beta: o.beta,
            gamma: o.gamma,
            upsilon: o.upsilon,
        };
        steps.validate().map_err(|e| CliError::config(e.to_string()))?;
        let lambda1 = PriorPrecision::new(o.lambda1).map_err(|e| CliError::config(e.to_string()))?;
        Ok(OptimizerSettings {
            kind: o.kind,
            fng: FngSettings {
                steps,
                lambda1,
                theta_samples: o.theta_samples,
                mode: o.precision_mode,
            },
            adam_lr: o.adam_lr,
            sgd_lr: o.sgd_lr,
            init_sigma2: o.init_sigma2,
        })
    }

    pub fn model_config(&self, input_dim: usize) -> CliResult<ModelConfig> {
        let mut cfg = ModelConfig::new(
            self.model.prior,
            self.likelihoods()?,
            self.model.num_latent,
            self.model.num_inducing,
            input_dim,
        )
        .map_err(|e| CliError::config(e.to_string()))?;
        cfg.expectation_samples = self.model.expectation_samples;
        Ok(cfg)
    }

    /// Loads or generates the dataset and splits it; identical for every seed.
    pub fn load_data(&self) -> CliResult<(Dataset, Dataset)> {
        let full = match (&self.data.toy, &self.data.csv) {
            (Some(t), _) => generate_toy(*t, self.data.p, self.data.n, self.data.seed)?.0,
            (None, Some(path)) => load_csv(path, &self.likelihoods()?).map_err(|e| match e {
                hetmogp_core::Error::Io(io) => CliError::config(format!("cannot read {}: {io}", path.display())),
                other => CliError::config(other.to_string()),
            })?,
            (None, None) => return Err(CliError::config("no data configured")),
        };
        let spec = SplitSpec {
            train_fraction: self.data.train_fraction,
            seed: self.data.seed,
        };
        let (train, test) = split(&full, spec)?;
        if train.is_empty() {
            return Err(CliError::config("training split is empty"));
        }
        Ok((train, test))
    }
}
