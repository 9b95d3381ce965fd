//! Datasets, toy generators, CSV ingestion, train/test splitting and
//! minibatch sampling.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihoods::{link, LikelihoodSpec};
use crate::linalg::factor_with_jitter;

/// Inputs shared by all outputs plus per-output observations; `None` marks a
/// missing observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub outputs: Vec<Vec<Option<f64>>>,
    pub likelihoods: Vec<LikelihoodSpec>,
}

impl Dataset {
    /// Builds a dataset and validates every observation against its family.
    pub fn new(
        x: DMatrix<f64>,
        outputs: Vec<Vec<Option<f64>>>,
        likelihoods: Vec<LikelihoodSpec>,
    ) -> Result<Self> {
        if outputs.len() != likelihoods.len() {
            return Err(Error::shape(format!(
                "{} outputs but {} likelihoods",
                outputs.len(),
                likelihoods.len()
            )));
        }
        let n = x.nrows();
        for (d, (col, spec)) in outputs.iter().zip(&likelihoods).enumerate() {
            if col.len() != n {
                return Err(Error::shape(format!(
                    "output {} has {} rows, inputs have {n}",
                    d + 1,
                    col.len()
                )));
            }
            validate_column(col, spec, d)?;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("inputs must be finite"));
        }
        Ok(Dataset {
            x,
            outputs,
            likelihoods,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Rows `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let x = self.x.select_rows(indices);
        let outputs = self
            .outputs
            .iter()
            .map(|col| indices.iter().map(|&i| col[i]).collect())
            .collect();
        Dataset {
            x,
            outputs,
            likelihoods: self.likelihoods.clone(),
        }
    }

    /// Per-column min and max of the inputs.
    pub fn input_bounds(&self) -> Vec<(f64, f64)> {
        (0..self.x.ncols())
            .map(|c| {
                let col = self.x.column(c);
                (col.min(), col.max())
            })
            .collect()
    }
}

/// Support validation for one output column; reports the first bad row.
pub fn validate_column(col: &[Option<f64>], spec: &LikelihoodSpec, output: usize) -> Result<()> {
    for (row, y) in col.iter().enumerate() {
        if let Some(y) = y {
            if let Err(e) = spec.check_support(*y) {
                return Err(Error::Support {
                    row,
                    output: output + 1,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(())
}

/// Indices of one minibatch and the `N/B` factor that scales its data term.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub indices: Vec<usize>,
    pub scale: f64,
}

impl MiniBatch {
    pub fn new(indices: Vec<usize>, total: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::domain("minibatch is empty"));
        }
        if indices.len() > total {
            return Err(Error::domain("minibatch larger than the dataset"));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain("minibatch indices must be unique"));
        }
        if sorted.last().is_some_and(|&i| i >= total) {
            return Err(Error::domain("minibatch index out of range"));
        }
        let scale = total as f64 / indices.len() as f64;
        Ok(MiniBatch { indices, scale })
    }

    /// The whole dataset as one batch (scale 1).
    pub fn full(total: usize) -> Self {
        MiniBatch {
            indices: (0..total).collect(),
            scale: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Sweeps epochs of a training set without replacement. A final batch may be
/// shorter when the batch size does not divide the set size.
#[derive(Debug, Clone)]
pub struct MiniBatcher {
    total: usize,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl MiniBatcher {
    pub fn new(total: usize, batch_size: usize) -> Result<Self> {
        if total == 0 || batch_size == 0 {
            return Err(Error::domain("batch size and dataset size must be positive"));
        }
        Ok(MiniBatcher {
            total,
            batch_size: batch_size.min(total),
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.total.div_ceil(self.batch_size)
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> MiniBatch {
        if self.cursor >= self.order.len() {
            self.order = (0..self.total).collect();
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.total);
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let scale = self.total as f64 / indices.len() as f64;
        MiniBatch { indices, scale }
    }
}

/// Train/test split request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.75,
            seed: 0,
        }
    }
}

/// Seeded permutation split; the training part holds `round(fraction·N)` rows.
pub fn split(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.len(), spec)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::domain(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    let test = perm.split_off(n_train);
    Ok((perm, test))
}

/// Toy problems with growing output heterogeneity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyKind {
    T1,
    T2,
    T3,
}

impl ToyKind {
    pub fn likelihoods(self) -> Vec<LikelihoodSpec> {
        use LikelihoodSpec::*;
        let t1 = vec![HetGaussian, Beta, Bernoulli];
        match self {
            ToyKind::T1 => t1,
            ToyKind::T2 => [t1, vec![Gamma, Exponential]].concat(),
            ToyKind::T3 => vec![
                HetGaussian,
                Beta,
                Bernoulli,
                Gamma,
                Exponential,
                Gaussian { sigma: 0.1 },
                Beta,
                Bernoulli,
                Gamma,
                Exponential,
            ],
        }
    }
}

impl std::str::FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "t1" => Ok(ToyKind::T1),
            "t2" => Ok(ToyKind::T2),
            "t3" => Ok(ToyKind::T3),
            other => Err(Error::domain(format!("unknown toy dataset `{other}`"))),
        }
    }
}

/// Latent processes used by the toy generators.
pub const TOY_NUM_LATENT: usize = 3;
/// Range of the per-dimension lengthscale `ℓ` (kernel diagonal `ℓ²`).
pub const TOY_LENGTHSCALE_RANGE: (f64, f64) = (0.05, 0.5);
/// Beta draws are kept this far inside `(0, 1)`.
const BETA_MARGIN: f64 = 1e-9;

/// Generator parameters recorded next to the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyMetadata {
    pub toy: ToyKind,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub families: Vec<String>,
    pub num_latent: usize,
    pub lengthscale_range: (f64, f64),
    /// Drawn lengthscales `ℓ_q` per latent process and dimension.
    pub lengthscales: Vec<Vec<f64>>,
    /// LCCs `a[lpf][q]`.
    pub lcc: Vec<Vec<f64>>,
    pub kernel: String,
}

/// Samples a toy dataset: uniform inputs on `[0,1]^P`, `Q = 3` unit-variance
/// EQ latent processes drawn by dense Cholesky, LPFs mixed with `N(0,1)` LCCs
/// and outputs drawn from each output's likelihood.
pub fn generate_toy(which: ToyKind, p: usize, n: usize, seed: u64) -> Result<(Dataset, ToyMetadata)> {
    if p == 0 || n == 0 {
        return Err(Error::domain("toy data needs P ≥ 1 and N ≥ 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let likelihoods = which.likelihoods();
    let j_total: usize = likelihoods.iter().map(|l| l.num_latent()).sum();

    let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>());

    let (lo, hi) = TOY_LENGTHSCALE_RANGE;
    let mut lengthscales = Vec::with_capacity(TOY_NUM_LATENT);
    let mut latents = Vec::with_capacity(TOY_NUM_LATENT);
    for _ in 0..TOY_NUM_LATENT {
        let ell: Vec<f64> = (0..p).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
        let inv: Vec<f64> = ell.iter().map(|l| 1.0 / (l * l)).collect();
        let mut k = DMatrix::from_fn(n, n, |a, b| {
            let mut quad = 0.0;
            for d in 0..p {
                let t = x[(a, d)] - x[(b, d)];
                quad += t * t * inv[d];
            }
            (-0.5 * quad).exp()
        });
        // dense grams on clustered inputs are numerically singular
        for i in 0..n {
            k[(i, i)] += 1e-6;
        }
        let chol = factor_with_jitter(&k)?;
        let eps = nalgebra::DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        latents.push(chol.chol.l() * eps);
        lengthscales.push(ell);
    }

    let lcc: Vec<Vec<f64>> = (0..j_total)
        .map(|_| (0..TOY_NUM_LATENT).map(|_| rng.sample(StandardNormal)).collect())
        .collect();

    let mut outputs = Vec::with_capacity(likelihoods.len());
    let mut lpf = 0;
    for spec in &likelihoods {
        let jd = spec.num_latent();
        let mut col = Vec::with_capacity(n);
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            let f: Vec<f64> = (0..jd)
                .map(|j| (0..TOY_NUM_LATENT).map(|q| lcc[lpf + j][q] * latents[q][i]).sum())
                .collect();
            col.push(Some(sample_observation(spec, &f, &mut rng)?));
        }
        outputs.push(col);
        lpf += jd;
    }

    let meta = ToyMetadata {
        toy: which,
        seed,
        n,
        p,
        families: likelihoods.iter().map(|l| l.to_string()).collect(),
        num_latent: TOY_NUM_LATENT,
        lengthscale_range: TOY_LENGTHSCALE_RANGE,
        lengthscales,
        lcc,
        kernel: "unit-variance EQ exp(-0.5 sum_p (x_p - x'_p)^2 / l_p^2)".to_string(),
    };
    Ok((Dataset::new(x, outputs, likelihoods)?, meta))
}

fn sample_observation<R: Rng + ?Sized>(spec: &LikelihoodSpec, f: &[f64], rng: &mut R) -> Result<f64> {
    let psi = link(spec, f)?;
    let p = psi.params();
    let bad = |e: &dyn std::fmt::Display| Error::domain(format!("cannot sample {spec}: {e}"));
    let y = match spec {
        LikelihoodSpec::HetGaussian => p[0] + p[1].sqrt() * rng.sample::<f64, _>(StandardNormal),
        LikelihoodSpec::Gaussian { sigma } => p[0] + sigma * rng.sample::<f64, _>(StandardNormal),
        LikelihoodSpec::Bernoulli => {
            if rng.random::<f64>() < p[0] {
                1.0
            } else {
                0.0
            }
        }
        LikelihoodSpec::Beta => {
            let y: f64 = Beta::new(p[0], p[1]).map_err(|e| bad(&e))?.sample(rng);
            y.clamp(BETA_MARGIN, 1.0 - BETA_MARGIN)
        }
        LikelihoodSpec::Gamma => {
            let y: f64 = Gamma::new(p[0], 1.0 / p[1]).map_err(|e| bad(&e))?.sample(rng);
            y.max(f64::MIN_POSITIVE)
        }
        LikelihoodSpec::Exponential => Exp::new(p[0]).map_err(|e| bad(&e))?.sample(rng),
        LikelihoodSpec::Poisson => Poisson::new(p[0]).map_err(|e| bad(&e))?.sample(rng),
    };
    Ok(y)
}

/// Reads a CSV with header `x1..xP, y1..yD`; empty cells are missing
/// observations. `likelihoods` assigns a family to each `y` column in order.
pub fn load_csv(path: &Path, likelihoods: &[LikelihoodSpec]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut x_cols = Vec::new();
    let mut y_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if let Some(k) = h.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            x_cols.push((k, i));
        } else if let Some(k) = h.strip_prefix('y').and_then(|s| s.parse::<usize>().ok()) {
            y_cols.push((k, i));
        } else {
            return Err(Error::shape(format!("unrecognized CSV column `{h}`")));
        }
    }
    x_cols.sort_unstable();
    y_cols.sort_unstable();
    for (cols, name) in [(&x_cols, "x"), (&y_cols, "y")] {
        if cols.iter().enumerate().any(|(i, (k, _))| *k != i + 1) || cols.is_empty() {
            return Err(Error::shape(format!("{name} columns must be numbered 1..")));
        }
    }
    if y_cols.len() != likelihoods.len() {
        return Err(Error::shape(format!(
            "CSV has {} outputs, schema lists {} likelihoods",
            y_cols.len(),
            likelihoods.len()
        )));
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut outputs: Vec<Vec<Option<f64>>> = vec![Vec::new(); y_cols.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (_, i) in &x_cols {
            let cell = record.get(*i).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| Error::Support {
                row,
                output: 0,
                message: format!("input `{cell}` is not a number"),
            })?;
            xs.push(v);
        }
        for (d, (_, i)) in y_cols.iter().enumerate() {
            let cell = record.get(*i).unwrap_or("").trim();
            let y = if cell.is_empty() {
                None
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Support {
                    row,
                    output: d + 1,
                    message: format!("observation `{cell}` is not a number"),
                })?;
                if let Err(e) = likelihoods[d].check_support(v) {
                    return Err(Error::Support {
                        row,
                        output: d + 1,
                        message: e.to_string(),
                    });
                }
                Some(v)
            };
            outputs[d].push(y);
        }
    }
    let n = outputs[0].len();
    let x = DMatrix::from_row_slice(n, x_cols.len(), &xs);
    Dataset::new(x, outputs, likelihoods.to_vec())
}

/// Writes a dataset in the same CSV layout [`load_csv`] reads.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = data.input_dim();
    let header: Vec<String> = (1..=p)
        .map(|i| format!("x{i}"))
        .chain((1..=data.num_outputs()).map(|d| format!("y{d}")))
        .collect();
    w.write_record(&header)?;
    for n in 0..data.len() {
        let row: Vec<String> = (0..p)
            .map(|c| format!("{:?}", data.x[(n, c)]))
            .chain(data.outputs.iter().map(|col| match col[n] {
                Some(v) => format!("{v:?}"),
                None => String::new(),
            }))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the JSON metadata sidecar next to a generated dataset.
pub fn write_metadata(path: &Path, meta: &ToyMetadata) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), meta)?;
    Ok(())
}
