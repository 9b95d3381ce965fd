//! Binary snapshot of a trained model (`state.bin`).
//!
//! Layout, all integers and floats little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `HMGPSTAT` | 8 bytes |
//! | format version (currently 1) | u32 |
//! | prior: 0 LMC, 1 CPM | u8 |
//! | optimizer: 0 sgd, 1 adam, 2 hyb, 3 fng | u8 |
//! | D, then D likelihood names (u32 byte length + UTF-8) | u32, … |
//! | Q, M, P, number of blocks, length of θ | 5 × u32 |
//! | iterations completed | u64 |
//! | has σ² (1 for FNG) | u8 |
//! | μ (θ in its unconstrained coordinates) | f64 × len θ |
//! | σ² when present | f64 × len θ |
//! | per block: m, then the lower Cholesky factor of V column by column | f64 × (M + M(M+1)/2) |
//! | per block: Z row-major | f64 × M·P |

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use hetmogp_core::kernels::PriorKind;
use hetmogp_core::likelihoods::LikelihoodSpec;
use hetmogp_core::mogp::{VariationalBlock, VariationalPosterior};
use hetmogp_core::optimizers::OptimizerKind;
use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"HMGPSTAT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedState {
    pub prior: PriorKind,
    pub optimizer: OptimizerKind,
    pub likelihoods: Vec<LikelihoodSpec>,
    pub num_latent: usize,
    pub num_inducing: usize,
    pub input_dim: usize,
    pub iterations: u64,
    pub mu: Vec<f64>,
    pub sigma2: Option<Vec<f64>>,
    pub post: VariationalPosterior,
    pub inducing: Vec<DMatrix<f64>>,
}

fn prior_code(p: PriorKind) -> u8 {
    match p {
        PriorKind::Lmc => 0,
        PriorKind::Cpm => 1,
    }
}

fn optimizer_code(k: OptimizerKind) -> u8 {
    match k {
        OptimizerKind::Sgd => 0,
        OptimizerKind::Adam => 1,
        OptimizerKind::Hyb => 2,
        OptimizerKind::Fng => 3,
    }
}

fn to_u32(v: usize, what: &str) -> CliResult<u32> {
    u32::try_from(v).map_err(|_| CliError::State(format!("{what} too large")))
}

impl TrainedState {
    pub fn write_to<W: Write>(&self, w: &mut W) -> CliResult<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u8(prior_code(self.prior))?;
        w.write_u8(optimizer_code(self.optimizer))?;
        w.write_u32::<LittleEndian>(to_u32(self.likelihoods.len(), "output count")?)?;
        for l in &self.likelihoods {
            let name = l.to_string();
            w.write_u32::<LittleEndian>(to_u32(name.len(), "likelihood name")?)?;
            w.write_all(name.as_bytes())?;
        }
        for (v, what) in [
            (self.num_latent, "Q"),
            (self.num_inducing, "M"),
            (self.input_dim, "P"),
            (self.post.blocks.len(), "block count"),
            (self.mu.len(), "θ length"),
        ] {
            w.write_u32::<LittleEndian>(to_u32(v, what)?)?;
        }
        w.write_u64::<LittleEndian>(self.iterations)?;
        w.write_u8(u8::from(self.sigma2.is_some()))?;
        let put = |w: &mut W, xs: &mut dyn Iterator<Item = f64>| -> CliResult<()> {
            for x in xs {
                w.write_f64::<LittleEndian>(x)?;
            }
            Ok(())
        };
        put(w, &mut self.mu.iter().copied())?;
        if let Some(s) = &self.sigma2 {
            if s.len() != self.mu.len() {
                return Err(CliError::State("σ² and μ lengths differ".into()));
            }
            put(w, &mut s.iter().copied())?;
        }
        let m = self.num_inducing;
        for b in &self.post.blocks {
            if b.dim() != m {
                return Err(CliError::State("block size differs from M".into()));
            }
            put(w, &mut b.mean.iter().copied())?;
            let l = b.chol();
            put(w, &mut (0..m).flat_map(|c| (c..m).map(move |r| l[(r, c)])))?;
        }
        if self.inducing.len() != self.post.blocks.len() {
            return Err(CliError::State("one Z per block expected".into()));
        }
        for z in &self.inducing {
            if z.shape() != (m, self.input_dim) {
                return Err(CliError::State("Z has the wrong shape".into()));
            }
            put(w, &mut (0..m).flat_map(|r| (0..z.ncols()).map(move |c| z[(r, c)])))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> CliResult<Self> {
        let bad = |msg: &str| CliError::State(msg.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a state file"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(CliError::State(format!("unsupported version {version}")));
        }
        let prior = match r.read_u8()? {
            0 => PriorKind::Lmc,
            1 => PriorKind::Cpm,
            _ => return Err(bad("unknown prior code")),
        };
        let optimizer = match r.read_u8()? {
            0 => OptimizerKind::Sgd,
            1 => OptimizerKind::Adam,
            2 => OptimizerKind::Hyb,
            3 => OptimizerKind::Fng,
            _ => return Err(bad("unknown optimizer code")),
        };
        let d = r.read_u32::<LittleEndian>()? as usize;
        let mut likelihoods = Vec::with_capacity(d.min(1024));
        for _ in 0..d {
            let len = r.read_u32::<LittleEndian>()? as usize;
            if len > 256 {
                return Err(bad("likelihood name too long"));
            }
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            let name = String::from_utf8(buf).map_err(|_| bad("likelihood name is not UTF-8"))?;
            likelihoods.push(name.parse()?);
        }
        let mut dims = [0usize; 5];
        for v in &mut dims {
            *v = r.read_u32::<LittleEndian>()? as usize;
        }
        let [num_latent, m, input_dim, blocks, theta_len] = dims;
        let iterations = r.read_u64::<LittleEndian>()?;
        let has_sigma2 = match r.read_u8()? {
            0 => false,
            1 => true,
            _ => return Err(bad("bad σ² flag")),
        };
        let mut get = |n: usize| -> CliResult<Vec<f64>> {
            let mut v = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut v)?;
            Ok(v)
        };
        let mu = get(theta_len)?;
        let sigma2 = if has_sigma2 { Some(get(theta_len)?) } else { None };
        let mut post_blocks = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            let mean = DVector::from_vec(get(m)?);
            let tri = get(m * (m + 1) / 2)?;
            let mut l = DMatrix::zeros(m, m);
            let mut it = tri.into_iter();
            for c in 0..m {
                for rr in c..m {
                    l[(rr, c)] = it.next().expect("sized above");
                }
            }
            post_blocks.push(VariationalBlock::new(mean, l)?);
        }
        let mut inducing = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            inducing.push(DMatrix::from_row_slice(m, input_dim, &get(m * input_dim)?));
        }
        Ok(TrainedState {
            prior,
            optimizer,
            likelihoods,
            num_latent,
            num_inducing: m,
            input_dim,
            iterations,
            mu,
            sigma2,
            post: VariationalPosterior { blocks: post_blocks },
            inducing,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }
}
