use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{Denoiser, EpsNet, NetSpec, Role};
use crate::error::{Error, Result};
use crate::rng::rng_from;

use super::optimizer::OptState;
use super::{Stage, TrainConfig};

const MAGIC: &[u8; 8] = b"RLGNCKP1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub rank: usize,
    pub alpha: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    version: u32,
    stage: Stage,
    step: usize,
    config: TrainConfig,
    spec: NetSpec,
    adapter: Option<AdapterSpec>,
    /// Hash of the frozen reference parameters this run trained against.
    ref_params_hash: String,
}

/// Self-contained training snapshot: trainable parameters, optimizer state,
/// step count, and the config needed to reproduce the remaining steps.
/// Save -> load -> save produces identical bytes.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub stage: Stage,
    pub step: usize,
    pub config: TrainConfig,
    pub spec: NetSpec,
    pub adapter: Option<AdapterSpec>,
    pub ref_params_hash: String,
    pub params: Vec<f64>,
    pub opt: OptState,
}

/// Hash of a flat parameter vector's bit pattern, for immutability checks.
pub fn params_hash(params: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in params {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

impl Checkpoint {
    pub fn from_net(
        net: &EpsNet,
        stage: Stage,
        step: usize,
        config: &TrainConfig,
        ref_params_hash: &str,
        opt: &OptState,
    ) -> Self {
        let adapter = net.adapters.as_ref().and_then(|a| {
            a.first().map(|first| AdapterSpec {
                rank: first.rank,
                alpha: first.alpha,
            })
        });
        Checkpoint {
            stage,
            step,
            config: config.clone(),
            spec: net.spec.clone(),
            adapter,
            ref_params_hash: ref_params_hash.to_string(),
            params: net.flatten_params(),
            opt: opt.clone(),
        }
    }

    /// Rebuild the trainable denoiser held by this checkpoint.
    pub fn to_denoiser(&self) -> Result<Denoiser> {
        let mut net = EpsNet::zeros(self.spec.clone());
        if let Some(a) = &self.adapter {
            net.attach_adapter(a.rank, a.alpha, &mut rng_from(0));
        }
        net.set_from_flat(&self.params)?;
        Ok(Denoiser::from_net(net, Role::Trainable))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            version: 1,
            stage: self.stage,
            step: self.step,
            config: self.config.clone(),
            spec: self.spec.clone(),
            adapter: self.adapter,
            ref_params_hash: self.ref_params_hash.clone(),
        };
        let meta_bytes = serde_json::to_vec(&meta)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u64::<LittleEndian>(meta_bytes.len() as u64)?;
        w.write_all(&meta_bytes)?;
        write_f64s(&mut w, &self.params)?;
        w.write_u64::<LittleEndian>(self.opt.step)?;
        write_f64s(&mut w, &self.opt.m)?;
        write_f64s(&mut w, &self.opt.v)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(corrupt(path, "bad checkpoint magic"));
        }
        let meta_len = r.read_u64::<LittleEndian>()? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        r.read_exact(&mut meta_bytes)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)?;
        if meta.version != 1 {
            return Err(corrupt(path, format!("unsupported checkpoint version {}", meta.version)));
        }
        let params = read_f64s(&mut r)?;
        let opt_step = r.read_u64::<LittleEndian>()?;
        let m = read_f64s(&mut r)?;
        let v = read_f64s(&mut r)?;
        let ckpt = Checkpoint {
            stage: meta.stage,
            step: meta.step,
            config: meta.config,
            spec: meta.spec,
            adapter: meta.adapter,
            ref_params_hash: meta.ref_params_hash,
            params,
            opt: OptState {
                step: opt_step,
                m,
                v,
            },
        };
        // Cross-check the parameter vector against the declared architecture.
        let expected = ckpt.to_denoiser()?.net().map(|n| n.param_count()).unwrap_or(0);
        if expected != ckpt.params.len() {
            return Err(corrupt(
                path,
                format!(
                    "parameter count {} does not match architecture ({expected})",
                    ckpt.params.len()
                ),
            ));
        }
        Ok(ckpt)
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn write_f64s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    w.write_u64::<LittleEndian>(vals.len() as u64)?;
    for v in vals {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = r.read_u64::<LittleEndian>()? as usize;
    if n > (1 << 30) {
        return Err(Error::invalid(format!("implausible array length {n}")));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(out)
}
