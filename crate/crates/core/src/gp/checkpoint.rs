//! Binary checkpoint of a GP state.
//!
//! Layout:
//!
//! ```text
//! SRSI-GP-CHECKPOINT 1\n
//! <one line of JSON: CheckpointHeader>\n
//! mu[0..N]         little-endian f64
//! var[0..N]        little-endian f64, diagonal of V
//! cov_xhat[0..N]   little-endian f64, V(xhat b(p), p) for flat pair p
//! ```
//!
//! `N = num_solutions * num_models`, flat pairs in solution-major order. The
//! three vectors are exactly what risk-set reclassification needs. The log,
//! hyperparameters and `beta0` in the header are enough to rebuild the full
//! covariance with [`GpState::new`](super::GpState::new) given the kernel
//! context.

use super::{GpState, SimulationLog};
use crate::kernels::KernelParams;
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};
use thiserror::Error;

pub const MAGIC: &str = "SRSI-GP-CHECKPOINT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("corrupt checkpoint: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub num_solutions: usize,
    pub num_models: usize,
    pub xhat: usize,
    pub alpha: f64,
    pub delta: f64,
    pub beta0: f64,
    pub params: KernelParams,
    pub log: SimulationLog,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub cov_xhat: Vec<f64>,
}

impl Checkpoint {
    pub fn from_state(state: &GpState, xhat: usize, alpha: f64, delta: f64) -> Self {
        let n = state.num_pairs();
        let nb = state.num_models();
        let v = state.v();
        Self {
            header: CheckpointHeader {
                num_solutions: state.num_solutions(),
                num_models: nb,
                xhat,
                alpha,
                delta,
                beta0: state.beta0,
                params: state.params.clone(),
                log: state.log.clone(),
            },
            mu: state.mu().iter().copied().collect(),
            var: (0..n).map(|p| v[(p, p)]).collect(),
            cov_xhat: (0..n).map(|p| v[(state.flat(xhat, p % nb), p)]).collect(),
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.header.num_solutions * self.header.num_models
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        writeln!(w, "{MAGIC} {VERSION}")?;
        let header = serde_json::to_string(&self.header)
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        writeln!(w, "{header}")?;
        for section in [&self.mu, &self.var, &self.cov_xhat] {
            for x in section.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self, CheckpointError> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let mut parts = line.trim_end().split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(CheckpointError::Format("missing magic line".into()));
        }
        match parts.next().and_then(|v| v.parse::<u32>().ok()) {
            Some(VERSION) => {}
            other => {
                return Err(CheckpointError::Format(format!("unsupported version {other:?}")));
            }
        }
        line.clear();
        r.read_line(&mut line)?;
        let mut header: CheckpointHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| CheckpointError::Format(format!("header: {e}")))?;
        header.log.reindex();
        let n = header.num_solutions * header.num_models;
        if header.xhat >= header.num_solutions {
            return Err(CheckpointError::Format("xhat out of range".into()));
        }
        let mut read_section = || -> Result<Vec<f64>, CheckpointError> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)
                .map_err(|e| CheckpointError::Format(format!("truncated data: {e}")))?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let mu = read_section()?;
        let var = read_section()?;
        let cov_xhat = read_section()?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(CheckpointError::Format(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self {
            header,
            mu,
            var,
            cov_xhat,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        let file = std::fs::File::create(path)?;
        self.write_to(io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CheckpointError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(io::BufReader::new(file))
    }
}
