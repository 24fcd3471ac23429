//! Binary persistence for channel tensors and beamforming solutions.
//!
//! Complex arrays are written as little-endian `f64` pairs `(re, im)` with a
//! JSON sidecar describing the shape. Channel tensors use position, user,
//! subcarrier order (subcarrier fastest); solutions use subcarrier, antenna,
//! user order (user fastest).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::beamforming::BeamformingSolution;
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::scenario::ChannelTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSidecar {
    pub n: usize,
    pub k: usize,
    pub nc: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionSidecar {
    pub m: usize,
    pub k: usize,
    pub nc: usize,
    pub pt: f64,
    pub sigma2: f64,
    pub scheme: String,
    pub iterations: Option<usize>,
}

pub fn encode_complex(values: impl IntoIterator<Item = C64>) -> Vec<u8> {
    let mut out = Vec::new();
    for z in values {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

pub fn decode_complex(bytes: &[u8]) -> Result<Vec<C64>> {
    if bytes.len() % 16 != 0 {
        return Err(Error::invalid(format!("{} bytes is not a whole number of complex values", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect())
}

/// `foo.bin` → `foo.json`.
pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

/// Returns `path` if nothing exists there, otherwise the first free
/// `stem-1.ext`, `stem-2.ext`, ...
pub fn unique_path(path: &Path) -> PathBuf {
    if !path.exists() {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned());
    (1..)
        .map(|i| {
            let name = match &ext {
                Some(e) => format!("{stem}-{i}.{e}"),
                None => format!("{stem}-{i}"),
            };
            path.with_file_name(name)
        })
        .find(|p| !p.exists())
        .expect("unbounded suffix search")
}

/// Writes `<path>` and its sidecar. Refuses to overwrite either file.
pub fn write_tensor(path: &Path, tensor: &ChannelTensor, seed: Option<u64>) -> Result<()> {
    let (n, k, nc) = tensor.shape();
    let meta = TensorSidecar { n, k, nc, seed };
    write_pair(path, &encode_complex(tensor.values().iter().copied()), &serde_json::to_string_pretty(&meta)?)
}

pub fn read_tensor(path: &Path) -> Result<(ChannelTensor, TensorSidecar)> {
    let meta: TensorSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let values = decode_complex(&fs::read(path)?)?;
    let tensor = ChannelTensor::from_values(meta.n, meta.k, meta.nc, values)?;
    Ok((tensor, meta))
}

pub fn write_solution(path: &Path, solution: &BeamformingSolution, meta: &SolutionSidecar) -> Result<()> {
    if solution.matrices.len() != meta.nc || solution.matrices.iter().any(|w| w.shape() != (meta.m, meta.k)) {
        return Err(Error::invalid("solution does not match its sidecar shape"));
    }
    let values = solution
        .matrices
        .iter()
        .flat_map(|w| (0..meta.m).flat_map(move |m| (0..meta.k).map(move |k| w[(m, k)])));
    write_pair(path, &encode_complex(values), &serde_json::to_string_pretty(meta)?)
}

pub fn read_solution(path: &Path) -> Result<(BeamformingSolution, SolutionSidecar)> {
    let meta: SolutionSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let values = decode_complex(&fs::read(path)?)?;
    let per = meta.m * meta.k;
    if values.len() != per * meta.nc {
        return Err(Error::invalid(format!("expected {} values, found {}", per * meta.nc, values.len())));
    }
    let matrices = values.chunks_exact(per.max(1)).take(meta.nc).map(|c| DMatrix::from_row_slice(meta.m, meta.k, c)).collect();
    Ok((BeamformingSolution { matrices }, meta))
}

fn write_pair(path: &Path, data: &[u8], sidecar: &str) -> Result<()> {
    let side = sidecar_path(path);
    for p in [path, side.as_path()] {
        if p.exists() {
            return Err(Error::invalid(format!("refusing to overwrite {}", p.display())));
        }
    }
    fs::write(path, data)?;
    fs::write(side, sidecar)?;
    Ok(())
}
