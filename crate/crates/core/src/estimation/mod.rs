//! Compressive channel estimation from pilots sent at a subset of positions.
//!
//! A single antenna visits the `J` positions of a [`CePattern`] and sends a
//! unit pilot with power `P`; each user observes
//! `y_j[k,q] = √P · h_{k,q}(t_{𝒥(j)}) + z_j[k,q]`. The per-user estimate is
//! obtained by [`somp`] on the sensing matrix `B^ce Ā` followed by
//! [`ls_refit`], and the stacked result is de-embedded by `√P`.

pub mod dictionary;
pub mod pattern;
pub mod somp;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use dictionary::{build_dictionary, sample_on_grid_user, steering_vector, Dictionary};
pub use pattern::{build_ce_pattern, CePattern, PatternKind};
pub use somp::{ls_refit, somp, SompOutput, SparseEstimate};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::scenario::ChannelTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotConfig {
    pilot_power: f64,
    noise_power: f64,
}

impl PilotConfig {
    pub fn new(pilot_power: f64, noise_power: f64) -> Result<Self> {
        if !(pilot_power > 0.0 && pilot_power.is_finite()) {
            return Err(Error::invalid(format!("pilot power must be positive, got {pilot_power}")));
        }
        if !(noise_power >= 0.0 && noise_power.is_finite()) {
            return Err(Error::invalid(format!("noise power must be non-negative, got {noise_power}")));
        }
        Ok(Self { pilot_power, noise_power })
    }

    /// Pilot-SNR `P/σ²` in dB with unit noise power.
    pub fn from_snr_db(snr_db: f64) -> Result<Self> {
        Self::new(10f64.powf(snr_db / 10.0), 1.0)
    }

    pub fn pilot_power(&self) -> f64 {
        self.pilot_power
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }
}

/// Per-user `J × N_c` observation matrices `Y_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservations {
    pub per_user: Vec<DMatrix<C64>>,
}

/// Synthesizes noisy pilot observations. Noise is drawn user by user,
/// subcarrier by subcarrier, position by position.
pub fn synthesize_pilots<R: Rng + ?Sized>(
    tensor: &ChannelTensor,
    pattern: &CePattern,
    cfg: &PilotConfig,
    rng: &mut R,
) -> Result<PilotObservations> {
    let (n, k_count, nc) = tensor.shape();
    if let Some(&bad) = pattern.indices().iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!("pattern index {bad} outside 0..{n}")));
    }
    let amp = cfg.pilot_power.sqrt();
    let noise_std = (cfg.noise_power / 2.0).sqrt();
    let j = pattern.len();
    let per_user = (0..k_count)
        .map(|k| {
            let mut y = DMatrix::<C64>::zeros(j, nc);
            for q in 0..nc {
                for (row, &pos) in pattern.indices().iter().enumerate() {
                    let mut v = tensor.get(pos, k, q) * amp;
                    if cfg.noise_power > 0.0 {
                        let re: f64 = StandardNormal.sample(rng);
                        let im: f64 = StandardNormal.sample(rng);
                        v += C64::new(noise_std * re, noise_std * im);
                    }
                    y[(row, q)] = v;
                }
            }
            y
        })
        .collect();
    Ok(PilotObservations { per_user })
}

/// Estimates one user's channel: SOMP on `B^ce Ā` with `num_paths`
/// iterations, then the LS refit.
pub fn estimate_user(
    y: &DMatrix<C64>,
    dictionary: &Dictionary,
    pattern: &CePattern,
    num_paths: usize,
) -> Result<SparseEstimate> {
    let sensing = dictionary.sensing_matrix(pattern.indices());
    let out = somp(y, &sensing, num_paths)?;
    ls_refit(&out.support, dictionary, pattern, y)
}

/// Stacks per-user estimates into an `N × K × N_c` tensor of `ĥ_ini / √P`.
pub fn assemble_initial_csi(estimates: &[SparseEstimate], pilot_power: f64) -> Result<ChannelTensor> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::invalid("at least one user estimate is required"))?;
    if !(pilot_power > 0.0) {
        return Err(Error::invalid(format!("pilot power must be positive, got {pilot_power}")));
    }
    let (n, nc) = first.initial_csi.shape();
    if estimates.iter().any(|e| e.initial_csi.shape() != (n, nc)) {
        return Err(Error::invalid("user estimates have inconsistent shapes"));
    }
    let scale = 1.0 / pilot_power.sqrt();
    let mut tensor = ChannelTensor::zeros(n, estimates.len(), nc);
    for (k, est) in estimates.iter().enumerate() {
        for q in 0..nc {
            for row in 0..n {
                tensor.set(row, k, q, est.initial_csi[(row, q)] * scale);
            }
        }
    }
    Ok(tensor)
}

/// Full pipeline for every user of an observation set.
pub fn estimate_channel(
    observations: &PilotObservations,
    dictionary: &Dictionary,
    pattern: &CePattern,
    num_paths: usize,
    pilot_power: f64,
) -> Result<ChannelTensor> {
    let estimates = observations
        .per_user
        .iter()
        .map(|y| estimate_user(y, dictionary, pattern, num_paths))
        .collect::<Result<Vec<_>>>()?;
    assemble_initial_csi(&estimates, pilot_power)
}

/// `Σ_q ‖H_q − Ĥ_q‖_F² / Σ_q ‖H_q‖_F²` for one realization.
pub fn nmse(estimate: &ChannelTensor, truth: &ChannelTensor) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: estimate {:?} vs truth {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let power = truth.fro2();
    if power == 0.0 {
        return Err(Error::UndefinedInput("NMSE against an all-zero channel".into()));
    }
    let err: f64 = estimate
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(err / power)
}
