//! Downlink beamforming on equivalent channels.
//!
//! User `k` on subcarrier `q` receives `h_equᵀ[k,q] W[q] s[q] + z`, so the
//! useful gain of beam `w` is `hᵀw`. Beams that match a user are therefore
//! aligned with the conjugate channel `h*`; the WMMSE and parametric updates
//! below are written in terms of `g = h*`.

mod parametric;
mod wmmse;
mod zf;

use nalgebra::DMatrix;

pub use parametric::{build_parametric_w, extract_params, refine_params, ParametricBeamformer};
pub use wmmse::{receiver_update, wmmse, WmmseState};
pub use zf::{zf, ZfOutput};

use crate::error::{Error, Result};
use crate::linalg::{fro2, C64};
use crate::selection::EquivalentChannelTensor;

/// Which denominators the receiver and weight updates use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WmmseVariant {
    /// MMSE receiver over all streams, `v = 1 + SINR`.
    #[default]
    StandardAllTerms,
    /// Interference-only denominators (`p ≠ k`); `v` turns negative once SINR > 1.
    StrictExcludingK,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamformerConfig {
    pub transmit_power: f64,
    pub noise_power: f64,
    pub max_iterations: usize,
    /// Stop once the sum rate changes by less than this many bits.
    pub rate_tolerance: f64,
    pub variant: WmmseVariant,
}

impl BeamformerConfig {
    pub fn new(transmit_power: f64, noise_power: f64) -> Self {
        Self {
            transmit_power,
            noise_power,
            max_iterations: 500,
            rate_tolerance: 1e-9,
            variant: WmmseVariant::StandardAllTerms,
        }
    }

    /// Data-SNR `P_t/σ²` in dB with unit noise power.
    pub fn from_snr_db(snr_db: f64) -> Self {
        Self::new(10f64.powf(snr_db / 10.0), 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.transmit_power > 0.0 && self.transmit_power.is_finite()) {
            return Err(Error::invalid(format!("transmit power must be positive, got {}", self.transmit_power)));
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(Error::invalid(format!("noise power must be positive, got {}", self.noise_power)));
        }
        if !(self.rate_tolerance > 0.0) {
            return Err(Error::invalid(format!("rate tolerance must be positive, got {}", self.rate_tolerance)));
        }
        Ok(())
    }
}

/// Per-subcarrier `M × K` beamforming matrices; column `k` of `matrices[q]`
/// is `w[k,q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSolution {
    pub matrices: Vec<DMatrix<C64>>,
}

impl BeamformingSolution {
    pub fn num_subcarriers(&self) -> usize {
        self.matrices.len()
    }

    /// Largest `| ‖W[q]‖_F² − P_t |` over subcarriers.
    pub fn max_power_error(&self, transmit_power: f64) -> f64 {
        self.matrices
            .iter()
            .map(|w| (fro2(w) - transmit_power).abs())
            .fold(0.0, f64::max)
    }
}

/// Rescales `w` so that `‖w‖_F² = power`; returns `None` for an all-zero matrix.
pub(crate) fn normalize_power(w: &DMatrix<C64>, power: f64) -> Option<DMatrix<C64>> {
    let current = fro2(w);
    (current > 0.0 && current.is_finite()).then(|| w * C64::new((power / current).sqrt(), 0.0))
}

/// SINRs of all users for one subcarrier; `h` is `K × M`, `w` is `M × K`.
pub fn subcarrier_sinrs(h: &DMatrix<C64>, w: &DMatrix<C64>, noise_power: f64) -> Vec<f64> {
    let g = h * w;
    (0..g.nrows())
        .map(|k| {
            let signal = g[(k, k)].norm_sqr();
            let interference: f64 = (0..g.ncols()).filter(|&i| i != k).map(|i| g[(k, i)].norm_sqr()).sum();
            signal / (interference + noise_power)
        })
        .collect()
}

/// `Σ_k log₂(1 + SINR[k,q])` for one subcarrier.
pub fn subcarrier_rate(h: &DMatrix<C64>, w: &DMatrix<C64>, noise_power: f64) -> f64 {
    subcarrier_sinrs(h, w, noise_power).into_iter().map(|s| (1.0 + s).log2()).sum()
}

fn check_shapes(equiv: &EquivalentChannelTensor, solution: &BeamformingSolution) -> Result<()> {
    if solution.matrices.len() != equiv.num_subcarriers() {
        return Err(Error::invalid(format!(
            "solution has {} subcarriers, channel has {}",
            solution.matrices.len(),
            equiv.num_subcarriers()
        )));
    }
    let want = (equiv.num_antennas(), equiv.num_users());
    if let Some(w) = solution.matrices.iter().find(|w| w.shape() != want) {
        return Err(Error::invalid(format!("beamformer shape {:?}, expected {:?}", w.shape(), want)));
    }
    Ok(())
}

/// SINR of user `k` on subcarrier `q` (0-based).
pub fn sinr(
    equiv: &EquivalentChannelTensor,
    solution: &BeamformingSolution,
    k: usize,
    q: usize,
    noise_power: f64,
) -> Result<f64> {
    check_shapes(equiv, solution)?;
    if k >= equiv.num_users() || q >= equiv.num_subcarriers() {
        return Err(Error::invalid(format!("index (k={k}, q={q}) out of range")));
    }
    Ok(subcarrier_sinrs(&equiv.subcarrier(q), &solution.matrices[q], noise_power)[k])
}

/// Per-subcarrier rate sums `Σ_k log₂(1 + SINR[k,q])`.
pub fn subcarrier_rates(
    equiv: &EquivalentChannelTensor,
    solution: &BeamformingSolution,
    noise_power: f64,
) -> Result<Vec<f64>> {
    check_shapes(equiv, solution)?;
    Ok(solution
        .matrices
        .iter()
        .enumerate()
        .map(|(q, w)| subcarrier_rate(&equiv.subcarrier(q), w, noise_power))
        .collect())
}

/// `(1/N_c) Σ_k Σ_q log₂(1 + SINR[k,q])` in bits per channel use.
pub fn sum_rate(equiv: &EquivalentChannelTensor, solution: &BeamformingSolution, noise_power: f64) -> Result<f64> {
    let rates = subcarrier_rates(equiv, solution, noise_power)?;
    Ok(rates.iter().sum::<f64>() / rates.len().max(1) as f64)
}

/// Matched-filter beams `w_k ∝ h_k*` with equal per-user power, scaled so
/// that `‖W[q]‖_F² = P_t`.
pub fn mrt(equiv: &EquivalentChannelTensor, transmit_power: f64) -> BeamformingSolution {
    let (m, k_count) = (equiv.num_antennas(), equiv.num_users());
    let matrices = (0..equiv.num_subcarriers())
        .map(|q| {
            let h = equiv.subcarrier(q);
            let mut w = DMatrix::<C64>::zeros(m, k_count);
            for k in 0..k_count {
                let norm: f64 = h.row(k).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                for i in 0..m {
                    w[(i, k)] = if norm > 0.0 { h[(k, i)].conj() / norm } else { C64::new(0.0, 0.0) };
                }
            }
            normalize_power(&w, transmit_power).unwrap_or_else(|| {
                DMatrix::from_element(m, k_count, C64::new((transmit_power / (m * k_count) as f64).sqrt(), 0.0))
            })
        })
        .collect();
    BeamformingSolution { matrices }
}
