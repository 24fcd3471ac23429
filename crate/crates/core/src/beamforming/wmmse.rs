//! Weighted-MMSE alternating optimization with a per-subcarrier power
//! equality constraint.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, C64};
use crate::selection::EquivalentChannelTensor;

use super::{check_shapes, normalize_power, subcarrier_rate, BeamformerConfig, BeamformingSolution, WmmseVariant};

const MAX_BRACKET_DOUBLINGS: usize = 60;
const MAX_BISECTIONS: usize = 300;

/// Auxiliary variables of the last update together with the rate history.
///
/// `u`, `v` and `mu` are the values that produced the returned beamformer,
/// i.e. they were computed from the previous iterate.
#[derive(Debug, Clone)]
pub struct WmmseState {
    /// Receive scalars, `K × N_c`.
    pub u: DMatrix<C64>,
    /// MSE weights, `K × N_c`.
    pub v: DMatrix<f64>,
    /// Lagrange multiplier per subcarrier.
    pub mu: Vec<f64>,
    /// Sum rate of the initial point followed by the rate after each iteration.
    pub rate_trace: Vec<f64>,
    pub iterations: usize,
}

/// Receiver and weight update for one subcarrier from the current beams.
/// Returns `(u, v)` per user.
pub fn receiver_update(
    h: &DMatrix<C64>,
    w: &DMatrix<C64>,
    noise_power: f64,
    variant: WmmseVariant,
) -> (Vec<C64>, Vec<f64>) {
    let g = h * w;
    let k_count = g.nrows();
    let mut u = Vec::with_capacity(k_count);
    let mut v = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let signal = g[(k, k)].norm_sqr();
        let total: f64 = (0..g.ncols()).map(|i| g[(k, i)].norm_sqr()).sum::<f64>() + noise_power;
        let interference = total - signal;
        match variant {
            WmmseVariant::StandardAllTerms => {
                u.push(g[(k, k)] / total);
                // 1 / (1 − S/D) = 1 + SINR
                v.push(1.0 + signal / interference);
            }
            WmmseVariant::StrictExcludingK => {
                u.push(g[(k, k)] / interference);
                v.push(1.0 / (1.0 - signal / interference));
            }
        }
    }
    (u, v)
}

/// Hermitian matrix `Σ_p c_p g_p g_pᴴ` with `g_p = conj(h_p)`.
pub(crate) fn weighted_covariance(h: &DMatrix<C64>, c: &[f64]) -> DMatrix<C64> {
    let (k_count, m) = h.shape();
    let mut a = DMatrix::<C64>::zeros(m, m);
    for p in 0..k_count {
        for j in 0..m {
            let hj = h[(p, j)] * c[p];
            for i in 0..m {
                a[(i, j)] += h[(p, i)].conj() * hj;
            }
        }
    }
    a
}

/// Right-hand sides `a_k g_k` stacked as columns.
pub(crate) fn matched_rhs(h: &DMatrix<C64>, a: &[C64]) -> DMatrix<C64> {
    let (k_count, m) = h.shape();
    DMatrix::from_fn(m, k_count, |i, k| h[(k, i)].conj() * a[k])
}

/// Spectral form of `(A + μI)⁻¹ R` used by the multiplier search.
struct Spectral {
    eigenvalues: DVector<f64>,
    vectors: DMatrix<C64>,
    /// `|Uᴴ R|²` summed over columns, per eigenvalue.
    weights: Vec<f64>,
    projected: DMatrix<C64>,
    floor: f64,
}

impl Spectral {
    fn new(a: &DMatrix<C64>, rhs: &DMatrix<C64>) -> Self {
        let (eigenvalues, vectors) = hermitian_eigen(a);
        let projected = vectors.adjoint() * rhs;
        let weights = projected.row_iter().map(|r| r.iter().map(|z| z.norm_sqr()).sum()).collect();
        let scale = eigenvalues.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        Self { eigenvalues, vectors, weights, projected, floor: 1e-13 * scale.max(f64::MIN_POSITIVE) }
    }

    fn lambda_min(&self) -> f64 {
        self.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    // Directions with a (numerically) zero denominator and zero weight carry no power.
    fn power(&self, mu: f64) -> f64 {
        let total_weight: f64 = self.weights.iter().sum();
        self.eigenvalues
            .iter()
            .zip(&self.weights)
            .map(|(&l, &wt)| {
                let d = l + mu;
                if d.abs() <= self.floor {
                    if wt <= 1e-24 * total_weight.max(f64::MIN_POSITIVE) {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    wt / (d * d)
                }
            })
            .sum()
    }

    fn beams(&self, mu: f64) -> DMatrix<C64> {
        let mut scaled = self.projected.clone();
        for (i, &l) in self.eigenvalues.iter().enumerate() {
            let d = l + mu;
            let f = if d.abs() <= self.floor { 0.0 } else { 1.0 / d };
            for k in 0..scaled.ncols() {
                scaled[(i, k)] *= f;
            }
        }
        &self.vectors * scaled
    }
}

/// Finds `μ ≥ 0` with `‖(A + μI)⁻¹R‖_F² = P_t` by bracket doubling and
/// bisection. If the unregularized solution already fits the budget `μ = 0`
/// is returned. The beams are rescaled to exactly `P_t` by the caller.
fn multiplier_search(spectral: &Spectral, power_budget: f64) -> Result<f64> {
    let lo0 = (-spectral.lambda_min()).max(0.0);
    if lo0 == 0.0 && spectral.power(0.0) <= power_budget {
        return Ok(0.0);
    }
    let mut lo = lo0;
    let mut width = 1.0;
    let mut hi = lo0 + width;
    let mut doublings = 0;
    while !(spectral.power(hi) <= power_budget) {
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS {
            return Err(Error::NonConvergent(format!(
                "multiplier bracket still infeasible after {MAX_BRACKET_DOUBLINGS} doublings"
            )));
        }
        lo = hi;
        width *= 2.0;
        hi = lo0 + width;
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p = spectral.power(mid);
        if p > power_budget {
            lo = mid;
        } else {
            hi = mid;
        }
        if (p - power_budget).abs() <= 1e-14 * power_budget {
            break;
        }
    }
    Ok(hi)
}

/// Beam update for one subcarrier given receivers `u` and weights `v`.
/// Returns the new beams (normalized to `P_t`) and the multiplier.
fn beam_update(
    h: &DMatrix<C64>,
    u: &[C64],
    v: &[f64],
    transmit_power: f64,
) -> Result<Option<(DMatrix<C64>, f64)>> {
    let c: Vec<f64> = u.iter().zip(v).map(|(u, v)| v * u.norm_sqr()).collect();
    let a: Vec<C64> = u.iter().zip(v).map(|(u, v)| u * *v).collect();
    let cov = weighted_covariance(h, &c);
    let rhs = matched_rhs(h, &a);
    let spectral = Spectral::new(&cov, &rhs);
    let mu = multiplier_search(&spectral, transmit_power)?;
    Ok(normalize_power(&spectral.beams(mu), transmit_power).map(|w| (w, mu)))
}

fn total_rate(channels: &[DMatrix<C64>], w: &[DMatrix<C64>], noise: f64) -> f64 {
    channels.iter().zip(w).map(|(h, w)| subcarrier_rate(h, w, noise)).sum::<f64>() / channels.len().max(1) as f64
}

/// Runs WMMSE from `init` until the rate changes by less than
/// `cfg.rate_tolerance` or `cfg.max_iterations` iterations have run.
pub fn wmmse(
    equiv: &EquivalentChannelTensor,
    cfg: &BeamformerConfig,
    init: &BeamformingSolution,
) -> Result<(BeamformingSolution, WmmseState)> {
    cfg.validate()?;
    check_shapes(equiv, init)?;
    let (k_count, nc) = (equiv.num_users(), equiv.num_subcarriers());
    let channels: Vec<DMatrix<C64>> = (0..nc).map(|q| equiv.subcarrier(q)).collect();
    let mut w: Vec<DMatrix<C64>> = init
        .matrices
        .iter()
        .map(|m| normalize_power(m, cfg.transmit_power).unwrap_or_else(|| m.clone()))
        .collect();

    let mut u = DMatrix::<C64>::zeros(k_count, nc);
    let mut v = DMatrix::<f64>::zeros(k_count, nc);
    let mut mu = vec![0.0; nc];
    for q in 0..nc {
        let (uq, vq) = receiver_update(&channels[q], &w[q], cfg.noise_power, cfg.variant);
        for k in 0..k_count {
            u[(k, q)] = uq[k];
            v[(k, q)] = vq[k];
        }
    }

    let mut rate_trace = vec![total_rate(&channels, &w, cfg.noise_power)];
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        let mut next = Vec::with_capacity(nc);
        for q in 0..nc {
            let (uq, vq) = receiver_update(&channels[q], &w[q], cfg.noise_power, cfg.variant);
            match beam_update(&channels[q], &uq, &vq, cfg.transmit_power)? {
                Some((wq, m)) => {
                    next.push(wq);
                    mu[q] = m;
                }
                // all receivers are zero: nothing to update on this subcarrier
                None => next.push(w[q].clone()),
            }
            for k in 0..k_count {
                u[(k, q)] = uq[k];
                v[(k, q)] = vq[k];
            }
        }
        w = next;
        iterations += 1;
        let rate = total_rate(&channels, &w, cfg.noise_power);
        let prev = *rate_trace.last().expect("trace starts non-empty");
        rate_trace.push(rate);
        if (rate - prev).abs() < cfg.rate_tolerance {
            break;
        }
    }

    Ok((BeamformingSolution { matrices: w }, WmmseState { u, v, mu, rate_trace, iterations }))
}
