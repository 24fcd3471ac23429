//! Closed-form beamformer family `w[k,q] = (b[q] I + Σ_p c[p,q] g_p g_pᴴ)⁻¹ a[k,q] g_k`
//! (`g = h*`), parameter extraction from a WMMSE run and direct numerical
//! refinement of the parameters.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, C64};
use crate::selection::EquivalentChannelTensor;

use super::wmmse::{matched_rhs, weighted_covariance};
use super::{normalize_power, subcarrier_rate, BeamformerConfig, BeamformingSolution, WmmseState};

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricBeamformer {
    /// `K × N_c`.
    pub a: DMatrix<C64>,
    /// One per subcarrier.
    pub b: Vec<f64>,
    /// `K × N_c`.
    pub c: DMatrix<f64>,
}

impl ParametricBeamformer {
    pub fn num_users(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.a.ncols()
    }

    fn column(&self, q: usize) -> SubcarrierParams {
        SubcarrierParams {
            a: self.a.column(q).iter().cloned().collect(),
            b: self.b[q],
            c: self.c.column(q).iter().cloned().collect(),
        }
    }

    fn set_column(&mut self, q: usize, p: &SubcarrierParams) {
        for k in 0..p.a.len() {
            self.a[(k, q)] = p.a[k];
            self.c[(k, q)] = p.c[k];
        }
        self.b[q] = p.b;
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SubcarrierParams {
    a: Vec<C64>,
    b: f64,
    c: Vec<f64>,
}

fn subcarrier_beams(h: &DMatrix<C64>, p: &SubcarrierParams, transmit_power: f64) -> Result<DMatrix<C64>> {
    let m = h.ncols();
    let mut mat = weighted_covariance(h, &p.c);
    for i in 0..m {
        mat[(i, i)] += C64::new(p.b, 0.0);
    }
    let rhs = matched_rhs(h, &p.a);
    let (vals, vecs) = hermitian_eigen(&mat);
    let largest = vals.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if vals.iter().any(|x| x.abs() <= 1e-12 * largest) || largest == 0.0 {
        return Err(Error::Singular("regularized covariance is not invertible".into()));
    }
    let mut proj = vecs.adjoint() * rhs;
    for (i, mut row) in proj.row_iter_mut().enumerate() {
        row /= C64::new(vals[i], 0.0);
    }
    let w = vecs * proj;
    normalize_power(&w, transmit_power).ok_or_else(|| Error::invalid("parametric beamformer is identically zero"))
}

/// Evaluates the parametric form on every subcarrier and rescales each
/// `W[q]` to `‖W[q]‖_F² = P_t`.
pub fn build_parametric_w(
    params: &ParametricBeamformer,
    equiv: &EquivalentChannelTensor,
    transmit_power: f64,
) -> Result<BeamformingSolution> {
    if params.num_users() != equiv.num_users()
        || params.num_subcarriers() != equiv.num_subcarriers()
        || params.b.len() != equiv.num_subcarriers()
        || params.c.shape() != params.a.shape()
    {
        return Err(Error::invalid("parameter shapes do not match the channel"));
    }
    if params.a.iter().any(|z| !(z.re.is_finite() && z.im.is_finite()))
        || params.c.iter().any(|x| !x.is_finite())
        || params.b.iter().any(|x| !x.is_finite())
    {
        return Err(Error::invalid("parameters must be finite"));
    }
    if let Some(b) = params.b.iter().find(|&&b| b < 0.0) {
        return Err(Error::invalid(format!("b must be non-negative, got {b}")));
    }
    let matrices = (0..equiv.num_subcarriers())
        .map(|q| subcarrier_beams(&equiv.subcarrier(q), &params.column(q), transmit_power))
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamformingSolution { matrices })
}

/// `a = u v`, `c = v |u|²`, `b = μ` from the auxiliaries that produced the
/// last WMMSE beamformer.
pub fn extract_params(state: &WmmseState) -> ParametricBeamformer {
    let a = state.u.zip_map(&state.v, |u, v| u * v);
    let c = state.u.zip_map(&state.v, |u, v| v * u.norm_sqr());
    ParametricBeamformer { a, b: state.mu.clone(), c }
}

// Coordinate layout per subcarrier: Re a_k, Im a_k (k < K), ln c_k, ln b.
#[derive(Debug, Clone, Copy)]
enum Coord {
    ReA(usize),
    ImA(usize),
    LnC(usize),
    LnB,
}

fn coords(k_count: usize) -> Vec<Coord> {
    (0..k_count)
        .flat_map(|k| [Coord::ReA(k), Coord::ImA(k)])
        .chain((0..k_count).map(Coord::LnC))
        .chain(std::iter::once(Coord::LnB))
        .collect()
}

fn read(p: &SubcarrierParams, c: Coord) -> Option<f64> {
    match c {
        Coord::ReA(k) => Some(p.a[k].re),
        Coord::ImA(k) => Some(p.a[k].im),
        // zero-valued multipliers have no logarithm and stay fixed
        Coord::LnC(k) => (p.c[k] > 0.0).then(|| p.c[k].ln()),
        Coord::LnB => (p.b > 0.0).then(|| p.b.ln()),
    }
}

fn write(p: &SubcarrierParams, c: Coord, x: f64) -> SubcarrierParams {
    let mut out = p.clone();
    match c {
        Coord::ReA(k) => out.a[k].re = x,
        Coord::ImA(k) => out.a[k].im = x,
        Coord::LnC(k) => out.c[k] = x.exp(),
        Coord::LnB => out.b = x.exp(),
    }
    out
}

fn is_log(c: Coord) -> bool {
    matches!(c, Coord::LnC(_) | Coord::LnB)
}

/// Coordinate-wise ascent on the sum rate over `(Re a, Im a, ln c, ln b)`.
///
/// Each coordinate update spends three rate evaluations: a central
/// finite difference with relative step `1e−4`, then one trial step (a 1-D
/// Newton step when the curvature is negative, otherwise a trust-sized step
/// along the slope). The best of the three probes replaces the current point
/// only if it raises the rate. The rate is separable across subcarriers, so
/// one evaluation probes the same coordinate on every subcarrier at once.
/// `budget` caps the number of evaluations; the result is never worse than
/// the input.
pub fn refine_params(
    params: &ParametricBeamformer,
    equiv: &EquivalentChannelTensor,
    cfg: &BeamformerConfig,
    budget: usize,
) -> Result<ParametricBeamformer> {
    if budget == 0 {
        return Ok(params.clone());
    }
    // validates shapes and finiteness
    build_parametric_w(params, equiv, cfg.transmit_power)?;
    let nc = equiv.num_subcarriers();
    let k_count = equiv.num_users();
    let channels: Vec<DMatrix<C64>> = (0..nc).map(|q| equiv.subcarrier(q)).collect();
    let rate_of = |q: usize, p: &SubcarrierParams| -> f64 {
        match subcarrier_beams(&channels[q], p, cfg.transmit_power) {
            Ok(w) => {
                let r = subcarrier_rate(&channels[q], &w, cfg.noise_power);
                if r.is_finite() {
                    r
                } else {
                    f64::NEG_INFINITY
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let mut current: Vec<SubcarrierParams> = (0..nc).map(|q| params.column(q)).collect();
    let mut rates: Vec<f64> = (0..nc).map(|q| rate_of(q, &current[q])).collect();
    let mut used = 1;

    let layout = coords(k_count);
    let a_scale: Vec<f64> = current
        .iter()
        .map(|p| p.a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE))
        .collect();
    let mut trust: Vec<Vec<f64>> = (0..nc)
        .map(|q| layout.iter().map(|&c| if is_log(c) { 1.0 } else { 0.5 * a_scale[q] }).collect())
        .collect();

    let mut ci = 0;
    while used + 3 <= budget {
        let coord = layout[ci % layout.len()];
        let slot = ci % layout.len();
        ci += 1;
        for q in 0..nc {
            let Some(x) = read(&current[q], coord) else { continue };
            let floor = if is_log(coord) { 1.0 } else { a_scale[q] };
            let h = 1e-4 * x.abs().max(floor);
            let f0 = rates[q];
            let plus = write(&current[q], coord, x + h);
            let minus = write(&current[q], coord, x - h);
            let fp = rate_of(q, &plus);
            let fm = rate_of(q, &minus);
            let d1 = (fp - fm) / (2.0 * h);
            let d2 = (fp - 2.0 * f0 + fm) / (h * h);
            let t = trust[q][slot];
            let mut step = if d2 < 0.0 && d1.is_finite() { -d1 / d2 } else { t * d1.signum() };
            if !step.is_finite() {
                step = 0.0;
            }
            step = step.clamp(-t, t);
            let trial = write(&current[q], coord, x + step);
            let ft = rate_of(q, &trial);
            trust[q][slot] = if ft > f0 { 2.0 * t } else { 0.5 * t };

            let mut best = (f0, None);
            for (f, p) in [(fp, plus), (fm, minus), (ft, trial)] {
                if f > best.0 {
                    best = (f, Some(p));
                }
            }
            if let (f, Some(p)) = best {
                current[q] = p;
                rates[q] = f;
            }
        }
        used += 3;
    }

    let mut out = params.clone();
    for (q, p) in current.iter().enumerate() {
        out.set_column(q, p);
    }
    Ok(out)
}
