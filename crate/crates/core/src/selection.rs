//! Antenna-to-position assignment and position selectors.
//!
//! Positions are 0-based in memory and 1-based on disk.

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{mrt, sum_rate, wmmse, zf, BeamformerConfig};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::scenario::ChannelTensor;

/// Ordered list of `M` distinct positions; antenna `m` sits at `positions()[m]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PositionAssignment {
    positions: Vec<usize>,
}

impl PositionAssignment {
    pub fn new(positions: Vec<usize>, num_positions: usize) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("an assignment needs at least one antenna"));
        }
        if let Some(&bad) = positions.iter().find(|&&p| p >= num_positions) {
            return Err(Error::invalid(format!("position {bad} outside 0..{num_positions}")));
        }
        if !positions.iter().all_unique() {
            return Err(Error::invalid(format!("positions {positions:?} are not distinct")));
        }
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// The `N × M` 0/1 selection matrix.
    pub fn selection_matrix(&self, num_positions: usize) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(num_positions, self.len());
        for (m, &p) in self.positions.iter().enumerate() {
            b[(p, m)] = 1.0;
        }
        b
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&AssignmentFile::from(self))?)
    }

    pub fn from_json(text: &str, num_positions: usize) -> Result<Self> {
        let file: AssignmentFile = serde_json::from_str(text)?;
        file.into_assignment(num_positions)
    }
}

/// On-disk form: a plain 1-based integer list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AssignmentFile(pub Vec<usize>);

impl From<&PositionAssignment> for AssignmentFile {
    fn from(a: &PositionAssignment) -> Self {
        AssignmentFile(a.positions.iter().map(|p| p + 1).collect())
    }
}

impl AssignmentFile {
    pub fn into_assignment(self, num_positions: usize) -> Result<PositionAssignment> {
        if self.0.contains(&0) {
            return Err(Error::invalid("assignment indices are 1-based"));
        }
        PositionAssignment::new(self.0.into_iter().map(|p| p - 1).collect(), num_positions)
    }
}

/// Real `N × M` score matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: DMatrix<f64>,
}

impl ScoreMatrix {
    pub fn new(scores: DMatrix<f64>) -> Result<Self> {
        if scores.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }
}

/// Channel after position selection, `K × N_c × M` stored with the antenna
/// index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentChannelTensor {
    num_users: usize,
    num_subcarriers: usize,
    num_antennas: usize,
    values: Vec<C64>,
}

impl EquivalentChannelTensor {
    pub fn from_values(num_users: usize, num_subcarriers: usize, num_antennas: usize, values: Vec<C64>) -> Result<Self> {
        if num_users == 0 || num_subcarriers == 0 || num_antennas == 0 {
            return Err(Error::invalid("equivalent channel dimensions must be positive"));
        }
        if values.len() != num_users * num_subcarriers * num_antennas {
            return Err(Error::invalid(format!(
                "expected {} values for {num_users}×{num_subcarriers}×{num_antennas}, got {}",
                num_users * num_subcarriers * num_antennas,
                values.len()
            )));
        }
        if values.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::invalid("channel values must be finite"));
        }
        Ok(Self { num_users, num_subcarriers, num_antennas, values })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn get(&self, k: usize, q: usize, m: usize) -> C64 {
        self.values[(k * self.num_subcarriers + q) * self.num_antennas + m]
    }

    /// The `K × M` matrix whose row `k` is `h_equᵀ[k,q]`.
    pub fn subcarrier(&self, q: usize) -> DMatrix<C64> {
        DMatrix::from_fn(self.num_users, self.num_antennas, |k, m| self.get(k, q, m))
    }

    /// Keeps only the listed subcarriers, in the given order.
    pub fn restrict_subcarriers(&self, subcarriers: &[usize]) -> Result<Self> {
        if let Some(&bad) = subcarriers.iter().find(|&&q| q >= self.num_subcarriers) {
            return Err(Error::invalid(format!("subcarrier {bad} outside 0..{}", self.num_subcarriers)));
        }
        let mut values = Vec::with_capacity(self.num_users * subcarriers.len() * self.num_antennas);
        for k in 0..self.num_users {
            for &q in subcarriers {
                values.extend((0..self.num_antennas).map(|m| self.get(k, q, m)));
            }
        }
        Self::from_values(self.num_users, subcarriers.len(), self.num_antennas, values)
    }
}

/// `h_equ[k,q,m] = H[assignment[m], k, q]`.
pub fn apply_assignment(tensor: &ChannelTensor, assignment: &PositionAssignment) -> Result<EquivalentChannelTensor> {
    let (n, k_count, nc) = tensor.shape();
    // revalidate against this tensor's position count
    let a = PositionAssignment::new(assignment.positions.clone(), n)?;
    let m_count = a.len();
    let mut values = Vec::with_capacity(k_count * nc * m_count);
    for k in 0..k_count {
        for q in 0..nc {
            values.extend(a.positions.iter().map(|&p| tensor.get(p, k, q)));
        }
    }
    EquivalentChannelTensor::from_values(k_count, nc, m_count, values)
}

/// For each column in order, takes the highest-scoring row not yet taken;
/// ties go to the lowest row.
pub fn sequential_unique_assign(scores: &ScoreMatrix) -> Result<PositionAssignment> {
    let s = &scores.scores;
    let (n, m) = s.shape();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("need 1 ≤ M ≤ N, got N = {n}, M = {m}")));
    }
    let mut taken = vec![false; n];
    let mut positions = Vec::with_capacity(m);
    for col in 0..m {
        let mut best: Option<usize> = None;
        for row in (0..n).filter(|&r| !taken[r]) {
            if best.is_none_or(|b| s[(row, col)] > s[(b, col)]) {
                best = Some(row);
            }
        }
        let row = best.expect("M ≤ N leaves a free row");
        taken[row] = true;
        positions.push(row);
    }
    PositionAssignment::new(positions, n)
}

fn check_counts(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::invalid(format!("need 1 ≤ M ≤ N, got N = {n}, M = {m}")));
    }
    Ok(())
}

/// `M` distinct positions drawn uniformly without replacement.
pub fn random_select<R: Rng + ?Sized>(rng: &mut R, num_positions: usize, m: usize) -> Result<PositionAssignment> {
    check_counts(num_positions, m)?;
    PositionAssignment::new(sample(rng, num_positions, m).into_vec(), num_positions)
}

/// Scores a candidate set of positions on a channel tensor.
pub trait RateOracle: Sync {
    fn evaluate(&self, tensor: &ChannelTensor, positions: &[usize]) -> Result<f64>;
}

impl<F> RateOracle for F
where
    F: Fn(&ChannelTensor, &[usize]) -> Result<f64> + Sync,
{
    fn evaluate(&self, tensor: &ChannelTensor, positions: &[usize]) -> Result<f64> {
        self(tensor, positions)
    }
}

/// `count` evenly spaced subcarriers `⌊i N_c / count⌋`, or all of them when
/// `count ≥ N_c`.
pub fn evenly_spaced_subcarriers(num_subcarriers: usize, count: usize) -> Vec<usize> {
    if count == 0 || count >= num_subcarriers {
        return (0..num_subcarriers).collect();
    }
    (0..count).map(|i| i * num_subcarriers / count).collect()
}

fn equivalent_on(tensor: &ChannelTensor, positions: &[usize], subcarriers: usize) -> Result<EquivalentChannelTensor> {
    let a = PositionAssignment::new(positions.to_vec(), tensor.num_positions())?;
    let full = apply_assignment(tensor, &a)?;
    if subcarriers == 0 || subcarriers >= full.num_subcarriers() {
        return Ok(full);
    }
    full.restrict_subcarriers(&evenly_spaced_subcarriers(full.num_subcarriers(), subcarriers))
}

/// Sum rate under ZF on a few evenly spaced subcarriers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZfOracle {
    pub transmit_power: f64,
    pub noise_power: f64,
    /// Number of evenly spaced subcarriers; 0 means all.
    pub subcarriers: usize,
}

impl ZfOracle {
    pub fn new(transmit_power: f64, noise_power: f64) -> Self {
        Self { transmit_power, noise_power, subcarriers: 4 }
    }
}

impl RateOracle for ZfOracle {
    fn evaluate(&self, tensor: &ChannelTensor, positions: &[usize]) -> Result<f64> {
        let e = equivalent_on(tensor, positions, self.subcarriers)?;
        let out = zf(&e, self.transmit_power)?;
        sum_rate(&e, &out.solution, self.noise_power)
    }
}

/// Sum rate of WMMSE started from matched filtering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WmmseOracle {
    pub config: BeamformerConfig,
    /// Number of evenly spaced subcarriers; 0 means all.
    pub subcarriers: usize,
}

impl RateOracle for WmmseOracle {
    fn evaluate(&self, tensor: &ChannelTensor, positions: &[usize]) -> Result<f64> {
        let e = equivalent_on(tensor, positions, self.subcarriers)?;
        let (sol, _) = wmmse(&e, &self.config, &mrt(&e, self.config.transmit_power))?;
        sum_rate(&e, &sol, self.config.noise_power)
    }
}

pub const DEFAULT_ENUMERATION_LIMIT: u128 = 100_000;

fn binomial(n: usize, m: usize) -> u128 {
    let m = m.min(n - m);
    (0..m).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

fn evaluate_all<O: RateOracle + ?Sized>(
    oracle: &O,
    tensor: &ChannelTensor,
    candidates: &[Vec<usize>],
) -> Result<Vec<f64>> {
    candidates.par_iter().map(|c| oracle.evaluate(tensor, c)).collect()
}

/// First index with the largest value (strictly greater wins).
fn first_argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Evaluates every `M`-subset in lexicographic order and returns the best
/// one (ascending) with its rate; the earliest subset wins ties.
pub fn exhaustive_select<O: RateOracle + ?Sized>(
    tensor: &ChannelTensor,
    m: usize,
    oracle: &O,
    limit: u128,
) -> Result<(PositionAssignment, f64)> {
    let n = tensor.num_positions();
    check_counts(n, m)?;
    let count = binomial(n, m);
    if count > limit {
        return Err(Error::LimitExceeded { count, limit });
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    // evaluate in fixed-size batches so memory stays bounded
    for chunk in &(0..n).combinations(m).chunks(4096) {
        let candidates: Vec<Vec<usize>> = chunk.collect();
        let rates = evaluate_all(oracle, tensor, &candidates)?;
        if let Some(i) = first_argmax(&rates) {
            if best.as_ref().is_none_or(|(_, r)| rates[i] > *r) {
                best = Some((candidates[i].clone(), rates[i]));
            }
        }
    }
    let (positions, rate) = best.expect("at least one subset");
    Ok((PositionAssignment::new(positions, n)?, rate))
}

/// Adds, `M` times, the position that maximizes the rate of the augmented
/// set; ties go to the lowest index.
pub fn greedy_select<O: RateOracle + ?Sized>(tensor: &ChannelTensor, m: usize, oracle: &O) -> Result<PositionAssignment> {
    let n = tensor.num_positions();
    check_counts(n, m)?;
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    for _ in 0..m {
        let candidates: Vec<Vec<usize>> = (0..n)
            .filter(|p| !chosen.contains(p))
            .map(|p| {
                let mut c = chosen.clone();
                c.push(p);
                c
            })
            .collect();
        let rates = evaluate_all(oracle, tensor, &candidates)?;
        let i = first_argmax(&rates).expect("a free position remains");
        chosen.push(*candidates[i].last().expect("non-empty candidate"));
    }
    PositionAssignment::new(chosen, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CeoParams {
    pub samples: usize,
    pub elite_fraction: f64,
    pub smoothing: f64,
    pub iterations: usize,
}

impl Default for CeoParams {
    fn default() -> Self {
        Self { samples: 64, elite_fraction: 0.2, smoothing: 0.7, iterations: 20 }
    }
}

impl CeoParams {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("CEO needs at least one sample per iteration"));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction < 1.0) {
            return Err(Error::invalid(format!("elite fraction must be in (0, 1), got {}", self.elite_fraction)));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(Error::invalid(format!("smoothing must be in (0, 1], got {}", self.smoothing)));
        }
        Ok(())
    }

    pub fn num_elites(&self) -> usize {
        ((self.elite_fraction * self.samples as f64).ceil() as usize).clamp(1, self.samples)
    }
}

/// Per-round record of a CEO run. Round `t` holds the weights used for
/// sampling in that round and the best rate seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct CeoTrace {
    pub best_rate: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

impl CeoTrace {
    /// `round,best_rate,w1,...,wN`.
    pub fn to_csv(&self) -> String {
        let n = self.weights.first().map_or(0, Vec::len);
        let mut out = String::from("round,best_rate");
        for i in 1..=n {
            out.push_str(&format!(",w{i}"));
        }
        out.push('\n');
        for (t, (r, w)) in self.best_rate.iter().zip(&self.weights).enumerate() {
            out.push_str(&format!("{t},{r:.11e}"));
            for x in w {
                out.push_str(&format!(",{x:.11e}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeoOutcome {
    pub assignment: PositionAssignment,
    pub rate: f64,
    pub trace: CeoTrace,
}

/// Draws `m` distinct positions, each with probability proportional to its
/// weight among the positions still free. Falls back to uniform when all
/// remaining weights vanish.
fn weighted_subset<R: Rng + ?Sized>(rng: &mut R, weights: &[f64], m: usize) -> Vec<usize> {
    let mut free: Vec<usize> = (0..weights.len()).collect();
    let mut picked = Vec::with_capacity(m);
    for _ in 0..m {
        let total: f64 = free.iter().map(|&i| weights[i]).sum();
        let slot = if total > 0.0 {
            let mut x = rng.random::<f64>() * total;
            let mut slot = free.len() - 1;
            for (s, &i) in free.iter().enumerate() {
                if x < weights[i] {
                    slot = s;
                    break;
                }
                x -= weights[i];
            }
            // rounding can leave x just above the last positive weight
            while weights[free[slot]] <= 0.0 {
                slot -= 1;
            }
            slot
        } else {
            rng.random_range(0..free.len())
        };
        picked.push(free.remove(slot));
    }
    picked.sort_unstable();
    picked
}

/// Cross-entropy search over `M`-subsets.
///
/// Inclusion weights start uniform at `M/N`. Each of the `T + 1` rounds
/// samples `S` subsets and evaluates them; the first `T` rounds then move
/// the weights to `α f + (1 − α) w` where `f` is the inclusion frequency
/// among the `⌈ρ_e S⌉` best samples. The best subset seen in any round is
/// returned, so `T = 0` is the best of `S` uniform draws.
pub fn ceo_select<O: RateOracle + ?Sized, R: Rng + ?Sized>(
    tensor: &ChannelTensor,
    m: usize,
    oracle: &O,
    params: &CeoParams,
    rng: &mut R,
) -> Result<CeoOutcome> {
    let n = tensor.num_positions();
    check_counts(n, m)?;
    params.validate()?;
    let elites = params.num_elites();
    let mut weights = vec![m as f64 / n as f64; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut trace = CeoTrace { best_rate: Vec::new(), weights: Vec::new() };

    for round in 0..=params.iterations {
        let candidates: Vec<Vec<usize>> = (0..params.samples).map(|_| weighted_subset(rng, &weights, m)).collect();
        let rates = evaluate_all(oracle, tensor, &candidates)?;
        if let Some(i) = first_argmax(&rates) {
            if best.as_ref().is_none_or(|(_, r)| rates[i] > *r) {
                best = Some((candidates[i].clone(), rates[i]));
            }
        }
        trace.weights.push(weights.clone());
        trace.best_rate.push(best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1));
        if round == params.iterations {
            break;
        }
        let mut order: Vec<usize> = (0..rates.len()).collect();
        // descending by rate, stable so earlier samples win ties
        order.sort_by(|&a, &b| rates[b].total_cmp(&rates[a]));
        let mut freq = vec![0.0; n];
        for &i in &order[..elites] {
            for &p in &candidates[i] {
                freq[p] += 1.0 / elites as f64;
            }
        }
        for (w, f) in weights.iter_mut().zip(freq) {
            *w = params.smoothing * f + (1.0 - params.smoothing) * *w;
        }
    }
    let (positions, rate) = best.expect("at least one round");
    Ok(CeoOutcome { assignment: PositionAssignment::new(positions, n)?, rate, trace })
}
