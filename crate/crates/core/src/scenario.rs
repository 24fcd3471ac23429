//! OFDM and candidate-position configuration, random multipath draws and the
//! ground-truth channel tensor.
//!
//! The channel between candidate position `t_n = (x_n, y_n)` and user `k` on
//! subcarrier `q ∈ 1..=N_c` is
//!
//! ```text
//! h_{k,q}(t_n) = Σ_l β_l · exp(−j2π q B_s τ_l / N_c) · exp(−j(2π/λ)(x_n θ_l + y_n φ_l))
//! ```
//!
//! with virtual directions `θ = sin ϑ cos φ_az`, `φ = cos ϑ`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default grid spacing in wavelengths. A quarter wavelength keeps every
/// stride-2 sub-lattice at half-wavelength sampling, so strided probing
/// patterns do not alias.
pub const DEFAULT_SPACING_WAVELENGTHS: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmConfig {
    carrier_frequency: f64,
    bandwidth: f64,
    num_subcarriers: usize,
    wavelength: f64,
}

impl OfdmConfig {
    pub fn new(carrier_frequency: f64, bandwidth: f64, num_subcarriers: usize) -> Result<Self> {
        if !(carrier_frequency > 0.0 && carrier_frequency.is_finite()) {
            return Err(Error::invalid(format!("carrier frequency must be positive, got {carrier_frequency}")));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if num_subcarriers == 0 {
            return Err(Error::invalid("number of subcarriers must be at least 1"));
        }
        Ok(Self {
            carrier_frequency,
            bandwidth,
            num_subcarriers,
            wavelength: SPEED_OF_LIGHT / carrier_frequency,
        })
    }

    /// 30 GHz carrier, 30 MHz bandwidth, 32 subcarriers.
    pub fn default_mmwave() -> Self {
        Self::new(30e9, 30e6, 32).expect("valid constants")
    }

    pub fn carrier_frequency(&self) -> f64 {
        self.carrier_frequency
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }
}

/// Rectangular lattice of candidate antenna positions.
///
/// Position index `n` (0-based) maps to `(i1, i2) = (n % n1, n / n1)` and
/// coordinates `(i1 · spacing, i2 · spacing)`: the azimuth axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionGrid {
    n1: usize,
    n2: usize,
    spacing: f64,
    coordinates: Vec<(f64, f64)>,
}

impl PositionGrid {
    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of candidate positions `N = n1 · n2`.
    pub fn len(&self) -> usize {
        self.coordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.is_empty()
    }

    pub fn coordinates(&self) -> &[(f64, f64)] {
        &self.coordinates
    }

    pub fn point(&self, n: usize) -> (f64, f64) {
        self.coordinates[n]
    }

    /// Lattice coordinates `(i1, i2)` of position `n`.
    pub fn lattice_index(&self, n: usize) -> (usize, usize) {
        (n % self.n1, n / self.n1)
    }

    pub fn position_index(&self, i1: usize, i2: usize) -> usize {
        i2 * self.n1 + i1
    }
}

pub fn build_grid(n1: usize, n2: usize, spacing: f64) -> Result<PositionGrid> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::invalid(format!("grid dimensions must be positive, got {n1}x{n2}")));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid(format!("grid spacing must be positive, got {spacing}")));
    }
    let coordinates = (0..n2)
        .flat_map(|i2| (0..n1).map(move |i1| (i1 as f64 * spacing, i2 as f64 * spacing)))
        .collect();
    Ok(PositionGrid { n1, n2, spacing, coordinates })
}

/// One multipath component, stored by its virtual directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub theta: f64,
    pub phi: f64,
    /// Seconds.
    pub delay: f64,
    pub gain: C64,
}

impl PathComponent {
    /// Builds a path from elevation/azimuth angles of departure (radians).
    pub fn from_aods(elevation: f64, azimuth: f64, delay: f64, gain: C64) -> Self {
        Self {
            theta: elevation.sin() * azimuth.cos(),
            phi: elevation.cos(),
            delay,
            gain,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel {
    pub paths: Vec<PathComponent>,
}

impl UserChannel {
    pub fn new(paths: Vec<PathComponent>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::invalid("a user channel needs at least one path"));
        }
        Ok(Self { paths })
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }
}

/// Draws `num_paths` components: elevation and azimuth AoDs uniform on
/// (−π/2, π/2), gains CN(0, 1/L), delays uniform on [0, 8/B_s].
pub fn sample_user_channel<R: Rng + ?Sized>(rng: &mut R, num_paths: usize, bandwidth: f64) -> Result<UserChannel> {
    if num_paths == 0 {
        return Err(Error::invalid("number of paths must be at least 1"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let std = (0.5 / num_paths as f64).sqrt();
    let max_delay = 8.0 / bandwidth;
    let paths = (0..num_paths)
        .map(|_| {
            let elevation = open_uniform(rng, -PI / 2.0, PI / 2.0);
            let azimuth = open_uniform(rng, -PI / 2.0, PI / 2.0);
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let delay = rng.random::<f64>() * max_delay;
            PathComponent::from_aods(elevation, azimuth, delay, C64::new(std * re, std * im))
        })
        .collect();
    Ok(UserChannel { paths })
}

// uniform on the open interval (lo, hi)
fn open_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return lo + (hi - lo) * u;
        }
    }
}

fn subcarrier_phase(q: usize, cfg: &OfdmConfig, delay: f64) -> f64 {
    -2.0 * PI * q as f64 * cfg.bandwidth * delay / cfg.num_subcarriers as f64
}

/// Steering phase `−(2π/λ)(x θ + y φ)`.
pub fn steering_phase(point: (f64, f64), theta: f64, phi: f64, wavelength: f64) -> f64 {
    -2.0 * PI / wavelength * (point.0 * theta + point.1 * phi)
}

/// Channel coefficient for subcarrier number `q ∈ 1..=N_c`.
pub fn channel_coeff(user: &UserChannel, position: (f64, f64), q: usize, cfg: &OfdmConfig) -> Result<C64> {
    if q == 0 || q > cfg.num_subcarriers {
        return Err(Error::invalid(format!(
            "subcarrier {q} outside 1..={}",
            cfg.num_subcarriers
        )));
    }
    Ok(coeff_unchecked(user, position, q, cfg))
}

fn coeff_unchecked(user: &UserChannel, position: (f64, f64), q: usize, cfg: &OfdmConfig) -> C64 {
    user.paths
        .iter()
        .map(|p| {
            let phase = subcarrier_phase(q, cfg, p.delay)
                + steering_phase(position, p.theta, p.phi, cfg.wavelength);
            p.gain * C64::from_polar(1.0, phase)
        })
        .sum()
}

/// Complex gains indexed `[position n, user k, subcarrier q]` (all 0-based),
/// stored with `q` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    num_positions: usize,
    num_users: usize,
    num_subcarriers: usize,
    values: Vec<C64>,
}

impl ChannelTensor {
    pub fn zeros(num_positions: usize, num_users: usize, num_subcarriers: usize) -> Self {
        Self {
            num_positions,
            num_users,
            num_subcarriers,
            values: vec![C64::new(0.0, 0.0); num_positions * num_users * num_subcarriers],
        }
    }

    pub fn from_values(
        num_positions: usize,
        num_users: usize,
        num_subcarriers: usize,
        values: Vec<C64>,
    ) -> Result<Self> {
        if values.len() != num_positions * num_users * num_subcarriers {
            return Err(Error::invalid(format!(
                "tensor of shape {num_positions}x{num_users}x{num_subcarriers} needs {} values, got {}",
                num_positions * num_users * num_subcarriers,
                values.len()
            )));
        }
        if values.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::invalid("tensor entries must be finite"));
        }
        Ok(Self { num_positions, num_users, num_subcarriers, values })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.num_positions, self.num_users, self.num_subcarriers)
    }

    pub fn num_positions(&self) -> usize {
        self.num_positions
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    #[inline]
    fn offset(&self, n: usize, k: usize, q: usize) -> usize {
        (n * self.num_users + k) * self.num_subcarriers + q
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize, q: usize) -> C64 {
        self.values[self.offset(n, k, q)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, k: usize, q: usize, value: C64) {
        let i = self.offset(n, k, q);
        self.values[i] = value;
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    /// The overall channel vector over all positions, `values[:, k, q]`.
    pub fn position_vector(&self, k: usize, q: usize) -> Vec<C64> {
        (0..self.num_positions).map(|n| self.get(n, k, q)).collect()
    }

    pub fn fro2(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|z| z * factor).collect(),
            ..self.clone()
        }
    }
}

pub fn build_channel_tensor(users: &[UserChannel], grid: &PositionGrid, cfg: &OfdmConfig) -> Result<ChannelTensor> {
    if users.is_empty() {
        return Err(Error::invalid("at least one user is required"));
    }
    let nc = cfg.num_subcarriers;
    let mut tensor = ChannelTensor::zeros(grid.len(), users.len(), nc);
    for (n, &point) in grid.coordinates().iter().enumerate() {
        for (k, user) in users.iter().enumerate() {
            for q in 0..nc {
                tensor.set(n, k, q, coeff_unchecked(user, point, q + 1, cfg));
            }
        }
    }
    Ok(tensor)
}

/// A complete channel realization: configuration, grid and per-user paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub ofdm: OfdmConfig,
    pub grid: PositionGrid,
    pub users: Vec<UserChannel>,
}

impl Scenario {
    /// Draws `num_users` independent users with `num_paths` paths each.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        ofdm: OfdmConfig,
        grid: PositionGrid,
        num_users: usize,
        num_paths: usize,
    ) -> Result<Self> {
        if num_users == 0 {
            return Err(Error::invalid("at least one user is required"));
        }
        let users = (0..num_users)
            .map(|_| sample_user_channel(rng, num_paths, ofdm.bandwidth))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ofdm, grid, users })
    }

    pub fn tensor(&self) -> Result<ChannelTensor> {
        build_channel_tensor(&self.users, &self.grid, &self.ofdm)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ScenarioFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

/// On-disk scenario document. Floats are written in shortest round-trip form
/// (at most 17 significant digits) and parse back bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub fc_hz: f64,
    pub bs_hz: f64,
    pub nc: usize,
    pub n1: usize,
    pub n2: usize,
    pub spacing_m: f64,
    pub users: Vec<UserFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserFile {
    pub paths: Vec<PathFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathFile {
    pub theta: f64,
    pub phi: f64,
    pub delay_s: f64,
    pub gain_re: f64,
    pub gain_im: f64,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        Self {
            fc_hz: s.ofdm.carrier_frequency,
            bs_hz: s.ofdm.bandwidth,
            nc: s.ofdm.num_subcarriers,
            n1: s.grid.n1,
            n2: s.grid.n2,
            spacing_m: s.grid.spacing,
            users: s
                .users
                .iter()
                .map(|u| UserFile {
                    paths: u
                        .paths
                        .iter()
                        .map(|p| PathFile {
                            theta: p.theta,
                            phi: p.phi,
                            delay_s: p.delay,
                            gain_re: p.gain.re,
                            gain_im: p.gain.im,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = Error;

    fn try_from(f: ScenarioFile) -> Result<Self> {
        let ofdm = OfdmConfig::new(f.fc_hz, f.bs_hz, f.nc)?;
        let grid = build_grid(f.n1, f.n2, f.spacing_m)?;
        if f.users.is_empty() {
            return Err(Error::invalid("scenario has no users"));
        }
        let users = f
            .users
            .into_iter()
            .map(|u| {
                let paths = u
                    .paths
                    .into_iter()
                    .map(|p| {
                        if p.delay_s < 0.0 {
                            return Err(Error::invalid(format!("negative path delay {}", p.delay_s)));
                        }
                        Ok(PathComponent {
                            theta: p.theta,
                            phi: p.phi,
                            delay: p.delay_s,
                            gain: C64::new(p.gain_re, p.gain_im),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                UserChannel::new(paths)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ofdm, grid, users })
    }
}
