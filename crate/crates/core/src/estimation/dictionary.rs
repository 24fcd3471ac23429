//! Angular dictionary over a uniform virtual-direction grid.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::scenario::{steering_phase, PathComponent, PositionGrid, UserChannel};

/// `N × G²` matrix of steering vectors. Atom `g` (0-based) sits at grid pair
/// `(g1, g2) = (g % G, g / G)`, i.e. the θ index varies fastest, with
/// `θ̄ = −1 + 2(g1+1)/G` and `φ̄ = −1 + 2(g2+1)/G`.
#[derive(Debug, Clone)]
pub struct Dictionary {
    grid_size: usize,
    atoms: DMatrix<C64>,
}

/// Virtual direction of grid point `g ∈ 0..G`.
pub fn grid_direction(g: usize, grid_size: usize) -> f64 {
    -1.0 + 2.0 * (g + 1) as f64 / grid_size as f64
}

/// Steering vector `a(θ, φ)` over all positions of `grid`.
pub fn steering_vector(grid: &PositionGrid, theta: f64, phi: f64, wavelength: f64) -> Vec<C64> {
    grid.coordinates()
        .iter()
        .map(|&p| C64::from_polar(1.0, steering_phase(p, theta, phi, wavelength)))
        .collect()
}

impl Dictionary {
    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn atoms(&self) -> &DMatrix<C64> {
        &self.atoms
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn pair(&self, g: usize) -> (usize, usize) {
        (g % self.grid_size, g / self.grid_size)
    }

    pub fn index(&self, g1: usize, g2: usize) -> usize {
        g2 * self.grid_size + g1
    }

    /// `(θ̄, φ̄)` of atom `g`.
    pub fn angles(&self, g: usize) -> (f64, f64) {
        let (g1, g2) = self.pair(g);
        (grid_direction(g1, self.grid_size), grid_direction(g2, self.grid_size))
    }

    /// Rows of the dictionary at the given positions: the sensing matrix `B^ce Ā`.
    pub fn sensing_matrix(&self, rows: &[usize]) -> DMatrix<C64> {
        self.atoms.select_rows(rows)
    }
}

pub fn build_dictionary(grid: &PositionGrid, grid_size: usize, wavelength: f64) -> Result<Dictionary> {
    if grid_size == 0 {
        return Err(Error::invalid("dictionary grid size must be at least 1"));
    }
    let n = grid.len();
    let mut atoms = DMatrix::<C64>::zeros(n, grid_size * grid_size);
    for g2 in 0..grid_size {
        let phi = grid_direction(g2, grid_size);
        for g1 in 0..grid_size {
            let theta = grid_direction(g1, grid_size);
            let col = g2 * grid_size + g1;
            for (row, &p) in grid.coordinates().iter().enumerate() {
                atoms[(row, col)] = C64::from_polar(1.0, steering_phase(p, theta, phi, wavelength));
            }
        }
    }
    Ok(Dictionary { grid_size, atoms })
}

/// Draws a user whose `num_paths` paths sit exactly on distinct dictionary
/// atoms (restricted to physical directions θ² + φ² ≤ 1). Gains are CN(0, 1/L)
/// and delays uniform on [0, 8/B_s]. Returns the channel and the atom indices.
pub fn sample_on_grid_user<R: Rng + ?Sized>(
    rng: &mut R,
    grid_size: usize,
    num_paths: usize,
    bandwidth: f64,
) -> Result<(UserChannel, Vec<usize>)> {
    let physical: Vec<usize> = (0..grid_size * grid_size)
        .filter(|&g| {
            let t = grid_direction(g % grid_size, grid_size);
            let p = grid_direction(g / grid_size, grid_size);
            t * t + p * p <= 1.0
        })
        .collect();
    if num_paths == 0 || num_paths > physical.len() {
        return Err(Error::invalid(format!(
            "cannot place {num_paths} distinct paths on {} physical atoms",
            physical.len()
        )));
    }
    let std = (0.5 / num_paths as f64).sqrt();
    let chosen: Vec<usize> = sample(rng, physical.len(), num_paths).into_iter().map(|i| physical[i]).collect();
    let paths = chosen
        .iter()
        .map(|&g| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            PathComponent {
                theta: grid_direction(g % grid_size, grid_size),
                phi: grid_direction(g / grid_size, grid_size),
                delay: rng.random::<f64>() * 8.0 / bandwidth,
                gain: C64::new(std * re, std * im),
            }
        })
        .collect();
    Ok((UserChannel::new(paths)?, chosen))
}
