//! Probed-position sets used during channel estimation.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::PositionGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    /// Uniformly strided sub-lattice.
    UpaSubgrid,
    /// `J` positions drawn without replacement.
    UniformRandom,
    /// The first rows of the lattice (contiguous row-major prefix).
    RowBand,
    /// Center row and center column, truncated or grown outward to `J`.
    Cross,
}

impl PatternKind {
    pub const ALL: [PatternKind; 4] = [
        PatternKind::UpaSubgrid,
        PatternKind::UniformRandom,
        PatternKind::RowBand,
        PatternKind::Cross,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PatternKind::UpaSubgrid => "upa-subgrid",
            PatternKind::UniformRandom => "uniform-random",
            PatternKind::RowBand => "row-band",
            PatternKind::Cross => "cross",
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::invalid(format!("unknown pattern kind `{s}`")))
    }
}

/// The set 𝒥 of probed positions, 0-based and ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CePattern {
    kind: PatternKind,
    indices: Vec<usize>,
}

impl CePattern {
    /// Wraps an explicit index set; indices must be distinct and below `num_positions`.
    pub fn from_indices(kind: PatternKind, mut indices: Vec<usize>, num_positions: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("pattern indices must be distinct"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= num_positions) {
            return Err(Error::invalid(format!("pattern index {bad} outside 0..{num_positions}")));
        }
        Ok(Self { kind, indices })
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// 1-based index list as persisted on disk.
    pub fn to_json(&self) -> Result<String> {
        let one_based: Vec<usize> = self.indices.iter().map(|i| i + 1).collect();
        Ok(serde_json::to_string(&one_based)?)
    }

    pub fn from_json(kind: PatternKind, text: &str, num_positions: usize) -> Result<Self> {
        let one_based: Vec<usize> = serde_json::from_str(text)?;
        if one_based.contains(&0) {
            return Err(Error::invalid("pattern indices are 1-based"));
        }
        Self::from_indices(kind, one_based.into_iter().map(|i| i - 1).collect(), num_positions)
    }
}

pub fn build_ce_pattern<R: Rng + ?Sized>(
    grid: &PositionGrid,
    j: usize,
    kind: PatternKind,
    rng: &mut R,
) -> Result<CePattern> {
    let n = grid.len();
    if j > n {
        return Err(Error::invalid(format!("J = {j} exceeds the {n} candidate positions")));
    }
    let indices = match kind {
        PatternKind::UpaSubgrid => upa_subgrid(grid, j)?,
        PatternKind::UniformRandom => sample(rng, n, j).into_vec(),
        PatternKind::RowBand => (0..j).collect(),
        PatternKind::Cross => cross(grid, j),
    };
    CePattern::from_indices(kind, indices, n)
}

fn strided(count: usize, extent: usize) -> Vec<usize> {
    if count == 1 {
        return vec![0];
    }
    let stride = (extent - 1) / (count - 1);
    (0..count).map(|m| m * stride).collect()
}

// Among factorizations j = j1 * j2 that fit the lattice, take the most
// balanced one (ties go to the larger azimuth count) and spread each axis
// with the widest integer stride that fits.
fn upa_subgrid(grid: &PositionGrid, j: usize) -> Result<Vec<usize>> {
    let (n1, n2) = (grid.n1(), grid.n2());
    if j == 0 {
        return Ok(Vec::new());
    }
    let best = (1..=n1.min(j))
        .filter(|j1| j % j1 == 0 && j / j1 <= n2)
        .map(|j1| (j1, j / j1))
        .min_by_key(|&(j1, j2)| (j1.abs_diff(j2), std::cmp::Reverse(j1)))
        .ok_or_else(|| {
            Error::invalid(format!("J = {j} has no factorization fitting a {n1}x{n2} lattice"))
        })?;
    let xs = strided(best.0, n1);
    let ys = strided(best.1, n2);
    Ok(ys
        .iter()
        .flat_map(|&i2| xs.iter().map(move |&i1| grid.position_index(i1, i2)))
        .collect())
}

fn cross(grid: &PositionGrid, j: usize) -> Vec<usize> {
    let (c1, c2) = ((grid.n1() - 1) / 2, (grid.n2() - 1) / 2);
    let mut order: Vec<(bool, usize, usize)> = (0..grid.len())
        .map(|n| {
            let (i1, i2) = grid.lattice_index(n);
            let on_cross = i1 == c1 || i2 == c2;
            let dist = i1.abs_diff(c1).max(i2.abs_diff(c2));
            (!on_cross, dist, n)
        })
        .collect();
    order.sort_unstable();
    order.into_iter().take(j).map(|(_, _, n)| n).collect()
}
