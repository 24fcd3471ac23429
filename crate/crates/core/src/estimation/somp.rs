//! Simultaneous orthogonal matching pursuit with a joint support across
//! subcarriers, followed by a per-subcarrier least-squares refit.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{fro2, pinv, C64, PINV_RCOND};

use super::dictionary::Dictionary;
use super::pattern::CePattern;

#[derive(Debug, Clone)]
pub struct SompOutput {
    /// Selected dictionary columns in selection order.
    pub support: Vec<usize>,
    /// LS coefficients on the support, `|support| × N_c`.
    pub coefficients: DMatrix<C64>,
    /// Residual Frobenius norm before the first and after every iteration.
    pub residual_norms: Vec<f64>,
}

/// Runs `num_paths` SOMP iterations on observations `y` (`J × N_c`) with
/// sensing matrix `sensing` (`J × G²`).
///
/// Each iteration picks the column maximizing `‖φ_gᴴ R‖₂` over columns not
/// yet selected (ties go to the lowest index), re-solves LS on the
/// accumulated support and updates the residual.
pub fn somp(y: &DMatrix<C64>, sensing: &DMatrix<C64>, num_paths: usize) -> Result<SompOutput> {
    let (j, nc) = y.shape();
    let atoms = sensing.ncols();
    if sensing.nrows() != j {
        return Err(Error::invalid(format!(
            "observations have {j} rows but the sensing matrix has {}",
            sensing.nrows()
        )));
    }
    if num_paths > j {
        return Err(Error::invalid(format!("L = {num_paths} exceeds J = {j}")));
    }
    if num_paths > atoms {
        return Err(Error::invalid(format!("L = {num_paths} exceeds the {atoms} dictionary atoms")));
    }

    // Φᴴ R = Φᴴ Y − (Φᴴ Φ_S) X_S, so only one column of the Gram matrix is
    // needed per iteration.
    let proj_y = sensing.ad_mul(y);
    let mut gram = DMatrix::<C64>::zeros(atoms, num_paths);
    let mut support: Vec<usize> = Vec::with_capacity(num_paths);
    let mut selected = vec![false; atoms];
    let mut coefficients = DMatrix::<C64>::zeros(0, nc);
    let mut residual_norms = vec![fro2(y).sqrt()];

    for t in 0..num_paths {
        let mut best = None;
        let mut best_score = f64::NEG_INFINITY;
        for g in 0..atoms {
            if selected[g] {
                continue;
            }
            let mut score = 0.0;
            for q in 0..nc {
                let mut c = proj_y[(g, q)];
                for s in 0..t {
                    c -= gram[(g, s)] * coefficients[(s, q)];
                }
                score += c.norm_sqr();
            }
            if score > best_score {
                best_score = score;
                best = Some(g);
            }
        }
        let g_star = best.expect("an unselected atom exists since L <= G^2");
        selected[g_star] = true;
        support.push(g_star);
        let col = sensing.column(g_star);
        gram.set_column(t, &sensing.ad_mul(&col));

        let phi_s = sensing.select_columns(&support);
        let (inv, _) = pinv(&phi_s, PINV_RCOND);
        coefficients = &inv * y;
        let residual = y - &phi_s * &coefficients;
        residual_norms.push(fro2(&residual).sqrt());
    }

    Ok(SompOutput { support, coefficients, residual_norms })
}

/// Channel estimate of one user.
#[derive(Debug, Clone)]
pub struct SparseEstimate {
    pub support: Vec<usize>,
    /// `(θ̂, φ̂)` per support element.
    pub angle_estimates: Vec<(f64, f64)>,
    /// `Â_k`, `N × L`.
    pub reconstructed_steering: DMatrix<C64>,
    /// `x̂_{k,q}` stacked as columns, `L × N_c`.
    pub coefficients: DMatrix<C64>,
    /// `ĥ_ini[k,q] = Â_k x̂_{k,q}` stacked as columns, `N × N_c`.
    pub initial_csi: DMatrix<C64>,
}

/// Maps the support to grid angles, rebuilds `Â_k` over all positions and
/// solves `min_x ‖y[k,q] − B^ce Â_k x‖₂` for every subcarrier.
pub fn ls_refit(
    support: &[usize],
    dictionary: &Dictionary,
    pattern: &CePattern,
    y: &DMatrix<C64>,
) -> Result<SparseEstimate> {
    if y.nrows() != pattern.len() {
        return Err(Error::invalid(format!(
            "observations have {} rows for a pattern of {} positions",
            y.nrows(),
            pattern.len()
        )));
    }
    if let Some(&bad) = support.iter().find(|&&g| g >= dictionary.num_atoms()) {
        return Err(Error::invalid(format!("support index {bad} outside the dictionary")));
    }
    let angle_estimates = support.iter().map(|&g| dictionary.angles(g)).collect();
    let steering = dictionary.atoms().select_columns(support);
    let probed = steering.select_rows(pattern.indices());
    let (inv, _) = pinv(&probed, PINV_RCOND);
    let coefficients = &inv * y;
    let initial_csi = &steering * &coefficients;
    Ok(SparseEstimate {
        support: support.to_vec(),
        angle_estimates,
        reconstructed_steering: steering,
        coefficients,
        initial_csi,
    })
}
