use nalgebra::DMatrix;

use crate::error::Result;
use crate::linalg::{pinv, C64, PINV_RCOND};
use crate::selection::EquivalentChannelTensor;

use super::{normalize_power, BeamformingSolution};

#[derive(Debug, Clone)]
pub struct ZfOutput {
    pub solution: BeamformingSolution,
    /// Subcarriers whose channel was not full row rank and used diagonal loading.
    pub regularized_subcarriers: Vec<usize>,
}

impl ZfOutput {
    pub fn regularized(&self) -> bool {
        !self.regularized_subcarriers.is_empty()
    }
}

/// Zero forcing: `W[q] = H⁺` with columns scaled to equal power `P_t/K`.
///
/// When the `K × M` channel is not full row rank the inverse is replaced by
/// `Hᴴ(HHᴴ + εI)⁻¹` with `ε = 1e−10 · tr(HHᴴ)` and the subcarrier is flagged.
pub fn zf(equiv: &EquivalentChannelTensor, transmit_power: f64) -> Result<ZfOutput> {
    let (k_count, m) = (equiv.num_users(), equiv.num_antennas());
    let mut regularized_subcarriers = Vec::new();
    let matrices = (0..equiv.num_subcarriers())
        .map(|q| {
            let h = equiv.subcarrier(q);
            let (inv, rank) = pinv(&h, PINV_RCOND);
            let raw = if rank == k_count && k_count <= m {
                inv
            } else {
                regularized_subcarriers.push(q);
                let gram = &h * h.adjoint();
                let eps = 1e-10 * gram.trace().re;
                let loaded = gram + DMatrix::<C64>::identity(k_count, k_count) * C64::new(eps.max(f64::MIN_POSITIVE), 0.0);
                let (li, _) = pinv(&loaded, 0.0);
                h.adjoint() * li
            };
            let mut w = raw;
            let per_user = (transmit_power / k_count as f64).sqrt();
            for mut col in w.column_iter_mut() {
                let norm = col.norm();
                if norm > 0.0 {
                    col *= C64::new(per_user / norm, 0.0);
                }
            }
            normalize_power(&w, transmit_power).unwrap_or_else(|| {
                DMatrix::from_element(m, k_count, C64::new((transmit_power / (m * k_count) as f64).sqrt(), 0.0))
            })
        })
        .collect();
    Ok(ZfOutput { solution: BeamformingSolution { matrices }, regularized_subcarriers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamforming::{sinr, sum_rate};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn orthonormal_two_user() {
        // rows e1, e2 over M = 3 antennas
        let e = EquivalentChannelTensor::from_values(
            2,
            1,
            3,
            vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
        )
        .unwrap();
        let out = zf(&e, 2.0).unwrap();
        assert!(!out.regularized());
        for k in 0..2 {
            assert!((sinr(&e, &out.solution, k, 0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!((sum_rate(&e, &out.solution, 1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_user_is_matched() {
        let h = [c(0.3, -1.2), c(0.8, 0.4), c(-0.5, 0.1), c(0.0, 0.9)];
        let e = EquivalentChannelTensor::from_values(1, 1, 4, h.to_vec()).unwrap();
        let out = zf(&e, 3.0).unwrap();
        let energy: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        let want = (1.0 + 3.0 * energy / 0.7).log2();
        assert!((sum_rate(&e, &out.solution, 0.7).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_is_flagged() {
        // two identical users
        let row = [c(1.0, 0.5), c(-0.3, 0.2)];
        let e = EquivalentChannelTensor::from_values(2, 1, 2, [row, row].concat()).unwrap();
        let out = zf(&e, 1.0).unwrap();
        assert!(out.regularized());
        assert!(out.solution.max_power_error(1.0) < 1e-12);
    }
}
