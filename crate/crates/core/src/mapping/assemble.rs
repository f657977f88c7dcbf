use nalgebra::DMatrix;

use super::{DynamicMapping, ModelKind, StsWindow, TemporalCov};
use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::LeadField;

/// `[X F_b^k; …; X F_b; X; X F; …; X F^k]`.
///
/// Forward blocks use the recurrence `M_{j+1} = M_j F`. Backward blocks are
/// `(X C (Fᵀ)^j) C⁻¹`, one Cholesky solve per block; `F_b` is never powered.
pub fn assemble_dyn(x: &LeadField, dynamics: &DynamicsModel, k: usize) -> Result<DynamicMapping> {
    if x.source_count() != dynamics.dim() {
        return Err(Error::dim("lead field vs dynamics", dynamics.dim(), x.source_count()));
    }
    let f = dynamics.transition();
    let chol = dynamics.steady_cholesky();

    let mut forward = Vec::with_capacity(k);
    let mut m = x.gain().clone();
    for _ in 0..k {
        m = f.dense_mul(&m);
        forward.push(m.clone());
    }

    let mut backward = Vec::with_capacity(k);
    let mut b = x.gain() * dynamics.steady_cov();
    for _ in 0..k {
        b = f.dense_mul_transpose(&b);
        backward.push(linalg::right_solve_spd(chol, &b));
    }

    let blocks = backward
        .into_iter()
        .rev()
        .chain(std::iter::once(x.gain().clone()))
        .chain(forward)
        .collect();
    Ok(DynamicMapping::new(blocks, ModelKind::Dyn, k, None))
}

/// Center block `X`, zeros elsewhere.
pub fn assemble_ind(x: &LeadField, k: usize) -> Result<DynamicMapping> {
    let (n, p) = x.gain().shape();
    let blocks = (0..=2 * k)
        .map(|b| {
            if b == k {
                x.gain().clone()
            } else {
                DMatrix::zeros(n, p)
            }
        })
        .collect();
    Ok(DynamicMapping::new(blocks, ModelKind::Ind, k, None))
}

/// Blocks `(γ_{t+j,t} / γ_{t,t}) X` for the 1-based center `t`.
pub fn assemble_sts(x: &LeadField, gamma: &TemporalCov, t: usize, k: usize) -> Result<DynamicMapping> {
    let horizon = gamma.horizon();
    let lo = t as i64 - k as i64;
    let hi = t as i64 + k as i64;
    if lo < 1 || hi > horizon as i64 {
        return Err(Error::WindowOutOfRange { lo, hi, horizon });
    }
    let center = gamma.get(t, t);
    let blocks = (lo..=hi)
        .map(|a| {
            if a == t as i64 {
                x.gain().clone()
            } else {
                x.gain() * (gamma.get(a as usize, t) / center)
            }
        })
        .collect();
    Ok(DynamicMapping::new(
        blocks,
        ModelKind::Sts,
        k,
        Some(StsWindow { center: t, horizon }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::build_sts_temporal_cov;
    use crate::transition::SparseTransition;

    fn lead() -> LeadField {
        LeadField::new(DMatrix::from_fn(3, 5, |i, j| ((i * 5 + j) as f64).sin())).unwrap()
    }

    #[test]
    fn k_zero_is_the_lead_field() {
        let x = lead();
        let dynamics = DynamicsModel::from_parts(SparseTransition::scaled_identity(5, 0.5), 0.5, vec![1.0; 5]).unwrap();
        let m = assemble_dyn(&x, &dynamics, 0).unwrap();
        assert_eq!(&m.stacked(), x.gain());
        let m = assemble_ind(&x, 0).unwrap();
        assert_eq!(&m.stacked(), x.gain());
        let g = build_sts_temporal_cov(5, 4e-3, 204.8).unwrap();
        let m = assemble_sts(&x, &g, 3, 0).unwrap();
        assert_eq!(&m.stacked(), x.gain());
    }

    #[test]
    fn scalar_dynamics_blocks() {
        let x = lead();
        let phi = 0.8;
        let dynamics = DynamicsModel::from_parts(SparseTransition::scaled_identity(5, phi), phi, vec![1.0 - phi * phi; 5]).unwrap();
        let m = assemble_dyn(&x, &dynamics, 1).unwrap();
        let scaled = x.gain() * phi;
        assert!(linalg::rel_diff(m.block(-1).unwrap(), &scaled) < 1e-14);
        assert_eq!(m.block(0).unwrap(), x.gain());
        assert!(linalg::rel_diff(m.block(1).unwrap(), &scaled) < 1e-15);
    }

    #[test]
    fn ind_stack_has_n_nonzero_rows() {
        let x = lead();
        let s = assemble_ind(&x, 2).unwrap().stacked();
        let nonzero = s.row_iter().filter(|r| r.iter().any(|&v| v != 0.0)).count();
        assert_eq!(nonzero, 3);
        assert_eq!(s.nrows(), 15);
    }

    #[test]
    fn sts_window_bounds() {
        let x = lead();
        let g = build_sts_temporal_cov(5, 4e-3, 204.8).unwrap();
        assert!(assemble_sts(&x, &g, 3, 2).is_ok());
        assert!(matches!(assemble_sts(&x, &g, 2, 2), Err(Error::WindowOutOfRange { .. })));
        assert!(assemble_sts(&x, &g, 4, 2).is_err());
    }

    #[test]
    fn offsets_outside_k_rejected() {
        let m = assemble_ind(&lead(), 1).unwrap();
        assert!(m.block(2).is_err());
        assert!(m.block(-2).is_err());
    }
}
