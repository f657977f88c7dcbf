//! Singular spectra, numerical rank and per-source sensitivity of stacked
//! mappings.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mapping::{DynamicMapping, ModelKind};

/// Relative-sensitivity entries whose static sensitivity is below this are
/// reported as masked.
pub const MASK_FLOOR: f64 = 1e-300;

/// Threshold on singular values for the numerical rank.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankTolerance {
    /// `max(rows, cols) · ε · σ_max`.
    #[default]
    Default,
    /// `factor · σ_max`.
    Relative(f64),
    /// A fixed value.
    Absolute(f64),
}

impl RankTolerance {
    pub fn resolve(self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        match self {
            RankTolerance::Default => rows.max(cols) as f64 * f64::EPSILON * sigma_max,
            RankTolerance::Relative(f) => f * sigma_max,
            RankTolerance::Absolute(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Nonincreasing.
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
    pub numerical_rank: usize,
    pub shape: (usize, usize),
}

fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Full singular spectrum and numerical rank of a dense matrix.
pub fn matrix_spectrum(m: &DMatrix<f64>, tol: RankTolerance) -> Result<SpectrumReport> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::dim("spectrum", "nonempty matrix", format!("{rows}x{cols}")));
    }
    linalg::check_finite(m, "stacked mapping")?;
    // the wide orientation is cheaper to bidiagonalize for tall stacks
    let sv = if rows > cols {
        m.transpose().singular_values()
    } else {
        m.singular_values()
    };
    let singular_values = sorted_desc(sv.iter().copied().collect());
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let tolerance = tol.resolve(rows, cols, sigma_max);
    let numerical_rank = singular_values.iter().filter(|&&s| s > tolerance).count();
    Ok(SpectrumReport {
        singular_values,
        tolerance,
        numerical_rank,
        shape: (rows, cols),
    })
}

pub fn singular_spectrum(m: &DynamicMapping, tol: RankTolerance) -> Result<SpectrumReport> {
    matrix_spectrum(&m.stacked(), tol)
}

/// Per-source sensitivity `s_i = ‖D 1_i‖₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMap {
    pub values: Vec<f64>,
    pub k: usize,
    pub kind: ModelKind,
}

/// Column norms of the stack, accumulated block by block.
pub fn sensitivity(m: &DynamicMapping) -> SensitivityMap {
    let p = m.source_count();
    let mut sq = vec![0.0; p];
    for block in m.blocks() {
        for (i, col) in block.column_iter().enumerate() {
            sq[i] += col.norm_squared();
        }
    }
    SensitivityMap {
        values: sq.into_iter().map(f64::sqrt).collect(),
        k: m.k(),
        kind: m.kind(),
    }
}

/// `s_i(k) / s_i(0)`; `None` where the static sensitivity is below
/// [`MASK_FLOOR`].
pub fn relative_sensitivity(s_k: &SensitivityMap, s_0: &SensitivityMap) -> Result<Vec<Option<f64>>> {
    if s_k.values.len() != s_0.values.len() {
        return Err(Error::IncompatibleMaps(format!(
            "{} vs {} sources",
            s_k.values.len(),
            s_0.values.len()
        )));
    }
    if s_k.kind != s_0.kind {
        return Err(Error::IncompatibleMaps(format!(
            "model {} vs {}",
            s_k.kind, s_0.kind
        )));
    }
    Ok(s_k
        .values
        .iter()
        .zip(&s_0.values)
        .map(|(&a, &b)| if b < MASK_FLOOR { None } else { Some(a / b) })
        .collect())
}

/// Elementwise `a − b` for maps with the same `k`.
pub fn sensitivity_difference(a: &SensitivityMap, b: &SensitivityMap) -> Result<Vec<f64>> {
    if a.values.len() != b.values.len() {
        return Err(Error::IncompatibleMaps(format!(
            "{} vs {} sources",
            a.values.len(),
            b.values.len()
        )));
    }
    if a.k != b.k {
        return Err(Error::IncompatibleMaps(format!("k = {} vs {}", a.k, b.k)));
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect())
}

/// Column norms of the larger stack split into the part inside the row space
/// of the smaller stack and the part orthogonal to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSensitivity {
    /// Sensitivity in directions newly accessible at the larger `k`.
    pub null_space: Vec<f64>,
    pub row_space: Vec<f64>,
    /// Dimension of the row-space basis that was removed.
    pub basis_rank: usize,
    /// ‖big · (I − V Vᵀ)‖_F.
    pub residual_frobenius: f64,
}

/// Orthonormal basis (p×r) of the numerical row space of `m`.
pub fn row_space_basis(m: &DMatrix<f64>, tol: RankTolerance) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    linalg::check_finite(m, "stacked mapping")?;
    // row space of m = column space of mᵀ; take left vectors of mᵀ
    let svd = SVD::new(m.transpose(), true, false);
    let u = svd.u.as_ref().expect("requested U");
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tolerance = tol.resolve(rows, cols, sigma_max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tolerance)
        .collect();
    Ok(DMatrix::from_fn(cols, keep.len(), |r, c| u[(r, keep[c])]))
}

pub fn projected_sensitivity(
    big: &DynamicMapping,
    small: &DynamicMapping,
    tol: RankTolerance,
) -> Result<ProjectedSensitivity> {
    if big.kind() != small.kind() {
        return Err(Error::IncompatibleMaps(format!(
            "model {} vs {}",
            big.kind(),
            small.kind()
        )));
    }
    if big.source_count() != small.source_count() || big.sensor_count() != small.sensor_count() {
        return Err(Error::dim(
            "null-space projection",
            format!("{}x{}", small.sensor_count(), small.source_count()),
            format!("{}x{}", big.sensor_count(), big.source_count()),
        ));
    }
    if small.k() >= big.k() {
        return Err(Error::IncompatibleMaps(format!(
            "need k1 < k2, got {} and {}",
            small.k(),
            big.k()
        )));
    }
    if big.center_block() != small.center_block() {
        return Err(Error::IncompatibleMaps("mappings use different lead fields".into()));
    }
    let basis = row_space_basis(&small.stacked(), tol)?;
    let b = big.stacked();
    let inside = (&b * &basis) * basis.transpose();
    let outside = &b - &inside;
    Ok(ProjectedSensitivity {
        null_space: outside.column_iter().map(|c| c.norm()).collect(),
        row_space: inside.column_iter().map(|c| c.norm()).collect(),
        basis_rank: basis.ncols(),
        residual_frobenius: outside.norm(),
    })
}

/// Column norms of `big · (I − V Vᵀ)`, V spanning the row space of `small`.
pub fn null_space_projected_sensitivity(
    big: &DynamicMapping,
    small: &DynamicMapping,
    tol: RankTolerance,
) -> Result<Vec<f64>> {
    Ok(projected_sensitivity(big, small, tol)?.null_space)
}

/// 1-based average ranks.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            out[t] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Spearman rank correlation; pairs with a non-finite member are dropped.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (fa, fb): (Vec<f64>, Vec<f64>) = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(&x, &y)| (x, y))
        .unzip();
    if fa.len() < 2 {
        return 0.0;
    }
    pearson(&ranks(&fa), &ranks(&fb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicsModel;
    use crate::mapping::{assemble_dyn, assemble_ind, assemble_sts, build_sts_temporal_cov};
    use crate::model::LeadField;
    use crate::transition::SparseTransition;

    fn lead(n: usize, p: usize) -> LeadField {
        LeadField::new(DMatrix::from_fn(n, p, |i, j| ((i * p + j) as f64 * 0.37).sin() + 0.1)).unwrap()
    }

    #[test]
    fn ind_spectrum_is_lead_field_spectrum() {
        let x = lead(4, 9);
        let base = matrix_spectrum(x.gain(), RankTolerance::Default).unwrap();
        let ind = singular_spectrum(&assemble_ind(&x, 3).unwrap(), RankTolerance::Default).unwrap();
        assert_eq!(ind.numerical_rank, base.numerical_rank);
        for (a, b) in ind.singular_values.iter().zip(&base.singular_values) {
            assert!((a - b).abs() <= 1e-13 * base.singular_values[0]);
        }
    }

    #[test]
    fn spectrum_rejects_non_finite() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = f64::INFINITY;
        assert!(matrix_spectrum(&m, RankTolerance::Default).is_err());
    }

    #[test]
    fn tolerance_overrides() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1e-3, 1e-9]));
        assert_eq!(matrix_spectrum(&m, RankTolerance::Default).unwrap().numerical_rank, 3);
        assert_eq!(matrix_spectrum(&m, RankTolerance::Relative(1e-6)).unwrap().numerical_rank, 2);
        assert_eq!(matrix_spectrum(&m, RankTolerance::Absolute(0.5)).unwrap().numerical_rank, 1);
    }

    #[test]
    fn scalar_dynamics_sensitivity() {
        let x = LeadField::new(DMatrix::identity(2, 2)).unwrap();
        let dynamics = DynamicsModel::from_parts(SparseTransition::scaled_identity(2, 0.5), 0.5, vec![0.75; 2]).unwrap();
        let s = sensitivity(&assemble_dyn(&x, &dynamics, 1).unwrap());
        for v in s.values {
            assert!((v - 1.5f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn sts_sensitivity_closed_form() {
        let x = lead(3, 6);
        let g = build_sts_temporal_cov(11, 4e-3, 204.8).unwrap();
        let m = assemble_sts(&x, &g, 6, 3).unwrap();
        let c = ((3..=9).map(|a| g.get(a, 6).powi(2)).sum::<f64>()).sqrt() / g.get(6, 6);
        let s = sensitivity(&m);
        for (v, base) in s.values.iter().zip(x.column_norms()) {
            assert!((v - c * base).abs() <= 1e-13 * v);
        }
    }

    #[test]
    fn relative_masks_silent_sources() {
        let a = SensitivityMap { values: vec![2.0, 1.0], k: 1, kind: ModelKind::Dyn };
        let b = SensitivityMap { values: vec![1.0, 0.0], k: 0, kind: ModelKind::Dyn };
        assert_eq!(relative_sensitivity(&a, &b).unwrap(), vec![Some(2.0), None]);
        assert_eq!(relative_sensitivity(&b, &b).unwrap()[0], Some(1.0));
        let c = SensitivityMap { values: vec![1.0], k: 0, kind: ModelKind::Dyn };
        assert!(relative_sensitivity(&a, &c).is_err());
    }

    #[test]
    fn difference_contract() {
        let a = SensitivityMap { values: vec![2.0, 1.0], k: 1, kind: ModelKind::Dyn };
        let b = SensitivityMap { values: vec![1.5, 1.0], k: 1, kind: ModelKind::Sts };
        assert_eq!(sensitivity_difference(&a, &a).unwrap(), vec![0.0, 0.0]);
        assert_eq!(sensitivity_difference(&a, &b).unwrap(), vec![0.5, 0.0]);
        let c = SensitivityMap { k: 2, ..b };
        assert!(sensitivity_difference(&a, &c).is_err());
    }

    #[test]
    fn scalar_dynamics_has_no_null_space_gain() {
        let x = lead(3, 8);
        let dynamics = DynamicsModel::from_parts(SparseTransition::scaled_identity(8, 0.9), 0.9, vec![0.19; 8]).unwrap();
        let small = assemble_dyn(&x, &dynamics, 1).unwrap();
        let big = assemble_dyn(&x, &dynamics, 2).unwrap();
        let ns = null_space_projected_sensitivity(&big, &small, RankTolerance::Default).unwrap();
        let max_static = x.column_norms().into_iter().fold(0.0, f64::max);
        assert!(ns.iter().all(|&v| v < 1e-8 * max_static));
    }

    #[test]
    fn projection_preconditions() {
        let x = lead(3, 8);
        let a = assemble_ind(&x, 1).unwrap();
        let b = assemble_ind(&x, 2).unwrap();
        assert!(projected_sensitivity(&a, &b, RankTolerance::Default).is_err());
        let other = assemble_ind(&x.scaled(2.0), 1).unwrap();
        assert!(projected_sensitivity(&b, &other, RankTolerance::Default).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        // ties get average ranks
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]) - 1.0).abs() < 1e-15);
    }
}
