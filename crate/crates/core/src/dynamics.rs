//! Nearest-neighbor source dynamics: transition, input covariance, the
//! stationary covariance and the equivalent backward-in-time model.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{LeadField, SourceSpace};
use crate::transition::SparseTransition;

/// Stability parameter used throughout the reference analyses.
pub const DEFAULT_PHI: f64 = 0.95;

/// Largest condition number accepted for the steady-state covariance.
pub const MAX_CONDITION: f64 = 1e12;

fn check_phi(phi: f64) -> Result<()> {
    if phi > 0.0 && phi < 1.0 {
        Ok(())
    } else {
        Err(Error::param("phi", format!("{phi} is outside (0, 1)")))
    }
}

/// Transition matrix of the local interaction model.
///
/// A source with neighbors keeps `phi/2` of its own past and receives the
/// other `phi/2` from its neighbors in proportion to inverse distance, so
/// every row sums to `phi`. An isolated source keeps `phi` of its past.
pub fn build_transition(src: &SourceSpace, phi: f64) -> Result<SparseTransition> {
    check_phi(phi)?;
    let rows = (0..src.len())
        .map(|i| {
            let nb = src.neighbors(i);
            if nb.is_empty() {
                return vec![(i, phi)];
            }
            let total: f64 = nb.iter().map(|&(_, d)| 1.0 / d).sum();
            let half = 0.5 * phi;
            let mut row = Vec::with_capacity(nb.len() + 1);
            row.push((i, half));
            row.extend(nb.iter().map(|&(j, d)| (j, half * (1.0 / d) / total)));
            row
        })
        .collect();
    Ok(SparseTransition::from_rows(rows))
}

/// `ν_i = 1 − φ²`, which makes `C = [λ tr(Σ̂)/n]⁻¹ I` when `F = φI`.
pub fn stationary_nu(p: usize, phi: f64) -> Vec<f64> {
    vec![1.0 - phi * phi; p]
}

/// Diagonal of `Q = [λ·tr(Σ̂)/n]⁻¹ · diag(ν)` with `Σ̂ = XᵀX/n`.
pub fn build_input_covariance(x: &LeadField, lambda: f64, nu: &[f64]) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("{lambda} must be positive")));
    }
    if nu.len() != x.source_count() {
        return Err(Error::dim("input variances", x.source_count(), nu.len()));
    }
    if let Some(v) = nu.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::param("nu", format!("{v} must be positive")));
    }
    let n = x.sensor_count() as f64;
    // tr(XᵀX/n)/n
    let trace = x.gain().norm_squared() / n;
    if trace == 0.0 {
        return Err(Error::ZeroLeadField);
    }
    let scale = 1.0 / (lambda * trace / n);
    Ok(nu.iter().map(|v| v * scale).collect())
}

/// Stopping rule for the doubling iteration.
#[derive(Debug, Clone, Copy)]
pub struct LyapunovOptions {
    pub rel_update_tol: f64,
    pub max_doublings: usize,
    pub max_residual: f64,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self {
            rel_update_tol: 1e-13,
            max_doublings: 100,
            max_residual: 1e-10,
        }
    }
}

/// ‖C − F C Fᵀ − Q‖_F / ‖C‖_F.
pub fn lyapunov_residual(f: &DMatrix<f64>, q: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let r = c - f * c * f.transpose() - q;
    r.norm() / c.norm()
}

/// Solve `C = F C Fᵀ + Q` by squaring: `C ← C + A C Aᵀ`, `A ← A²`.
pub fn steady_state_covariance(f: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    steady_state_covariance_with(f, q, LyapunovOptions::default())
}

pub fn steady_state_covariance_with(
    f: &DMatrix<f64>,
    q: &DMatrix<f64>,
    opts: LyapunovOptions,
) -> Result<DMatrix<f64>> {
    let p = f.nrows();
    if !f.is_square() || q.shape() != (p, p) {
        return Err(Error::dim(
            "Lyapunov equation",
            format!("{p}x{p}"),
            format!("F {:?}, Q {:?}", f.shape(), q.shape()),
        ));
    }
    let mut c = q.clone();
    let mut a = f.clone();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_doublings {
        iterations += 1;
        let update = &a * &c * a.transpose();
        c += &update;
        let c_norm = c.norm();
        if c_norm == 0.0 || update.norm() <= opts.rel_update_tol * c_norm {
            converged = true;
            break;
        }
        a = &a * &a;
    }
    linalg::symmetrize(&mut c);
    let residual = lyapunov_residual(f, q, &c);
    if !converged || !(residual < opts.max_residual) {
        return Err(Error::LyapunovNonConvergence {
            iterations,
            residual,
        });
    }
    Ok(c)
}

/// `F_b = C Fᵀ C⁻¹` and `Q_b = C − F_b C F_bᵀ`, via a Cholesky solve of C.
pub fn backward_model(
    f: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let chol = checked_cholesky(c)?;
    Ok(backward_from_cholesky(f, c, &chol))
}

fn checked_cholesky(c: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let (lo, hi) = linalg::eigen_range(c);
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::Singular {
            what: "steady-state covariance",
            condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        });
    }
    linalg::cholesky(c, "steady-state covariance")
}

fn backward_from_cholesky(
    f: &DMatrix<f64>,
    c: &DMatrix<f64>,
    chol: &Cholesky<f64, Dyn>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    // C Fᵀ C⁻¹ = (C⁻¹ F C)ᵀ
    let fb = chol.solve(&(f * c)).transpose();
    let mut qb = c - &fb * c * fb.transpose();
    linalg::symmetrize(&mut qb);
    (fb, qb)
}

/// A fully resolved stationary dynamic source model.
#[derive(Debug, Clone)]
pub struct DynamicsModel {
    transition: SparseTransition,
    transition_dense: DMatrix<f64>,
    input_cov_diag: Vec<f64>,
    stability: f64,
    steady_cov: DMatrix<f64>,
    steady_chol: Cholesky<f64, Dyn>,
    back_transition: DMatrix<f64>,
    back_input_cov: DMatrix<f64>,
}

impl DynamicsModel {
    /// Nearest-neighbor transition from `src`, Q scaled by the lead field.
    pub fn build(src: &SourceSpace, x: &LeadField, phi: f64, lambda: f64, nu: &[f64]) -> Result<Self> {
        if src.len() != x.source_count() {
            return Err(Error::dim("source space vs lead field", x.source_count(), src.len()));
        }
        let f = build_transition(src, phi)?;
        let q = build_input_covariance(x, lambda, nu)?;
        Self::from_parts(f, phi, q)
    }

    /// Any transition with spectral radius below one and a positive diagonal Q.
    /// `stability` records the nominal φ used for statistical bounds.
    pub fn from_parts(
        transition: SparseTransition,
        stability: f64,
        input_cov_diag: Vec<f64>,
    ) -> Result<Self> {
        let p = transition.dim();
        if input_cov_diag.len() != p {
            return Err(Error::dim("input covariance", p, input_cov_diag.len()));
        }
        if let Some(v) = input_cov_diag.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::param("input covariance", format!("diagonal entry {v} must be positive")));
        }
        check_phi(stability)?;
        let transition_dense = transition.to_dense();
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&input_cov_diag));
        let steady_cov = steady_state_covariance(&transition_dense, &q)?;
        let steady_chol = checked_cholesky(&steady_cov)?;
        let (back_transition, back_input_cov) =
            backward_from_cholesky(&transition_dense, &steady_cov, &steady_chol);
        Ok(Self {
            transition,
            transition_dense,
            input_cov_diag,
            stability,
            steady_cov,
            steady_chol,
            back_transition,
            back_input_cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.transition.dim()
    }

    pub fn transition(&self) -> &SparseTransition {
        &self.transition
    }

    pub fn transition_dense(&self) -> &DMatrix<f64> {
        &self.transition_dense
    }

    pub fn input_cov_diag(&self) -> &[f64] {
        &self.input_cov_diag
    }

    pub fn input_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.input_cov_diag))
    }

    pub fn stability(&self) -> f64 {
        self.stability
    }

    pub fn steady_cov(&self) -> &DMatrix<f64> {
        &self.steady_cov
    }

    pub fn steady_cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.steady_chol
    }

    pub fn back_transition(&self) -> &DMatrix<f64> {
        &self.back_transition
    }

    pub fn back_input_cov(&self) -> &DMatrix<f64> {
        &self.back_input_cov
    }

    pub fn lyapunov_residual(&self) -> f64 {
        lyapunov_residual(&self.transition_dense, &self.input_cov(), &self.steady_cov)
    }

    /// ‖F_b C − C Fᵀ‖_F / ‖C Fᵀ‖_F.
    pub fn backward_identity_residual(&self) -> f64 {
        let lhs = &self.back_transition * &self.steady_cov;
        let rhs = &self.steady_cov * self.transition_dense.transpose();
        linalg::rel_diff(&lhs, &rhs)
    }

    /// Smallest eigenvalue of Q_b.
    pub fn back_input_cov_min_eigenvalue(&self) -> f64 {
        linalg::eigen_range(&self.back_input_cov).0
    }

    /// Stationary lag covariance `E[β_{t+lag} β_tᵀ]`: `F^lag C` for
    /// `lag ≥ 0`, `C (Fᵀ)^|lag|` for `lag < 0`.
    pub fn lag_covariance(&self, lag: i64) -> DMatrix<f64> {
        let mut m = self.steady_cov.clone();
        for _ in 0..lag.unsigned_abs() {
            m = if lag > 0 {
                self.transition.mul_dense(&m)
            } else {
                self.transition.dense_mul_transpose(&m)
            };
        }
        m
    }
}
