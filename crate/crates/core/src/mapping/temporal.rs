use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Exponents below this contribute exactly zero in binary64.
const MIN_EXPONENT: f64 = -745.0;

/// Temporal covariance Γ of the space-time separable prior.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalCov {
    gamma: DMatrix<f64>,
    delta: f64,
    psi: f64,
}

impl TemporalCov {
    pub fn horizon(&self) -> usize {
        self.gamma.nrows()
    }

    /// `γ_{a,b}` with 1-based sample indices.
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.gamma[(a - 1, b - 1)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }
}

/// `γ_{a,b} = Σ_{j=1..T} exp{−½[(a−j)² + (j−b)²] / (Δψ)²}` on integer
/// sample indices, with Δ in seconds and ψ in Hz.
pub fn build_sts_temporal_cov(horizon: usize, delta: f64, psi: f64) -> Result<TemporalCov> {
    if horizon == 0 {
        return Err(Error::param("T", "temporal horizon must be at least 1"));
    }
    if !(delta > 0.0 && psi > 0.0) {
        return Err(Error::param("delta/psi", format!("need delta > 0 and psi > 0, got {delta}, {psi}")));
    }
    let inv_scale2 = 1.0 / (delta * psi).powi(2);
    let mut gamma = DMatrix::zeros(horizon, horizon);
    for a in 1..=horizon {
        for b in a..=horizon {
            let mut sum = 0.0;
            for j in 1..=horizon {
                let da = a as f64 - j as f64;
                let db = j as f64 - b as f64;
                let e = -0.5 * (da * da + db * db) * inv_scale2;
                if e >= MIN_EXPONENT {
                    sum += e.exp();
                }
            }
            gamma[(a - 1, b - 1)] = sum;
            gamma[(b - 1, a - 1)] = sum;
        }
    }
    Ok(TemporalCov { gamma, delta, psi })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample() {
        let g = build_sts_temporal_cov(1, 4e-3, 204.8).unwrap();
        assert_eq!(g.get(1, 1), 1.0);
    }

    #[test]
    fn three_samples_center_value() {
        // 1 + 2·exp(−1/0.67108864), evaluated by hand
        let g = build_sts_temporal_cov(3, 4e-3, 204.8).unwrap();
        assert!((g.get(2, 2) - 1.450_692_973_849_411).abs() < 1e-12, "{}", g.get(2, 2));
    }

    #[test]
    fn symmetric_with_positive_diagonal() {
        let g = build_sts_temporal_cov(25, 4e-3, 204.8).unwrap();
        assert_eq!(g.matrix(), &g.matrix().transpose());
        assert!((1..=25).all(|a| g.get(a, a) > 0.0));
    }

    #[test]
    fn tiny_scale_does_not_overflow() {
        let g = build_sts_temporal_cov(5, 1e-6, 1.0).unwrap();
        assert!(g.matrix().iter().all(|v| v.is_finite()));
        assert_eq!(g.get(3, 3), 1.0);
        assert_eq!(g.get(1, 3), 0.0);
    }

    #[test]
    fn invalid_input() {
        assert!(build_sts_temporal_cov(0, 1.0, 1.0).is_err());
        assert!(build_sts_temporal_cov(3, 0.0, 1.0).is_err());
    }
}
