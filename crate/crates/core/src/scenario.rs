//! End-to-end model construction: geometry, lead field and dynamics.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{stationary_nu, DynamicsModel, DEFAULT_PHI};
use crate::error::{Error, Result};
use crate::forward::{build_sphere_geometry, compute_lead_field, Geometry, Sphere, SphereConfig};
use crate::mapping::{ModelContext, StsParams};
use crate::model::{LeadField, NoiseModel, SourceSpace};

/// How the per-source input variances ν are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum NuRule {
    /// `ν_i = 1 − φ²`.
    Stationary,
    Constant { value: f64 },
    /// Independent uniform draws in `[min, max]`.
    Random { min: f64, max: f64, seed: u64 },
    Explicit { values: Vec<f64> },
}

impl NuRule {
    pub fn resolve(&self, p: usize, phi: f64) -> Result<Vec<f64>> {
        match self {
            NuRule::Stationary => Ok(stationary_nu(p, phi)),
            NuRule::Constant { value } => Ok(vec![*value; p]),
            NuRule::Random { min, max, seed } => {
                if !(*min > 0.0 && max >= min) {
                    return Err(Error::param("nu", format!("need 0 < min <= max, got [{min}, {max}]")));
                }
                let mut rng = ChaCha20Rng::seed_from_u64(*seed);
                Ok((0..p).map(|_| min + (max - min) * rng.random::<f64>()).collect())
            }
            NuRule::Explicit { values } => {
                if values.len() != p {
                    return Err(Error::dim("explicit nu", p, values.len()));
                }
                Ok(values.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub phi: f64,
    /// Inverse power SNR.
    pub lambda: f64,
    pub nu: NuRule,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            phi: DEFAULT_PHI,
            lambda: 1.0,
            nu: NuRule::Stationary,
        }
    }
}

/// Small sphere model used by the Monte Carlo identity suite. Two widely
/// separated shells make the transition strongly non-normal, so the naive
/// time-reversed block is visibly wrong.
pub fn oracle_sphere_config() -> SphereConfig {
    SphereConfig {
        sensor_count: 8,
        source_count: 20,
        depth_profile: vec![0.5, 0.9],
        seed: 11,
        ..SphereConfig::default()
    }
}

/// A lead field with its source space and fitted dynamics.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub sources: SourceSpace,
    pub lead_field: LeadField,
    pub dynamics: Arc<DynamicsModel>,
    /// Present for synthetic geometry or when supplied with imports.
    pub sphere: Option<Sphere>,
    pub geometry: Option<Geometry>,
}

impl Scenario {
    /// Generate a spherical head and build everything on top of it.
    pub fn synthetic(sphere: &SphereConfig, dynamics: &DynamicsConfig) -> Result<Self> {
        let geometry = build_sphere_geometry(sphere)?;
        let lead_field = compute_lead_field(&geometry.sources, &geometry.sensors, &geometry.sphere)?;
        let mut s = Self::from_parts(geometry.sources.clone(), lead_field, dynamics)?;
        s.sphere = Some(geometry.sphere);
        s.geometry = Some(geometry);
        Ok(s)
    }

    /// Build dynamics for an externally supplied source space and lead field.
    pub fn from_parts(sources: SourceSpace, lead_field: LeadField, cfg: &DynamicsConfig) -> Result<Self> {
        let nu = cfg.nu.resolve(sources.len(), cfg.phi)?;
        let dynamics = DynamicsModel::build(&sources, &lead_field, cfg.phi, cfg.lambda, &nu)?;
        Ok(Self {
            sources,
            lead_field,
            dynamics: Arc::new(dynamics),
            sphere: None,
            geometry: None,
        })
    }

    pub fn model_context(&self, sts: StsParams) -> ModelContext {
        ModelContext {
            dynamics: Some(self.dynamics.clone()),
            sts,
        }
    }

    /// Radial depth of every source below the sphere surface.
    pub fn depths(&self) -> Option<Vec<f64>> {
        let sphere = self.sphere?;
        Some(self.sources.positions().iter().map(|x| sphere.depth(x)).collect())
    }

    /// `R = I` with the configured ν: the noise level for which `1/λ` is the
    /// power SNR of the scaled input covariance.
    pub fn unit_noise(&self, cfg: &DynamicsConfig) -> Result<NoiseModel> {
        let n = self.lead_field.sensor_count();
        NoiseModel::new(
            nalgebra::DMatrix::identity(n, n),
            cfg.nu.resolve(self.sources.len(), cfg.phi)?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nu_rules() {
        assert_eq!(NuRule::Stationary.resolve(2, 0.5).unwrap(), vec![0.75, 0.75]);
        assert_eq!(NuRule::Constant { value: 2.0 }.resolve(1, 0.5).unwrap(), vec![2.0]);
        let r = NuRule::Random { min: 1.0, max: 2.0, seed: 3 }.resolve(50, 0.5).unwrap();
        assert!(r.iter().all(|v| (1.0..=2.0).contains(v)));
        assert!(NuRule::Explicit { values: vec![1.0] }.resolve(2, 0.5).is_err());
        assert!(NuRule::Random { min: 0.0, max: 1.0, seed: 0 }.resolve(2, 0.5).is_err());
    }

    #[test]
    fn small_synthetic_scenario() {
        let cfg = SphereConfig {
            sensor_count: 6,
            source_count: 30,
            ..SphereConfig::default()
        };
        let s = Scenario::synthetic(&cfg, &DynamicsConfig::default()).unwrap();
        assert_eq!(s.lead_field.gain().shape(), (6, 30));
        assert_eq!(s.depths().unwrap().len(), 30);
        assert!(s.dynamics.lyapunov_residual() < 1e-10);
    }
}
