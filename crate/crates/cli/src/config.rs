//! Experiment configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use dynlead::analysis::RankTolerance;
use dynlead::forward::SphereConfig;
use dynlead::mapping::{ModelKind, StsParams};
use dynlead::oracle::SuiteSettings;
use dynlead::scenario::{oracle_sphere_config, DynamicsConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub geometry: GeometryConfig,
    pub dynamics: DynamicsConfig,
    pub analysis: AnalysisConfig,
    pub sts: StsParams,
    pub oracle: OracleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("dynlead-out"),
            geometry: GeometryConfig::default(),
            dynamics: DynamicsConfig::default(),
            analysis: AnalysisConfig::default(),
            sts: StsParams::default(),
            oracle: OracleConfig::default(),
        }
    }
}

/// Where the source space and lead field come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GeometryConfig {
    Synthetic(SphereConfig),
    Import(ImportConfig),
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig::Synthetic(SphereConfig::default())
    }
}

/// Paths to previously computed geometry. Matrix files are `.dlf` binary
/// or `.csv` text; relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportConfig {
    /// n×p gain matrix.
    pub lead_field: PathBuf,
    /// p×3 source positions in meters.
    pub positions: PathBuf,
    /// p×3 unit dipole orientations.
    pub orientations: PathBuf,
    /// Edge list CSV with header `i,j,distance`.
    pub graph: PathBuf,
    /// Radius of the head sphere centered at the origin; enables depths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sphere_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Strictly increasing truncation values.
    pub k: Vec<usize>,
    pub models: Vec<ModelKind>,
    pub rank_tolerance: RankTolerance,
    /// Largest stacked mapping, in MiB, built without `--allow-large`.
    pub memory_budget_mib: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            k: vec![0, 1, 2, 5, 10, 20],
            models: vec![ModelKind::Dyn, ModelKind::Ind, ModelKind::Sts],
            rank_tolerance: RankTolerance::Default,
            memory_budget_mib: 512.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub samples: usize,
    pub seed: u64,
    /// Frobenius-relative tolerance on the lag covariances at 200 000
    /// samples; widened as `√(200 000 / samples)` for shorter runs.
    pub cross_cov_tolerance: f64,
    pub lags: Vec<i64>,
    pub offsets: Vec<i64>,
    /// Sensor noise variance (R = σ² I).
    pub sensor_noise: f64,
    pub negative_control: bool,
    /// Small model the identities are checked on.
    pub geometry: SphereConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        let s = SuiteSettings::default();
        Self {
            samples: s.samples,
            seed: s.seed,
            cross_cov_tolerance: s.cross_cov_tolerance,
            lags: s.lags,
            offsets: s.orthogonality_offsets,
            sensor_noise: 1.0,
            negative_control: false,
            geometry: oracle_sphere_config(),
        }
    }
}

impl OracleConfig {
    pub fn suite_settings(&self) -> SuiteSettings {
        SuiteSettings {
            samples: self.samples,
            seed: self.seed,
            cross_cov_tolerance: self.cross_cov_tolerance,
            lags: self.lags.clone(),
            orthogonality_offsets: self.offsets.clone(),
            negative_control: self.negative_control,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

impl ExperimentConfig {
    /// Read and validate a config file. Relative import paths are made
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| invalid(format!("invalid config {}: {e}", path.display())))?;
        if let GeometryConfig::Import(imp) = &mut cfg.geometry {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [&mut imp.lead_field, &mut imp.positions, &mut imp.orientations, &mut imp.graph] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let k = &self.analysis.k;
        if k.is_empty() {
            return Err(invalid("analysis.k must not be empty"));
        }
        if k.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!("analysis.k must be strictly increasing, got {k:?}")));
        }
        if self.analysis.models.is_empty() {
            return Err(invalid("analysis.models must not be empty"));
        }
        if !(self.analysis.memory_budget_mib > 0.0) {
            return Err(invalid("analysis.memory_budget_mib must be positive"));
        }
        match self.analysis.rank_tolerance {
            RankTolerance::Relative(t) | RankTolerance::Absolute(t) if !(t >= 0.0 && t.is_finite()) => {
                return Err(invalid(format!("rank tolerance must be finite and nonnegative, got {t}")));
            }
            _ => {}
        }
        match &self.geometry {
            GeometryConfig::Synthetic(s) => s.validate().map_err(|e| invalid(e.to_string()))?,
            GeometryConfig::Import(imp) => {
                for p in [&imp.lead_field, &imp.positions, &imp.orientations, &imp.graph] {
                    if !p.is_file() {
                        return Err(invalid(format!("import file not found: {}", p.display())));
                    }
                }
                if let Some(r) = imp.sphere_radius {
                    if !(r > 0.0) {
                        return Err(invalid("geometry.sphere_radius must be positive"));
                    }
                }
            }
        }
        let o = &self.oracle;
        if o.samples < 100 {
            return Err(invalid("oracle.samples must be at least 100"));
        }
        if !(o.cross_cov_tolerance > 0.0) || !(o.sensor_noise > 0.0) {
            return Err(invalid("oracle tolerances and sensor_noise must be positive"));
        }
        o.geometry.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the serialized config with the output directory cleared,
    /// so the same experiment hashes identically wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            [geometry]
            mode = "synthetic"
            source_count = 50

            [analysis]
            k = [0, 3]
            models = ["dyn"]
            rank_tolerance = { relative = 1e-9 }
            "#,
        )
        .unwrap();
        match &cfg.geometry {
            GeometryConfig::Synthetic(s) => {
                assert_eq!(s.source_count, 50);
                assert_eq!(s.sensor_count, 20);
            }
            GeometryConfig::Import(_) => panic!("wrong mode"),
        }
        assert_eq!(cfg.analysis.rank_tolerance, RankTolerance::Relative(1e-9));
        assert_eq!(cfg.dynamics, DynamicsConfig::default());
    }

    #[test]
    fn k_list_must_increase() {
        let mut cfg = ExperimentConfig::default();
        cfg.analysis.k = vec![0, 2, 2];
        assert!(cfg.validate().is_err());
        cfg.analysis.k = vec![];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("[analysis]\nkk = [1]\n").is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.dynamics.phi = 0.9;
        assert_ne!(a.hash(), b.hash());
    }
}
