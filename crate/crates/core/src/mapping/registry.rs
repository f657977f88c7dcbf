//! Source priors as interchangeable strategies, registered by name.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    assemble_dyn, assemble_ind, assemble_sts, build_sts_temporal_cov, DynamicMapping, ModelKind,
};
use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::model::LeadField;

/// A Gaussian source prior that yields a stacked mapping for any `k`.
pub trait MappingModel: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn name(&self) -> &str {
        self.kind().as_str()
    }

    fn assemble(&self, x: &LeadField, k: usize) -> Result<DynamicMapping>;

    /// `(E[β_{t+lag} β_tᵀ], E[β_t β_tᵀ])` under this prior, for the window
    /// used at truncation `k`.
    fn lag_covariances(&self, k: usize, lag: i64) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
}

/// Temporal kernel settings for the space-time separable prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StsParams {
    /// Sampling interval in seconds.
    pub delta: f64,
    /// Kernel scale in Hz.
    pub psi: f64,
    /// Samples added on each side of the window when `horizon` is unset.
    #[serde(default = "default_padding")]
    pub padding: usize,
    /// Fixed horizon T; defaults to `2k + 1 + 2·padding`.
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Fixed 1-based window center t; defaults to the middle of `[1, T]`.
    #[serde(default)]
    pub center: Option<usize>,
}

fn default_padding() -> usize {
    10
}

impl Default for StsParams {
    fn default() -> Self {
        Self {
            delta: 4e-3,
            psi: 204.8,
            padding: default_padding(),
            horizon: None,
            center: None,
        }
    }
}

impl StsParams {
    /// `(t, T)` for truncation `k`.
    pub fn window(&self, k: usize) -> (usize, usize) {
        let horizon = self.horizon.unwrap_or(2 * k + 1 + 2 * self.padding);
        let center = self.center.unwrap_or(horizon.div_ceil(2));
        (center, horizon)
    }
}

/// Everything a factory may need to instantiate a model.
#[derive(Clone, Default)]
pub struct ModelContext {
    pub dynamics: Option<Arc<DynamicsModel>>,
    pub sts: StsParams,
}

impl ModelContext {
    /// Spatial covariance shared by all priors: the dynamic steady state
    /// when available, identity otherwise.
    fn spatial_cov(&self, p: usize) -> DMatrix<f64> {
        match &self.dynamics {
            Some(d) => d.steady_cov().clone(),
            None => DMatrix::identity(p, p),
        }
    }
}

pub struct DynModel {
    dynamics: Arc<DynamicsModel>,
}

impl DynModel {
    pub fn new(dynamics: Arc<DynamicsModel>) -> Self {
        Self { dynamics }
    }
}

impl MappingModel for DynModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Dyn
    }

    fn assemble(&self, x: &LeadField, k: usize) -> Result<DynamicMapping> {
        assemble_dyn(x, &self.dynamics, k)
    }

    fn lag_covariances(&self, _k: usize, lag: i64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((
            self.dynamics.lag_covariance(lag),
            self.dynamics.steady_cov().clone(),
        ))
    }
}

pub struct IndModel {
    spatial_cov: DMatrix<f64>,
}

impl IndModel {
    pub fn new(spatial_cov: DMatrix<f64>) -> Self {
        Self { spatial_cov }
    }
}

impl MappingModel for IndModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Ind
    }

    fn assemble(&self, x: &LeadField, k: usize) -> Result<DynamicMapping> {
        assemble_ind(x, k)
    }

    fn lag_covariances(&self, _k: usize, lag: i64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let p = self.spatial_cov.nrows();
        let cross = if lag == 0 {
            self.spatial_cov.clone()
        } else {
            DMatrix::zeros(p, p)
        };
        Ok((cross, self.spatial_cov.clone()))
    }
}

pub struct StsModel {
    params: StsParams,
    spatial_cov: DMatrix<f64>,
}

impl StsModel {
    pub fn new(params: StsParams, spatial_cov: DMatrix<f64>) -> Self {
        Self {
            params,
            spatial_cov,
        }
    }

    pub fn params(&self) -> &StsParams {
        &self.params
    }
}

impl MappingModel for StsModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Sts
    }

    fn assemble(&self, x: &LeadField, k: usize) -> Result<DynamicMapping> {
        let (t, horizon) = self.params.window(k);
        let gamma = build_sts_temporal_cov(horizon, self.params.delta, self.params.psi)?;
        assemble_sts(x, &gamma, t, k)
    }

    fn lag_covariances(&self, k: usize, lag: i64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (t, horizon) = self.params.window(k);
        let a = t as i64 + lag;
        if a < 1 || a > horizon as i64 {
            return Err(Error::WindowOutOfRange {
                lo: a,
                hi: a,
                horizon,
            });
        }
        let gamma = build_sts_temporal_cov(horizon, self.params.delta, self.params.psi)?;
        Ok((
            &self.spatial_cov * gamma.get(a as usize, t),
            &self.spatial_cov * gamma.get(t, t),
        ))
    }
}

pub type ModelFactory =
    Box<dyn Fn(&ModelContext, usize) -> Result<Box<dyn MappingModel>> + Send + Sync>;

/// Name → factory table for source priors.
pub struct ModelRegistry {
    factories: BTreeMap<String, ModelFactory>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Registry with `dyn`, `ind` and `sts`.
    pub fn with_builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("dyn", |ctx: &ModelContext, _p: usize| {
            let dynamics = ctx.dynamics.clone().ok_or_else(|| {
                Error::InvalidConfig("the dyn model needs a dynamics section".into())
            })?;
            Ok(Box::new(DynModel::new(dynamics)) as Box<dyn MappingModel>)
        })
        .expect("fresh registry");
        reg.register("ind", |ctx: &ModelContext, p: usize| {
            Ok(Box::new(IndModel::new(ctx.spatial_cov(p))) as Box<dyn MappingModel>)
        })
        .expect("fresh registry");
        reg.register("sts", |ctx: &ModelContext, p: usize| {
            Ok(Box::new(StsModel::new(ctx.sts, ctx.spatial_cov(p))) as Box<dyn MappingModel>)
        })
        .expect("fresh registry");
        reg
    }

    pub fn register<F>(&mut self, name: &str, factory: F) -> Result<()>
    where
        F: Fn(&ModelContext, usize) -> Result<Box<dyn MappingModel>> + Send + Sync + 'static,
    {
        let key = name.to_ascii_lowercase();
        if self.factories.contains_key(&key) {
            return Err(Error::DuplicateModel(key));
        }
        self.factories.insert(key, Box::new(factory));
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    /// Instantiate model `name` for `p` sources.
    pub fn create(&self, name: &str, ctx: &ModelContext, p: usize) -> Result<Box<dyn MappingModel>> {
        let factory = self
            .factories
            .get(&name.to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownModel(name.to_string()))?;
        factory(ctx, p)
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::projection_matrix_general;
    use crate::transition::SparseTransition;

    fn context() -> (LeadField, ModelContext) {
        let x = LeadField::new(DMatrix::from_fn(2, 3, |i, j| 1.0 + i as f64 - 0.3 * j as f64)).unwrap();
        let f = SparseTransition::from_rows(vec![
            vec![(0, 0.4), (1, 0.4)],
            vec![(1, 0.4), (0, 0.2), (2, 0.2)],
            vec![(2, 0.4), (1, 0.4)],
        ]);
        let dynamics = DynamicsModel::from_parts(f, 0.8, vec![0.3, 0.5, 0.7]).unwrap();
        (
            x,
            ModelContext {
                dynamics: Some(Arc::new(dynamics)),
                sts: StsParams::default(),
            },
        )
    }

    #[test]
    fn builtin_names() {
        let reg = ModelRegistry::with_builtin();
        assert_eq!(reg.names().collect::<Vec<_>>(), ["dyn", "ind", "sts"]);
    }

    #[test]
    fn unknown_and_duplicate_names() {
        let mut reg = ModelRegistry::with_builtin();
        let (_, ctx) = context();
        assert!(matches!(reg.create("kalman", &ctx, 3), Err(Error::UnknownModel(_))));
        let dup = reg.register("IND", |ctx: &ModelContext, p: usize| {
            Ok(Box::new(IndModel::new(ctx.spatial_cov(p))) as Box<dyn MappingModel>)
        });
        assert!(matches!(dup, Err(Error::DuplicateModel(_))));
    }

    #[test]
    fn dyn_requires_dynamics() {
        let reg = ModelRegistry::with_builtin();
        assert!(reg.create("dyn", &ModelContext::default(), 3).is_err());
        assert!(reg.create("ind", &ModelContext::default(), 3).is_ok());
    }

    #[test]
    fn every_model_is_its_own_projection() {
        let (x, ctx) = context();
        let reg = ModelRegistry::with_builtin();
        for name in ["dyn", "ind", "sts"] {
            let model = reg.create(name, &ctx, 3).unwrap();
            let k = 2;
            let mapping = model.assemble(&x, k).unwrap();
            assert_eq!(mapping.kind().as_str(), name);
            for lag in -(k as i64)..=(k as i64) {
                let (cross, cov) = model.lag_covariances(k, lag).unwrap();
                let p = projection_matrix_general(&x, &cross, &cov).unwrap();
                let block = mapping.block(lag).unwrap();
                let err = (block - &p).norm();
                assert!(err <= 1e-10 * x.gain().norm(), "{name} lag {lag}: {err}");
            }
        }
    }

    #[test]
    fn sts_window_defaults_to_center() {
        let params = StsParams::default();
        assert_eq!(params.window(0), (11, 21));
        assert_eq!(params.window(2), (13, 25));
        let fixed = StsParams {
            horizon: Some(9),
            center: Some(4),
            ..params
        };
        assert_eq!(fixed.window(3), (4, 9));
    }
}
