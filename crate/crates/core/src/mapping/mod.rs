//! Stacked mappings from the source vector at one instant to the
//! measurements in the window `[t − k, t + k]`.

mod assemble;
mod registry;
mod temporal;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::LeadField;

pub use assemble::{assemble_dyn, assemble_ind, assemble_sts};
pub use registry::{
    DynModel, IndModel, MappingModel, ModelContext, ModelFactory, ModelRegistry, StsModel,
    StsParams,
};
pub use temporal::{build_sts_temporal_cov, TemporalCov};

/// Which source prior produced a mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Nearest-neighbor spatiotemporal dynamics.
    Dyn,
    /// Sources independent across time.
    Ind,
    /// Space-time separable covariance.
    Sts,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dyn => "dyn",
            ModelKind::Ind => "ind",
            ModelKind::Sts => "sts",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dyn" => Ok(ModelKind::Dyn),
            "ind" => Ok(ModelKind::Ind),
            "sts" => Ok(ModelKind::Sts),
            _ => Err(Error::UnknownModel(s.to_string())),
        }
    }
}

/// Placement of an STS window inside its temporal horizon (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StsWindow {
    pub center: usize,
    pub horizon: usize,
}

/// Blocks `P_{t+j,t}` for `j = −k..=k`, stored separately and stacked on
/// demand (past offsets on top).
#[derive(Debug, Clone)]
pub struct DynamicMapping {
    blocks: Vec<DMatrix<f64>>,
    kind: ModelKind,
    k: usize,
    sts_window: Option<StsWindow>,
}

impl DynamicMapping {
    pub(crate) fn new(
        blocks: Vec<DMatrix<f64>>,
        kind: ModelKind,
        k: usize,
        sts_window: Option<StsWindow>,
    ) -> Self {
        debug_assert_eq!(blocks.len(), 2 * k + 1);
        Self {
            blocks,
            kind,
            k,
            sts_window,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sts_window(&self) -> Option<StsWindow> {
        self.sts_window
    }

    pub fn sensor_count(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn source_count(&self) -> usize {
        self.blocks[0].ncols()
    }

    /// Shape of the stacked matrix.
    pub fn stacked_shape(&self) -> (usize, usize) {
        ((2 * self.k + 1) * self.sensor_count(), self.source_count())
    }

    /// All blocks ordered by offset `−k..=k`.
    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, offset: i64) -> Result<&DMatrix<f64>> {
        if offset.unsigned_abs() as usize > self.k {
            return Err(Error::OffsetOutOfRange { offset, k: self.k });
        }
        Ok(&self.blocks[(offset + self.k as i64) as usize])
    }

    pub fn center_block(&self) -> &DMatrix<f64> {
        &self.blocks[self.k]
    }

    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.sensor_count();
        let (rows, cols) = self.stacked_shape();
        let mut out = DMatrix::zeros(rows, cols);
        for (b, block) in self.blocks.iter().enumerate() {
            out.rows_mut(b * n, n).copy_from(block);
        }
        out
    }
}

/// `X · Σ_cross · Σ_t⁻¹`: the block that makes the projection error of a
/// measurement uncorrelated with the present source vector, given
/// `Σ_cross = E[β_{t+j} β_tᵀ]` and `Σ_t = E[β_t β_tᵀ]`.
pub fn projection_matrix_general(
    x: &LeadField,
    cross_cov: &DMatrix<f64>,
    cov_t: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = x.source_count();
    if cross_cov.shape() != (p, p) || cov_t.shape() != (p, p) {
        return Err(Error::dim(
            "projection covariances",
            format!("{p}x{p}"),
            format!("{:?} and {:?}", cross_cov.shape(), cov_t.shape()),
        ));
    }
    let chol = linalg::cholesky(cov_t, "source covariance at t").map_err(|_| Error::Singular {
        what: "source covariance at t",
        condition: f64::INFINITY,
    })?;
    Ok(linalg::right_solve_spd(&chol, &(x.gain() * cross_cov)))
}
