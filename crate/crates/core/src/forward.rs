//! Synthetic spherical-head geometry and the MEG lead field of a current
//! dipole in a homogeneous conducting sphere.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LeadField, SensorArray, SourceSpace};

/// μ₀ / 4π in T·m/A.
pub const MU0_OVER_4PI: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrientationRule {
    /// Random direction in the plane tangent to the source's shell.
    Tangential,
    /// Normal to the local (spherical) shell, i.e. radial. Such sources are
    /// magnetically silent in this forward model.
    NormalToLocalSurface,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborRadius {
    /// Absolute radius in meters.
    Fixed(f64),
    /// Multiple of the mean nearest-neighbor spacing of the generated sources.
    SpacingMultiple(f64),
}

/// Parameters of the synthetic spherical head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphereConfig {
    pub sphere_radius: f64,
    pub sensor_shell_radius: f64,
    pub sensor_count: usize,
    pub source_count: usize,
    /// Radial fractions in (0, 1). With exactly `source_count` entries each
    /// source gets its own fraction on one shared lattice; otherwise the
    /// entries are shells and sources are split across them in proportion
    /// to shell area.
    pub depth_profile: Vec<f64>,
    pub orientation_rule: OrientationRule,
    pub neighbor_radius: NeighborRadius,
    pub seed: u64,
}

impl Default for SphereConfig {
    fn default() -> Self {
        Self {
            sphere_radius: 0.09,
            sensor_shell_radius: 0.11,
            sensor_count: 20,
            source_count: 400,
            depth_profile: vec![0.55, 0.65, 0.75, 0.85],
            orientation_rule: OrientationRule::Tangential,
            neighbor_radius: NeighborRadius::SpacingMultiple(1.5),
            seed: 1,
        }
    }
}

impl SphereConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sphere_radius > 0.0) {
            return Err(Error::InvalidConfig("sphere_radius must be positive".into()));
        }
        if !(self.sensor_shell_radius > self.sphere_radius) {
            return Err(Error::InvalidConfig(
                "sensor_shell_radius must exceed sphere_radius".into(),
            ));
        }
        if self.sensor_count == 0 || self.source_count == 0 {
            return Err(Error::InvalidConfig(
                "sensor_count and source_count must be at least 1".into(),
            ));
        }
        if self.depth_profile.is_empty() {
            return Err(Error::InvalidConfig("depth_profile is empty".into()));
        }
        if let Some(f) = self.depth_profile.iter().find(|&&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::InvalidConfig(format!(
                "depth fraction {f} is not strictly inside (0, 1)"
            )));
        }
        let r = match self.neighbor_radius {
            NeighborRadius::Fixed(r) | NeighborRadius::SpacingMultiple(r) => r,
        };
        if !(r > 0.0) {
            return Err(Error::InvalidConfig("neighbor radius must be positive".into()));
        }
        Ok(())
    }

    pub fn sphere(&self) -> Sphere {
        Sphere {
            center: Vector3::zeros(),
            radius: self.sphere_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl Sphere {
    /// `radius − |x − center|`.
    pub fn depth(&self, x: &Vector3<f64>) -> f64 {
        self.radius - (x - self.center).norm()
    }
}

/// Generated geometry plus diagnostics.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub sources: SourceSpace,
    pub sensors: SensorArray,
    pub sphere: Sphere,
    pub neighbor_radius: f64,
    pub warnings: Vec<String>,
}

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Fibonacci lattice of `m` unit vectors on the upper hemisphere (z > 0).
fn hemisphere_lattice(m: usize, rotation: f64) -> Vec<Vector3<f64>> {
    (0..m)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / m as f64;
            let rho = (1.0 - z * z).sqrt();
            let az = i as f64 * GOLDEN_ANGLE + rotation;
            Vector3::new(rho * az.cos(), rho * az.sin(), z)
        })
        .collect()
}

/// Orthonormal pair spanning the plane perpendicular to unit vector `u`.
fn tangent_basis(u: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if u.z.abs() < 0.9 {
        Vector3::z()
    } else {
        Vector3::x()
    };
    let e1 = u.cross(&helper).normalize();
    let e2 = u.cross(&e1);
    (e1, e2)
}

fn jitter(u: &Vector3<f64>, amplitude: f64, rng: &mut ChaCha20Rng) -> Vector3<f64> {
    let (e1, e2) = tangent_basis(u);
    let a = amplitude * (rng.random::<f64>() * 2.0 - 1.0);
    let b = amplitude * (rng.random::<f64>() * 2.0 - 1.0);
    let v = (u + e1 * a + e2 * b).normalize();
    // keep the jittered point on the upper hemisphere
    if v.z > 0.0 {
        v
    } else {
        *u
    }
}

/// Link every pair of sources closer than `radius`.
pub fn neighbor_graph(positions: &[Vector3<f64>], radius: f64) -> Vec<Vec<(usize, f64)>> {
    let p = positions.len();
    let mut neighbors = vec![Vec::new(); p];
    for i in 0..p {
        for j in (i + 1)..p {
            let d = (positions[i] - positions[j]).norm();
            if d < radius && d > 0.0 {
                neighbors[i].push((j, d));
                neighbors[j].push((i, d));
            }
        }
    }
    neighbors
}

/// Mean distance from each point to its nearest other point.
pub fn mean_nearest_spacing(positions: &[Vector3<f64>]) -> Option<f64> {
    if positions.len() < 2 {
        return None;
    }
    let total: f64 = positions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            positions
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| (a - b).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Some(total / positions.len() as f64)
}

/// Split `p` sources across shells in proportion to shell area, so that the
/// spacing is roughly the same at every depth. Largest remainders get the
/// leftover sources.
fn shell_counts(fractions: &[f64], p: usize) -> Vec<usize> {
    let total: f64 = fractions.iter().map(|f| f * f).sum();
    let quotas: Vec<f64> = fractions.iter().map(|f| p as f64 * f * f / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = p - counts.iter().sum::<usize>();
    for &s in order.iter().take(missing) {
        counts[s] += 1;
    }
    counts
}

pub fn build_sphere_geometry(cfg: &SphereConfig) -> Result<Geometry> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let sensor_dirs = hemisphere_lattice(cfg.sensor_count, 0.0);
    let sensors = SensorArray::new(
        sensor_dirs
            .iter()
            .map(|u| u * cfg.sensor_shell_radius)
            .collect(),
        sensor_dirs.clone(),
    )?;

    let p = cfg.source_count;
    let mut dirs_and_fracs: Vec<(Vector3<f64>, f64)> = Vec::with_capacity(p);
    if cfg.depth_profile.len() == p && p > 1 {
        let rotation = rng.random::<f64>() * 2.0 * PI;
        let amp = 0.25 * (2.0 * PI / p as f64).sqrt();
        for (u, &f) in hemisphere_lattice(p, rotation).iter().zip(&cfg.depth_profile) {
            dirs_and_fracs.push((jitter(u, amp, &mut rng), f));
        }
    } else {
        for (&f, m) in cfg.depth_profile.iter().zip(shell_counts(&cfg.depth_profile, p)) {
            if m == 0 {
                continue;
            }
            let rotation = rng.random::<f64>() * 2.0 * PI;
            let amp = 0.25 * (2.0 * PI / m as f64).sqrt();
            for u in hemisphere_lattice(m, rotation) {
                dirs_and_fracs.push((jitter(&u, amp, &mut rng), f));
            }
        }
    }

    let positions: Vec<Vector3<f64>> = dirs_and_fracs
        .iter()
        .map(|(u, f)| u * (f * cfg.sphere_radius))
        .collect();
    let orientations: Vec<Vector3<f64>> = dirs_and_fracs
        .iter()
        .map(|(u, _)| match cfg.orientation_rule {
            OrientationRule::NormalToLocalSurface => *u,
            OrientationRule::Tangential => {
                let (e1, e2) = tangent_basis(u);
                let alpha = rng.random::<f64>() * 2.0 * PI;
                (e1 * alpha.cos() + e2 * alpha.sin()).normalize()
            }
        })
        .collect();

    let radius = match cfg.neighbor_radius {
        NeighborRadius::Fixed(r) => r,
        NeighborRadius::SpacingMultiple(f) => {
            f * mean_nearest_spacing(&positions).unwrap_or(cfg.sphere_radius)
        }
    };
    let neighbors = neighbor_graph(&positions, radius);
    let mut warnings = Vec::new();
    if neighbors.iter().all(Vec::is_empty) {
        warnings.push(format!(
            "neighbor radius {radius:.4e} m links no sources; the graph is empty"
        ));
    }
    let sources = SourceSpace::new(positions, orientations, neighbors)?;

    Ok(Geometry {
        sources,
        sensors,
        sphere: cfg.sphere(),
        neighbor_radius: radius,
        warnings,
    })
}

/// Magnetic field at `r` of a current dipole `q` located at `r0`, both
/// relative to the center of a homogeneous conducting sphere.
///
/// Volume currents are accounted for in closed form; the result does not
/// depend on the sphere radius or conductivity.
pub fn sphere_dipole_field(r: &Vector3<f64>, r0: &Vector3<f64>, q: &Vector3<f64>) -> Vector3<f64> {
    let a_vec = r - r0;
    let a = a_vec.norm();
    let rn = r.norm();
    let a_dot_r = a_vec.dot(r);
    let f = a * (rn * a + rn * rn - r0.dot(r));
    let grad_f = r * (a * a / rn + a_dot_r / a + 2.0 * a + 2.0 * rn)
        - r0 * (a + 2.0 * rn + a_dot_r / a);
    let q_cross = q.cross(r0);
    (q_cross * f - grad_f * q_cross.dot(r)) * (MU0_OVER_4PI / (f * f))
}

/// Entry (s, i) is the field of a unit dipole at source i, along its
/// orientation, projected on sensor s's sensing direction.
pub fn compute_lead_field(
    src: &SourceSpace,
    sens: &SensorArray,
    sphere: &Sphere,
) -> Result<LeadField> {
    for (i, pos) in src.positions().iter().enumerate() {
        let fraction = (pos - sphere.center).norm() / sphere.radius;
        if !(fraction < 1.0) {
            return Err(Error::SourceOutsideSphere { index: i, fraction });
        }
    }
    for (s, pos) in sens.positions().iter().enumerate() {
        if !((pos - sphere.center).norm() > sphere.radius) {
            return Err(Error::SensorInsideSphere { index: s });
        }
    }

    let n = sens.len();
    let columns: Vec<Vec<f64>> = src
        .positions()
        .par_iter()
        .zip(src.orientations().par_iter())
        .map(|(r0, q)| {
            let r0 = r0 - sphere.center;
            sens.positions()
                .iter()
                .zip(sens.orientations())
                .map(|(r, o)| sphere_dipole_field(&(r - sphere.center), &r0, q).dot(o))
                .collect()
        })
        .collect();
    let gain = DMatrix::from_fn(n, src.len(), |s, i| columns[i][s]);
    LeadField::new(gain)
}
