//! Shared domain types: source space, sensor array, lead field, noise model.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};
use crate::linalg;

const UNIT_TOL: f64 = 1e-12;

/// Dipole source locations, orientations and the weighted neighbor graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpace {
    positions: Vec<Vector3<f64>>,
    orientations: Vec<Vector3<f64>>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl SourceSpace {
    /// Validates the graph: symmetric with identical distances, positive
    /// distances, no self-loops, unit orientations. Nothing is repaired.
    pub fn new(
        positions: Vec<Vector3<f64>>,
        orientations: Vec<Vector3<f64>>,
        neighbors: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        let p = positions.len();
        if orientations.len() != p || neighbors.len() != p {
            return Err(Error::InvalidSourceSpace(format!(
                "{} positions, {} orientations, {} neighbor lists",
                p,
                orientations.len(),
                neighbors.len()
            )));
        }
        for (i, pos) in positions.iter().enumerate() {
            if !pos.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidSourceSpace(format!(
                    "position {i} is not finite"
                )));
            }
        }
        for (i, o) in orientations.iter().enumerate() {
            if (o.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidSourceSpace(format!(
                    "orientation {i} has norm {}",
                    o.norm()
                )));
            }
        }
        for (i, list) in neighbors.iter().enumerate() {
            for (pos, &(j, d)) in list.iter().enumerate() {
                if j >= p {
                    return Err(Error::InvalidSourceSpace(format!(
                        "neighbor {j} of source {i} out of range"
                    )));
                }
                if j == i {
                    return Err(Error::InvalidSourceSpace(format!("self-loop at {i}")));
                }
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Error::InvalidSourceSpace(format!(
                        "distance {d} between {i} and {j} is not strictly positive"
                    )));
                }
                if list[..pos].iter().any(|&(k, _)| k == j) {
                    return Err(Error::InvalidSourceSpace(format!(
                        "duplicate neighbor {j} of source {i}"
                    )));
                }
                match neighbors[j].iter().find(|&&(k, _)| k == i) {
                    Some(&(_, back)) if back == d => {}
                    Some(&(_, back)) => {
                        return Err(Error::InvalidSourceSpace(format!(
                            "asymmetric distance between {i} and {j}: {d} vs {back}"
                        )))
                    }
                    None => {
                        return Err(Error::InvalidSourceSpace(format!(
                            "{j} is a neighbor of {i} but not vice versa"
                        )))
                    }
                }
            }
        }
        Ok(Self {
            positions,
            orientations,
            neighbors,
        })
    }

    /// Build from an undirected edge list. Each edge may appear once or in
    /// both directions; repeated edges must agree on distance.
    pub fn from_edges(
        positions: Vec<Vector3<f64>>,
        orientations: Vec<Vector3<f64>>,
        edges: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let p = positions.len();
        let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p];
        for &(i, j, d) in edges {
            if i >= p || j >= p {
                return Err(Error::InvalidSourceSpace(format!(
                    "edge ({i}, {j}) out of range for {p} sources"
                )));
            }
            if i == j {
                return Err(Error::InvalidSourceSpace(format!("self-loop at {i}")));
            }
            match neighbors[i].iter().find(|&&(k, _)| k == j) {
                Some(&(_, prev)) if prev == d => continue,
                Some(&(_, prev)) => {
                    return Err(Error::InvalidSourceSpace(format!(
                        "conflicting distances for edge ({i}, {j}): {prev} vs {d}"
                    )))
                }
                None => {
                    neighbors[i].push((j, d));
                    neighbors[j].push((i, d));
                }
            }
        }
        Self::new(positions, orientations, neighbors)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn orientations(&self) -> &[Vector3<f64>] {
        &self.orientations
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Undirected edges with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, list) in self.neighbors.iter().enumerate() {
            for &(j, d) in list {
                if i < j {
                    out.push((i, j, d));
                }
            }
        }
        out
    }

    pub fn mean_neighbor_count(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.neighbors.iter().map(Vec::len).sum::<usize>() as f64 / self.len() as f64
    }

    /// Mean distance over all stored edges, `None` for an empty graph.
    pub fn mean_neighbor_distance(&self) -> Option<f64> {
        let edges = self.edges();
        if edges.is_empty() {
            None
        } else {
            Some(edges.iter().map(|e| e.2).sum::<f64>() / edges.len() as f64)
        }
    }

    /// Same sources with the index order permuted: new source `a` is old
    /// source `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let p = self.len();
        if perm.len() != p {
            return Err(Error::dim("permutation", p, perm.len()));
        }
        let mut inverse = vec![usize::MAX; p];
        for (a, &old) in perm.iter().enumerate() {
            inverse[old] = a;
        }
        let positions = perm.iter().map(|&o| self.positions[o]).collect();
        let orientations = perm.iter().map(|&o| self.orientations[o]).collect();
        let neighbors = perm
            .iter()
            .map(|&o| {
                self.neighbors[o]
                    .iter()
                    .map(|&(j, d)| (inverse[j], d))
                    .collect()
            })
            .collect();
        Self::new(positions, orientations, neighbors)
    }
}

/// Point sensors with a sensing direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorArray {
    positions: Vec<Vector3<f64>>,
    orientations: Vec<Vector3<f64>>,
}

impl SensorArray {
    pub fn new(positions: Vec<Vector3<f64>>, orientations: Vec<Vector3<f64>>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidSensorArray("at least one sensor required".into()));
        }
        if positions.len() != orientations.len() {
            return Err(Error::InvalidSensorArray(format!(
                "{} positions but {} orientations",
                positions.len(),
                orientations.len()
            )));
        }
        for (i, o) in orientations.iter().enumerate() {
            if (o.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidSensorArray(format!(
                    "orientation {i} has norm {}",
                    o.norm()
                )));
            }
        }
        Ok(Self {
            positions,
            orientations,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn orientations(&self) -> &[Vector3<f64>] {
        &self.orientations
    }
}

/// The n×p static gain matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadField {
    gain: DMatrix<f64>,
}

impl LeadField {
    pub fn new(gain: DMatrix<f64>) -> Result<Self> {
        linalg::check_finite(&gain, "lead field")?;
        Ok(Self { gain })
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn into_gain(self) -> DMatrix<f64> {
        self.gain
    }

    pub fn sensor_count(&self) -> usize {
        self.gain.nrows()
    }

    pub fn source_count(&self) -> usize {
        self.gain.ncols()
    }

    /// Euclidean norm of each column (static sensitivity).
    pub fn column_norms(&self) -> Vec<f64> {
        self.gain.column_iter().map(|c| c.norm()).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            gain: &self.gain * c,
        }
    }
}

/// Sensor noise covariance R and per-source input variances ν.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    sensor_cov: DMatrix<f64>,
    input_variances: Vec<f64>,
}

impl NoiseModel {
    pub fn new(sensor_cov: DMatrix<f64>, input_variances: Vec<f64>) -> Result<Self> {
        if !linalg::is_symmetric(&sensor_cov, 1e-12) {
            return Err(Error::param("sensor_cov", "not symmetric within 1e-12"));
        }
        linalg::cholesky(&sensor_cov, "sensor covariance")?;
        if let Some(i) = input_variances.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::param(
                "nu",
                format!("input variance {i} is {}", input_variances[i]),
            ));
        }
        Ok(Self {
            sensor_cov,
            input_variances,
        })
    }

    /// R = σ²·I with ν_i = 1 − φ² for every source.
    pub fn isotropic(n: usize, sigma2: f64, p: usize, phi: f64) -> Result<Self> {
        Self::new(
            DMatrix::identity(n, n) * sigma2,
            vec![1.0 - phi * phi; p],
        )
    }

    pub fn sensor_cov(&self) -> &DMatrix<f64> {
        &self.sensor_cov
    }

    pub fn input_variances(&self) -> &[f64] {
        &self.input_variances
    }
}

/// Stack 3-vectors as the rows of a p×3 matrix.
pub fn vectors_to_matrix(v: &[Vector3<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(v.len(), 3, |i, j| v[i][j])
}

pub fn matrix_to_vectors(m: &DMatrix<f64>) -> Result<Vec<Vector3<f64>>> {
    if m.ncols() != 3 {
        return Err(Error::dim("3-vector matrix", "3 columns", m.ncols()));
    }
    Ok(m.row_iter()
        .map(|r| Vector3::new(r[0], r[1], r[2]))
        .collect())
}

/// Write the graph as `i,j,distance` lines under a header, one line per
/// undirected edge.
pub fn save_graph_csv(src: &SourceSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("i,j,distance\n");
    for (i, j, d) in src.edges() {
        out.push_str(&format!("{i},{j},{d:e}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_graph_csv(path: impl AsRef<Path>) -> Result<Vec<(usize, usize, f64)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('i') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
        }
        let i = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad index {:?}", fields[0])))?;
        let j = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("bad index {:?}", fields[1])))?;
        let d = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("bad distance {:?}", fields[2])))?;
        edges.push((i, j, d));
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(p: usize) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        (
            (0..p).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect(),
            vec![Vector3::x(); p],
        )
    }

    #[test]
    fn asymmetric_graph_rejected() {
        let (pos, ori) = line(2);
        let err = SourceSpace::new(pos.clone(), ori.clone(), vec![vec![(1, 1.0)], vec![]]);
        assert!(matches!(err, Err(Error::InvalidSourceSpace(_))));
        let err = SourceSpace::new(pos, ori, vec![vec![(1, 1.0)], vec![(0, 2.0)]]);
        assert!(err.is_err());
    }

    #[test]
    fn self_loop_and_bad_distance_rejected() {
        let (pos, ori) = line(2);
        assert!(SourceSpace::new(pos.clone(), ori.clone(), vec![vec![(0, 1.0)], vec![]]).is_err());
        assert!(SourceSpace::from_edges(pos.clone(), ori.clone(), &[(0, 1, 0.0)]).is_err());
        assert!(SourceSpace::from_edges(pos, ori, &[(0, 1, 1.0), (1, 0, 1.5)]).is_err());
    }

    #[test]
    fn orientation_must_be_unit() {
        let (pos, _) = line(1);
        let err = SourceSpace::new(pos, vec![Vector3::new(1.0, 1.0, 0.0)], vec![vec![]]);
        assert!(err.is_err());
    }

    #[test]
    fn edges_round_trip_through_csv() {
        let (pos, ori) = line(3);
        let src = SourceSpace::from_edges(pos.clone(), ori.clone(), &[(0, 1, 1.0), (1, 2, 2.5)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        save_graph_csv(&src, &path).unwrap();
        let edges = load_graph_csv(&path).unwrap();
        let back = SourceSpace::from_edges(pos, ori, &edges).unwrap();
        assert_eq!(back, src);
    }

    #[test]
    fn permutation_keeps_graph_consistent() {
        let (pos, ori) = line(3);
        let src = SourceSpace::from_edges(pos, ori, &[(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
        let perm = src.permuted(&[2, 0, 1]).unwrap();
        // new 0 is old 2, whose only neighbor was old 1 = new 2
        assert_eq!(perm.neighbors(0), &[(2, 2.0)]);
    }

    #[test]
    fn noise_model_requires_spd_and_positive_nu() {
        assert!(NoiseModel::new(DMatrix::identity(2, 2), vec![1.0, 0.5]).is_ok());
        assert!(NoiseModel::new(DMatrix::zeros(2, 2), vec![1.0]).is_err());
        assert!(NoiseModel::new(DMatrix::identity(2, 2), vec![0.0]).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(NoiseModel::new(asym, vec![1.0]).is_err());
    }
}
