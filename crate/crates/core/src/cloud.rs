//! Point cloud container: 3D positions plus optional per-point feature channels.

use ndarray::{Array2, ArrayView2, Axis};
use thiserror::Error;

/// Tolerance for the unit-norm check on feature rows.
pub const FEATURE_NORM_TOL: f64 = 1e-6;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CloudError {
    #[error("point cloud needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("points must be an n x 3 matrix, got n x {0}")]
    BadPointShape(usize),
    #[error("non-finite coordinate at point {0}")]
    NonFiniteCoordinate(usize),
    #[error("feature matrix has {rows} rows but cloud has {points} points")]
    FeatureRowMismatch { rows: usize, points: usize },
    #[error("non-finite feature value at row {0}")]
    NonFiniteFeature(usize),
    #[error("feature row {row} has L2 norm {norm}, expected 1 within {tol}")]
    NotUnitNorm { row: usize, norm: f64, tol: f64 },
}

/// A point cloud in scene units. Feature channels, when present, carry one
/// unit-L2-norm row per point: `geom_features` for geometric descriptors,
/// `sem_features` for semantic embeddings.
///
/// Immutable after construction; cheap to clone only when necessary.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
    geom_features: Option<Array2<f64>>,
    sem_features: Option<Array2<f64>>,
}

fn check_feature_matrix(features: &Array2<f64>, n: usize) -> Result<(), CloudError> {
    if features.nrows() != n {
        return Err(CloudError::FeatureRowMismatch {
            rows: features.nrows(),
            points: n,
        });
    }
    for (i, row) in features.axis_iter(Axis(0)).enumerate() {
        let mut sq = 0.0;
        for &v in row {
            if !v.is_finite() {
                return Err(CloudError::NonFiniteFeature(i));
            }
            sq += v * v;
        }
        let norm = sq.sqrt();
        if (norm - 1.0).abs() > FEATURE_NORM_TOL {
            return Err(CloudError::NotUnitNorm {
                row: i,
                norm,
                tol: FEATURE_NORM_TOL,
            });
        }
    }
    Ok(())
}

impl PointCloud {
    /// Build a cloud out of an n x 3 coordinate matrix.
    pub fn new(points: Array2<f64>) -> Result<Self, CloudError> {
        if points.ncols() != 3 {
            return Err(CloudError::BadPointShape(points.ncols()));
        }
        if points.nrows() < 3 {
            return Err(CloudError::TooFewPoints(points.nrows()));
        }
        for (i, row) in points.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(CloudError::NonFiniteCoordinate(i));
            }
        }
        Ok(Self {
            points,
            geom_features: None,
            sem_features: None,
        })
    }

    /// Attach geometric descriptor rows (must be unit L2 norm).
    pub fn with_geom_features(mut self, features: Array2<f64>) -> Result<Self, CloudError> {
        check_feature_matrix(&features, self.len())?;
        self.geom_features = Some(features);
        Ok(self)
    }

    /// Attach semantic feature rows (must be unit L2 norm).
    pub fn with_sem_features(mut self, features: Array2<f64>) -> Result<Self, CloudError> {
        check_feature_matrix(&features, self.len())?;
        self.sem_features = Some(features);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn geom_features(&self) -> Option<ArrayView2<'_, f64>> {
        self.geom_features.as_ref().map(|f| f.view())
    }

    pub fn sem_features(&self) -> Option<ArrayView2<'_, f64>> {
        self.sem_features.as_ref().map(|f| f.view())
    }

    /// Replace the coordinates, keeping feature channels untouched.
    /// The new matrix must have the same number of rows.
    pub(crate) fn with_points(&self, points: Array2<f64>) -> Self {
        assert_eq!(points.nrows(), self.len());
        assert_eq!(points.ncols(), 3);
        Self {
            points,
            geom_features: self.geom_features.clone(),
            sem_features: self.sem_features.clone(),
        }
    }

    /// Select a subset of points (and their feature rows) by index.
    pub fn select(&self, indices: &[usize]) -> Self {
        let take = |m: &Array2<f64>| m.select(Axis(0), indices);
        Self {
            points: take(&self.points),
            geom_features: self.geom_features.as_ref().map(take),
            sem_features: self.sem_features.as_ref().map(take),
        }
    }

    /// Centroid of the coordinates.
    pub fn centroid(&self) -> [f64; 3] {
        let n = self.len() as f64;
        let mut c = [0.0; 3];
        for row in self.points.axis_iter(Axis(0)) {
            c[0] += row[0];
            c[1] += row[1];
            c[2] += row[2];
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// Mean distance of points to the centroid.
    pub fn mean_radius(&self) -> f64 {
        let c = self.centroid();
        let mut acc = 0.0;
        for row in self.points.axis_iter(Axis(0)) {
            let dx = row[0] - c[0];
            let dy = row[1] - c[1];
            let dz = row[2] - c[2];
            acc += (dx * dx + dy * dy + dz * dz).sqrt();
        }
        acc / self.len() as f64
    }

    /// Maximum pairwise extent of the coordinates. O(n^2), intended for
    /// desk-scale clouds.
    pub fn diameter(&self) -> f64 {
        let p = &self.points;
        let n = self.len();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = p[[i, 0]] - p[[j, 0]];
                let dy = p[[i, 1]] - p[[j, 1]];
                let dz = p[[i, 2]] - p[[j, 2]];
                let d = dx * dx + dy * dy + dz * dz;
                if d > best {
                    best = d;
                }
            }
        }
        best.sqrt()
    }

    /// Uniformly scale all coordinates about the origin.
    pub(crate) fn scaled(&self, s: f64) -> Self {
        self.with_points(self.points.mapv(|v| v * s))
    }
}
