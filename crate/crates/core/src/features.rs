//! Rotation- and translation-invariant local geometric descriptors.
//!
//! Each point gets, per scale, the sorted sum-normalized eigenvalues of its
//! k-NN covariance plus a bounded local-spacing ratio; the concatenation is
//! L2-normalized per row. These stand in for learned point features: they
//! are invariant to rigid motion by construction, so the affinity kernel
//! sees the same descriptors regardless of the initial pose.

use nalgebra::{Matrix3, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use thiserror::Error;

use crate::cloud::PointCloud;

/// Default neighborhood size at scale 1.
pub const DESCRIPTOR_K: usize = 16;

/// Default scale multipliers applied to the neighborhood size.
pub const DESCRIPTOR_SCALES: [f64; 3] = [1.0, 2.0, 4.0];

#[derive(Error, Debug, Clone, PartialEq)]
pub enum FeatureError {
    #[error("descriptors need more than {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("neighborhood size must be at least 4, got {0}")]
    NeighborhoodTooSmall(usize),
}

fn effective_k(base: usize, scale: f64, n: usize) -> usize {
    let k = (base as f64 * scale).round() as usize;
    k.clamp(4, n - 1)
}

/// Sorted (descending) eigenvalues of the covariance of `indices` into `pts`.
fn local_eigenvalues(pts: ArrayView2<'_, f64>, indices: &[usize]) -> [f64; 3] {
    let m = indices.len() as f64;
    let mut mu = [0.0; 3];
    for &i in indices {
        mu[0] += pts[[i, 0]];
        mu[1] += pts[[i, 1]];
        mu[2] += pts[[i, 2]];
    }
    for c in mu.iter_mut() {
        *c /= m;
    }
    let mut cov = Matrix3::zeros();
    for &i in indices {
        let d = [pts[[i, 0]] - mu[0], pts[[i, 1]] - mu[1], pts[[i, 2]] - mu[2]];
        for r in 0..3 {
            for c in r..3 {
                cov[(r, c)] += d[r] * d[c];
            }
        }
    }
    for r in 0..3 {
        for c in 0..r {
            cov[(r, c)] = cov[(c, r)];
        }
    }
    cov /= m;
    let eig = SymmetricEigen::new(cov);
    let mut ev = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0].max(0.0), ev[1].max(0.0), ev[2].max(0.0)]
}

/// Compute multi-scale eigen-profile descriptors and attach them to the
/// cloud as `geom_features`.
pub fn compute_geometric_features(
    cloud: &PointCloud,
    k: usize,
    scales: &[f64],
) -> Result<PointCloud, FeatureError> {
    if k < 4 {
        return Err(FeatureError::NeighborhoodTooSmall(k));
    }
    let n = cloud.len();
    if n <= k {
        return Err(FeatureError::TooFewPoints { needed: k, got: n });
    }
    assert!(!scales.is_empty());

    let pts = cloud.points();
    let n_scales = scales.len();
    let width = 4 * n_scales;

    // per point: neighbor order by distance (ties by index), shared by all scales
    let max_k = scales
        .iter()
        .map(|&s| effective_k(k, s, n))
        .max()
        .unwrap();

    // profiles[i] = concatenated eigen profiles; spacing[i][s] = k-th neighbor distance
    let mut profiles = Array2::<f64>::zeros((n, width));
    let mut spacing = Array2::<f64>::zeros((n, n_scales));

    Zip::indexed(profiles.axis_iter_mut(Axis(0)))
        .and(spacing.axis_iter_mut(Axis(0)))
        .par_for_each(|i, mut prof, mut spc| {
            let (xi, yi, zi) = (pts[[i, 0]], pts[[i, 1]], pts[[i, 2]]);
            let mut order: Vec<(f64, usize)> = (0..n)
                .map(|j| {
                    let dx = xi - pts[[j, 0]];
                    let dy = yi - pts[[j, 1]];
                    let dz = zi - pts[[j, 2]];
                    (dx * dx + dy * dy + dz * dz, j)
                })
                .collect();
            // only the closest max_k + 1 entries matter
            order.select_nth_unstable_by(max_k, |a, b| {
                a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
            });
            order.truncate(max_k + 1);
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            for (s, &scale) in scales.iter().enumerate() {
                let k_eff = effective_k(k, scale, n);
                let hood: Vec<usize> = order[..=k_eff].iter().map(|e| e.1).collect();
                let ev = local_eigenvalues(pts, &hood);
                let sum = ev[0] + ev[1] + ev[2];
                let base = 4 * s;
                if sum > 0.0 {
                    prof[base] = ev[0] / sum;
                    prof[base + 1] = ev[1] / sum;
                    prof[base + 2] = ev[2] / sum;
                } else {
                    prof[base] = 1.0 / 3.0;
                    prof[base + 1] = 1.0 / 3.0;
                    prof[base + 2] = 1.0 / 3.0;
                }
                spc[s] = order[k_eff].0.sqrt();
            }
        });

    // bounded spacing ratio against the cloud-wide mean, per scale
    let mean_spacing: Array1<f64> = spacing.mean_axis(Axis(0)).unwrap();
    for i in 0..n {
        for s in 0..n_scales {
            let r = spacing[[i, s]];
            let m = mean_spacing[s];
            profiles[[i, 4 * s + 3]] = if r + m > 0.0 { r / (r + m) } else { 0.5 };
        }
    }

    for mut row in profiles.axis_iter_mut(Axis(0)) {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        // eigen profile guarantees a strictly positive norm
        row.mapv_inplace(|v| v / norm);
    }

    Ok(cloud
        .clone()
        .with_geom_features(profiles)
        .expect("descriptor rows are unit norm by construction"))
}
