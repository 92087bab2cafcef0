//! Confidence-weighted rigid alignment (Umeyama, no scale).

use nalgebra::{Matrix3, Vector3, SVD};
use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::ot::{ConfidenceState, TransportPlan};
use crate::rigid::{invert_pose, RigidPose};

/// Weights at or below this threshold count as inactive.
pub const WEIGHT_FLOOR: f64 = 1e-9;

/// Relative singular-value threshold below which the geometry is rank
/// deficient and the rotation about the missing axis is unobservable.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AlignError {
    #[error("all correspondence weights are at or below {WEIGHT_FLOOR}")]
    ZeroWeight,
    #[error("weighted source points are collinear or coincident (sigma2/sigma1 = {0:e})")]
    DegenerateGeometry(f64),
    #[error("source has {source_rows} rows, target {target_rows}, weights {weight_rows}")]
    LengthMismatch {
        source_rows: usize,
        target_rows: usize,
        weight_rows: usize,
    },
}

/// Paired points with per-pair weights, ready for the rigid solver.
#[derive(Debug, Clone)]
pub struct CorrespondenceBundle {
    pub source: Array2<f64>,
    pub target: Array2<f64>,
    pub weights: Array1<f64>,
}

impl CorrespondenceBundle {
    pub fn new(
        source: Array2<f64>,
        target: Array2<f64>,
        weights: Array1<f64>,
    ) -> Result<Self, AlignError> {
        if source.nrows() != target.nrows() || source.nrows() != weights.len() {
            return Err(AlignError::LengthMismatch {
                source_rows: source.nrows(),
                target_rows: target.nrows(),
                weight_rows: weights.len(),
            });
        }
        Ok(Self {
            source,
            target,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn weighted_centroid(points: ArrayView2<'_, f64>, weights: ArrayView1<'_, f64>, wsum: f64) -> [f64; 3] {
    let mut c = [0.0; 3];
    for (row, &w) in points.axis_iter(Axis(0)).zip(weights.iter()) {
        c[0] += w * row[0];
        c[1] += w * row[1];
        c[2] += w * row[2];
    }
    [c[0] / wsum, c[1] / wsum, c[2] / wsum]
}

/// Weighted rigid Umeyama in row convention: finds `(R, t)` minimizing
/// `sum_i w_i || s_i R + t - t_i ||^2` with `R` orthonormal, det +1.
///
/// Reflections are corrected by flipping the singular direction of least
/// variance, so mirrored inputs still yield a proper rotation.
pub fn weighted_umeyama(bundle: &CorrespondenceBundle) -> Result<RigidPose, AlignError> {
    let w = &bundle.weights;
    if w.iter().all(|&x| x <= WEIGHT_FLOOR) {
        return Err(AlignError::ZeroWeight);
    }
    let wsum: f64 = w.iter().sum();

    let mu_s = weighted_centroid(bundle.source.view(), w.view(), wsum);
    let mu_t = weighted_centroid(bundle.target.view(), w.view(), wsum);

    // cross covariance H = sum_i w_i (s_i - mu_s)^T (t_i - mu_t), rows as vectors
    let mut h = Matrix3::zeros();
    for ((s, t), &wi) in bundle
        .source
        .axis_iter(Axis(0))
        .zip(bundle.target.axis_iter(Axis(0)))
        .zip(w.iter())
    {
        if wi <= 0.0 {
            continue;
        }
        let sc = [s[0] - mu_s[0], s[1] - mu_s[1], s[2] - mu_s[2]];
        let tc = [t[0] - mu_t[0], t[1] - mu_t[1], t[2] - mu_t[2]];
        for r in 0..3 {
            for c in 0..3 {
                h[(r, c)] += wi * sc[r] * tc[c];
            }
        }
    }
    h /= wsum;

    let svd = SVD::new(h, true, true);
    let u = svd.u.expect("3x3 svd produces u");
    let v_t = svd.v_t.expect("3x3 svd produces v_t");
    let sv = svd.singular_values;

    // sort singular values descending without assuming solver order
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap());
    let (s1, s2) = (sv[order[0]], sv[order[1]]);
    if !(s1 > 0.0) || s2 < RANK_TOL * s1 {
        return Err(AlignError::DegenerateGeometry(if s1 > 0.0 {
            s2 / s1
        } else {
            0.0
        }));
    }

    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        d[order[2]] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * v_t;

    let mu_s_v = nalgebra::RowVector3::new(mu_s[0], mu_s[1], mu_s[2]);
    let translation = Vector3::new(mu_t[0], mu_t[1], mu_t[2]) - (mu_s_v * rotation).transpose();
    Ok(RigidPose::new(rotation, translation))
}

/// Weighted squared alignment residual of a bundle under a pose.
pub fn pose_objective(bundle: &CorrespondenceBundle, pose: &RigidPose) -> f64 {
    let r = &pose.rotation;
    let t = &pose.translation;
    let mut acc = 0.0;
    for ((s, tt), &w) in bundle
        .source
        .axis_iter(Axis(0))
        .zip(bundle.target.axis_iter(Axis(0)))
        .zip(bundle.weights.iter())
    {
        let (x, y, z) = (s[0], s[1], s[2]);
        let px = x * r[(0, 0)] + y * r[(1, 0)] + z * r[(2, 0)] + t[0] - tt[0];
        let py = x * r[(0, 1)] + y * r[(1, 1)] + z * r[(2, 1)] + t[1] - tt[1];
        let pz = x * r[(0, 2)] + y * r[(1, 2)] + z * r[(2, 2)] + t[2] - tt[2];
        acc += w * (px * px + py * py + pz * pz);
    }
    acc
}

/// Forward and inverse rigid estimates of one solve.
#[derive(Debug, Clone, Copy)]
pub struct PosePair {
    /// Maps query coordinates into the reference frame.
    pub query_to_ref: RigidPose,
    /// The exact inverse, `(R^T, -t R^T)`.
    pub ref_to_query: RigidPose,
}

/// Joint pose estimate from soft correspondences: stacks both projection
/// directions `[P | M_qp P] -> [M_pq Q | Q]` with weights `[w_p | w_q]` and
/// solves once.
pub fn estimate_pose(
    query: &PointCloud,
    reference: &PointCloud,
    maps: &TransportPlan,
    w_query: &ConfidenceState,
    w_ref: &ConfidenceState,
) -> Result<PosePair, AlignError> {
    let p = query.points();
    let q = reference.points();
    let projected_q = maps.row_map().dot(&q);
    let projected_p = maps.col_map().dot(&p);

    let source = concatenate(Axis(0), &[p, projected_p.view()]).expect("same column count");
    let target = concatenate(Axis(0), &[projected_q.view(), q]).expect("same column count");
    let weights = concatenate(
        Axis(0),
        &[w_query.weights(), w_ref.weights()],
    )
    .expect("1d concat");

    let bundle = CorrespondenceBundle::new(source, target, weights)?;
    let query_to_ref = weighted_umeyama(&bundle)?;
    Ok(PosePair {
        query_to_ref,
        ref_to_query: invert_pose(&query_to_ref),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::normalize_confidence;
    use crate::rigid::{compose_pose, transform_points};
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix3;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_cloud(rng: &mut impl Rng, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0))
    }

    fn random_pose(rng: &mut impl Rng) -> RigidPose {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0f64),
        );
        let axis = if axis.norm() < 1e-3 {
            Vector3::z()
        } else {
            axis
        };
        RigidPose::new(
            RigidPose::axis_angle(axis, rng.gen_range(-3.0..3.0)),
            Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ),
        )
    }

    #[test]
    fn identity_when_source_equals_target() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let pts = random_cloud(&mut rng, 32);
        let w = Array1::from_shape_fn(32, |_| rng.gen_range(0.1..2.0));
        let bundle = CorrespondenceBundle::new(pts.clone(), pts, w).unwrap();
        let pose = weighted_umeyama(&bundle).unwrap();
        assert!(pose.validity_residual() < 1e-12);
        assert!((pose.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(pose.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_constructed_rigid_motion() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let src = random_cloud(&mut rng, 64);
        let truth = RigidPose::new(
            RigidPose::rot_z(std::f64::consts::FRAC_PI_2),
            Vector3::new(1.0, 0.0, 0.0),
        );
        let dst = transform_points(&truth, src.view());
        let w = Array1::ones(64);
        let bundle = CorrespondenceBundle::new(src, dst, w).unwrap();
        let pose = weighted_umeyama(&bundle).unwrap();
        assert!((pose.rotation - truth.rotation).abs().max() < 1e-9);
        assert!((pose.translation - truth.translation).norm() < 1e-9);
    }

    #[test]
    fn zero_weight_points_are_inert() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let src = random_cloud(&mut rng, 40);
        let truth = random_pose(&mut rng);
        let mut dst = transform_points(&truth, src.view());
        let mut w = Array1::ones(40);
        // corrupt one target point but zero out its weight
        dst[[17, 0]] += 10.0;
        dst[[17, 1]] += 10.0;
        dst[[17, 2]] += 10.0;
        w[17] = 0.0;
        let bundle = CorrespondenceBundle::new(src, dst, w).unwrap();
        let pose = weighted_umeyama(&bundle).unwrap();
        assert!((pose.rotation - truth.rotation).abs().max() < 1e-9);
        assert!((pose.translation - truth.translation).norm() < 1e-9);
    }

    #[test]
    fn rejects_all_zero_weights() {
        let pts = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let bundle =
            CorrespondenceBundle::new(pts.clone(), pts, Array1::zeros(3)).unwrap();
        assert_eq!(weighted_umeyama(&bundle).unwrap_err(), AlignError::ZeroWeight);
    }

    #[test]
    fn rejects_collinear_sources() {
        let src = array![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [3.0, 0.0, 0.0]
        ];
        let bundle = CorrespondenceBundle::new(src.clone(), src, Array1::ones(4)).unwrap();
        assert!(matches!(
            weighted_umeyama(&bundle).unwrap_err(),
            AlignError::DegenerateGeometry(_)
        ));
    }

    #[test]
    fn mirrored_planar_target_still_yields_proper_rotation() {
        // planar square, target mirrored through the xz plane
        let src = array![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.5, 0.5, 0.0]
        ];
        let mut dst = src.clone();
        for mut row in dst.axis_iter_mut(Axis(0)) {
            row[1] = -row[1];
        }
        let bundle = CorrespondenceBundle::new(src, dst, Array1::ones(5)).unwrap();
        let pose = weighted_umeyama(&bundle).unwrap();
        assert!(pose.validity_residual() < 1e-9);
        assert!((pose.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn weight_scale_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let src = random_cloud(&mut rng, 32);
        let truth = random_pose(&mut rng);
        let dst = transform_points(&truth, src.view());
        let w = Array1::from_shape_fn(32, |_| rng.gen_range(0.1..1.0));
        let a = weighted_umeyama(
            &CorrespondenceBundle::new(src.clone(), dst.clone(), w.clone()).unwrap(),
        )
        .unwrap();
        let b = weighted_umeyama(
            &CorrespondenceBundle::new(src, dst, w.mapv(|x| x * 1234.5)).unwrap(),
        )
        .unwrap();
        assert!((a.rotation - b.rotation).abs().max() < 1e-12);
        assert!((a.translation - b.translation).norm() < 1e-12);
    }

    #[test]
    fn solver_objective_beats_perturbed_poses() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let src = random_cloud(&mut rng, 48);
        let truth = random_pose(&mut rng);
        let mut dst = transform_points(&truth, src.view());
        // non-rigid noise so the optimum is interior
        for v in dst.iter_mut() {
            *v += rng.gen_range(-0.01..0.01);
        }
        let w = Array1::from_shape_fn(48, |_| rng.gen_range(0.1..1.0));
        let bundle = CorrespondenceBundle::new(src, dst, w).unwrap();
        let opt = weighted_umeyama(&bundle).unwrap();
        let best = pose_objective(&bundle, &opt);
        for _ in 0..200 {
            let axis = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0f64),
            );
            let axis = if axis.norm() < 1e-3 { Vector3::x() } else { axis };
            let angle = rng.gen_range(-0.087..0.087); // up to ~5 degrees
            let tweak = RigidPose::new(
                RigidPose::axis_angle(axis, angle),
                Vector3::new(
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                ),
            );
            let perturbed = compose_pose(&opt, &tweak);
            assert!(best <= pose_objective(&bundle, &perturbed) + 1e-12);
        }
    }

    #[test]
    fn single_pair_objective_is_squared_distance() {
        let src = array![[0.0, 0.0, 0.0]];
        let dst = array![[3.0, 4.0, 0.0]];
        let bundle = CorrespondenceBundle::new(src, dst, Array1::ones(1)).unwrap();
        assert_abs_diff_eq!(
            pose_objective(&bundle, &RigidPose::identity()),
            25.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn estimate_pose_identity_maps_identity_clouds() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let pts = random_cloud(&mut rng, 16);
        let cloud = PointCloud::new(pts).unwrap();
        let eye = Array2::from_diag(&Array1::ones(16));
        let maps = TransportPlan::from_plan(eye).unwrap();
        let w = normalize_confidence(Array1::from_elem(16, 0.5), 16.0);
        let pair = estimate_pose(&cloud, &cloud, &maps, &w, &w).unwrap();
        assert!(pair.query_to_ref.translation.norm() < 1e-9);
        assert!((pair.query_to_ref.rotation - Matrix3::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn estimate_pose_recovers_ground_truth_via_permutation_maps() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 24;
        let ref_pts = random_cloud(&mut rng, n);
        let truth = random_pose(&mut rng);
        // query points expressed in the query frame
        let query_pts = transform_points(&invert_pose(&truth), ref_pts.view());
        let query = PointCloud::new(query_pts).unwrap();
        let reference = PointCloud::new(ref_pts).unwrap();
        let eye = Array2::from_diag(&Array1::ones(n));
        let maps = TransportPlan::from_plan(eye).unwrap();
        let w = normalize_confidence(Array1::from_elem(n, 1.0), n as f64);
        let pair = estimate_pose(&query, &reference, &maps, &w, &w).unwrap();
        assert!((pair.query_to_ref.rotation - truth.rotation).abs().max() < 1e-9);
        assert!((pair.query_to_ref.translation - truth.translation).norm() < 1e-9);
        // inverse consistency
        let id = compose_pose(&pair.query_to_ref, &pair.ref_to_query);
        assert!(id.translation.norm() < 1e-9);
    }

    #[test]
    fn downweighting_outlier_half_rescues_pose() {
        // half the points follow the true motion, half a conflicting one
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let n = 60;
        let src = random_cloud(&mut rng, n);
        let truth = random_pose(&mut rng);
        let decoy = random_pose(&mut rng);
        let mut dst = transform_points(&truth, src.view());
        let wrong = transform_points(&decoy, src.view());
        for i in n / 2..n {
            for k in 0..3 {
                dst[[i, k]] = wrong[[i, k]];
            }
        }
        let uniform = Array1::ones(n);
        let mut informed = Array1::ones(n);
        for i in n / 2..n {
            informed[i] = 0.0;
        }
        let b_uniform =
            CorrespondenceBundle::new(src.clone(), dst.clone(), uniform).unwrap();
        let b_informed = CorrespondenceBundle::new(src, dst, informed).unwrap();
        let p_uniform = weighted_umeyama(&b_uniform).unwrap();
        let p_informed = weighted_umeyama(&b_informed).unwrap();
        let err_uniform = (p_uniform.rotation - truth.rotation).abs().max();
        let err_informed = (p_informed.rotation - truth.rotation).abs().max();
        assert!(err_informed < 1e-9);
        assert!(err_uniform > 1e-2, "uniform weights should be visibly off");
    }
}
