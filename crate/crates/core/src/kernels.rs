//! Gaussian-RBF consistency kernels, diagnostic losses and pseudo-confidence
//! labels.
//!
//! The kernels score cycle reconstruction, pose alignment (Chamfer) and
//! semantic agreement per point; their product is the pseudo inlier
//! likelihood that drives the confidence fixed point. No gradients here:
//! the losses are diagnostics and label generators.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::ot::{ConfidenceState, TransportPlan};
use crate::params::HyperParams;
use crate::rigid::{transform_points, RigidPose};

/// Lower clamp for pseudo-confidence labels; keeps fully suppressed points
/// revivable across confidence iterations.
pub const Z_FLOOR: f64 = 1e-3;

/// Clamp bound for the binary cross entropy inputs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum KernelError {
    #[error("semantic features missing on {0} cloud")]
    MissingFeatures(&'static str),
}

/// Per-point cycle kernel: `exp(-alpha_g * ||x_i - y_i||^2)` for paired rows.
pub fn phi_cycl(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, alpha_g: f64) -> Array1<f64> {
    assert_eq!(x.nrows(), y.nrows());
    let mut out = Array1::zeros(x.nrows());
    Zip::indexed(&mut out).par_for_each(|i, o| {
        let dx = x[[i, 0]] - y[[i, 0]];
        let dy = x[[i, 1]] - y[[i, 1]];
        let dz = x[[i, 2]] - y[[i, 2]];
        *o = (-alpha_g * (dx * dx + dy * dy + dz * dz)).exp();
    });
    out
}

/// Per-point Chamfer kernel: `exp(-alpha_g * min_j ||x_i - y_j||^2)`.
/// Nearest neighbors are exact (O(n m) scan).
pub fn phi_pose(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, alpha_g: f64) -> Array1<f64> {
    assert!(y.nrows() >= 1);
    let mut out = Array1::zeros(x.nrows());
    Zip::indexed(&mut out).par_for_each(|i, o| {
        let (xi, yi, zi) = (x[[i, 0]], x[[i, 1]], x[[i, 2]]);
        let mut best = f64::INFINITY;
        for row in y.axis_iter(Axis(0)) {
            let dx = xi - row[0];
            let dy = yi - row[1];
            let dz = zi - row[2];
            let d = dx * dx + dy * dy + dz * dz;
            if d < best {
                best = d;
            }
        }
        *o = (-alpha_g * best).exp();
    });
    out
}

/// Correspondence-weighted semantic kernel:
/// `out[i] = sum_j M[i,j] exp(-alpha_f (1 - cos(u_i, v_j)))`.
pub fn phi_sem(
    m: ArrayView2<'_, f64>,
    u: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    alpha_f: f64,
) -> Array1<f64> {
    assert_eq!(m.nrows(), u.nrows());
    assert_eq!(m.ncols(), v.nrows());
    let mut out = Array1::zeros(m.nrows());
    Zip::indexed(&mut out).par_for_each(|i, o| {
        let ui = u.row(i);
        let mut acc = 0.0;
        for (j, &mij) in m.row(i).iter().enumerate() {
            if mij == 0.0 {
                continue;
            }
            let cos = ui.dot(&v.row(j)).clamp(-1.0, 1.0);
            acc += mij * (-alpha_f * (1.0 - cos)).exp();
        }
        *o = acc;
    });
    out
}

fn weighted_deficit_mean(weights: ArrayView1<'_, f64>, phi: &Array1<f64>) -> f64 {
    let n = weights.len() as f64;
    let mut acc = 0.0;
    for (&w, &p) in weights.iter().zip(phi.iter()) {
        acc += w * (1.0 - p);
    }
    acc / n
}

/// Cycle-consistency loss: weighted deficit of the round-trip kernel in both
/// directions, each side averaged over its own point count.
pub fn loss_cycl(
    query: &PointCloud,
    reference: &PointCloud,
    maps: &TransportPlan,
    w_query: &ConfidenceState,
    w_ref: &ConfidenceState,
    hp: &HyperParams,
) -> f64 {
    let p = query.points();
    let q = reference.points();
    let p_rec = maps.row_map().dot(&maps.col_map().dot(&p));
    let q_rec = maps.col_map().dot(&maps.row_map().dot(&q));
    let phi_p = phi_cycl(p, p_rec.view(), hp.alpha_g);
    let phi_q = phi_cycl(q, q_rec.view(), hp.alpha_g);
    weighted_deficit_mean(w_query.weights(), &phi_p) + weighted_deficit_mean(w_ref.weights(), &phi_q)
}

/// Pose alignment loss: weighted Chamfer-kernel deficit between each cloud
/// and the other one transformed into its frame.
pub fn loss_pose(
    query: &PointCloud,
    reference: &PointCloud,
    pose: &RigidPose,
    w_query: &ConfidenceState,
    w_ref: &ConfidenceState,
    hp: &HyperParams,
) -> f64 {
    let p = query.points();
    let q = reference.points();
    let p_pred = transform_points(pose, p);
    let q_pred = transform_points(&crate::rigid::invert_pose(pose), q);
    let phi_p = phi_pose(p, q_pred.view(), hp.alpha_g);
    let phi_q = phi_pose(q, p_pred.view(), hp.alpha_g);
    weighted_deficit_mean(w_query.weights(), &phi_p) + weighted_deficit_mean(w_ref.weights(), &phi_q)
}

/// Semantic consistency loss over both map directions.
pub fn loss_sem(
    maps: &TransportPlan,
    query: &PointCloud,
    reference: &PointCloud,
    w_query: &ConfidenceState,
    w_ref: &ConfidenceState,
    hp: &HyperParams,
) -> Result<f64, KernelError> {
    let sq = query
        .sem_features()
        .ok_or(KernelError::MissingFeatures("query"))?;
    let sr = reference
        .sem_features()
        .ok_or(KernelError::MissingFeatures("reference"))?;
    let phi_p = phi_sem(maps.row_map(), sq, sr, hp.alpha_f);
    let phi_q = phi_sem(maps.col_map(), sr, sq, hp.alpha_f);
    Ok(weighted_deficit_mean(w_query.weights(), &phi_p)
        + weighted_deficit_mean(w_ref.weights(), &phi_q))
}

/// Mean binary cross entropy of confidence `c` against fixed labels `z`,
/// both clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`. Labels are inputs and are
/// never modified, matching their role as detached targets.
pub fn loss_conf(c: ArrayView1<'_, f64>, z: ArrayView1<'_, f64>) -> f64 {
    assert_eq!(c.len(), z.len());
    let lo = BCE_CLAMP;
    let hi = 1.0 - BCE_CLAMP;
    let mut acc = 0.0;
    for (&ci, &zi) in c.iter().zip(z.iter()) {
        let cc = ci.clamp(lo, hi);
        let zz = zi.clamp(lo, hi);
        acc -= zz * cc.ln() + (1.0 - zz) * (1.0 - cc).ln();
    }
    acc / c.len() as f64
}

/// Per-side kernel responses and their product.
#[derive(Debug, Clone)]
pub struct SideConsistency {
    pub phi_cycl: Array1<f64>,
    pub phi_pose: Array1<f64>,
    pub phi_sem: Array1<f64>,
    /// Raw product of the three factors (unclamped), hence bounded above by
    /// each factor.
    pub pseudo_labels: Array1<f64>,
}

/// Kernel diagnostics for both sides of a registration state.
#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub query: SideConsistency,
    pub reference: SideConsistency,
}

/// Per-loss diagnostic values and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub cycl: f64,
    pub pose: f64,
    pub sem: f64,
    pub conf: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(cycl: f64, pose: f64, sem: f64, conf: f64, hp: &HyperParams) -> Self {
        Self {
            cycl,
            pose,
            sem,
            conf,
            total: hp.gamma_cycl * cycl
                + hp.gamma_pose * pose
                + hp.gamma_sem * sem
                + hp.gamma_conf * conf,
        }
    }
}

fn side_consistency(
    own: ArrayView2<'_, f64>,
    reconstructed: Array2<f64>,
    other_pred: Array2<f64>,
    map: ArrayView2<'_, f64>,
    own_sem: Option<ArrayView2<'_, f64>>,
    other_sem: Option<ArrayView2<'_, f64>>,
    hp: &HyperParams,
) -> SideConsistency {
    let n = own.nrows();
    let cycl = phi_cycl(own, reconstructed.view(), hp.alpha_g);
    let pose = phi_pose(own, other_pred.view(), hp.alpha_g);
    let sem = match (own_sem, other_sem) {
        (Some(u), Some(v)) => phi_sem(map, u, v, hp.alpha_f),
        _ => Array1::ones(n),
    };
    let pseudo_labels = Array1::from_shape_fn(n, |i| cycl[i] * pose[i] * sem[i]);
    SideConsistency {
        phi_cycl: cycl,
        phi_pose: pose,
        phi_sem: sem,
        pseudo_labels,
    }
}

/// Evaluate all three kernels for both sides of the current state.
/// Semantic factors default to one when either cloud lacks features.
pub fn consistency_report(
    query: &PointCloud,
    reference: &PointCloud,
    maps: &TransportPlan,
    pose: &RigidPose,
    hp: &HyperParams,
) -> ConsistencyReport {
    let p = query.points();
    let q = reference.points();
    let p_rec = maps.row_map().dot(&maps.col_map().dot(&p));
    let q_rec = maps.col_map().dot(&maps.row_map().dot(&q));
    let p_pred = transform_points(pose, p);
    let q_pred = transform_points(&crate::rigid::invert_pose(pose), q);

    let sem_ok = query.sem_features().is_some() && reference.sem_features().is_some();
    let (sq, sr) = if sem_ok {
        (query.sem_features(), reference.sem_features())
    } else {
        (None, None)
    };

    ConsistencyReport {
        query: side_consistency(p, p_rec, q_pred, maps.row_map(), sq, sr, hp),
        reference: side_consistency(q, q_rec, p_pred, maps.col_map(), sr, sq, hp),
    }
}

/// Clamp raw label products into `[Z_FLOOR, 1]`.
pub fn clamp_labels(raw: &Array1<f64>) -> Array1<f64> {
    raw.mapv(|z| z.clamp(Z_FLOOR, 1.0))
}

/// Pseudo-confidence labels for both sides: the product of the cycle, pose
/// and semantic kernels, clamped to `[Z_FLOOR, 1]`.
pub fn pseudo_confidence(
    query: &PointCloud,
    reference: &PointCloud,
    maps: &TransportPlan,
    pose: &RigidPose,
    hp: &HyperParams,
) -> (Array1<f64>, Array1<f64>) {
    let report = consistency_report(query, reference, maps, pose, hp);
    (
        clamp_labels(&report.query.pseudo_labels),
        clamp_labels(&report.reference.pseudo_labels),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::normalize_confidence;
    use crate::rigid::invert_pose;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_points(rng: &mut impl Rng, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0))
    }

    fn random_stochastic(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
        let mut m = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(0.01..1.0));
        for mut row in m.axis_iter_mut(Axis(0)) {
            let s: f64 = row.iter().sum();
            row.mapv_inplace(|v| v / s);
        }
        m
    }

    fn random_unit_rows(rng: &mut impl Rng, n: usize, d: usize) -> Array2<f64> {
        let mut m = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        for mut row in m.axis_iter_mut(Axis(0)) {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        m
    }

    #[test]
    fn phi_cycl_examples() {
        let x = array![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]];
        let same = phi_cycl(x.view(), x.view(), 60.0);
        assert_eq!(same, array![1.0, 1.0]);

        // squared distance ln 2 / alpha gives exactly one half
        let d = (2.0f64.ln() / 60.0).sqrt();
        let y = array![[d, 0.0, 0.0], [1.0, 2.0, 3.0]];
        let v = phi_cycl(x.view(), y.view(), 60.0);
        assert_abs_diff_eq!(v[0], 0.5, epsilon = 1e-9);

        // strictly decreasing in displacement
        let y2 = array![[2.0 * d, 0.0, 0.0], [1.0, 2.0, 3.0]];
        let v2 = phi_cycl(x.view(), y2.view(), 60.0);
        assert!(v2[0] < v[0]);
    }

    #[test]
    fn phi_pose_examples() {
        let x = array![[0.0, 0.0, 0.0]];
        let y = array![[1.0, 0.0, 0.0], [0.1, 0.0, 0.0]];
        let v = phi_pose(x.view(), y.view(), 60.0);
        assert_abs_diff_eq!(v[0], (-0.6f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(v[0], 0.548812, epsilon = 1e-6);

        // order of y rows is irrelevant
        let y_flipped = array![[0.1, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let v2 = phi_pose(x.view(), y_flipped.view(), 60.0);
        assert_eq!(v[0], v2[0]);

        let same = phi_pose(y.view(), y.view(), 60.0);
        assert_eq!(same, array![1.0, 1.0]);
    }

    #[test]
    fn phi_sem_examples() {
        let u = array![[1.0, 0.0]];
        // one-hot map onto an identical feature
        let v_same = array![[1.0, 0.0]];
        let m = array![[1.0]];
        assert_eq!(phi_sem(m.view(), u.view(), v_same.view(), 4.0)[0], 1.0);

        // one-hot map onto the opposite feature: exp(-8)
        let v_opp = array![[-1.0, 0.0]];
        let got = phi_sem(m.view(), u.view(), v_opp.view(), 4.0)[0];
        assert_abs_diff_eq!(got, (-8.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(got, 3.3546e-4, epsilon = 1e-7);

        // even mix of aligned and opposite: (1 + e^-8) / 2
        let v2 = array![[1.0, 0.0], [-1.0, 0.0]];
        let m2 = array![[0.5, 0.5]];
        let got = phi_sem(m2.view(), u.view(), v2.view(), 4.0)[0];
        assert_abs_diff_eq!(got, (1.0 + (-8.0f64).exp()) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 0.500168, epsilon = 1e-6);
    }

    #[test]
    fn kernels_stay_in_unit_interval_and_hit_one_only_at_zero_distance() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let x = random_points(&mut rng, 50);
        let y = random_points(&mut rng, 50);
        for v in phi_cycl(x.view(), y.view(), 60.0).iter() {
            assert!(*v > 0.0 && *v <= 1.0);
        }
        for (i, v) in phi_pose(x.view(), y.view(), 60.0).iter().enumerate() {
            assert!(*v > 0.0 && *v <= 1.0);
            if *v >= 1.0 - 1e-12 {
                // only attainable when some y row coincides with x_i
                let xi = x.row(i);
                let coincides = y.axis_iter(Axis(0)).any(|r| {
                    (r[0] - xi[0]).abs() < 1e-6
                        && (r[1] - xi[1]).abs() < 1e-6
                        && (r[2] - xi[2]).abs() < 1e-6
                });
                assert!(coincides);
            }
        }
    }

    fn identity_plan(n: usize) -> TransportPlan {
        TransportPlan::from_plan(Array2::from_diag(&Array1::ones(n))).unwrap()
    }

    #[test]
    fn loss_cycl_zero_for_identity_maps() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let pts = random_points(&mut rng, 12);
        let cloud = PointCloud::new(pts).unwrap();
        let maps = identity_plan(12);
        let w = normalize_confidence(Array1::from_elem(12, 0.7), 12.0);
        let hp = HyperParams::default();
        let l = loss_cycl(&cloud, &cloud, &maps, &w, &w, &hp);
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-12);
    }

    // straight re-implementation of the cycle loss from its definition,
    // kept deliberately naive as an independent oracle
    fn oracle_loss_cycl(
        p: &Array2<f64>,
        q: &Array2<f64>,
        m_pq: &Array2<f64>,
        m_qp: &Array2<f64>,
        w_p: &Array1<f64>,
        w_q: &Array1<f64>,
        alpha_g: f64,
    ) -> f64 {
        let np = p.nrows();
        let nq = q.nrows();
        let matmul = |a: &Array2<f64>, b: &Array2<f64>| {
            let mut out = Array2::zeros((a.nrows(), b.ncols()));
            for i in 0..a.nrows() {
                for j in 0..b.ncols() {
                    let mut s = 0.0;
                    for k in 0..a.ncols() {
                        s += a[[i, k]] * b[[k, j]];
                    }
                    out[[i, j]] = s;
                }
            }
            out
        };
        let p_rec = matmul(&matmul(m_pq, m_qp), p);
        let q_rec = matmul(&matmul(m_qp, m_pq), q);
        let mut total = 0.0;
        for i in 0..np {
            let d2: f64 = (0..3).map(|k| (p[[i, k]] - p_rec[[i, k]]).powi(2)).sum();
            total += w_p[i] * (1.0 - (-alpha_g * d2).exp()) / np as f64;
        }
        for j in 0..nq {
            let d2: f64 = (0..3).map(|k| (q[[j, k]] - q_rec[[j, k]]).powi(2)).sum();
            total += w_q[j] * (1.0 - (-alpha_g * d2).exp()) / nq as f64;
        }
        total
    }

    #[test]
    fn loss_cycl_matches_formula_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let hp = HyperParams::default();
        for _ in 0..20 {
            let np = rng.gen_range(4..20);
            let nq = rng.gen_range(4..20);
            let p = random_points(&mut rng, np);
            let q = random_points(&mut rng, nq);
            let plan = Array2::from_shape_fn((np, nq), |_| rng.gen_range(0.01..1.0));
            let maps = TransportPlan::from_plan(plan).unwrap();
            let w_p = normalize_confidence(
                Array1::from_shape_fn(np, |_| rng.gen_range(0.1..1.0)),
                np as f64,
            );
            let w_q = normalize_confidence(
                Array1::from_shape_fn(nq, |_| rng.gen_range(0.1..1.0)),
                nq as f64,
            );
            let got = loss_cycl(
                &PointCloud::new(p.clone()).unwrap(),
                &PointCloud::new(q.clone()).unwrap(),
                &maps,
                &w_p,
                &w_q,
                &hp,
            );
            let want = oracle_loss_cycl(
                &p,
                &q,
                &maps.row_map().to_owned(),
                &maps.col_map().to_owned(),
                &w_p.weights().to_owned(),
                &w_q.weights().to_owned(),
                hp.alpha_g,
            );
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn loss_pose_zero_at_true_pose_and_larger_when_wrong() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let q_pts = random_points(&mut rng, 30);
        let truth = RigidPose::new(
            RigidPose::rot_z(0.4),
            Vector3::new(0.2, -0.1, 0.3),
        );
        let p_pts = transform_points(&invert_pose(&truth), q_pts.view());
        let query = PointCloud::new(p_pts).unwrap();
        let reference = PointCloud::new(q_pts).unwrap();
        let w = normalize_confidence(Array1::from_elem(30, 1.0), 30.0);
        let hp = HyperParams::default();

        let at_truth = loss_pose(&query, &reference, &truth, &w, &w, &hp);
        assert!(at_truth < 1e-9, "loss at ground truth was {at_truth}");

        let wrong = RigidPose::new(
            RigidPose::rot_z(0.4 + std::f64::consts::FRAC_PI_2),
            truth.translation,
        );
        let at_wrong = loss_pose(&query, &reference, &wrong, &w, &w, &hp);
        assert!(at_wrong > at_truth);

        // identity clouds, identity pose
        let z = loss_pose(&reference, &reference, &RigidPose::identity(), &w, &w, &hp);
        assert_abs_diff_eq!(z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn loss_sem_examples_and_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let hp = HyperParams::default();
        let n = 10;
        let pts = random_points(&mut rng, n);
        let feats = random_unit_rows(&mut rng, n, 4);
        let cloud = PointCloud::new(pts.clone())
            .unwrap()
            .with_sem_features(feats.clone())
            .unwrap();
        let maps = identity_plan(n);
        let w = normalize_confidence(Array1::from_elem(n, 0.5), n as f64);
        let l = loss_sem(&maps, &cloud, &cloud, &w, &w, &hp).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-12);

        // orthogonal features on both sides: deficit is 1 - e^{-alpha_f}
        let mut u = Array2::zeros((n, 2));
        let mut v = Array2::zeros((n, 2));
        for i in 0..n {
            u[[i, 0]] = 1.0;
            v[[i, 1]] = 1.0;
        }
        let cu = PointCloud::new(pts.clone()).unwrap().with_sem_features(u).unwrap();
        let cv = PointCloud::new(pts).unwrap().with_sem_features(v).unwrap();
        let l = loss_sem(&maps, &cu, &cv, &w, &w, &hp).unwrap();
        let expect = (1.0 - (-4.0f64).exp()) * 2.0; // both sides, mean weight 1
        assert_abs_diff_eq!(l, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(l / 2.0, 0.98168, epsilon = 1e-5);

        // missing features
        let bare = PointCloud::new(random_points(&mut rng, n)).unwrap();
        assert_eq!(
            loss_sem(&maps, &bare, &cu, &w, &w, &hp).unwrap_err(),
            KernelError::MissingFeatures("query")
        );
    }

    #[test]
    fn loss_conf_examples() {
        // c = z = 1 after clamping: essentially zero (clamp cross-term ~1.7e-6)
        let ones = Array1::ones(4);
        assert!(loss_conf(ones.view(), ones.view()) < 1e-5);

        // c = z = 0.5: ln 2 per point
        let half = Array1::from_elem(4, 0.5);
        assert_abs_diff_eq!(
            loss_conf(half.view(), half.view()),
            2.0f64.ln(),
            epsilon = 1e-12
        );

        // for fixed z, a grid search over constant c is minimized at c = z
        let z = Array1::from_elem(8, 0.3);
        let at_z = loss_conf(Array1::from_elem(8, 0.3).view(), z.view());
        for k in 1..100 {
            let c = k as f64 / 100.0;
            let l = loss_conf(Array1::from_elem(8, c).view(), z.view());
            assert!(l + 1e-15 >= at_z, "BCE at c={c} beat the label point");
        }
    }

    #[test]
    fn pseudo_labels_are_products_and_clamped() {
        // direct product check on the composition rule
        let raw = array![0.9 * 0.8 * 0.5, 1.0, 1e-9];
        let clamped = clamp_labels(&raw);
        assert_abs_diff_eq!(clamped[0], 0.36, epsilon = 1e-12);
        assert_eq!(clamped[1], 1.0);
        assert_eq!(clamped[2], Z_FLOOR);
    }

    #[test]
    fn pseudo_confidence_perfect_alignment_and_outlier() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let n = 16;
        let mut pts = random_points(&mut rng, n);
        // make one point a far outlier (one scene unit away from the blob)
        pts[[n - 1, 0]] += 3.0;
        let feats = random_unit_rows(&mut rng, n, 3);
        let cloud = PointCloud::new(pts)
            .unwrap()
            .with_sem_features(feats)
            .unwrap();
        let maps = identity_plan(n);
        let hp = HyperParams::default();
        let (z_q, z_r) = pseudo_confidence(&cloud, &cloud, &maps, &RigidPose::identity(), &hp);
        // identical clouds under identity pose and identity maps: all ones
        for v in z_q.iter().chain(z_r.iter()) {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }

        // now against a cloud without the outlier point: the outlier's
        // nearest neighbor is far, so its label collapses to the floor
        let other = PointCloud::new(random_points(&mut rng, n)).unwrap();
        let plan = Array2::from_elem((n, n), 1.0 / n as f64);
        let maps = TransportPlan::from_plan(plan).unwrap();
        let (z_q, _) = pseudo_confidence(&cloud, &other, &maps, &RigidPose::identity(), &hp);
        assert_eq!(z_q[n - 1], Z_FLOOR);
    }

    #[test]
    fn report_labels_bounded_by_each_factor() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 20;
        let p = PointCloud::new(random_points(&mut rng, n)).unwrap();
        let q = PointCloud::new(random_points(&mut rng, n)).unwrap();
        let maps =
            TransportPlan::from_plan(random_stochastic(&mut rng, n, n)).unwrap();
        let hp = HyperParams::default();
        let report = consistency_report(&p, &q, &maps, &RigidPose::identity(), &hp);
        for side in [&report.query, &report.reference] {
            for i in 0..n {
                let z = side.pseudo_labels[i];
                assert!(z <= side.phi_cycl[i] + 1e-15);
                assert!(z <= side.phi_pose[i] + 1e-15);
                assert!(z <= side.phi_sem[i] + 1e-15);
            }
        }
    }

    #[test]
    fn losses_invariant_to_confidence_rescaling() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let n = 14;
        let p = PointCloud::new(random_points(&mut rng, n)).unwrap();
        let q = PointCloud::new(random_points(&mut rng, n)).unwrap();
        let maps = TransportPlan::from_plan(random_stochastic(&mut rng, n, n)).unwrap();
        let hp = HyperParams::default();
        let conf = Array1::from_shape_fn(n, |_| rng.gen_range(0.2..0.9));
        let w1 = normalize_confidence(conf.clone(), n as f64);
        let w2 = normalize_confidence(conf.mapv(|c| c * 0.37), n as f64);
        let a = loss_cycl(&p, &q, &maps, &w1, &w1, &hp);
        let b = loss_cycl(&p, &q, &maps, &w2, &w2, &hp);
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn loss_breakdown_total_is_weighted_sum() {
        let hp = HyperParams::default();
        let lb = LossBreakdown::new(0.1, 0.2, 0.3, 0.4, &hp);
        assert_abs_diff_eq!(
            lb.total,
            0.5 * 0.1 + 1.0 * 0.2 + 1.0 * 0.3 + 10.0 * 0.4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn kernels_invariant_under_common_rigid_motion() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let n = 18;
        let p = random_points(&mut rng, n);
        let q = random_points(&mut rng, n);
        let maps = TransportPlan::from_plan(random_stochastic(&mut rng, n, n)).unwrap();
        let hp = HyperParams::default();
        let pose = RigidPose::new(RigidPose::rot_z(0.3), Vector3::new(0.1, 0.2, -0.3));

        let motion = RigidPose::new(
            RigidPose::axis_angle(Vector3::new(1.0, 2.0, 0.5), 1.1),
            Vector3::new(5.0, -2.0, 1.0),
        );
        let p2 = transform_points(&motion, p.view());
        let q2 = transform_points(&motion, q.view());
        // conjugated pose: undo the motion, apply the pose, redo the motion
        let conj = crate::rigid::compose_pose(
            &crate::rigid::compose_pose(&invert_pose(&motion), &pose),
            &motion,
        );

        let c1 = PointCloud::new(p).unwrap();
        let r1 = PointCloud::new(q).unwrap();
        let c2 = PointCloud::new(p2).unwrap();
        let r2 = PointCloud::new(q2).unwrap();
        let rep1 = consistency_report(&c1, &r1, &maps, &pose, &hp);
        let rep2 = consistency_report(&c2, &r2, &maps, &conj, &hp);
        for (a, b) in rep1
            .query
            .pseudo_labels
            .iter()
            .zip(rep2.query.pseudo_labels.iter())
        {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
        }
    }
}
