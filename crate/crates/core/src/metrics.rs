//! Pose and overlap evaluation metrics.

use ndarray::ArrayView1;

use crate::rigid::RigidPose;

/// Geodesic rotation distance in degrees:
/// `arccos((trace(R_a^T R_b) - 1) / 2)`, domain clamped.
pub fn rotation_error_deg(a: &RigidPose, b: &RigidPose) -> f64 {
    let m = a.rotation.transpose() * b.rotation;
    let c = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// Euclidean distance between the two translations, scene units.
pub fn translation_error(a: &RigidPose, b: &RigidPose) -> f64 {
    (a.translation - b.translation).norm()
}

/// Intersection over union between the thresholded confidence mask and the
/// ground-truth mask. Both-empty union counts as a perfect match.
pub fn overlap_iou(confidence: ArrayView1<'_, f64>, gt_mask: &[bool], threshold: f64) -> f64 {
    assert_eq!(confidence.len(), gt_mask.len());
    assert!(threshold > 0.0 && threshold < 1.0);
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&c, &gt) in confidence.iter().zip(gt_mask.iter()) {
        let pred = c > threshold;
        if pred && gt {
            inter += 1;
        }
        if pred || gt {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// ROC AUC of `scores` against boolean `labels` via the rank statistic, with
/// average ranks on ties. `None` when either class is empty.
pub fn roc_auc(scores: ArrayView1<'_, f64>, labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the average rank of their block
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}
