//! Deterministic rigid registration of partially overlapping point clouds.
//!
//! Correspondences are solved as an entropy-regularized optimal transport
//! problem whose target marginals are per-point confidences, refined through
//! an explicit fixed-point loop; poses come from a confidence-weighted
//! Umeyama solve over the soft matches.

pub mod align;
pub mod features;
pub mod cloud;
pub mod kernels;
pub mod ot;
pub mod pipeline;
pub mod metrics;
pub mod params;
pub mod rigid;
pub mod sampling;
pub mod scene;

pub use align::{estimate_pose, pose_objective, weighted_umeyama, CorrespondenceBundle, PosePair};
pub use cloud::PointCloud;
pub use kernels::{
    consistency_report, loss_conf, loss_cycl, loss_pose, loss_sem, phi_cycl, phi_pose, phi_sem,
    pseudo_confidence, ConsistencyReport, LossBreakdown,
};
pub use ot::{
    build_log_affinity, delta_marginal, entropic_ot_objective, normalize_confidence,
    row_normalize, sinkhorn, ConfidenceState, LogAffinity, TransportPlan,
};
pub use params::HyperParams;
pub use rigid::{apply_pose, compose_pose, invert_pose, RigidPose};
