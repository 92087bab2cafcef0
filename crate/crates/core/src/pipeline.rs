//! End-to-end registration: descriptors, coarse FPS phase, fine phase with
//! an EM-like confidence fixed point, and outer refinement.
//!
//! Each phase repeats `conf_iters` times: solve correspondences with the
//! current confidence marginals, estimate a pose, score every point with the
//! consistency kernels, and substitute the clamped kernel product back in as
//! the next confidence. The affinity kernel itself is built from rigid-
//! invariant descriptors, so refinement rounds act by carrying the confidence
//! state forward onto re-aligned coordinates rather than by changing the
//! kernel.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{estimate_pose, AlignError, PosePair};
use crate::cloud::PointCloud;
use crate::features::{compute_geometric_features, FeatureError, DESCRIPTOR_K, DESCRIPTOR_SCALES};
use crate::kernels::{
    clamp_labels, consistency_report, loss_conf, loss_cycl, loss_pose, loss_sem, LossBreakdown,
};
use crate::ot::{
    build_log_affinity, delta_marginal, normalize_confidence, sinkhorn, ConfidenceState,
    LogAffinity, OtError, TransportPlan,
};
use crate::params::HyperParams;
use crate::rigid::{apply_pose, compose_pose, RigidPose};
use crate::sampling::{farthest_from_centroid, fps, subsample_indices};

/// Average cloud radius after scale normalization.
///
/// The geometric RBF scale is calibrated against decimeter-class objects in
/// metric units, where the kernel decays gently across the object. A radius
/// of one would sharpen it roughly sevenfold relative to that regime and the
/// confidence loop loses its capture basin; 0.5 keeps the kernel gentle
/// enough to latch onto a coarse initial pose while still suppressing
/// non-overlap regions once aligned.
pub const WORKING_RADIUS: f64 = 0.5;

/// How row-stochastic correspondences are derived from the affinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrespondenceMode {
    /// One-hot rows at the affinity argmax (ties break to the lowest index).
    Argmax,
    /// Row-wise softmax of the log affinity.
    Softmax,
    /// Sinkhorn with uniform marginals.
    UniformOt,
    /// Sinkhorn with confidence marginals.
    ConfidenceOt,
}

impl CorrespondenceMode {
    pub const ALL: [CorrespondenceMode; 4] = [
        CorrespondenceMode::Argmax,
        CorrespondenceMode::Softmax,
        CorrespondenceMode::UniformOt,
        CorrespondenceMode::ConfidenceOt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CorrespondenceMode::Argmax => "argmax",
            CorrespondenceMode::Softmax => "softmax",
            CorrespondenceMode::UniformOt => "uniform_ot",
            CorrespondenceMode::ConfidenceOt => "confidence_ot",
        }
    }
}

impl std::str::FromStr for CorrespondenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "argmax" => Ok(CorrespondenceMode::Argmax),
            "softmax" => Ok(CorrespondenceMode::Softmax),
            "uniform_ot" => Ok(CorrespondenceMode::UniformOt),
            "confidence_ot" => Ok(CorrespondenceMode::ConfidenceOt),
            other => Err(format!(
                "unknown correspondence mode {other:?}; expected one of \
                 argmax, softmax, uniform_ot, confidence_ot"
            )),
        }
    }
}

/// Registration configuration. Defaults mirror [`HyperParams::default`] with
/// 1024-point fine sets, 256-point coarse FPS sets and scale normalization
/// enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub hp: HyperParams,
    pub n_fine: usize,
    pub n_coarse: usize,
    pub mode: CorrespondenceMode,
    pub seed: u64,
    /// Rescale coordinates so the average cloud radius is one before kernel
    /// evaluation (the RBF scales assume that working scale); poses are
    /// mapped back to scene units. Off means raw units.
    pub normalize_scale: bool,
    /// Initial uniform confidence value in (0, 1].
    pub conf_init: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            hp: HyperParams::default(),
            n_fine: 1024,
            n_coarse: 256,
            mode: CorrespondenceMode::ConfidenceOt,
            seed: 0,
            normalize_scale: true,
            conf_init: 0.5,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.hp
            .validate()
            .map_err(PipelineError::BadHyperParams)?;
        if self.n_coarse > self.n_fine {
            return Err(PipelineError::BadConfig("n_coarse must not exceed n_fine"));
        }
        if self.n_coarse < 4 {
            return Err(PipelineError::BadConfig("n_coarse must be at least 4"));
        }
        if !(self.conf_init > 0.0 && self.conf_init <= 1.0) {
            return Err(PipelineError::BadConfig("conf_init must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Pipeline stage names used in error context and the iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Coarse,
    /// Fine solve; round 0 follows the coarse phase, later rounds are the
    /// outer refinements.
    Fine { round: usize },
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Coarse => write!(f, "coarse"),
            Phase::Fine { round } => write!(f, "fine[{round}]"),
        }
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PipelineError {
    #[error("{side} cloud has {got} points, need at least {needed}")]
    TooFewPoints {
        side: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("invalid configuration: {0}")]
    BadConfig(&'static str),
    #[error("invalid hyper-parameter: {0}")]
    BadHyperParams(&'static str),
    #[error("descriptor computation failed: {0}")]
    Features(#[from] FeatureError),
    #[error("{phase} phase transport failed: {source}")]
    Ot { phase: String, source: OtError },
    #[error("{phase} phase alignment failed: {source}")]
    Align { phase: String, source: AlignError },
}

/// One confidence-loop iteration in the trace.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub phase: Phase,
    pub iteration: usize,
    /// Cumulative query-to-reference pose after this iteration, scene units.
    pub pose: RigidPose,
    pub delta_marginal: f64,
    pub ent: f64,
    pub losses: LossBreakdown,
}

/// Registration output. Confidences and the transport plan refer to the fine
/// working sets; `indices_q` / `indices_r` map working rows back to rows of
/// the input clouds.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub pose: RigidPose,
    pub confidence_q: Array1<f64>,
    pub confidence_r: Array1<f64>,
    pub indices_q: Vec<usize>,
    pub indices_r: Vec<usize>,
    pub transport: TransportPlan,
    pub losses: LossBreakdown,
    pub ent: f64,
    pub delta_marginal: f64,
    pub trace: Vec<IterationRecord>,
}

/// Effective number of targets of a row-stochastic map: the exponential of
/// its mean row entropy. One-hot rows give 1, uniform rows give the column
/// count.
pub fn ent(m: ArrayView2<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for row in m.axis_iter(Axis(0)) {
        let mut h = 0.0;
        for &v in row {
            if v > 0.0 {
                h -= v * v.ln();
            }
        }
        acc += h;
    }
    (acc / m.nrows() as f64).exp()
}

fn argmax_map(lk: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(lk.raw_dim());
    for (row, mut dst) in lk.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let mut best = 0;
        let mut best_v = row[0];
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        dst[best] = 1.0;
    }
    out
}

fn softmax_map(lk: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(lk.raw_dim());
    for (row, mut dst) in lk.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &v) in dst.iter_mut().zip(row.iter()) {
            let e = (v - m).exp();
            *d = e;
            sum += e;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

/// Row-normalize with a uniform fallback for fully suppressed rows; returns
/// the indices of such rows so the caller can down-weight those points.
fn normalize_rows_lenient(m: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<usize>) {
    let mut out = Array2::zeros(m.raw_dim());
    let mut dead = Vec::new();
    let cols = m.ncols();
    for (i, (row, mut dst)) in m
        .axis_iter(Axis(0))
        .zip(out.axis_iter_mut(Axis(0)))
        .enumerate()
    {
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for (d, &s) in dst.iter_mut().zip(row.iter()) {
                *d = s / sum;
            }
        } else {
            dead.push(i);
            dst.fill(1.0 / cols as f64);
        }
    }
    (out, dead)
}

struct Correspondences {
    plan: TransportPlan,
    /// Working-set rows whose plan row (or column) vanished entirely;
    /// their confidence is pinned to the label floor for this iteration.
    dead_q: Vec<usize>,
    dead_r: Vec<usize>,
}

/// Derive correspondences under the requested mode.
pub fn correspondences(
    affinity: &LogAffinity,
    w_row: &ConfidenceState,
    w_col: &ConfidenceState,
    mode: CorrespondenceMode,
    hp: &HyperParams,
) -> Result<TransportPlan, OtError> {
    Ok(correspondences_impl(affinity, w_row, w_col, mode, hp)?.plan)
}

fn correspondences_impl(
    affinity: &LogAffinity,
    w_row: &ConfidenceState,
    w_col: &ConfidenceState,
    mode: CorrespondenceMode,
    hp: &HyperParams,
) -> Result<Correspondences, OtError> {
    let lk = affinity.matrix();
    match mode {
        CorrespondenceMode::Argmax => {
            let row_map = argmax_map(lk);
            let col_map = argmax_map(affinity.transposed().matrix());
            let plan = row_map.clone();
            Ok(Correspondences {
                plan: TransportPlan::from_parts(plan, row_map, col_map)?,
                dead_q: Vec::new(),
                dead_r: Vec::new(),
            })
        }
        CorrespondenceMode::Softmax => {
            let row_map = softmax_map(lk);
            let col_map = softmax_map(affinity.transposed().matrix());
            let plan = row_map.clone();
            Ok(Correspondences {
                plan: TransportPlan::from_parts(plan, row_map, col_map)?,
                dead_q: Vec::new(),
                dead_r: Vec::new(),
            })
        }
        CorrespondenceMode::UniformOt | CorrespondenceMode::ConfidenceOt => {
            let (w_r, w_c);
            if mode == CorrespondenceMode::UniformOt {
                let mass = w_row.target_mass();
                w_r = normalize_confidence(Array1::ones(lk.nrows()), mass);
                w_c = normalize_confidence(Array1::ones(lk.ncols()), mass);
            } else {
                w_r = w_row.clone();
                w_c = w_col.clone();
            }
            let plan = sinkhorn(affinity, w_r.weights(), w_c.weights(), hp.sinkhorn_iters)?;
            let (row_map, dead_q) = normalize_rows_lenient(plan.view());
            let (col_map, dead_r) = normalize_rows_lenient(plan.t());
            Ok(Correspondences {
                plan: TransportPlan::from_parts(plan, row_map, col_map)?,
                dead_q,
                dead_r,
            })
        }
    }
}

struct PhaseOutcome {
    pose: PosePair,
    conf_q: Array1<f64>,
    conf_r: Array1<f64>,
    plan: TransportPlan,
    delta_marginal: f64,
    ent: f64,
    losses: LossBreakdown,
}

struct PhaseContext<'a> {
    cfg: &'a RegistrationConfig,
    phase: Phase,
    /// Pose already applied to the query coordinates entering this phase.
    pre_pose: RigidPose,
    /// Scale factor applied to coordinates; trace poses are reported in
    /// scene units.
    scale: f64,
}

fn run_phase(
    query: &PointCloud,
    reference: &PointCloud,
    affinity: &LogAffinity,
    conf_q_init: Array1<f64>,
    conf_r_init: Array1<f64>,
    ctx: &PhaseContext<'_>,
    trace: &mut Vec<IterationRecord>,
) -> Result<PhaseOutcome, PipelineError> {
    let hp = &ctx.cfg.hp;
    let mass = (query.len() + reference.len()) as f64 / 2.0;
    let mut conf_q = conf_q_init;
    let mut conf_r = conf_r_init;

    let mut last: Option<PhaseOutcome> = None;
    for iteration in 0..hp.conf_iters {
        let w_q = normalize_confidence(conf_q.clone(), mass);
        let w_r = normalize_confidence(conf_r.clone(), mass);

        let corr = correspondences_impl(affinity, &w_q, &w_r, ctx.cfg.mode, hp).map_err(|e| {
            PipelineError::Ot {
                phase: ctx.phase.to_string(),
                source: e,
            }
        })?;
        let pose = estimate_pose(query, reference, &corr.plan, &w_q, &w_r).map_err(|e| {
            PipelineError::Align {
                phase: ctx.phase.to_string(),
                source: e,
            }
        })?;

        let report = consistency_report(query, reference, &corr.plan, &pose.query_to_ref, hp);
        let mut z_q = clamp_labels(&report.query.pseudo_labels);
        let mut z_r = clamp_labels(&report.reference.pseudo_labels);
        for &i in &corr.dead_q {
            z_q[i] = crate::kernels::Z_FLOOR;
        }
        for &j in &corr.dead_r {
            z_r[j] = crate::kernels::Z_FLOOR;
        }

        let l_cycl = loss_cycl(query, reference, &corr.plan, &w_q, &w_r, hp);
        let l_pose = loss_pose(query, reference, &pose.query_to_ref, &w_q, &w_r, hp);
        let l_sem = loss_sem(&corr.plan, query, reference, &w_q, &w_r, hp).unwrap_or(0.0);
        let l_conf =
            loss_conf(conf_q.view(), z_q.view()) + loss_conf(conf_r.view(), z_r.view());
        let losses = LossBreakdown::new(l_cycl, l_pose, l_sem, l_conf, hp);

        let dm = delta_marginal(corr.plan.plan(), w_q.weights());
        let ent_value = 0.5 * (ent(corr.plan.row_map()) + ent(corr.plan.col_map()));

        conf_q = z_q;
        conf_r = z_r;

        let mut cumulative = compose_pose(&ctx.pre_pose, &pose.query_to_ref);
        cumulative.translation /= ctx.scale;
        trace.push(IterationRecord {
            phase: ctx.phase,
            iteration,
            pose: cumulative,
            delta_marginal: dm,
            ent: ent_value,
            losses,
        });

        last = Some(PhaseOutcome {
            pose,
            conf_q: conf_q.clone(),
            conf_r: conf_r.clone(),
            plan: corr.plan,
            delta_marginal: dm,
            ent: ent_value,
            losses,
        });
    }
    Ok(last.expect("conf_iters >= 1 validated"))
}

fn ensure_descriptors(cloud: PointCloud) -> Result<PointCloud, PipelineError> {
    if cloud.geom_features().is_some() {
        Ok(cloud)
    } else {
        Ok(compute_geometric_features(
            &cloud,
            DESCRIPTOR_K,
            &DESCRIPTOR_SCALES,
        )?)
    }
}

fn splitmix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt;
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Register `query` against `reference`: estimate the rigid pose mapping
/// query coordinates into the reference frame, together with per-point
/// confidences and transport diagnostics.
pub fn register(
    query: &PointCloud,
    reference: &PointCloud,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult, PipelineError> {
    cfg.validate()?;
    for (cloud, side) in [(query, "query"), (reference, "reference")] {
        if cloud.len() < cfg.n_coarse {
            return Err(PipelineError::TooFewPoints {
                side,
                needed: cfg.n_coarse,
                got: cloud.len(),
            });
        }
    }

    // working sets: seeded uniform subsample down to n_fine
    let pick = |cloud: &PointCloud, salt: u64| -> (PointCloud, Vec<usize>) {
        if cloud.len() > cfg.n_fine {
            let idx = subsample_indices(cloud.len(), cfg.n_fine, splitmix(cfg.seed, salt));
            (cloud.select(&idx), idx)
        } else {
            (cloud.clone(), (0..cloud.len()).collect())
        }
    };
    let (mut work_q, indices_q) = pick(query, 0x71);
    let (mut work_r, indices_r) = pick(reference, 0x72);

    // scale normalization: bring the average cloud radius to WORKING_RADIUS
    // so the RBF scales see the decimeter-class object scale they assume
    let scale = if cfg.normalize_scale {
        let avg = 0.5 * (work_q.mean_radius() + work_r.mean_radius());
        if avg > f64::MIN_POSITIVE {
            WORKING_RADIUS / avg
        } else {
            1.0
        }
    } else {
        1.0
    };
    if scale != 1.0 {
        work_q = work_q.scaled(scale);
        work_r = work_r.scaled(scale);
    }

    work_q = ensure_descriptors(work_q)?;
    work_r = ensure_descriptors(work_r)?;

    let mut trace = Vec::new();

    // coarse phase on FPS subsets
    let n_coarse_q = cfg.n_coarse.min(work_q.len());
    let n_coarse_r = cfg.n_coarse.min(work_r.len());
    let coarse_q = work_q.select(&fps(
        work_q.points(),
        n_coarse_q,
        farthest_from_centroid(work_q.points()),
    ));
    let coarse_r = work_r.select(&fps(
        work_r.points(),
        n_coarse_r,
        farthest_from_centroid(work_r.points()),
    ));
    let coarse_affinity =
        build_log_affinity(&coarse_q, &coarse_r, &cfg.hp).map_err(|e| PipelineError::Ot {
            phase: Phase::Coarse.to_string(),
            source: e,
        })?;
    let coarse = run_phase(
        &coarse_q,
        &coarse_r,
        &coarse_affinity,
        Array1::from_elem(coarse_q.len(), cfg.conf_init),
        Array1::from_elem(coarse_r.len(), cfg.conf_init),
        &PhaseContext {
            cfg,
            phase: Phase::Coarse,
            pre_pose: RigidPose::identity(),
            scale,
        },
        &mut trace,
    )?;
    let mut total = coarse.pose.query_to_ref;

    // fine phase plus refinements; the affinity is feature-only and thus
    // shared across rounds, while confidences carry forward
    let fine_affinity =
        build_log_affinity(&work_q, &work_r, &cfg.hp).map_err(|e| PipelineError::Ot {
            phase: Phase::Fine { round: 0 }.to_string(),
            source: e,
        })?;
    let mut conf_q = Array1::from_elem(work_q.len(), cfg.conf_init);
    let mut conf_r = Array1::from_elem(work_r.len(), cfg.conf_init);
    let mut last = None;
    for round in 0..=cfg.hp.refine_iters {
        let aligned_q = apply_pose(&total, &work_q);
        let out = run_phase(
            &aligned_q,
            &work_r,
            &fine_affinity,
            conf_q,
            conf_r,
            &PhaseContext {
                cfg,
                phase: Phase::Fine { round },
                pre_pose: total,
                scale,
            },
            &mut trace,
        )?;
        total = compose_pose(&total, &out.pose.query_to_ref);
        conf_q = out.conf_q.clone();
        conf_r = out.conf_r.clone();
        last = Some(out);
    }
    let last = last.expect("at least the round-0 fine phase ran");

    // back to scene units
    let mut pose = total;
    pose.translation /= scale;

    Ok(RegistrationResult {
        pose,
        confidence_q: conf_q,
        confidence_r: conf_r,
        indices_q,
        indices_r,
        transport: last.plan,
        losses: last.losses,
        ent: last.ent,
        delta_marginal: last.delta_marginal,
        trace,
    })
}
