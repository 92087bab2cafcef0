//! Entropic optimal transport: affinity kernel, log-domain Sinkhorn with
//! target marginals, and row-stochastic correspondence maps.
//!
//! The kernel is never exponentiated eagerly. At temperature 0.01 its linear
//! form overflows f64, so everything downstream consumes `log K` and the
//! transport plan is recovered as `exp(log K + u + v)` only after the dual
//! variables have absorbed the scale.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::params::HyperParams;

/// Confidence-mean floor below which weighting falls back to uniform.
pub const CONF_MEAN_FLOOR: f64 = 1e-6;

/// Relative tolerance on the row/column mass balance.
pub const MASS_TOL: f64 = 1e-6;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum OtError {
    #[error("missing {0} features on {1} cloud")]
    MissingFeatures(&'static str, &'static str),
    #[error("{0} feature dimensions differ between clouds ({1} vs {2})")]
    FeatureDimMismatch(&'static str, usize, usize),
    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),
    #[error("marginal masses differ: row side {row_mass}, column side {col_mass}")]
    MassMismatch { row_mass: f64, col_mass: f64 },
    #[error("marginal weights must be strictly positive (index {0})")]
    NonPositiveWeight(usize),
    #[error("non-finite dual variable on the {side} side at iteration {iteration}")]
    NonFiniteDual { side: &'static str, iteration: usize },
    #[error("plan {axis} {index} has zero sum; point is fully suppressed")]
    DegenerateRow { axis: &'static str, index: usize },
    #[error("plan contains a negative or non-finite entry at ({0}, {1})")]
    InvalidPlanEntry(usize, usize),
}

/// Natural log of the affinity kernel; all entries finite.
#[derive(Debug, Clone)]
pub struct LogAffinity {
    log_kernel: Array2<f64>,
}

impl LogAffinity {
    /// Wrap a precomputed log-kernel. Entries must be finite.
    pub fn from_matrix(log_kernel: Array2<f64>) -> Result<Self, OtError> {
        if log_kernel.iter().any(|v| !v.is_finite()) {
            return Err(OtError::NonFiniteInput("log kernel"));
        }
        Ok(Self { log_kernel })
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.log_kernel.view()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.log_kernel.nrows(), self.log_kernel.ncols())
    }

    /// Transposed copy (used by the argmax / softmax correspondence modes).
    pub fn transposed(&self) -> Self {
        Self {
            log_kernel: self.log_kernel.t().to_owned(),
        }
    }
}

fn clamped_cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.dot(&b).clamp(-1.0, 1.0)
}

fn check_finite(m: ArrayView2<'_, f64>, what: &'static str) -> Result<(), OtError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(OtError::NonFiniteInput(what));
    }
    Ok(())
}

/// Build the log-affinity between two featured clouds:
///
/// `log K[i,j] = cos(G_q[i], G_r[j]) / tau + lambda/tau * ln(1 + cos(S_q[i], S_r[j]) + eps)`
///
/// The semantic term is dropped when `lambda == 0` or either cloud lacks
/// semantic features (absent features with `lambda > 0` are an error).
pub fn build_log_affinity(
    query: &PointCloud,
    reference: &PointCloud,
    hp: &HyperParams,
) -> Result<LogAffinity, OtError> {
    let gq = query
        .geom_features()
        .ok_or(OtError::MissingFeatures("geometric", "query"))?;
    let gr = reference
        .geom_features()
        .ok_or(OtError::MissingFeatures("geometric", "reference"))?;
    if gq.ncols() != gr.ncols() {
        return Err(OtError::FeatureDimMismatch(
            "geometric",
            gq.ncols(),
            gr.ncols(),
        ));
    }
    check_finite(gq, "query geometric features")?;
    check_finite(gr, "reference geometric features")?;

    let sem = if hp.lambda > 0.0 {
        let sq = query
            .sem_features()
            .ok_or(OtError::MissingFeatures("semantic", "query"))?;
        let sr = reference
            .sem_features()
            .ok_or(OtError::MissingFeatures("semantic", "reference"))?;
        if sq.ncols() != sr.ncols() {
            return Err(OtError::FeatureDimMismatch(
                "semantic",
                sq.ncols(),
                sr.ncols(),
            ));
        }
        check_finite(sq, "query semantic features")?;
        check_finite(sr, "reference semantic features")?;
        Some((sq, sr))
    } else {
        None
    };

    let (np, nr) = (query.len(), reference.len());
    let inv_tau = 1.0 / hp.tau;
    let sem_scale = hp.lambda / hp.tau;
    let eps = hp.eps_sem;

    let mut log_kernel = Array2::zeros((np, nr));
    Zip::indexed(log_kernel.axis_iter_mut(Axis(0))).par_for_each(|i, mut row| {
        for j in 0..nr {
            let mut v = inv_tau * clamped_cosine(gq.row(i), gr.row(j));
            if let Some((sq, sr)) = &sem {
                let c = clamped_cosine(sq.row(i), sr.row(j));
                v += sem_scale * (1.0 + c + eps).ln();
            }
            row[j] = v;
        }
    });

    LogAffinity::from_matrix(log_kernel)
}

/// Per-point confidence together with its mean-normalized marginal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceState {
    confidence: Array1<f64>,
    weights: Array1<f64>,
    target_mass: f64,
}

impl ConfidenceState {
    pub fn confidence(&self) -> ArrayView1<'_, f64> {
        self.confidence.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn target_mass(&self) -> f64 {
        self.target_mass
    }

    pub fn len(&self) -> usize {
        self.confidence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confidence.is_empty()
    }
}

/// Rescale confidences into marginal weights of total `target_mass`.
///
/// When the mean confidence falls below [`CONF_MEAN_FLOOR`] the weights fall
/// back to uniform, so a degenerate confidence vector never starves the
/// transport problem.
pub fn normalize_confidence(confidence: Array1<f64>, target_mass: f64) -> ConfidenceState {
    debug_assert!(target_mass > 0.0);
    debug_assert!(confidence.iter().all(|c| (0.0..=1.0).contains(c)));
    let n = confidence.len();
    let total: f64 = confidence.iter().sum();
    let weights = if total / n as f64 >= CONF_MEAN_FLOOR {
        let scale = target_mass / total;
        confidence.mapv(|c| c * scale)
    } else {
        Array1::from_elem(n, target_mass / n as f64)
    };
    ConfidenceState {
        confidence,
        weights,
        target_mass,
    }
}

/// Log-sum-exp of `terms[k] + shift[k]` with max subtraction; the reduction
/// order is fixed so results do not depend on the parallel schedule.
fn log_sum_exp<I>(terms: I) -> f64
where
    I: Iterator<Item = f64> + Clone,
{
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = terms.map(|t| (t - m).exp()).sum();
    m + s.ln()
}

/// Log-domain Sinkhorn with target marginals.
///
/// Alternates `u` then `v` log-sum-exp updates from zero initial duals for
/// `iters` rounds and returns `exp(log K + u (+) v)`. Because the `v` step
/// runs last, column sums match `w_col` to rounding; the row-side residual
/// is what [`delta_marginal`] measures.
pub fn sinkhorn(
    log_affinity: &LogAffinity,
    w_row: ArrayView1<'_, f64>,
    w_col: ArrayView1<'_, f64>,
    iters: usize,
) -> Result<Array2<f64>, OtError> {
    assert!(iters >= 1, "sinkhorn needs at least one iteration");
    let lk = log_affinity.matrix();
    let (np, nq) = (lk.nrows(), lk.ncols());
    assert_eq!(w_row.len(), np);
    assert_eq!(w_col.len(), nq);

    let row_mass: f64 = w_row.iter().sum();
    let col_mass: f64 = w_col.iter().sum();
    if (row_mass - col_mass).abs() > MASS_TOL * row_mass.abs().max(col_mass.abs()) {
        return Err(OtError::MassMismatch { row_mass, col_mass });
    }
    if let Some(i) = w_row.iter().position(|&w| !(w > 0.0)) {
        return Err(OtError::NonPositiveWeight(i));
    }
    if let Some(j) = w_col.iter().position(|&w| !(w > 0.0)) {
        return Err(OtError::NonPositiveWeight(j));
    }

    let log_w_row = w_row.mapv(f64::ln);
    let log_w_col = w_col.mapv(f64::ln);
    let mut u = Array1::<f64>::zeros(np);
    let mut v = Array1::<f64>::zeros(nq);

    for it in 0..iters {
        {
            let v_ref = &v;
            Zip::indexed(&mut u).par_for_each(|i, ui| {
                let lse = log_sum_exp((0..nq).map(|j| lk[[i, j]] + v_ref[j]));
                *ui = log_w_row[i] - lse;
            });
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(OtError::NonFiniteDual {
                side: "row",
                iteration: it + 1,
            });
        }
        {
            let u_ref = &u;
            Zip::indexed(&mut v).par_for_each(|j, vj| {
                let lse = log_sum_exp((0..np).map(|i| lk[[i, j]] + u_ref[i]));
                *vj = log_w_col[j] - lse;
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(OtError::NonFiniteDual {
                side: "column",
                iteration: it + 1,
            });
        }
    }

    let mut plan = Array2::zeros((np, nq));
    Zip::indexed(plan.axis_iter_mut(Axis(0))).par_for_each(|i, mut row| {
        for j in 0..nq {
            row[j] = (lk[[i, j]] + u[i] + v[j]).exp();
        }
    });
    Ok(plan)
}

/// Row-normalize a plan in both directions: `M_pq` from the rows of the plan
/// and `M_qp` from the rows of its transpose.
pub fn row_normalize(plan: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>), OtError> {
    for ((i, j), &v) in plan.indexed_iter() {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(OtError::InvalidPlanEntry(i, j));
        }
    }
    let row_map = normalize_rows(plan, "row")?;
    let col_map = normalize_rows(plan.t(), "column")?;
    Ok((row_map, col_map))
}

fn normalize_rows(m: ArrayView2<'_, f64>, axis: &'static str) -> Result<Array2<f64>, OtError> {
    let mut out = Array2::zeros(m.raw_dim());
    for (index, (row, mut dst)) in m
        .axis_iter(Axis(0))
        .zip(out.axis_iter_mut(Axis(0)))
        .enumerate()
    {
        let sum: f64 = row.iter().sum();
        if sum <= 0.0 {
            return Err(OtError::DegenerateRow { axis, index });
        }
        let inv = 1.0 / sum;
        Zip::from(&mut dst).and(&row).for_each(|d, &s| *d = s * inv);
    }
    Ok(out)
}

/// A transport plan with its derived row-stochastic maps.
///
/// Built from a Sinkhorn plan via [`TransportPlan::from_plan`], in which case
/// `col_map` is the row-normalized transpose of `plan`. The argmax and
/// softmax correspondence modes construct the two maps independently through
/// [`TransportPlan::from_parts`].
#[derive(Debug, Clone)]
pub struct TransportPlan {
    plan: Array2<f64>,
    row_map: Array2<f64>,
    col_map: Array2<f64>,
}

impl TransportPlan {
    pub fn from_plan(plan: Array2<f64>) -> Result<Self, OtError> {
        let (row_map, col_map) = row_normalize(plan.view())?;
        Ok(Self {
            plan,
            row_map,
            col_map,
        })
    }

    /// Assemble from independently built maps. Rows of both maps must sum
    /// to one; this is the constructor for the non-transport modes.
    pub fn from_parts(
        plan: Array2<f64>,
        row_map: Array2<f64>,
        col_map: Array2<f64>,
    ) -> Result<Self, OtError> {
        for (m, axis) in [(&row_map, "row"), (&col_map, "column")] {
            for (index, row) in m.axis_iter(Axis(0)).enumerate() {
                let sum: f64 = row.iter().sum();
                if !sum.is_finite() || (sum - 1.0).abs() > 1e-9 {
                    return Err(OtError::DegenerateRow { axis, index });
                }
            }
        }
        Ok(Self {
            plan,
            row_map,
            col_map,
        })
    }

    pub fn plan(&self) -> ArrayView2<'_, f64> {
        self.plan.view()
    }

    /// Row-stochastic map from the row side onto the column side.
    pub fn row_map(&self) -> ArrayView2<'_, f64> {
        self.row_map.view()
    }

    /// Row-stochastic map from the column side onto the row side.
    pub fn col_map(&self) -> ArrayView2<'_, f64> {
        self.col_map.view()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.plan.nrows(), self.plan.ncols())
    }
}

/// Entropy-regularized transport objective `<C, plan> + tau * sum plan ln plan`
/// with `C = -tau * log K`; `0 ln 0` counts as zero.
pub fn entropic_ot_objective(
    plan: ArrayView2<'_, f64>,
    log_affinity: &LogAffinity,
    tau: f64,
) -> f64 {
    let lk = log_affinity.matrix();
    let mut acc = 0.0;
    for (p, k) in plan.iter().zip(lk.iter()) {
        if *p > 0.0 {
            acc += *p * (-tau * *k) + tau * *p * p.ln();
        }
    }
    acc
}

/// Mean absolute row-sum deviation from the target row marginal, divided by
/// the mean target weight (dimensionless, comparable across sizes).
pub fn delta_marginal(plan: ArrayView2<'_, f64>, w_row: ArrayView1<'_, f64>) -> f64 {
    let n = w_row.len();
    let mut dev = 0.0;
    for (row, &w) in plan.axis_iter(Axis(0)).zip(w_row.iter()) {
        let sum: f64 = row.iter().sum();
        dev += (sum - w).abs();
    }
    let mean_w: f64 = w_row.iter().sum::<f64>() / n as f64;
    dev / n as f64 / mean_w
}
