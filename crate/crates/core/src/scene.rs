//! Synthetic scene-pair generation with exact ground truth.
//!
//! A master surface is sampled once, two half-space views are cut out of it
//! along a random direction with quantile thresholds chosen so both views
//! share exactly the requested fraction of their inlier points, and the
//! query view is mapped into its own frame by the inverse ground-truth pose.
//! Coordinate noise goes on the query side only and is resampled to stay
//! within three sigma, which keeps the overlap invariant exact; outliers are
//! drawn uniformly from each view's expanded bounding box.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::rigid::{invert_pose, transform_points, RigidPose};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    BadSpec(&'static str),
    #[error("could not achieve overlap {requested} within +/-0.05 after {attempts} attempts")]
    InfeasibleOverlap { requested: f64, attempts: usize },
}

/// Shape family of the sampled master surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    SphereUnion,
    BoxUnion,
    ParametricBlob,
    Composite,
}

/// Recipe for one synthetic scene pair. A fixed seed yields a bit-identical
/// scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Points per view (inliers + outliers).
    pub n_points: usize,
    pub shape: ShapeKind,
    /// Shared fraction of each view's inlier points, in (0, 1].
    pub overlap_fraction: f64,
    /// Fraction of each view replaced by box outliers, in [0, 1).
    pub outlier_fraction: f64,
    /// Query coordinate noise as a fraction of the reference diameter.
    pub noise_sigma: f64,
    /// Upper bound on the ground-truth rotation angle, degrees.
    pub rotation_magnitude: f64,
    /// Number of labeled semantic parts.
    pub n_parts: usize,
    /// Gaussian noise added to the one-hot part features before renormalizing.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_points: 1024,
            shape: ShapeKind::ParametricBlob,
            overlap_fraction: 0.5,
            outlier_fraction: 0.1,
            noise_sigma: 0.005,
            rotation_magnitude: 60.0,
            n_parts: 6,
            feature_noise: 0.1,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.n_points < 8 {
            return Err(SceneError::BadSpec("n_points must be at least 8"));
        }
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction <= 1.0) {
            return Err(SceneError::BadSpec("overlap_fraction must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(SceneError::BadSpec("outlier_fraction must be in [0, 1)"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SceneError::BadSpec("noise_sigma must be finite and >= 0"));
        }
        if !(self.rotation_magnitude >= 0.0 && self.rotation_magnitude.is_finite()) {
            return Err(SceneError::BadSpec("rotation_magnitude must be >= 0"));
        }
        if self.n_parts < 1 {
            return Err(SceneError::BadSpec("n_parts must be at least 1"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(SceneError::BadSpec("feature_noise must be >= 0"));
        }
        Ok(())
    }
}

/// A generated pair with its exact ground truth. `gt_pose` maps query
/// coordinates into the reference frame; overlap masks flag the shared
/// inlier points and are disjoint from the outlier flags.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub query: PointCloud,
    pub reference: PointCloud,
    pub gt_pose: RigidPose,
    pub gt_overlap_q: Vec<bool>,
    pub gt_overlap_r: Vec<bool>,
    pub outlier_q: Vec<bool>,
    pub outlier_r: Vec<bool>,
    pub seed: u64,
}

impl ScenePair {
    /// Maximum pairwise extent of the reference cloud; the scale every
    /// relative threshold refers to.
    pub fn diameter(&self) -> f64 {
        self.reference.diameter()
    }
}

fn unit_dir(rng: &mut ChaCha12Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0f64),
        ];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

#[derive(Clone)]
enum Primitive {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half: [f64; 3] },
}

impl Primitive {
    fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Primitive::Sphere { center, radius } => {
                let d2: f64 = (0..3).map(|k| (p[k] - center[k]).powi(2)).sum();
                d2 < radius * radius * (1.0 - 1e-9)
            }
            Primitive::Box { center, half } => {
                (0..3).all(|k| (p[k] - center[k]).abs() < half[k] * (1.0 - 1e-9))
            }
        }
    }

    fn sample_surface(&self, rng: &mut ChaCha12Rng) -> [f64; 3] {
        match self {
            Primitive::Sphere { center, radius } => {
                let d = unit_dir(rng);
                [
                    center[0] + radius * d[0],
                    center[1] + radius * d[1],
                    center[2] + radius * d[2],
                ]
            }
            Primitive::Box { center, half } => {
                // pick a face proportional to its area, then a point on it
                let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.gen_range(0.0..total);
                let mut axis = 0;
                for (k, &a) in areas.iter().enumerate() {
                    if pick < a {
                        axis = k;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = if k == axis {
                        center[k] + sign * half[k]
                    } else {
                        center[k] + rng.gen_range(-half[k]..half[k])
                    };
                }
                p
            }
        }
    }
}

/// Deterministic blob radius field: a few random spherical-harmonic-flavored
/// ripples on top of the unit sphere.
struct BlobField {
    amp: [f64; 3],
    freq_theta: [f64; 3],
    freq_phi: [f64; 3],
    phase: [f64; 3],
}

impl BlobField {
    fn new(rng: &mut ChaCha12Rng) -> Self {
        let mut amp = [0.0; 3];
        let mut ft = [0.0; 3];
        let mut fp = [0.0; 3];
        let mut ph = [0.0; 3];
        for k in 0..3 {
            amp[k] = rng.gen_range(0.06..0.22);
            ft[k] = rng.gen_range(1..4) as f64;
            fp[k] = rng.gen_range(1..4) as f64;
            ph[k] = rng.gen_range(0.0..std::f64::consts::TAU);
        }
        Self {
            amp,
            freq_theta: ft,
            freq_phi: fp,
            phase: ph,
        }
    }

    fn radius(&self, dir: [f64; 3]) -> f64 {
        let theta = dir[2].clamp(-1.0, 1.0).acos();
        let phi = dir[1].atan2(dir[0]);
        let mut r = 1.0;
        for k in 0..3 {
            r += self.amp[k]
                * (self.freq_theta[k] * theta).sin()
                * (self.freq_phi[k] * phi + self.phase[k]).sin();
        }
        r.max(0.3)
    }
}

enum Surface {
    Primitives(Vec<Primitive>),
    Blob {
        field: BlobField,
        anchors: Vec<[f64; 3]>,
    },
}

fn build_surface(shape: ShapeKind, n_parts: usize, rng: &mut ChaCha12Rng) -> Surface {
    let random_center = |rng: &mut ChaCha12Rng| {
        [
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6f64),
        ]
    };
    match shape {
        ShapeKind::SphereUnion => Surface::Primitives(
            (0..n_parts)
                .map(|_| Primitive::Sphere {
                    center: random_center(rng),
                    radius: rng.gen_range(0.45..0.85),
                })
                .collect(),
        ),
        ShapeKind::BoxUnion => Surface::Primitives(
            (0..n_parts)
                .map(|_| Primitive::Box {
                    center: random_center(rng),
                    half: [
                        rng.gen_range(0.3..0.7),
                        rng.gen_range(0.3..0.7),
                        rng.gen_range(0.3..0.7),
                    ],
                })
                .collect(),
        ),
        ShapeKind::Composite => Surface::Primitives(
            (0..n_parts)
                .map(|i| {
                    if i % 2 == 0 {
                        Primitive::Sphere {
                            center: random_center(rng),
                            radius: rng.gen_range(0.45..0.85),
                        }
                    } else {
                        Primitive::Box {
                            center: random_center(rng),
                            half: [
                                rng.gen_range(0.3..0.7),
                                rng.gen_range(0.3..0.7),
                                rng.gen_range(0.3..0.7),
                            ],
                        }
                    }
                })
                .collect(),
        ),
        ShapeKind::ParametricBlob => Surface::Blob {
            field: BlobField::new(rng),
            anchors: (0..n_parts).map(|_| unit_dir(rng)).collect(),
        },
    }
}

/// Sample one master surface point with its part label. For primitive
/// unions, surface points strictly inside another primitive are rejected.
fn sample_master(surface: &Surface, rng: &mut ChaCha12Rng) -> Option<([f64; 3], usize)> {
    match surface {
        Surface::Primitives(prims) => {
            for _ in 0..64 {
                let part = rng.gen_range(0..prims.len());
                let p = prims[part].sample_surface(rng);
                let buried = prims
                    .iter()
                    .enumerate()
                    .any(|(j, prim)| j != part && prim.contains(p));
                if !buried {
                    return Some((p, part));
                }
            }
            None
        }
        Surface::Blob { field, anchors } => {
            let dir = unit_dir(rng);
            let r = field.radius(dir);
            let p = [r * dir[0], r * dir[1], r * dir[2]];
            let part = anchors
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| {
                    let da = dir[0] * a[0] + dir[1] * a[1] + dir[2] * a[2];
                    let db = dir[0] * b[0] + dir[1] * b[1] + dir[2] * b[2];
                    da.total_cmp(&db)
                })
                .map(|(i, _)| i)
                .unwrap_or(0);
            Some((p, part))
        }
    }
}

fn one_hot_features(
    labels: &[usize],
    n_parts: usize,
    feature_noise: f64,
    rng: &mut ChaCha12Rng,
) -> Array2<f64> {
    let n = labels.len();
    let mut m = Array2::zeros((n, n_parts));
    for (i, &l) in labels.iter().enumerate() {
        m[[i, l]] = 1.0;
    }
    if feature_noise > 0.0 {
        for v in m.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *v += feature_noise * g;
        }
    }
    for mut row in m.axis_iter_mut(Axis(0)) {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            row.mapv_inplace(|v| v / norm);
        } else {
            row.fill(0.0);
            row[0] = 1.0;
        }
    }
    m
}

fn bounding_box(points: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

fn max_extent(points: &[[f64; 3]]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d2: f64 = (0..3).map(|k| (points[i][k] - points[j][k]).powi(2)).sum();
            best = best.max(d2);
        }
    }
    best.sqrt()
}

struct ViewDraft {
    points: Vec<[f64; 3]>,
    labels: Vec<usize>,
    overlap: Vec<bool>,
    outlier: Vec<bool>,
}

impl ViewDraft {
    fn shuffled_cloud(
        mut self,
        n_parts: usize,
        feature_noise: f64,
        rng: &mut ChaCha12Rng,
    ) -> (PointCloud, Vec<bool>, Vec<bool>) {
        let n = self.points.len();
        // seeded Fisher-Yates so point order encodes nothing
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            self.points.swap(i, j);
            self.labels.swap(i, j);
            self.overlap.swap(i, j);
            self.outlier.swap(i, j);
        }
        let pts = Array2::from_shape_fn((n, 3), |(i, k)| self.points[i][k]);
        let sem = one_hot_features(&self.labels, n_parts, feature_noise, rng);
        let cloud = PointCloud::new(pts)
            .unwrap()
            .with_sem_features(sem)
            .unwrap();
        (cloud, self.overlap, self.outlier)
    }
}

/// Generate a scene pair from a spec. Deterministic in `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<ScenePair, SceneError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);

    let n_out = (spec.outlier_fraction * spec.n_points as f64).round() as usize;
    let n_in = spec.n_points - n_out;
    let n_ov = (spec.overlap_fraction * n_in as f64).round() as usize;
    let n_only = n_in - n_ov;
    if n_ov < 3 {
        return Err(SceneError::BadSpec(
            "too few overlap points; raise n_points or overlap_fraction",
        ));
    }

    const ATTEMPTS: usize = 100;
    for _attempt in 0..ATTEMPTS {
        let surface = build_surface(spec.shape, spec.n_parts, &mut rng);
        let n_master = 6 * n_in.max(64);
        let mut master: Vec<([f64; 3], usize)> = Vec::with_capacity(n_master);
        let mut failed = false;
        for _ in 0..n_master {
            match sample_master(&surface, &mut rng) {
                Some(ps) => master.push(ps),
                None => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            continue; // pathological primitive layout; try a fresh surface
        }

        // split along a random direction by quantile bands
        let u = unit_dir(&mut rng);
        let centroid = {
            let mut c = [0.0; 3];
            for (p, _) in &master {
                for k in 0..3 {
                    c[k] += p[k];
                }
            }
            c.map(|v| v / master.len() as f64)
        };
        let mut order: Vec<usize> = (0..master.len()).collect();
        let score = |p: &[f64; 3]| {
            (p[0] - centroid[0]) * u[0] + (p[1] - centroid[1]) * u[1] + (p[2] - centroid[2]) * u[2]
        };
        order.sort_by(|&a, &b| score(&master[a].0).total_cmp(&score(&master[b].0)).then(a.cmp(&b)));

        let f = spec.overlap_fraction;
        let lo_cut = ((1.0 - f) / (2.0 - f) * master.len() as f64).round() as usize;
        let hi_cut = (1.0 / (2.0 - f) * master.len() as f64).round() as usize;
        let band_ref_only = &order[..lo_cut];
        let band_overlap = &order[lo_cut..hi_cut];
        let band_query_only = &order[hi_cut..];
        if band_overlap.len() < n_ov
            || band_ref_only.len() < n_only
            || band_query_only.len() < n_only
        {
            continue;
        }

        let pick = |band: &[usize], m: usize, rng: &mut ChaCha12Rng| -> Vec<usize> {
            let mut sel = rand::seq::index::sample(rng, band.len(), m).into_vec();
            sel.sort_unstable();
            sel.into_iter().map(|i| band[i]).collect()
        };
        let overlap_idx = pick(band_overlap, n_ov, &mut rng);
        let ref_only_idx = pick(band_ref_only, n_only, &mut rng);
        let query_only_idx = pick(band_query_only, n_only, &mut rng);

        // reference view stays in the master frame
        let mut ref_points: Vec<[f64; 3]> = Vec::with_capacity(spec.n_points);
        let mut ref_labels = Vec::with_capacity(spec.n_points);
        let mut ref_overlap = Vec::with_capacity(spec.n_points);
        for &i in overlap_idx.iter().chain(ref_only_idx.iter()) {
            ref_points.push(master[i].0);
            ref_labels.push(master[i].1);
            ref_overlap.push(false);
        }
        for v in ref_overlap.iter_mut().take(n_ov) {
            *v = true;
        }

        let diameter = max_extent(&ref_points);
        if diameter <= 0.0 {
            continue;
        }

        // ground-truth motion: query frame -> reference frame
        let axis = unit_dir(&mut rng);
        let angle = rng.gen_range(0.0..=spec.rotation_magnitude.max(f64::MIN_POSITIVE))
            .to_radians();
        let t_dir = unit_dir(&mut rng);
        let t_mag = rng.gen_range(0.0..0.5 * diameter);
        let gt_pose = RigidPose::new(
            RigidPose::axis_angle(nalgebra::Vector3::new(axis[0], axis[1], axis[2]), angle),
            nalgebra::Vector3::new(t_dir[0] * t_mag, t_dir[1] * t_mag, t_dir[2] * t_mag),
        );
        let to_query = invert_pose(&gt_pose);

        // query view: shared overlap points + its own band, mapped into the
        // query frame, with truncated Gaussian noise on coordinates
        let sigma = spec.noise_sigma * diameter;
        let mut query_points: Vec<[f64; 3]> = Vec::with_capacity(spec.n_points);
        let mut query_labels = Vec::with_capacity(spec.n_points);
        let mut query_overlap = Vec::with_capacity(spec.n_points);
        for &i in overlap_idx.iter().chain(query_only_idx.iter()) {
            let mut p = to_query.transform_point(master[i].0);
            if sigma > 0.0 {
                let noise = loop {
                    let g = [
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                    ]
                    .map(|g: f64| sigma * g);
                    let n2: f64 = g.iter().map(|x| x * x).sum();
                    if n2.sqrt() <= 3.0 * sigma {
                        break g;
                    }
                };
                for k in 0..3 {
                    p[k] += noise[k];
                }
            }
            query_points.push(p);
            query_labels.push(master[i].1);
            query_overlap.push(false);
        }
        for v in query_overlap.iter_mut().take(n_ov) {
            *v = true;
        }

        // uniform box outliers in each view's own expanded bounding box
        let mut add_outliers =
            |points: &mut Vec<[f64; 3]>, labels: &mut Vec<usize>, overlap: &mut Vec<bool>,
             rng: &mut ChaCha12Rng| {
                let (lo, hi) = bounding_box(points);
                let margin: Vec<f64> = (0..3).map(|k| 0.1 * (hi[k] - lo[k]).max(1e-9)).collect();
                let mut flags = vec![false; points.len()];
                for _ in 0..n_out {
                    let p = [
                        rng.gen_range(lo[0] - margin[0]..hi[0] + margin[0]),
                        rng.gen_range(lo[1] - margin[1]..hi[1] + margin[1]),
                        rng.gen_range(lo[2] - margin[2]..hi[2] + margin[2]),
                    ];
                    points.push(p);
                    labels.push(rng.gen_range(0..spec.n_parts));
                    overlap.push(false);
                    flags.push(true);
                }
                flags
            };
        let ref_outlier = add_outliers(&mut ref_points, &mut ref_labels, &mut ref_overlap, &mut rng);
        let query_outlier =
            add_outliers(&mut query_points, &mut query_labels, &mut query_overlap, &mut rng);

        // measured overlap must honor the request
        let measured = n_ov as f64 / n_in as f64;
        if (measured - f).abs() > 0.05 {
            continue;
        }

        let (reference, gt_overlap_r, outlier_r) = ViewDraft {
            points: ref_points,
            labels: ref_labels,
            overlap: ref_overlap,
            outlier: ref_outlier,
        }
        .shuffled_cloud(spec.n_parts, spec.feature_noise, &mut rng);
        let (query, gt_overlap_q, outlier_q) = ViewDraft {
            points: query_points,
            labels: query_labels,
            overlap: query_overlap,
            outlier: query_outlier,
        }
        .shuffled_cloud(spec.n_parts, spec.feature_noise, &mut rng);

        return Ok(ScenePair {
            query,
            reference,
            gt_pose,
            gt_overlap_q,
            gt_overlap_r,
            outlier_q,
            outlier_r,
            seed: spec.seed,
        });
    }

    Err(SceneError::InfeasibleOverlap {
        requested: spec.overlap_fraction,
        attempts: ATTEMPTS,
    })
}
