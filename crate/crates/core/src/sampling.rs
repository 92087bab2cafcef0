//! Deterministic point sampling: farthest point sampling and seeded uniform
//! subsampling.

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Greedy farthest point sampling.
///
/// Starts at `start`, then repeatedly picks the point maximizing the minimum
/// distance to the selected set; ties break to the lowest index. Fully
/// deterministic.
pub fn fps(points: ArrayView2<'_, f64>, m: usize, start: usize) -> Vec<usize> {
    let n = points.nrows();
    assert!(m >= 1 && m <= n, "need 1 <= m <= n (m = {m}, n = {n})");
    assert!(start < n, "start index out of range");

    let mut chosen = Vec::with_capacity(m);
    chosen.push(start);
    let mut min_d2 = vec![f64::INFINITY; n];

    while chosen.len() < m {
        let last = *chosen.last().unwrap();
        let (lx, ly, lz) = (points[[last, 0]], points[[last, 1]], points[[last, 2]]);
        let mut best_idx = 0;
        let mut best_d2 = f64::NEG_INFINITY;
        for j in 0..n {
            let dx = points[[j, 0]] - lx;
            let dy = points[[j, 1]] - ly;
            let dz = points[[j, 2]] - lz;
            let d2 = dx * dx + dy * dy + dz * dz;
            if d2 < min_d2[j] {
                min_d2[j] = d2;
            }
            if min_d2[j] > best_d2 {
                best_d2 = min_d2[j];
                best_idx = j;
            }
        }
        chosen.push(best_idx);
    }
    chosen
}

/// Index of the point farthest from the centroid; the deterministic start
/// index used by the pipeline's coarse sampling. Ties break to the lowest
/// index.
pub fn farthest_from_centroid(points: ArrayView2<'_, f64>) -> usize {
    let n = points.nrows();
    let mut c = [0.0f64; 3];
    for i in 0..n {
        c[0] += points[[i, 0]];
        c[1] += points[[i, 1]];
        c[2] += points[[i, 2]];
    }
    for v in c.iter_mut() {
        *v /= n as f64;
    }
    let mut best = 0;
    let mut best_d2 = f64::NEG_INFINITY;
    for i in 0..n {
        let dx = points[[i, 0]] - c[0];
        let dy = points[[i, 1]] - c[1];
        let dz = points[[i, 2]] - c[2];
        let d2 = dx * dx + dy * dy + dz * dz;
        if d2 > best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    best
}

/// Seeded uniform draw of `m` distinct indices out of `n`, returned in
/// ascending order.
pub fn subsample_indices(n: usize, m: usize, seed: u64) -> Vec<usize> {
    assert!(m <= n);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    idx
}
