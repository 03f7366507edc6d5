//! Lloyd's K-means with k-means++ seeding, plus the nearest-centroid kernel shared
//! by fitting and cluster assignment.

use std::collections::HashSet;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

pub const MAX_ITERATIONS: usize = 300;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

const CHUNK_ROWS: usize = 256;

/// Row-major points of a fixed dimension.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a> {
    pub data: &'a [f64],
    pub dim: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        assert!(dim > 0 && data.len() % dim == 0);
        Points { data, dim }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid for every point (Euclidean; lowest index on ties),
/// together with the squared distance to it.
///
/// Distances are first screened with the expanded form `|x|^2 + |c|^2 - 2 x.c`
/// (vectorizes well); every centroid within the screening tolerance of the
/// screened minimum is then re-evaluated with the direct formula, so the result
/// is the exact argmin of the direct squared distances.
pub fn nearest_centroids(points: Points<'_>, centroids: &[f64]) -> (Vec<u32>, Vec<f64>) {
    let dim = points.dim;
    let k = centroids.len() / dim;
    assert!(k > 0);
    // Transposed centroids: dim x k, so the inner loop runs over centroids.
    let mut transposed = vec![0.0; dim * k];
    let mut norms = vec![0.0; k];
    for c in 0..k {
        let row = &centroids[c * dim..(c + 1) * dim];
        for j in 0..dim {
            transposed[j * k + c] = row[j];
        }
        norms[c] = row.iter().map(|v| v * v).sum();
    }
    let max_norm = norms.iter().cloned().fold(0.0, f64::max);

    let n = points.len();
    let mut labels = vec![0u32; n];
    let mut dists = vec![0.0; n];
    labels
        .par_chunks_mut(CHUNK_ROWS)
        .zip(dists.par_chunks_mut(CHUNK_ROWS))
        .enumerate()
        .for_each(|(chunk, (labels, dists))| {
            let mut acc = vec![0.0; k];
            for (offset, (label, dist)) in labels.iter_mut().zip(dists.iter_mut()).enumerate() {
                let x = points.row(chunk * CHUNK_ROWS + offset);
                acc.fill(0.0);
                for (j, &xj) in x.iter().enumerate() {
                    let col = &transposed[j * k..(j + 1) * k];
                    for (a, &c) in acc.iter_mut().zip(col) {
                        *a += xj * c;
                    }
                }
                let xn: f64 = x.iter().map(|v| v * v).sum();
                let mut screened = f64::INFINITY;
                for (a, nc) in acc.iter_mut().zip(&norms) {
                    *a = xn + nc - 2.0 * *a;
                    if *a < screened {
                        screened = *a;
                    }
                }
                let tol = 1e-9 * (1.0 + xn + max_norm);
                let mut best = u32::MAX;
                let mut best_d = f64::INFINITY;
                for (c, &approx) in acc.iter().enumerate() {
                    if approx <= screened + tol {
                        let d = sq_dist(x, &centroids[c * dim..(c + 1) * dim]);
                        if d < best_d {
                            best_d = d;
                            best = c as u32;
                        }
                    }
                }
                *label = best;
                *dist = best_d;
            }
        });
    (labels, dists)
}

pub fn count_distinct(points: Points<'_>) -> usize {
    let mut seen = HashSet::new();
    for i in 0..points.len() {
        let key: Vec<u64> = points.row(i).iter().map(|v| (v + 0.0).to_bits()).collect();
        seen.insert(key);
    }
    seen.len()
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Vec<f64>,
    pub labels: Vec<u32>,
    pub counts: Vec<u64>,
    pub iterations: usize,
}

/// k-means++ initialization followed by Lloyd iterations until the largest centroid
/// shift drops below [`SHIFT_TOLERANCE`] or [`MAX_ITERATIONS`] is reached. Empty
/// clusters are re-seeded from the point of the largest cluster farthest from its
/// centroid, then iteration resumes.
pub fn kmeans(points: Points<'_>, k: usize, seed: u64) -> Result<KMeansFit> {
    kmeans_with_limit(points, k, seed, MAX_ITERATIONS)
}

pub fn kmeans_with_limit(points: Points<'_>, k: usize, seed: u64, max_iter: usize) -> Result<KMeansFit> {
    let n = points.len();
    if k == 0 || n == 0 {
        return Err(Error::validation("k-means needs k >= 1 and a non-empty table"));
    }
    if k > n {
        return Err(Error::validation(format!("cluster count {k} exceeds row count {n}")));
    }
    let distinct = count_distinct(points);
    if k > distinct {
        return Err(Error::validation(format!(
            "cluster count {k} exceeds the {distinct} distinct encoded points"
        )));
    }

    let mut centroids = plus_plus_init(points, k, seed);
    let mut iterations = lloyd(points, &mut centroids, max_iter);

    let dim = points.dim;
    for _repair in 0..=k {
        let (labels, dists) = nearest_centroids(points, &centroids);
        let mut counts = vec![0u64; k];
        for &l in &labels {
            counts[l as usize] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return Ok(KMeansFit {
                centroids,
                labels,
                counts,
                iterations,
            });
        };
        // Largest cluster, lowest index on ties.
        let largest = (0..k).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
        let mut far = usize::MAX;
        for i in 0..n {
            if labels[i] as usize == largest && (far == usize::MAX || dists[i] > dists[far]) {
                far = i;
            }
        }
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(points.row(far));
        iterations += lloyd(points, &mut centroids, max_iter);
    }
    Err(Error::validation("k-means left an empty cluster after repair"))
}

fn plus_plus_init(points: Points<'_>, k: usize, seed: u64) -> Vec<f64> {
    let n = points.len();
    let dim = points.dim;
    let mut rng = rng::stream(seed, "kmeans++", 0);
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(points.row(first));
    let mut min_d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for _ in 1..k {
        let total: f64 = min_d2.iter().sum();
        let mut pick = n - 1;
        if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            for (i, d) in min_d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            // Rounding can leave the scan past the end; fall back to the last positive weight.
            if min_d2[pick] == 0.0 {
                pick = min_d2.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
        }
        let c = points.row(pick).to_vec();
        for (i, d) in min_d2.iter_mut().enumerate() {
            let nd = sq_dist(points.row(i), &c);
            if nd < *d {
                *d = nd;
            }
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Exact nearest centroid of `x` (lowest index on ties), its distance, and the
/// distance to the runner-up.
fn scan(x: &[f64], centroids: &[f64], dim: usize) -> (u32, f64, f64) {
    let (mut best, mut d1, mut d2) = (0u32, f64::INFINITY, f64::INFINITY);
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, cent);
        if d < d1 {
            d2 = d1;
            d1 = d;
            best = c as u32;
        } else if d < d2 {
            d2 = d;
        }
    }
    (best, d1.sqrt(), d2.sqrt())
}

/// Bounds only prune with this slack, so rounding in the bound updates can never
/// change an assignment.
fn prunes(upper: f64, lower: f64) -> bool {
    upper * (1.0 + 1e-10) + 1e-12 < lower
}

/// Runs Lloyd iterations in place; returns the number performed.
///
/// Hamerly's bounds skip the full scan for points whose assignment provably
/// cannot change, so every iteration assigns exactly as plain Lloyd would.
fn lloyd(points: Points<'_>, centroids: &mut [f64], max_iter: usize) -> usize {
    let dim = points.dim;
    let k = centroids.len() / dim;
    let n = points.len();
    let mut labels = vec![0u32; n];
    let mut upper = vec![0.0; n];
    let mut lower = vec![0.0; n];
    {
        let cents: &[f64] = centroids;
        labels
            .par_chunks_mut(CHUNK_ROWS)
            .zip(upper.par_chunks_mut(CHUNK_ROWS))
            .zip(lower.par_chunks_mut(CHUNK_ROWS))
            .enumerate()
            .for_each(|(chunk, ((ls, us), lws))| {
                for (o, ((l, u), lw)) in ls.iter_mut().zip(us).zip(lws).enumerate() {
                    (*l, *u, *lw) = scan(points.row(chunk * CHUNK_ROWS + o), cents, dim);
                }
            });
    }
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0u64; k];
    let mut moved = vec![0.0; k];
    let mut half_gap = vec![0.0; k];
    for iter in 0..max_iter {
        sums.fill(0.0);
        counts.fill(0);
        for (i, &l) in labels.iter().enumerate() {
            let l = l as usize;
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut max_shift: f64 = 0.0;
        for c in 0..k {
            moved[c] = 0.0;
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let mut shift = 0.0;
            for j in 0..dim {
                let new = sums[c * dim + j] * inv;
                let old = centroids[c * dim + j];
                shift += (new - old) * (new - old);
                centroids[c * dim + j] = new;
            }
            moved[c] = shift.sqrt();
            max_shift = max_shift.max(moved[c]);
        }
        if max_shift < SHIFT_TOLERANCE || iter + 1 == max_iter {
            return iter + 1;
        }

        // Largest and second-largest movement, for the runner-up bound.
        let (mut top, mut top_c, mut second) = (0.0, usize::MAX, 0.0);
        for (c, &p) in moved.iter().enumerate() {
            if p > top {
                second = top;
                top = p;
                top_c = c;
            } else if p > second {
                second = p;
            }
        }
        for c in 0..k {
            let mut nearest = f64::INFINITY;
            for d in 0..k {
                if d != c {
                    nearest = nearest.min(sq_dist(&centroids[c * dim..(c + 1) * dim], &centroids[d * dim..(d + 1) * dim]));
                }
            }
            half_gap[c] = 0.5 * nearest.sqrt();
        }
        let cents: &[f64] = centroids;
        let (moved, half_gap) = (&moved, &half_gap);
        labels
            .par_chunks_mut(CHUNK_ROWS)
            .zip(upper.par_chunks_mut(CHUNK_ROWS))
            .zip(lower.par_chunks_mut(CHUNK_ROWS))
            .enumerate()
            .for_each(|(chunk, ((ls, us), lws))| {
                for (o, ((l, u), lw)) in ls.iter_mut().zip(us).zip(lws).enumerate() {
                    let a = *l as usize;
                    *u += moved[a];
                    *lw -= if a == top_c { second } else { top };
                    let bound = half_gap[a].max(*lw);
                    if prunes(*u, bound) {
                        continue;
                    }
                    let x = points.row(chunk * CHUNK_ROWS + o);
                    *u = sq_dist(x, &cents[a * dim..(a + 1) * dim]).sqrt();
                    if prunes(*u, bound) {
                        continue;
                    }
                    (*l, *u, *lw) = scan(x, cents, dim);
                }
            });
    }
    max_iter
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain Lloyd with the direct nearest-centroid kernel.
    fn reference_lloyd(points: Points<'_>, centroids: &mut [f64], max_iter: usize) -> usize {
        let dim = points.dim;
        let k = centroids.len() / dim;
        for iter in 0..max_iter {
            let (labels, _) = nearest_centroids(points, centroids);
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0u64; k];
            for (i, &l) in labels.iter().enumerate() {
                counts[l as usize] += 1;
                for (s, v) in sums[l as usize * dim..(l as usize + 1) * dim].iter_mut().zip(points.row(i)) {
                    *s += v;
                }
            }
            let mut max_shift: f64 = 0.0;
            for c in 0..k {
                if counts[c] == 0 {
                    continue;
                }
                let mut shift = 0.0;
                for j in 0..dim {
                    let new = sums[c * dim + j] * (1.0 / counts[c] as f64);
                    shift += (new - centroids[c * dim + j]).powi(2);
                    centroids[c * dim + j] = new;
                }
                max_shift = max_shift.max(shift.sqrt());
            }
            if max_shift < SHIFT_TOLERANCE {
                return iter + 1;
            }
        }
        max_iter
    }

    #[test]
    fn bounded_lloyd_matches_plain_lloyd() {
        for seed in 0..6u64 {
            let mut rng = rng::stream(seed, "lloyd-oracle", 0);
            let dim = 1 + seed as usize % 4;
            // Integer grid points create exact ties.
            let pts: Vec<f64> = (0..dim * 900).map(|_| rng.random_range(-6..6) as f64 * 0.5).collect();
            let points = Points::new(&pts, dim);
            let k = 5 + 7 * seed as usize;
            let init = plus_plus_init(points, k, seed);
            for limit in [1, 3, MAX_ITERATIONS] {
                let (mut a, mut b) = (init.clone(), init.clone());
                let ia = lloyd(points, &mut a, limit);
                let ib = reference_lloyd(points, &mut b, limit);
                assert_eq!((ia, &a), (ib, &b), "seed {seed} limit {limit}");
            }
        }
    }

    #[test]
    fn nearest_prefers_lowest_index_on_ties() {
        let centroids = [0.0, 0.0, 2.0, 0.0, -2.0, 0.0];
        let pts = [1.0, 0.0, -1.0, 0.0, 2.0, 0.0];
        let (labels, d) = nearest_centroids(Points::new(&pts, 2), &centroids);
        assert_eq!(labels, vec![0, 0, 1]);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn nearest_matches_direct_scan() {
        let mut rng = rng::stream(11, "nearest", 0);
        let dim = 5;
        let pts: Vec<f64> = (0..dim * 700).map(|_| rng.random_range(-4.0..4.0)).collect();
        let cents: Vec<f64> = (0..dim * 37).map(|_| rng.random_range(-4.0..4.0)).collect();
        let (labels, _) = nearest_centroids(Points::new(&pts, dim), &cents);
        for (i, &l) in labels.iter().enumerate() {
            let x = &pts[i * dim..(i + 1) * dim];
            let mut best = 0;
            for c in 1..37 {
                if sq_dist(x, &cents[c * dim..(c + 1) * dim]) < sq_dist(x, &cents[best * dim..(best + 1) * dim]) {
                    best = c;
                }
            }
            assert_eq!(l as usize, best);
        }
    }

    #[test]
    fn square_corners_fit_exactly() {
        let pts = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let fit = kmeans(Points::new(&pts, 2), 4, 5).unwrap();
        assert_eq!(fit.counts, vec![1, 1, 1, 1]);
        let mut cents: Vec<(i64, i64)> = fit
            .centroids
            .chunks(2)
            .map(|c| ((c[0] * 1e9).round() as i64, (c[1] * 1e9).round() as i64))
            .collect();
        cents.sort();
        assert_eq!(cents, vec![(0, 0), (0, 1_000_000_000), (1_000_000_000, 0), (1_000_000_000, 1_000_000_000)]);
    }

    #[test]
    fn too_many_clusters_for_distinct_points() {
        let pts = [0.0, 0.0, 0.0, 1.0];
        assert!(kmeans(Points::new(&pts, 1), 3, 0).is_err());
    }
}
