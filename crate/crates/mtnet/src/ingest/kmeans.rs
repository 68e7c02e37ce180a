//! Lloyd k-means over (lat, lon) treated as a Euclidean plane.
//!
//! Cluster ids are only used as categorical tokens downstream, so raw
//! degrees are clustered directly; no haversine correction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::IngestError;

#[derive(Clone, Debug)]
pub struct KmeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Vec<(f64, f64)>,
    /// Sum of squared distances to the assigned centroid after each
    /// assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

fn nearest(point: (f64, f64), centroids: &[(f64, f64)]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

/// Deterministic seeded Lloyd iterations. Initial centroids are `k`
/// distinct points drawn without replacement; an emptied cluster is
/// re-seeded on the point farthest from its assigned centroid.
pub fn kmeans_geo(
    points: &[(f64, f64)],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KmeansResult, IngestError> {
    let mut distinct: Vec<(f64, f64)> = Vec::new();
    {
        let mut seen = std::collections::HashSet::new();
        for &p in points {
            if seen.insert((p.0.to_bits(), p.1.to_bits())) {
                distinct.push(p);
            }
        }
    }
    if distinct.len() < k || k == 0 {
        return Err(IngestError::NotEnoughDistinctPoints { needed: k, got: distinct.len() });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    distinct.shuffle(&mut rng);
    let mut centroids: Vec<(f64, f64)> = distinct[..k].to_vec();

    let mut assignment = vec![0usize; points.len()];
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let next: Vec<(usize, f64)> =
            points.par_iter().map(|&p| nearest(p, &centroids)).collect();
        let new_assignment: Vec<usize> = next.iter().map(|(i, _)| *i).collect();
        inertia_trace.push(next.iter().map(|(_, d)| *d).sum());

        let converged = iterations > 1 && new_assignment == assignment;
        assignment = new_assignment;
        if converged {
            break;
        }

        // Mean update.
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for (&a, &p) in assignment.iter().zip(points) {
            sums[a].0 += p.0;
            sums[a].1 += p.1;
            sums[a].2 += 1;
        }
        let mut reseeded = false;
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if s.2 > 0 {
                *c = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
        // Re-seed emptied clusters on the worst-served points.
        let mut taken: Vec<usize> = Vec::new();
        for cluster in 0..k {
            if sums[cluster].2 == 0 {
                let mut best_i = 0;
                let mut best_d = -1.0;
                for (i, &p) in points.iter().enumerate() {
                    if taken.contains(&i) {
                        continue;
                    }
                    let d = sq_dist(p, centroids[assignment[i]]);
                    if d > best_d {
                        best_d = d;
                        best_i = i;
                    }
                }
                centroids[cluster] = points[best_i];
                taken.push(best_i);
                reseeded = true;
            }
        }
        if reseeded {
            log::debug!("kmeans: re-seeded empty cluster(s) at iteration {iterations}");
        }
    }

    Ok(KmeansResult { assignment, centroids, inertia_trace, iterations })
}
