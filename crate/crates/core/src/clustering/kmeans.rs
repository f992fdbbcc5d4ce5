//! Lloyd's k-means with seeded k-means++ initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vector::squared_distance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances after the initial assignment and after
    /// every Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

impl KMeansFit {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Cluster `vectors` into `k` groups. Identical inputs and seed give
/// bit-identical output.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KMeansFit> {
    check_input(vectors, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(vectors, k, &mut rng);
    let (mut labels, objective) = assign(vectors, &centroids);
    let mut trace = vec![objective];

    for _ in 0..max_iter {
        let updated = recompute(vectors, &labels, &centroids);
        let shift: f64 = updated.iter().zip(&centroids).map(|(a, b)| squared_distance(a, b)).sum();
        centroids = updated;
        let (next_labels, objective) = assign(vectors, &centroids);
        trace.push(objective);
        let stable = next_labels == labels;
        labels = next_labels;
        if stable || shift <= tol {
            break;
        }
    }
    Ok(KMeansFit { labels, centroids, objective_trace: trace })
}

pub(crate) fn check_input(vectors: &[Vec<f64>], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > vectors.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the number of vectors ({})", vectors.len())));
    }
    let dim = vectors[0].len();
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::invalid("vectors must share one nonzero dimension"));
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("vectors contain non-finite values"));
    }
    Ok(())
}

fn plus_plus_init(vectors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = vectors.iter().map(|v| squared_distance(v, &vectors[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if *w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just above the final sum.
            pick.unwrap_or_else(|| d2.iter().rposition(|w| *w > 0.0).expect("positive total"))
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (d, v) in d2.iter_mut().zip(vectors) {
            *d = d.min(squared_distance(v, &vectors[next]));
        }
    }
    chosen.into_iter().map(|i| vectors[i].clone()).collect()
}

/// Nearest centroid per vector (ties to the lowest index) and the objective.
fn assign(vectors: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut objective = 0.0;
    let labels = vectors
        .iter()
        .map(|v| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = squared_distance(v, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            objective += best.1;
            best.0
        })
        .collect();
    (labels, objective)
}

/// Mean of each cluster's members; empty clusters keep their centroid.
fn recompute(vectors: &[Vec<f64>], labels: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = previous[0].len();
    let mut sums = vec![vec![0.0; dim]; previous.len()];
    let mut counts = vec![0usize; previous.len()];
    for (v, &l) in vectors.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(v) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((mut s, c), prev)| {
            if c == 0 {
                return prev.clone();
            }
            s.iter_mut().for_each(|x| *x /= c as f64);
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_pairs_are_grouped() {
        let v = vec![vec![0.0, 0.0], vec![0.0, 0.1], vec![5.0, 5.0], vec![5.0, 5.1]];
        for seed in 0..20 {
            let fit = kmeans(&v, 2, seed, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
            assert_eq!(fit.labels[0], fit.labels[1]);
            assert_eq!(fit.labels[2], fit.labels[3]);
            assert_ne!(fit.labels[0], fit.labels[2]);
        }
    }

    #[test]
    fn k_equal_to_n_gives_singletons_and_zero_objective() {
        let v = vec![vec![0.0, 1.0], vec![2.0, 0.0], vec![3.0, 3.0], vec![-1.0, 4.0], vec![9.0, 9.0]];
        let fit = kmeans(&v, 5, 1, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        let mut labels = fit.labels.clone();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), 5);
        assert_eq!(fit.objective(), 0.0);
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        assert!(kmeans(&[vec![1.0]], 2, 0, 10, 1e-6).is_err());
        assert!(kmeans(&[vec![1.0]], 0, 0, 10, 1e-6).is_err());
    }

    #[test]
    fn duplicate_points_do_not_break_init() {
        let v = vec![vec![1.0, 1.0]; 4];
        let fit = kmeans(&v, 3, 9, 10, 1e-6).unwrap();
        assert_eq!(fit.objective(), 0.0);
    }
}
