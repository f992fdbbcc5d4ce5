//! Agglomerative clustering with average linkage over cosine distance.

use super::kmeans::check_input;
use super::vector::cosine_sim;
use crate::error::Result;

/// Merge until `k` clusters remain. Equal distances merge the pair whose
/// smallest members come first. Labels are numbered by smallest member.
pub fn hierarchical(vectors: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    check_input(vectors, k)?;
    let n = vectors.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = 1.0 - cosine_sim(&vectors[i], &vectors[j])?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    // Slot `s` always holds the cluster whose smallest member is item `s`.
    let mut size: Vec<usize> = vec![1; n];
    let mut active: Vec<bool> = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut remaining = n;
    while remaining > k {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in (0..n).filter(|&a| active[a]) {
            for b in (a + 1..n).filter(|&b| active[b]) {
                if best.is_none_or(|(_, _, d)| dist[a][b] < d) {
                    best = Some((a, b, dist[a][b]));
                }
            }
        }
        let (a, b, _) = best.expect("at least two active clusters");
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for c in (0..n).filter(|&c| active[c] && c != a && c != b) {
            let d = (sa * dist[a][c] + sb * dist[b][c]) / (sa + sb);
            dist[a][c] = d;
            dist[c][a] = d;
        }
        size[a] += size[b];
        active[b] = false;
        owner.iter_mut().filter(|o| **o == b).for_each(|o| *o = a);
        remaining -= 1;
    }
    let slots: Vec<usize> = (0..n).filter(|&s| active[s]).collect();
    Ok(owner.iter().map(|o| slots.binary_search(o).expect("owner is active")).collect())
}
