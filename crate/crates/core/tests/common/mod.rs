//! Independent reference implementations shared by the integration tests.

use bbs_core::PointSet;

/// Measure written out independently of the library.
pub fn oracle_distance(p: (&[f64], [f64; 2]), q: (&[f64], [f64; 2]), similarity: bool, lambda: f64) -> f64 {
    let dx = p.1[0] - q.1[0];
    let dy = p.1[1] - q.1[1];
    let sq = dx * dx + dy * dy;
    if similarity {
        let mut dot = 0.0;
        for k in 0..p.0.len() {
            dot += p.0[k] * q.0[k];
        }
        dot + (-lambda * sq).exp()
    } else {
        let mut s = 0.0;
        for k in 0..p.0.len() {
            s += (p.0[k] - q.0[k]) * (p.0[k] - q.0[k]);
        }
        s + lambda * sq
    }
}

/// Straight from the definition: `(i, j)` is a pair when `q_j` is the nearest
/// neighbor of `p_i` and `p_i` the nearest neighbor of `q_j`, with ties going
/// to the lower index. Every candidate is checked against every competitor.
pub fn oracle_bbs(p: &PointSet, q: &PointSet, similarity: bool, lambda: f64) -> f64 {
    let d = |i: usize, j: usize| {
        oracle_distance(
            (p.appearance(i), p.location(i)),
            (q.appearance(j), q.location(j)),
            similarity,
            lambda,
        )
    };
    let beats = |a: f64, b: f64| if similarity { a > b } else { a < b };
    let mut count = 0;
    for i in 0..p.len() {
        for j in 0..q.len() {
            let mut mutual = true;
            for k in 0..q.len() {
                for l in 0..p.len() {
                    // q_k must not beat q_j for p_i, and p_l must not beat p_i for q_j
                    let qk_wins = beats(d(i, k), d(i, j)) || (d(i, k) == d(i, j) && k < j);
                    let pl_wins = beats(d(l, j), d(i, j)) || (d(l, j) == d(i, j) && l < i);
                    if qk_wins || pl_wins {
                        mutual = false;
                    }
                }
            }
            if mutual {
                count += 1;
            }
        }
    }
    count as f64 / p.len().min(q.len()) as f64
}
