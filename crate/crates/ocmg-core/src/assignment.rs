//! Square assignment problems solved exactly, with a deterministic
//! tie-break: among all minimum-cost assignments, the lexicographically
//! smallest permutation is returned.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Clone, Debug, PartialEq)]
pub enum AssignError {
    NotSquare,
    NonFinite { row: usize, col: usize },
    Empty,
}

impl fmt::Display for AssignError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssignError::NotSquare => write!(f, "cost matrix must be square"),
            AssignError::NonFinite { row, col } => {
                write!(f, "non-finite cost at ({row}, {col})")
            }
            AssignError::Empty => write!(f, "cost matrix is empty"),
        }
    }
}

impl core::error::Error for AssignError {}

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `perm` with `perm[row] = col`. Ties between optimal assignments
/// resolve to the lexicographically smallest permutation.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>, AssignError> {
    let n = cost.len();
    if n == 0 {
        return Err(AssignError::Empty);
    }
    for (i, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(AssignError::NotSquare);
        }
        for (j, &c) in row.iter().enumerate() {
            if !c.is_finite() {
                return Err(AssignError::NonFinite { row: i, col: j });
            }
        }
    }

    let best = solve_base(cost, &[]);
    let tol = 1e-9 * (1.0 + best.total.abs());

    // pin rows one by one to the smallest column that still admits an
    // optimal completion
    let mut pinned: Vec<usize> = Vec::with_capacity(n);
    for _row in 0..n {
        let mut chosen = None;
        for col in 0..n {
            if pinned.contains(&col) {
                continue;
            }
            pinned.push(col);
            let attempt = solve_base(cost, &pinned);
            if attempt.total <= best.total + tol {
                chosen = Some(col);
                break;
            }
            pinned.pop();
        }
        debug_assert!(chosen.is_some(), "an optimal column always exists");
        if chosen.is_none() {
            // numerically degenerate; fall back to the unrefined optimum
            return Ok(best.perm);
        }
    }
    Ok(pinned)
}

/// Total cost of a permutation under `cost`.
pub fn assignment_cost(cost: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

struct Solution {
    perm: Vec<usize>,
    total: f64,
}

/// Shortest-augmenting-path Hungarian (O(n^3)) over the subproblem where
/// the first `pinned.len()` rows are forced to the given columns.
fn solve_base(cost: &[Vec<f64>], pinned: &[usize]) -> Solution {
    let n = cost.len();
    let k = pinned.len();
    let m = n - k;

    let free_cols: Vec<usize> = (0..n).filter(|c| !pinned.contains(c)).collect();
    let mut perm: Vec<usize> = pinned.to_vec();
    let mut total: f64 = pinned.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    if m == 0 {
        return Solution { perm, total };
    }

    // 1-indexed potentials over the reduced m x m matrix; index 0 is scratch
    let mut u = vec![0.0f64; m + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut match_col = vec![0usize; m + 1]; // column -> row (1-indexed, 0 = free)
    let reduced = |i: usize, j: usize| cost[k + i - 1][free_cols[j - 1]];

    for i in 1..=m {
        match_col[0] = i;
        let mut j0 = 0usize;
        let mut mins = vec![f64::INFINITY; m + 1];
        let mut links = vec![0usize; m + 1];
        let mut visited = vec![false; m + 1];
        loop {
            visited[j0] = true;
            let i0 = match_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if visited[j] {
                    continue;
                }
                let cur = reduced(i0, j) - u[i0] - v[j];
                if cur < mins[j] {
                    mins[j] = cur;
                    links[j] = j0;
                }
                if mins[j] < delta {
                    delta = mins[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if visited[j] {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    mins[j] -= delta;
                }
            }
            j0 = j1;
            if match_col[j0] == 0 {
                break;
            }
        }
        // augment along the alternating path back to the scratch column
        loop {
            let j1 = links[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; m + 1];
    for j in 1..=m {
        row_to_col[match_col[j]] = j;
    }
    for i in 1..=m {
        let col = free_cols[row_to_col[i] - 1];
        perm.push(col);
        total += cost[k + i - 1][col];
    }
    Solution { perm, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
        let n = cost.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best_perm = perm.clone();
        let mut best = assignment_cost(cost, &perm);
        // Heap's algorithm over all permutations, tracking the lexicographic
        // smallest among cost-minimal ones
        fn heaps(k: usize, perm: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
            if k == 1 {
                visit(perm);
                return;
            }
            for i in 0..k {
                heaps(k - 1, perm, visit);
                if k % 2 == 0 {
                    perm.swap(i, k - 1);
                } else {
                    perm.swap(0, k - 1);
                }
            }
        }
        let mut visit = |p: &[usize]| {
            let c = assignment_cost(cost, p);
            if c < best - 1e-12 || ((c - best).abs() <= 1e-12 && p < best_perm.as_slice()) {
                best = c;
                best_perm = p.to_vec();
            }
        };
        heaps(n, &mut perm, &mut visit);
        (best_perm, best)
    }

    #[test]
    fn diagonal_is_identity() {
        let cost = alloc::vec![
            alloc::vec![0.0, 5.0, 5.0],
            alloc::vec![5.0, 0.0, 5.0],
            alloc::vec![5.0, 5.0, 0.0],
        ];
        assert_eq!(hungarian(&cost).unwrap(), alloc::vec![0, 1, 2]);
    }

    #[test]
    fn two_by_two_prefers_cross() {
        let cost = alloc::vec![alloc::vec![1.0, 2.0], alloc::vec![2.0, 4.0]];
        let perm = hungarian(&cost).unwrap();
        assert_eq!(perm, alloc::vec![1, 0]);
        assert_eq!(assignment_cost(&cost, &perm), 4.0);
    }

    #[test]
    fn matches_brute_force_with_lex_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..200 {
            let n = rng.gen_range(2..=6);
            // quantized costs so exact ties actually occur
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(0..6) as f64 * 0.5).collect())
                .collect();
            let (bf_perm, bf_cost) = brute_force(&cost);
            let perm = hungarian(&cost).unwrap();
            assert_eq!(
                assignment_cost(&cost, &perm),
                bf_cost,
                "case {case}: cost mismatch"
            );
            assert_eq!(perm, bf_perm, "case {case}: not the lexicographic optimum");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(hungarian(&[]), Err(AssignError::Empty));
        let ragged = alloc::vec![alloc::vec![1.0], alloc::vec![1.0, 2.0]];
        assert_eq!(hungarian(&ragged), Err(AssignError::NotSquare));
        let nan = alloc::vec![alloc::vec![1.0, f64::NAN], alloc::vec![1.0, 2.0]];
        assert_eq!(hungarian(&nan), Err(AssignError::NonFinite { row: 0, col: 1 }));
    }
}
