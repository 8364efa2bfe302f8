use super::{EmpiricalMeasure, Order, Transfer, TransportResult};
use crate::error::{Error, Result};

/// Largest cloud the O(n^3) assignment solver accepts.
pub const MAX_ASSIGNMENT_SIZE: usize = 4096;

/// Minimum-cost perfect matching on a dense square cost matrix (row-major, n x n).
///
/// Shortest augmenting paths with dual potentials (Hungarian method, O(n^3)).
/// Returns `assignment[row] = column`.
pub fn solve_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    // 1-based rows/columns; column 0 is the virtual root of each augmenting tree.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_slack = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        row_of[0] = row;
        let mut col0 = 0usize;
        min_slack.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|u| *u = false);
        loop {
            used[col0] = true;
            let i0 = row_of[col0];
            let base = (i0 - 1) * n;
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[base + col - 1] - u[i0] - v[col];
                if reduced < min_slack[col] {
                    min_slack[col] = reduced;
                    way[col] = col0;
                }
                if min_slack[col] < delta {
                    delta = min_slack[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_slack[col] -= delta;
                }
            }
            col0 = col1;
            if row_of[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            row_of[col0] = row_of[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for col in 1..=n {
        assignment[row_of[col] - 1] = col - 1;
    }
    assignment
}

/// Exact `W_p` between two uniform clouds of equal size in any dimension.
pub fn wasserstein_assignment(order: Order, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<TransportResult> {
    let mut problems = Vec::new();
    if mu.dim() != nu.dim() {
        problems.push(format!("dimension mismatch: {} vs {}", mu.dim(), nu.dim()));
    }
    if mu.len() != nu.len() {
        problems.push(format!(
            "assignment needs equal sizes, got {} and {}; use wasserstein_1d or resample",
            mu.len(),
            nu.len()
        ));
    }
    if !mu.is_uniform() || !nu.is_uniform() {
        problems.push("assignment needs uniform weights; use wasserstein_1d or resample".to_string());
    }
    if mu.len() > MAX_ASSIGNMENT_SIZE {
        problems.push(format!(
            "support size {} exceeds the assignment limit {MAX_ASSIGNMENT_SIZE}",
            mu.len()
        ));
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }

    let n = mu.len();
    let mut cost = Vec::with_capacity(n * n);
    for i in 0..n {
        let x = mu.point(i);
        cost.extend((0..n).map(|j| order.ground_cost(x, nu.point(j))));
    }
    let assignment = solve_assignment(n, &cost);
    let value: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    let mass = 1.0 / n as f64;
    Ok(TransportResult {
        cost: order.root(value / n as f64),
        plan: assignment
            .into_iter()
            .enumerate()
            .map(|(from, to)| Transfer { from, to, mass })
            .collect(),
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_matrix() {
        // rows: [4 1 3] [2 0 5] [3 2 2] -> optimum 1 + 2 + 2 = 5
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        assert_eq!(solve_assignment(3, &cost), vec![1, 0, 2]);
    }

    #[test]
    fn vertical_matching_in_the_plane() {
        let mu = EmpiricalMeasure::uniform(2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let nu = EmpiricalMeasure::uniform(2, vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        let r = wasserstein_assignment(Order::W2, &mu, &nu).unwrap();
        assert_eq!(r.cost, 1.0);
        assert_eq!(r.plan.iter().map(|t| t.to).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn identical_clouds_match_identically() {
        let mu = EmpiricalMeasure::uniform(2, vec![0.0, 0.0, 1.0, 0.5, -2.0, 3.0]).unwrap();
        let r = wasserstein_assignment(Order::W1, &mu, &mu).unwrap();
        assert_eq!(r.cost, 0.0);
        assert!(r.plan.iter().all(|t| t.from == t.to));
    }

    #[test]
    fn rejects_unequal_or_weighted() {
        let a = EmpiricalMeasure::uniform(1, vec![0.0, 1.0]).unwrap();
        let b = EmpiricalMeasure::uniform(1, vec![0.0]).unwrap();
        let err = wasserstein_assignment(Order::W1, &a, &b).unwrap_err();
        assert!(err.to_string().contains("wasserstein_1d"));
        let w = EmpiricalMeasure::weighted(1, vec![0.0, 1.0], vec![0.25, 0.75]).unwrap();
        assert!(wasserstein_assignment(Order::W1, &a, &w).is_err());
    }
}
