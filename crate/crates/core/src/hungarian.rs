//! Optimal assignment (Kuhn-Munkres with potentials, O(n²m)).

/// Minimum-cost assignment of rows to distinct columns.
///
/// `cost` is `n × m`. When `n ≤ m` every row gets a column; otherwise every
/// column gets a row. Returns `row → Option<column>` and the total cost.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> (Vec<Option<usize>>, f64) {
    let n = cost.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let m = cost[0].len();
    if m == 0 {
        return (vec![None; n], 0.0);
    }
    if n > m {
        let transposed: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let (col_to_row, total) = min_cost_assignment(&transposed);
        let mut rows = vec![None; n];
        for (j, r) in col_to_row.into_iter().enumerate() {
            if let Some(i) = r {
                rows[i] = Some(j);
            }
        }
        return (rows, total);
    }

    // 1-based e-maxx formulation; column 0 is a sentinel.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            rows[p[j] - 1] = Some(j - 1);
        }
    }
    let total = rows
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|j| cost[i][j]))
        .sum();
    (rows, total)
}

/// Maximum-weight assignment; same shape conventions as [`min_cost_assignment`].
pub fn max_weight_assignment(weight: &[Vec<f64>]) -> (Vec<Option<usize>>, f64) {
    let neg: Vec<Vec<f64>> = weight.iter().map(|r| r.iter().map(|w| -w).collect()).collect();
    let (rows, total) = min_cost_assignment(&neg);
    (rows, -total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_example() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let (rows, total) = min_cost_assignment(&cost);
        assert_eq!(total, 5.0);
        assert_eq!(rows, [Some(1), Some(0), Some(2)]);
    }

    #[test]
    fn rectangular_both_ways() {
        let wide = vec![vec![1.0, 5.0, 0.5], vec![2.0, 0.1, 9.0]];
        let (rows, total) = min_cost_assignment(&wide);
        assert_eq!(rows, [Some(2), Some(1)]);
        assert!((total - 0.6).abs() < 1e-12);

        let tall = vec![vec![1.0, 2.0], vec![5.0, 0.1], vec![0.5, 9.0]];
        let (rows, total) = min_cost_assignment(&tall);
        assert_eq!(rows, [None, Some(1), Some(0)]);
        assert!((total - 0.6).abs() < 1e-12);
    }

    #[test]
    fn maximize() {
        let w = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
        let (rows, total) = max_weight_assignment(&w);
        assert_eq!(rows, [Some(0), Some(1)]);
        assert_eq!(total, 4.0);
    }
}
