//! Minimum-cost bipartite assignment (Hungarian method with potentials).

/// Result of matching demands to suppliers.
#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    /// For each demand, the supplier it was matched to, or `None` when it
    /// landed on a padding supplier and goes unserved.
    pub assignment: Vec<Option<usize>>,
    /// Total cost over real pairs.
    pub cost: f64,
}

impl Matching {
    pub fn served(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_some()).count()
    }
}

/// Solves `rows ≤ cols` assignment on a row-major cost matrix and returns
/// the column chosen for each row.
fn solve(cost: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    debug_assert!(rows <= cols);
    const INF: f64 = f64::INFINITY;
    // 1-based potentials over rows (u) and columns (v); p[j] is the row
    // matched to column j, way[j] the previous column on the augmenting path.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
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
    let mut out = vec![0; rows];
    for j in 1..=cols {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Minimum-cost matching for a `suppliers × demands` cost matrix. When
/// demands outnumber suppliers, zero-cost padding suppliers absorb the
/// surplus and those demands are reported unserved.
pub fn assign(cost: &[Vec<f64>]) -> Matching {
    let suppliers = cost.len();
    let demands = cost.first().map_or(0, Vec::len);
    if demands == 0 {
        return Matching {
            assignment: Vec::new(),
            cost: 0.0,
        };
    }
    let cols = suppliers.max(demands);
    let mut flat = vec![0.0; demands * cols];
    for d in 0..demands {
        for s in 0..suppliers {
            flat[d * cols + s] = cost[s][d];
        }
    }
    let cols_for_rows = solve(&flat, demands, cols);
    let assignment: Vec<Option<usize>> = cols_for_rows
        .into_iter()
        .map(|c| (c < suppliers).then_some(c))
        .collect();
    let total = assignment
        .iter()
        .enumerate()
        .filter_map(|(d, s)| s.map(|s| cost[s][d]))
        .sum();
    Matching {
        assignment,
        cost: total,
    }
}
