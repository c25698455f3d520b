//! Minimum-cost rectangular assignment with forbidden pairs.
//!
//! Shortest augmenting path (Hungarian / Jonker-Volgenant family) on a
//! square completion of the cost matrix. Forbidden pairs and padding carry a
//! penalty large enough that maximising the number of allowed pairs always
//! dominates the cost term. Among optimal matchings the one that is
//! lexicographically smallest by `(row, col)` is returned.

use crate::scalar::Scalar;

/// Dense `rows x cols` cost matrix with a forbidden-pair mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T> {
    rows: usize,
    cols: usize,
    cost: Vec<T>,
    forbidden: Vec<bool>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(rows: usize, cols: usize, fill: T) -> Self {
        Self {
            rows,
            cols,
            cost: vec![fill; rows * cols],
            forbidden: vec![false; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged cost matrix");
        Self {
            rows: r,
            cols: c,
            cost: rows.iter().flatten().copied().collect(),
            forbidden: vec![false; r * c],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.cost[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.cost[r * self.cols + c] = v;
    }

    #[inline]
    pub fn forbid(&mut self, r: usize, c: usize) {
        self.forbidden[r * self.cols + c] = true;
    }

    /// Allowed means not masked and finite.
    #[inline]
    pub fn is_allowed(&self, r: usize, c: usize) -> bool {
        !self.forbidden[r * self.cols + c] && self.get(r, c).is_finite()
    }

    /// Sum of the costs of `pairs`, accumulated in the given order.
    pub fn total(&self, pairs: &[(usize, usize)]) -> T {
        pairs
            .iter()
            .fold(T::zero(), |acc, &(r, c)| acc + self.get(r, c))
    }
}

/// Returns `(row, col)` pairs sorted by row: a maximum-cardinality matching
/// over allowed pairs with minimum total cost.
pub fn solve_assignment<T: Scalar>(matrix: &CostMatrix<T>) -> Vec<(usize, usize)> {
    let (m, n) = (matrix.rows, matrix.cols);
    if m == 0 || n == 0 {
        return Vec::new();
    }
    let mut max_abs = T::zero();
    let mut any_allowed = false;
    for r in 0..m {
        for c in 0..n {
            if matrix.is_allowed(r, c) {
                any_allowed = true;
                max_abs = max_abs.max(matrix.get(r, c).abs());
            }
        }
    }
    if !any_allowed {
        return Vec::new();
    }
    let size = m.max(n);
    let k = T::from_usize_lossy(m.min(n));
    let two = T::lit(2.0);
    let penalty = (two * k + T::one()) * (max_abs + T::one());

    let square: Vec<T> = (0..size * size)
        .map(|i| {
            let (r, c) = (i / size, i % size);
            if r < m && c < n && matrix.is_allowed(r, c) {
                matrix.get(r, c)
            } else {
                penalty
            }
        })
        .collect();

    let (mut col_of, u, v) = hungarian(&square, size);
    let scale = penalty.max(T::one());
    let tol = T::epsilon() * T::lit(64.0) * scale * T::from_usize_lossy(size);
    let tight = |r: usize, c: usize| (square[r * size + c] - u[r] - v[c]).abs() <= tol;
    let preferred = |r: usize, c: usize| r < m && c < n && matrix.is_allowed(r, c);
    lexicographic_refine(&mut col_of, size, m, &tight, &preferred);

    (0..m)
        .filter_map(|r| {
            let c = col_of[r];
            (c < n && matrix.is_allowed(r, c)).then_some((r, c))
        })
        .collect()
}

/// Classic O(n³) potentials-based Hungarian method on a square matrix.
/// Returns the column of each row and the row/column potentials, with
/// `cost[r][c] - u[r] - v[c] >= 0` and equality on matched pairs.
fn hungarian<T: Scalar>(cost: &[T], n: usize) -> (Vec<usize>, Vec<T>, Vec<T>) {
    let inf = T::infinity();
    // 1-based internally; index 0 is the virtual source column.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
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
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        col_of[p[j] - 1] = j - 1;
    }
    (col_of, u[1..].to_vec(), v[1..].to_vec())
}

/// Walks rows in order and moves each to its smallest tight column that still
/// admits a perfect matching on tight edges for the remaining rows. Preferred
/// (allowed, real) columns are tried before padding columns.
fn lexicographic_refine(
    col_of: &mut [usize],
    n: usize,
    real_rows: usize,
    tight: &dyn Fn(usize, usize) -> bool,
    preferred: &dyn Fn(usize, usize) -> bool,
) {
    let mut row_of = vec![0usize; n];
    for (r, &c) in col_of.iter().enumerate() {
        row_of[c] = r;
    }
    let mut fixed_col = vec![false; n];
    for r in 0..real_rows {
        let mut candidates: Vec<usize> = (0..n).filter(|&c| !fixed_col[c] && tight(r, c)).collect();
        candidates.sort_by_key(|&c| (!preferred(r, c), c));
        for c in candidates {
            let target = col_of[r];
            if c == target {
                break;
            }
            if let Some(path) =
                alternating_path(row_of[c], c, target, col_of, &row_of, &fixed_col, n, tight)
            {
                // path: (row, new column) pairs; the first row gives up `c`.
                for &(row, col) in &path {
                    col_of[row] = col;
                    row_of[col] = row;
                }
                col_of[r] = c;
                row_of[c] = r;
                break;
            }
        }
        fixed_col[col_of[r]] = true;
    }
}

/// Breadth-first search for a chain of tight reassignments that lets `start`
/// (currently holding `taken`) end up with `target` free for the caller.
#[allow(clippy::too_many_arguments)]
fn alternating_path(
    start: usize,
    taken: usize,
    target: usize,
    col_of: &[usize],
    row_of: &[usize],
    fixed_col: &[bool],
    n: usize,
    tight: &dyn Fn(usize, usize) -> bool,
) -> Option<Vec<(usize, usize)>> {
    // parent[row] = (previous row, column it takes)
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    visited[start] = true;
    queue.push_back(start);
    while let Some(x) = queue.pop_front() {
        for y in 0..n {
            if fixed_col[y] || y == taken || y == col_of[x] || !tight(x, y) {
                continue;
            }
            if y == target {
                let mut path = vec![(x, y)];
                let mut cur = x;
                while let Some(prev) = parent[cur] {
                    path.push((prev, col_of[cur]));
                    cur = prev;
                }
                return Some(path);
            }
            let next = row_of[y];
            if !visited[next] {
                visited[next] = true;
                parent[next] = Some(x);
                queue.push_back(next);
            }
        }
    }
    None
}
