//! Exact Earth Mover's Distance between weighted signatures.
//!
//! [`solve_emd`] solves the transportation problem with the primal
//! transportation simplex (MODI potentials, stepping-stone cycles). When the
//! two signatures carry different total weight only the smaller mass is moved,
//! by routing the excess through a zero-cost dummy row or column. The value is
//! the total work divided by the total flow.
//!
//! [`emd_1d_unit_mass`] is the closed form for two samples on the real line
//! with uniform unit mass each: the area between their empirical CDFs.

use thiserror::Error;

/// Absolute tolerance used for feasibility checks on flows.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("signature has {points} points but {weights} weights")]
    WeightCountMismatch { points: usize, weights: usize },
    #[error("signature must contain at least one point")]
    EmptySignature,
    #[error("weight {index} is negative or not finite ({value})")]
    InvalidWeight { index: usize, value: f64 },
    #[error("signature total weight must be positive")]
    ZeroTotalWeight,
    #[error("ground distance matrix is {rows}x{cols}, signatures are {m}x{n}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        m: usize,
        n: usize,
    },
    #[error("ground distance ({row}, {col}) is negative or not finite ({value})")]
    InvalidDistance { row: usize, col: usize, value: f64 },
    #[error("cannot compute EMD of an empty sample")]
    EmptySample,
    #[error("sample value {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("transportation simplex did not converge after {iterations} pivots")]
    NonConvergence { iterations: usize },
}

/// Weighted point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature<P> {
    points: Vec<P>,
    weights: Vec<f64>,
    total: f64,
}

impl<P> Signature<P> {
    pub fn new(points: Vec<P>, weights: Vec<f64>) -> Result<Self, TransportError> {
        if points.len() != weights.len() {
            return Err(TransportError::WeightCountMismatch {
                points: points.len(),
                weights: weights.len(),
            });
        }
        if points.is_empty() {
            return Err(TransportError::EmptySignature);
        }
        if let Some((index, &value)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(TransportError::InvalidWeight { index, value });
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(TransportError::ZeroTotalWeight);
        }
        Ok(Self {
            points,
            weights,
            total,
        })
    }

    /// Every point gets weight `1 / len`.
    pub fn uniform(points: Vec<P>) -> Result<Self, TransportError> {
        let n = points.len();
        if n == 0 {
            return Err(TransportError::EmptySignature);
        }
        Self::new(points, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[P] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.total
    }
}

/// Dense row-major `rows × cols` grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl Grid {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.entries[row * self.cols..(row + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.entries[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }
}

/// Ground distances `d[i][j]` between source point `i` and sink point `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundDistanceMatrix(Grid);

impl GroundDistanceMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self, TransportError> {
        if entries.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(TransportError::DimensionMismatch {
                rows,
                cols,
                m: entries.len(),
                n: 1,
            });
        }
        if let Some((k, &value)) = entries
            .iter()
            .enumerate()
            .find(|(_, d)| !d.is_finite() || **d < 0.0)
        {
            return Err(TransportError::InvalidDistance {
                row: k / cols,
                col: k % cols,
                value,
            });
        }
        Ok(Self(Grid {
            rows,
            cols,
            entries,
        }))
    }

    /// Evaluates `dist` on every (source, sink) point pair.
    pub fn from_fn<P, Q>(
        p: &Signature<P>,
        q: &Signature<Q>,
        mut dist: impl FnMut(&P, &Q) -> f64,
    ) -> Result<Self, TransportError> {
        let entries = p
            .points()
            .iter()
            .flat_map(|a| q.points().iter().map(move |b| (a, b)))
            .map(|(a, b)| dist(a, b))
            .collect();
        Self::new(p.len(), q.len(), entries)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0.get(row, col)
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, TransportError> {
        Self::new(
            self.0.rows,
            self.0.cols,
            self.0.entries.iter().map(|d| d * factor).collect(),
        )
    }
}

/// Transport plan `f[i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix(Grid);

impl FlowMatrix {
    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0.get(row, col)
    }

    pub fn total(&self) -> f64 {
        self.0.entries.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.0.rows)
            .map(|i| self.0.row(i).iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.0.cols)
            .map(|j| (0..self.0.rows).map(|i| self.0.get(i, j)).sum())
            .collect()
    }

    /// Checks the flow constraints against the two signatures' weights.
    pub fn is_feasible<P, Q>(&self, p: &Signature<P>, q: &Signature<Q>, tolerance: f64) -> bool {
        let nonneg = self.0.entries.iter().all(|f| *f >= -tolerance);
        let rows = self
            .row_sums()
            .iter()
            .zip(p.weights())
            .all(|(s, w)| *s <= w + tolerance);
        let cols = self
            .col_sums()
            .iter()
            .zip(q.weights())
            .all(|(s, w)| *s <= w + tolerance);
        let target = p.total_weight().min(q.total_weight());
        nonneg && rows && cols && (self.total() - target).abs() <= tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmdSolution {
    pub value: f64,
    pub flow: FlowMatrix,
}

/// Exact EMD between `p` and `q` under ground distance `d`.
pub fn solve_emd<P, Q>(
    p: &Signature<P>,
    q: &Signature<Q>,
    d: &GroundDistanceMatrix,
) -> Result<EmdSolution, TransportError> {
    let (m, n) = (p.len(), q.len());
    if d.0.rows != m || d.0.cols != n {
        return Err(TransportError::DimensionMismatch {
            rows: d.0.rows,
            cols: d.0.cols,
            m,
            n,
        });
    }

    let mut supply = p.weights().to_vec();
    let mut demand = q.weights().to_vec();
    let (pt, qt) = (p.total_weight(), q.total_weight());
    let (rows, cols) = if pt > qt {
        demand.push(pt - qt);
        (m, n + 1)
    } else if qt > pt {
        supply.push(qt - pt);
        (m + 1, n)
    } else {
        (m, n)
    };
    let mut cost = vec![0.0; rows * cols];
    for i in 0..m {
        cost[i * cols..i * cols + n].copy_from_slice(d.0.row(i));
    }

    let flows = TransportationSimplex::new(rows, cols, supply, demand, cost).solve()?;

    let mut flow = Grid::zeros(m, n);
    let (mut work, mut total) = (0.0, 0.0);
    for i in 0..m {
        for j in 0..n {
            let f = flows[i * cols + j].max(0.0);
            flow.entries[i * n + j] = f;
            work += f * d.get(i, j);
            total += f;
        }
    }
    Ok(EmdSolution {
        value: work / total,
        flow: FlowMatrix(flow),
    })
}

/// EMD between two real samples, each spread as unit mass over its points.
///
/// Equal to [`solve_emd`] with uniform weights and `|a − b|` ground distance,
/// computed in `O((n + m) log(n + m))` as `∫ |F_a(x) − F_b(x)| dx`.
pub fn emd_1d_unit_mass(a: &[f64], b: &[f64]) -> Result<f64, TransportError> {
    if a.is_empty() || b.is_empty() {
        return Err(TransportError::EmptySample);
    }
    for sample in [a, b] {
        if let Some(index) = sample.iter().position(|x| !x.is_finite()) {
            return Err(TransportError::NonFiniteSample { index });
        }
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);

    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut area = 0.0;
    let mut x = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        // Next breakpoint, then absorb every sample sitting on it.
        let next = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        let gap = (i as f64 / na - j as f64 / nb).abs();
        area += gap * (next - x);
        x = next;
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
    }
    Ok(area)
}

/// Balanced transportation problem over a `rows × cols` cost grid.
struct TransportationSimplex {
    rows: usize,
    cols: usize,
    supply: Vec<f64>,
    demand: Vec<f64>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    basic: Vec<bool>,
    /// Basic cells, always exactly `rows + cols − 1` of them forming a
    /// spanning tree over row and column nodes (degenerate cells included).
    basis: Vec<usize>,
}

impl TransportationSimplex {
    fn new(rows: usize, cols: usize, supply: Vec<f64>, demand: Vec<f64>, cost: Vec<f64>) -> Self {
        Self {
            rows,
            cols,
            supply,
            demand,
            cost,
            flow: vec![0.0; rows * cols],
            basic: vec![false; rows * cols],
            basis: Vec::with_capacity(rows + cols - 1),
        }
    }

    /// Least-cost initial basic solution. Each allocation crosses out exactly
    /// one row or column, so the allocated cells always form a spanning tree.
    fn initial_basis(&mut self) {
        let (rows, cols) = (self.rows, self.cols);
        let mut order: Vec<usize> = (0..rows * cols).collect();
        order.sort_by(|&a, &b| self.cost[a].total_cmp(&self.cost[b]).then(a.cmp(&b)));
        let mut row_left = self.supply.clone();
        let mut col_left = self.demand.clone();
        let mut row_open = vec![true; rows];
        let mut col_open = vec![true; cols];
        let (mut open_rows, mut open_cols) = (rows, cols);

        for cell in order {
            if self.basis.len() == rows + cols - 1 {
                break;
            }
            let (i, j) = (cell / cols, cell % cols);
            if !row_open[i] || !col_open[j] {
                continue;
            }
            let x = row_left[i].min(col_left[j]).max(0.0);
            self.flow[cell] = x;
            self.basic[cell] = true;
            self.basis.push(cell);
            row_left[i] -= x;
            col_left[j] -= x;
            let close_row = if open_cols == 1 {
                true
            } else if open_rows == 1 {
                false
            } else {
                row_left[i] <= col_left[j]
            };
            if close_row {
                row_open[i] = false;
                open_rows -= 1;
            } else {
                col_open[j] = false;
                open_cols -= 1;
            }
        }
        debug_assert_eq!(self.basis.len(), rows + cols - 1);
    }

    /// Tree adjacency: node `i < rows` is a row, node `rows + j` a column.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.rows + self.cols];
        for &cell in &self.basis {
            let (i, j) = (cell / self.cols, cell % self.cols);
            adj[i].push((self.rows + j, cell));
            adj[self.rows + j].push((i, cell));
        }
        adj
    }

    /// Dual potentials with `u[0] = 0`, solving `u_i + v_j = c_ij` on the tree.
    fn potentials(&self, adj: &[Vec<(usize, usize)>]) -> Vec<f64> {
        let nodes = self.rows + self.cols;
        let mut pot = vec![f64::NAN; nodes];
        pot[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &(next, cell) in &adj[node] {
                if pot[next].is_nan() {
                    pot[next] = self.cost[cell] - pot[node];
                    stack.push(next);
                }
            }
        }
        pot
    }

    /// Cells on the tree path from column node of `j` to row node `i`.
    fn tree_path(&self, adj: &[Vec<(usize, usize)>], i: usize, j: usize) -> Vec<usize> {
        let nodes = self.rows + self.cols;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
        let mut seen = vec![false; nodes];
        seen[i] = true;
        let mut queue = std::collections::VecDeque::from([i]);
        let target = self.rows + j;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &(next, cell) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, cell));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while node != i {
            let (prev, cell) = parent[node].expect("basis is a spanning tree");
            path.push(cell);
            node = prev;
        }
        path
    }

    fn solve(mut self) -> Result<Vec<f64>, TransportError> {
        self.initial_basis();
        let scale = self.cost.iter().fold(1.0f64, |acc, c| acc.max(c.abs()));
        let tolerance = 1e-12 * scale;
        let max_iterations = 50 * (self.rows + self.cols) * (self.rows + self.cols) + 1000;
        let mut degenerate_run = 0usize;

        for _ in 0..max_iterations {
            let adj = self.adjacency();
            let pot = self.potentials(&adj);
            let bland = degenerate_run > self.rows + self.cols;

            let mut entering = None;
            let mut best = -tolerance;
            for cell in 0..self.rows * self.cols {
                if self.basic[cell] {
                    continue;
                }
                let (i, j) = (cell / self.cols, cell % self.cols);
                let reduced = self.cost[cell] - pot[i] - pot[self.rows + j];
                if reduced < best {
                    entering = Some(cell);
                    if bland {
                        break;
                    }
                    best = reduced;
                }
            }
            let Some(entering) = entering else {
                return Ok(self.flow);
            };

            let (ei, ej) = (entering / self.cols, entering % self.cols);
            // Path from column ej back to row ei; its first cell shares the
            // entering cell's column and loses flow, then signs alternate.
            let path = self.tree_path(&adj, ei, ej);
            let mut leaving = path[0];
            for &cell in path.iter().step_by(2) {
                let better = self.flow[cell] < self.flow[leaving]
                    || (self.flow[cell] == self.flow[leaving] && cell < leaving);
                if better {
                    leaving = cell;
                }
            }
            let theta = self.flow[leaving];
            for (k, &cell) in path.iter().enumerate() {
                if k % 2 == 0 {
                    self.flow[cell] -= theta;
                } else {
                    self.flow[cell] += theta;
                }
            }
            self.flow[entering] = theta;
            self.flow[leaving] = 0.0;
            self.basic[leaving] = false;
            self.basic[entering] = true;
            let slot = self
                .basis
                .iter()
                .position(|&c| c == leaving)
                .expect("leaving cell is basic");
            self.basis[slot] = entering;
            degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
        }
        Err(TransportError::NonConvergence {
            iterations: max_iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64], weights: &[f64]) -> Signature<f64> {
        Signature::new(points.to_vec(), weights.to_vec()).unwrap()
    }

    fn abs_matrix(p: &Signature<f64>, q: &Signature<f64>) -> GroundDistanceMatrix {
        GroundDistanceMatrix::from_fn(p, q, |a, b| (a - b).abs()).unwrap()
    }

    #[test]
    fn identical_signatures_cost_nothing() {
        let p = line(&[0.0, 1.0, 3.0], &[0.2, 0.5, 0.3]);
        let sol = solve_emd(&p, &p, &abs_matrix(&p, &p)).unwrap();
        assert_eq!(sol.value, 0.0);
        assert!(sol.flow.is_feasible(&p, &p, FEASIBILITY_TOLERANCE));
    }

    #[test]
    fn single_points_force_the_flow() {
        let p = line(&[0.0], &[1.0]);
        let q = line(&[0.0], &[1.0]);
        let d = GroundDistanceMatrix::new(1, 1, vec![3.0]).unwrap();
        let sol = solve_emd(&p, &q, &d).unwrap();
        assert_eq!(sol.value, 3.0);
        assert_eq!(sol.flow.get(0, 0), 1.0);
    }

    #[test]
    fn two_halves_to_the_midpoint() {
        // The transportation polytope for a 2x1 problem with matching mass
        // has the single vertex f = [[0.5], [0.5]], costing 0.5·0.5 + 0.5·0.5.
        let p = line(&[0.0, 1.0], &[0.5, 0.5]);
        let q = line(&[0.5], &[1.0]);
        let sol = solve_emd(&p, &q, &abs_matrix(&p, &q)).unwrap();
        assert!((sol.value - 0.5).abs() < 1e-12);
        assert!((sol.flow.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((sol.flow.get(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn partial_transport_moves_only_the_smaller_mass() {
        // Source mass 1 at 0 and 1 at 10; sink mass 1 at 1. The cheaper
        // source supplies everything: value 1, total flow 1.
        let p = line(&[0.0, 10.0], &[1.0, 1.0]);
        let q = line(&[1.0], &[1.0]);
        let sol = solve_emd(&p, &q, &abs_matrix(&p, &q)).unwrap();
        assert!((sol.value - 1.0).abs() < 1e-12);
        assert!((sol.flow.total() - 1.0).abs() < 1e-12);
        assert!(sol.flow.is_feasible(&p, &q, FEASIBILITY_TOLERANCE));
        let back = solve_emd(&q, &p, &abs_matrix(&q, &p)).unwrap();
        assert!((back.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_points_are_allowed() {
        let p = line(&[0.0, 5.0], &[1.0, 0.0]);
        let q = line(&[2.0], &[1.0]);
        let sol = solve_emd(&p, &q, &abs_matrix(&p, &q)).unwrap();
        assert!((sol.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn validation_errors() {
        assert_eq!(
            Signature::new(vec![0.0], vec![]),
            Err(TransportError::WeightCountMismatch {
                points: 1,
                weights: 0
            })
        );
        assert_eq!(
            Signature::<f64>::new(vec![], vec![]),
            Err(TransportError::EmptySignature)
        );
        assert_eq!(
            Signature::new(vec![0.0, 1.0], vec![0.0, 0.0]),
            Err(TransportError::ZeroTotalWeight)
        );
        assert!(matches!(
            Signature::new(vec![0.0], vec![-1.0]),
            Err(TransportError::InvalidWeight { index: 0, .. })
        ));
        assert!(matches!(
            GroundDistanceMatrix::new(1, 2, vec![0.0, f64::NAN]),
            Err(TransportError::InvalidDistance { row: 0, col: 1, .. })
        ));
        let p = line(&[0.0, 1.0], &[0.5, 0.5]);
        let d = GroundDistanceMatrix::new(1, 1, vec![1.0]).unwrap();
        assert!(matches!(
            solve_emd(&p, &p, &d),
            Err(TransportError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn one_dimensional_examples() {
        assert_eq!(emd_1d_unit_mass(&[2.0], &[-1.5]).unwrap(), 3.5);
        assert_eq!(emd_1d_unit_mass(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(
            emd_1d_unit_mass(&[], &[1.0]),
            Err(TransportError::EmptySample)
        );
        assert_eq!(
            emd_1d_unit_mass(&[1.0], &[f64::NAN]),
            Err(TransportError::NonFiniteSample { index: 0 })
        );
    }

    #[test]
    fn one_dimensional_matches_general_solver_on_small_case() {
        let a = [0.0, 0.0, 1.0];
        let b = [1.0, 1.0, 1.0];
        let p = Signature::uniform(a.to_vec()).unwrap();
        let q = Signature::uniform(b.to_vec()).unwrap();
        let general = solve_emd(&p, &q, &abs_matrix(&p, &q)).unwrap().value;
        let closed = emd_1d_unit_mass(&a, &b).unwrap();
        assert!((general - closed).abs() < 1e-9);
        assert!((closed - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn inputs_are_not_mutated() {
        let a = vec![3.0, 1.0, 2.0];
        let b = vec![0.5, 4.0];
        emd_1d_unit_mass(&a, &b).unwrap();
        assert_eq!(a, vec![3.0, 1.0, 2.0]);
        assert_eq!(b, vec![0.5, 4.0]);
    }
}
