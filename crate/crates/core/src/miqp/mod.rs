//! Convex-QP branch-and-bound for mixed-integer quadratic programs.
//!
//! Problems are dense-matrix descriptions of
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  A_eq x  = b_eq
//!                 A_in x <= b_in
//!                 lower <= x <= upper
//!                 x_j in {0, 1}   for integral j
//! ```
//!
//! The relaxation subsolver is a primal-dual interior-point method whose KKT
//! systems are factored with a banded LDL' after a reverse Cuthill-McKee
//! reordering, so the stage-structured MPC subproblems stay cheap while small
//! dense problems take the same path with a full band. Branch-and-bound uses
//! best-bound node selection with depth-first tie-breaking, most-fractional
//! branching, a rounding heuristic at the root, and bound-propagation
//! presolve that fixes binaries implied by big-M rows.

mod bnb;
mod ipm;
mod ldl;

pub use bnb::{enumerate_oracle, solve_miqp};
pub use ipm::{solve_qp_relaxation, QpOutcome, QpSolution};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem is not PSD-convex: min eigenvalue {0}")]
    NotConvex(f64),
    #[error("integral variable {0} must have bounds within [0, 1]")]
    BadIntegralBounds(usize),
    #[error("enumeration limited to 16 integral variables, got {0}")]
    TooManyBinaries(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Quadratic objective with linear constraints and a binary mask.
#[derive(Debug, Clone)]
pub struct MiqpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub integrality: Vec<bool>,
}

impl MiqpProblem {
    /// An unconstrained shell to be filled in; bounds default to infinite.
    pub fn new(n: usize) -> Self {
        Self {
            hessian: DMatrix::zeros(n, n),
            gradient: DVector::zeros(n),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
            integrality: vec![false; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn n_binaries(&self) -> usize {
        self.integrality.iter().filter(|b| **b).count()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.hessian * x)[(0, 0)] + self.gradient.dot(x)
    }

    /// Cheap shape checks used on every solve.
    pub fn check_dims(&self) -> Result<(), SolverError> {
        let n = self.n_vars();
        let ok = self.hessian.nrows() == n
            && self.hessian.ncols() == n
            && self.a_eq.ncols() == n
            && self.a_eq.nrows() == self.b_eq.len()
            && self.a_in.ncols() == n
            && self.a_in.nrows() == self.b_in.len()
            && self.lower.len() == n
            && self.upper.len() == n
            && self.integrality.len() == n;
        if !ok {
            return Err(SolverError::Dimension(format!(
                "n={n}, H {}x{}, A_eq {}x{}, A_in {}x{}",
                self.hessian.nrows(),
                self.hessian.ncols(),
                self.a_eq.nrows(),
                self.a_eq.ncols(),
                self.a_in.nrows(),
                self.a_in.ncols()
            )));
        }
        for (j, int) in self.integrality.iter().enumerate() {
            if *int && (self.lower[j] < -1e-9 || self.upper[j] > 1.0 + 1e-9) {
                return Err(SolverError::BadIntegralBounds(j));
            }
        }
        Ok(())
    }

    /// Full validation including the (O(n^3)) PSD check; meant for tests and
    /// problem construction, not hot paths.
    pub fn validate(&self) -> Result<(), SolverError> {
        self.check_dims()?;
        let sym = (&self.hessian + self.hessian.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -1e-8 {
            return Err(SolverError::NotConvex(min_eig));
        }
        Ok(())
    }

    /// Worst violation of all constraint groups at `x` (unscaled).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        let eq = &self.a_eq * x - &self.b_eq;
        for v in eq.iter() {
            worst = worst.max(v.abs());
        }
        let ineq = &self.a_in * x - &self.b_in;
        for v in ineq.iter() {
            worst = worst.max(*v);
        }
        for j in 0..self.n_vars() {
            worst = worst.max(self.lower[j] - x[j]);
            worst = worst.max(x[j] - self.upper[j]);
        }
        worst
    }

    /// Self-describing JSON dump (row-major dense matrices) for offline
    /// debugging.
    pub fn to_json(&self) -> serde_json::Value {
        fn mat(m: &DMatrix<f64>) -> serde_json::Value {
            serde_json::json!({
                "rows": m.nrows(),
                "cols": m.ncols(),
                "data_row_major": m.row_iter().flat_map(|r| r.iter().cloned().collect::<Vec<_>>()).collect::<Vec<f64>>(),
            })
        }
        serde_json::json!({
            "schema": "rowmpc.miqp_problem.v1",
            "hessian": mat(&self.hessian),
            "gradient": self.gradient.iter().cloned().collect::<Vec<f64>>(),
            "a_eq": mat(&self.a_eq),
            "b_eq": self.b_eq.iter().cloned().collect::<Vec<f64>>(),
            "a_in": mat(&self.a_in),
            "b_in": self.b_in.iter().cloned().collect::<Vec<f64>>(),
            "lower": self.lower.iter().cloned().collect::<Vec<f64>>(),
            "upper": self.upper.iter().cloned().collect::<Vec<f64>>(),
            "integrality": self.integrality.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiqpStatus {
    Optimal,
    Infeasible,
    NodeLimit,
}

#[derive(Debug, Clone)]
pub struct MiqpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: MiqpStatus,
    pub nodes_explored: usize,
    /// Incumbent objective minus the best outstanding relaxation bound at
    /// termination (zero once the tree is exhausted).
    pub relaxation_gap: f64,
    /// `(parent_bound, child_bound)` per explored edge when
    /// [`BnbConfig::record_tree`] is set.
    pub tree_edges: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct BnbConfig {
    pub feasibility_tol: f64,
    pub integrality_tol: f64,
    /// Absolute optimality gap.
    pub optimality_gap: f64,
    pub node_limit: usize,
    pub record_tree: bool,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-7,
            integrality_tol: 1e-6,
            optimality_gap: 1e-6,
            node_limit: 20_000,
            record_tree: false,
        }
    }
}

/// The continuous problem over free variables after substituting fixed ones
/// (`lower == upper`), with finite bounds folded into inequality rows and
/// all rows scaled to unit infinity norm.
pub(crate) struct ReducedQp {
    pub n: usize,
    /// Free-variable index -> original index.
    pub free: Vec<usize>,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub obj_const: f64,
    pub eq_rows: Vec<Vec<(usize, f64)>>,
    pub eq_rhs: Vec<f64>,
    pub in_rows: Vec<Vec<(usize, f64)>>,
    pub in_rhs: Vec<f64>,
    /// A constant row (after substitution) is violated: trivially infeasible.
    pub inconsistent: bool,
    /// Values of the fixed variables in original indexing.
    pub fixed_values: Vec<f64>,
    pub fixed_mask: Vec<bool>,
}

impl ReducedQp {
    pub fn build(p: &MiqpProblem, lower: &[f64], upper: &[f64]) -> Self {
        let n_full = p.n_vars();
        let mut fixed_mask = vec![false; n_full];
        let mut fixed_values = vec![0.0; n_full];
        let mut free = Vec::with_capacity(n_full);
        for j in 0..n_full {
            if lower[j] == upper[j] {
                fixed_mask[j] = true;
                fixed_values[j] = lower[j];
            } else {
                free.push(j);
            }
        }
        let n = free.len();
        let mut col_of = vec![usize::MAX; n_full];
        for (c, &j) in free.iter().enumerate() {
            col_of[j] = c;
        }

        // Reduced quadratic data. obj(x) = 1/2 xf' Hff xf + (gf + Hfx xfix)' xf + const
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for (ci, &i) in free.iter().enumerate() {
            for (cj, &j) in free.iter().enumerate() {
                h[(ci, cj)] = p.hessian[(i, j)];
            }
            let mut gi = p.gradient[i];
            for j in 0..n_full {
                if fixed_mask[j] {
                    gi += 0.5 * (p.hessian[(i, j)] + p.hessian[(j, i)]) * fixed_values[j];
                }
            }
            g[ci] = gi;
        }
        let mut obj_const = 0.0;
        for i in 0..n_full {
            if fixed_mask[i] {
                obj_const += p.gradient[i] * fixed_values[i];
                for j in 0..n_full {
                    if fixed_mask[j] {
                        obj_const += 0.5 * p.hessian[(i, j)] * fixed_values[i] * fixed_values[j];
                    }
                }
            }
        }

        let mut inconsistent = false;
        let consistency_tol = 1e-7;

        let mut eq_rows = Vec::with_capacity(p.a_eq.nrows());
        let mut eq_rhs = Vec::with_capacity(p.a_eq.nrows());
        for r in 0..p.a_eq.nrows() {
            let mut row = Vec::new();
            let mut rhs = p.b_eq[r];
            for j in 0..n_full {
                let v = p.a_eq[(r, j)];
                if v != 0.0 {
                    if fixed_mask[j] {
                        rhs -= v * fixed_values[j];
                    } else {
                        row.push((col_of[j], v));
                    }
                }
            }
            if row.is_empty() {
                if rhs.abs() > consistency_tol {
                    inconsistent = true;
                }
                continue;
            }
            let scale = row.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max).max(1e-12);
            for (_, v) in &mut row {
                *v /= scale;
            }
            eq_rows.push(row);
            eq_rhs.push(rhs / scale);
        }

        let mut in_rows = Vec::with_capacity(p.a_in.nrows() + 2 * n);
        let mut in_rhs = Vec::with_capacity(p.a_in.nrows() + 2 * n);
        for r in 0..p.a_in.nrows() {
            let mut row = Vec::new();
            let mut rhs = p.b_in[r];
            for j in 0..n_full {
                let v = p.a_in[(r, j)];
                if v != 0.0 {
                    if fixed_mask[j] {
                        rhs -= v * fixed_values[j];
                    } else {
                        row.push((col_of[j], v));
                    }
                }
            }
            if row.is_empty() {
                if rhs < -consistency_tol {
                    inconsistent = true;
                }
                continue;
            }
            let scale = row.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max).max(1e-12);
            for (_, v) in &mut row {
                *v /= scale;
            }
            in_rows.push(row);
            in_rhs.push(rhs / scale);
        }
        for (c, &j) in free.iter().enumerate() {
            if upper[j].is_finite() {
                in_rows.push(vec![(c, 1.0)]);
                in_rhs.push(upper[j]);
            }
            if lower[j].is_finite() {
                in_rows.push(vec![(c, -1.0)]);
                in_rhs.push(-lower[j]);
            }
            if lower[j] > upper[j] {
                inconsistent = true;
            }
        }

        Self {
            n,
            free,
            h,
            g,
            obj_const,
            eq_rows,
            eq_rhs,
            in_rows,
            in_rhs,
            inconsistent,
            fixed_values,
            fixed_mask,
        }
    }

    /// Map a reduced solution back to the full variable space.
    pub fn expand(&self, x_reduced: &[f64]) -> DVector<f64> {
        let n_full = self.fixed_mask.len();
        let mut out = DVector::zeros(n_full);
        for j in 0..n_full {
            if self.fixed_mask[j] {
                out[j] = self.fixed_values[j];
            }
        }
        for (c, &j) in self.free.iter().enumerate() {
            out[j] = x_reduced[c];
        }
        out
    }

    /// Restrict a full-space vector to the free coordinates.
    pub fn restrict(&self, x_full: &DVector<f64>) -> Vec<f64> {
        self.free.iter().map(|&j| x_full[j]).collect()
    }
}
