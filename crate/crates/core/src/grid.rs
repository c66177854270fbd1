//! Uniform box grids, central-difference stencils and the assembly of the
//! discrete residual `F(T(D²_h u)) − [tψ + (1−t)ψ₀]` and its Jacobian.
//!
//! Nodes are numbered row-major over their multi-index (axis 0 slowest).
//! Boundary nodes are carried explicitly and hold the Dirichlet data, so every
//! interior stencil only reads grid nodes.

use rayon::prelude::*;
use thiserror::Error;

use crate::error::AlgebraError;
use crate::expr::{EvalEnv, EvalError};
use crate::matrix::SymMatrix;
use crate::solver::{ProblemSpec, Psi};
use crate::spectral::{self, eta_transform};
use crate::symfun;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("node {node:?} is a boundary node; stencils need an interior node")]
    BoundaryNode { node: Vec<usize> },
    #[error("grid function has {got} values, grid has {expected} nodes")]
    SizeMismatch { expected: usize, got: usize },
    #[error("non-finite grid value at node {node:?}")]
    NonFinite { node: Vec<usize> },
    #[error("not admissible at node {node:?}: sigma_{index} <= 0, eigenvalues {eigenvalues:?}")]
    NotAdmissible { node: Vec<usize>, index: usize, eigenvalues: Vec<f64> },
    #[error("evaluating psi at node {node:?}: {source}")]
    Psi { node: Vec<usize>, source: EvalError },
    #[error("at node {node:?}: {source}")]
    Algebra { node: Vec<usize>, source: AlgebraError },
}

/// Tensor grid on `[lo, hi]` with `res` nodes per axis, boundary included.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Grid {
    n: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    res: usize,
    h: Vec<f64>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, res: usize) -> Result<Grid, GridError> {
        let n = lo.len();
        if !(2..=3).contains(&n) || hi.len() != n {
            return Err(GridError::InvalidGrid(format!(
                "box corners must both have 2 or 3 coordinates (got {} and {})",
                lo.len(),
                hi.len()
            )));
        }
        if res < 5 {
            return Err(GridError::InvalidGrid(format!("resolution {res} < 5")));
        }
        let h: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a) / (res - 1) as f64).collect();
        if h.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(GridError::InvalidGrid(format!("need lo < hi componentwise, got {lo:?} / {hi:?}")));
        }
        Ok(Grid { n, lo, hi, res, h })
    }

    /// Unit cube `[0, 1]^n`.
    pub fn unit(n: usize, res: usize) -> Result<Grid, GridError> {
        Grid::new(vec![0.0; n], vec![1.0; n], res)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn node_count(&self) -> usize {
        self.res.pow(self.n as u32)
    }

    pub fn interior_count(&self) -> usize {
        (self.res - 2).pow(self.n as u32)
    }

    fn stride(&self, axis: usize) -> usize {
        self.res.pow((self.n - 1 - axis) as u32)
    }

    pub fn linear(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.res + i)
    }

    pub fn multi(&self, mut node: usize) -> Vec<usize> {
        let mut idx = vec![0; self.n];
        for axis in (0..self.n).rev() {
            idx[axis] = node % self.res;
            node /= self.res;
        }
        idx
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        self.multi(node)
            .iter()
            .enumerate()
            .map(|(a, &i)| if i == self.res - 1 { self.hi[a] } else { self.lo[a] + i as f64 * self.h[a] })
            .collect()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.multi(node).iter().any(|&i| i == 0 || i == self.res - 1)
    }

    /// Interior node numbers in row-major order; position in this list is
    /// the unknown's index in residuals and Jacobians.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&p| !self.is_boundary(p)).collect()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&p| self.is_boundary(p)).collect()
    }

    /// Position of an interior node among the unknowns.
    pub fn interior_position(&self, node: usize) -> Option<usize> {
        let idx = self.multi(node);
        if idx.iter().any(|&i| i == 0 || i == self.res - 1) {
            return None;
        }
        Some(idx.iter().fold(0, |acc, &i| acc * (self.res - 2) + (i - 1)))
    }

    fn require_interior(&self, node: usize) -> Result<(), GridError> {
        if node >= self.node_count() || self.is_boundary(node) {
            return Err(GridError::BoundaryNode { node: self.multi(node) });
        }
        Ok(())
    }
}

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.node_count() {
            return Err(GridError::SizeMismatch { expected: grid.node_count(), got: values.len() });
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { node: grid.multi(p) });
        }
        Ok(GridFunction { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let values = vec![0.0; grid.node_count()];
        GridFunction { grid, values }
    }

    /// Samples `f(x)` at every node.
    pub fn try_from_fn<E>(grid: Grid, mut f: impl FnMut(&[f64]) -> Result<f64, E>) -> Result<Self, E> {
        let values = (0..grid.node_count()).map(|p| f(&grid.coords(p))).collect::<Result<Vec<_>, E>>()?;
        Ok(GridFunction { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Adds `step * delta` on interior nodes; `delta` is in unknown order.
    pub fn add_interior(&self, delta: &[f64], step: f64) -> GridFunction {
        let mut out = self.clone();
        for (pos, node) in self.grid.interior_nodes().into_iter().enumerate() {
            out.values[node] += step * delta[pos];
        }
        out
    }
}

/// Central-difference gradient at an interior node.
pub fn fd_gradient(u: &GridFunction, node: usize) -> Result<Vec<f64>, GridError> {
    let g = u.grid();
    g.require_interior(node)?;
    Ok(gradient_at(u, node))
}

fn gradient_at(u: &GridFunction, node: usize) -> Vec<f64> {
    let g = u.grid();
    (0..g.n)
        .map(|a| {
            let s = g.stride(a);
            (u.values[node + s] - u.values[node - s]) / (2.0 * g.h[a])
        })
        .collect()
}

/// Hessian at an interior node: 3-point second differences on the diagonal,
/// the 4-point cross for mixed derivatives.
pub fn fd_hessian(u: &GridFunction, node: usize) -> Result<SymMatrix, GridError> {
    let g = u.grid();
    g.require_interior(node)?;
    Ok(hessian_at(u, node))
}

fn hessian_at(u: &GridFunction, node: usize) -> SymMatrix {
    let g = u.grid();
    let v = &u.values;
    let mut hess = SymMatrix::zeros(g.n);
    for i in 0..g.n {
        let si = g.stride(i);
        hess.set(i, i, (v[node + si] - 2.0 * v[node] + v[node - si]) / (g.h[i] * g.h[i]));
        for j in (i + 1)..g.n {
            let sj = g.stride(j);
            let cross = v[node + si + sj] - v[node + si - sj] - v[node - si + sj] + v[node - si - sj];
            hess.set(i, j, cross / (4.0 * g.h[i] * g.h[j]));
        }
    }
    hess
}

/// Discrete Laplacian (trace of [`fd_hessian`]).
pub fn fd_laplacian(u: &GridFunction, node: usize) -> Result<f64, GridError> {
    fd_hessian(u, node).map(|h| h.trace())
}

/// Discrete `U = T(D²_h u)` at an interior node.
pub fn transformed_hessian(u: &GridFunction, node: usize, tau: f64) -> Result<SymMatrix, GridError> {
    fd_hessian(u, node).map(|h| eta_transform(&h, tau))
}

/// `ψ(x, u, ∇_h u)` and, when requested, `ψ_z` and `ψ_{p_i}` at a node.
pub(crate) struct PsiSample {
    pub value: f64,
    pub dz: f64,
    pub dp: Vec<f64>,
}

pub(crate) fn sample_psi(
    psi: &Psi,
    u: &GridFunction,
    node: usize,
    derivatives: bool,
) -> Result<PsiSample, GridError> {
    let g = u.grid();
    match psi {
        Psi::Field(field) => Ok(PsiSample { value: field.get(node), dz: 0.0, dp: vec![0.0; g.n] }),
        Psi::Expr { expr, dz, dp } => {
            let x = g.coords(node);
            let grad = gradient_at(u, node);
            let env = EvalEnv::new(&x, u.values[node], &grad);
            let wrap = |source| GridError::Psi { node: g.multi(node), source };
            let value = expr.eval(&env).map_err(wrap)?;
            if !derivatives {
                return Ok(PsiSample { value, dz: 0.0, dp: Vec::new() });
            }
            let dz = dz.eval(&env).map_err(wrap)?;
            let dp = dp.iter().map(|d| d.eval(&env)).collect::<Result<Vec<_>, _>>().map_err(wrap)?;
            Ok(PsiSample { value, dz, dp })
        }
    }
}

/// Residual over the interior nodes, plus the extrema observed while
/// assembling it.
#[derive(Debug, Clone)]
pub struct ResidualField {
    /// In unknown order (see [`Grid::interior_nodes`]).
    pub values: Vec<f64>,
    /// `min_p min_{j≤k} σ_j(λ[U](p))/C(n,j)`.
    pub min_margin: f64,
    /// `min_p ψ(x_p, u_p, ∇_h u_p)`.
    pub min_psi: f64,
}

impl ResidualField {
    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

fn not_admissible(g: &Grid, node: usize, err: AlgebraError) -> GridError {
    match err {
        AlgebraError::NotAdmissible { index, eigenvalues } => {
            GridError::NotAdmissible { node: g.multi(node), index, eigenvalues }
        }
        other => GridError::Algebra { node: g.multi(node), source: other },
    }
}

/// `R_p = F(T(D²_h u(p))) − [t ψ(x_p, u_p, ∇_h u_p) + (1 − t) ψ₀(p)]` on
/// interior nodes. A single inadmissible node aborts the assembly.
pub fn assemble_residual(
    u: &GridFunction,
    prob: &ProblemSpec,
    t: f64,
    psi0: &GridFunction,
) -> Result<ResidualField, GridError> {
    let g = u.grid();
    let spec = &prob.spec;
    let nodes = g.interior_nodes();
    let per_node: Vec<(f64, f64, f64)> = nodes
        .par_iter()
        .map(|&node| {
            let hess = hessian_at(u, node);
            let big_u = eta_transform(&hess, spec.tau);
            let eig = spectral::sym_eig(&big_u).map_err(|e| not_admissible(g, node, e))?;
            let f = symfun::quotient_value_raw(&eig.values, spec).map_err(|e| not_admissible(g, node, e))?;
            let margin = symfun::admissibility_margin(&eig.values, spec.k);
            let psi = sample_psi(&prob.psi, u, node, false)?;
            let target = t * psi.value + (1.0 - t) * psi0.get(node);
            Ok((f - target, margin, psi.value))
        })
        .collect::<Result<_, GridError>>()?;
    let mut values = Vec::with_capacity(per_node.len());
    let mut min_margin = f64::INFINITY;
    let mut min_psi = f64::INFINITY;
    for (r, m, psi) in per_node {
        values.push(r);
        min_margin = min_margin.min(m);
        min_psi = min_psi.min(psi);
    }
    Ok(ResidualField { values, min_margin, min_psi })
}

/// Compressed-row sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        CsrMatrix { rows: n, row_ptr: (0..=n).collect(), cols: (0..n).collect(), vals: vec![1.0; n] }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0; rows + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < rows, "triplet ({r}, {c}) outside a {rows}x{rows} matrix");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix { rows, row_ptr, cols, vals }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |e| (self.cols[e], self.vals[e]))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Largest `|col − row|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.rows).flat_map(|r| self.row(r).map(move |(c, _)| c.abs_diff(r))).max().unwrap_or(0)
    }
}

/// Jacobian over the interior unknowns together with a right-hand side.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// `min_p ψ_z` observed during assembly.
    pub min_psi_z: f64,
}

/// `∂R_p/∂u_q = Σ_ij Q^{ij}(p) H^{ij}_{pq} − t ψ_z δ_pq − t Σ_i ψ_{p_i} G^i_{pq}`.
///
/// Only interior columns are kept: the Newton correction vanishes on the
/// boundary, where `u = φ` is held fixed. The right-hand side is left at zero
/// for the caller to fill.
pub fn assemble_jacobian(u: &GridFunction, prob: &ProblemSpec, t: f64) -> Result<SparseSystem, GridError> {
    let g = u.grid();
    let n = g.n;
    let spec = &prob.spec;
    let nodes = g.interior_nodes();
    let width = 3usize.pow(n as u32);

    // neighbour offsets in lexicographic order, axis 0 slowest
    let offsets: Vec<Vec<i64>> = (0..width)
        .map(|mut code| {
            let mut off = vec![0i64; n];
            for axis in (0..n).rev() {
                off[axis] = (code % 3) as i64 - 1;
                code /= 3;
            }
            off
        })
        .collect();
    let slot_of = |off: &[i64]| off.iter().fold(0usize, |acc, &o| acc * 3 + (o + 1) as usize);

    let rows: Vec<(Vec<(usize, f64)>, f64)> = nodes
        .par_iter()
        .map(|&node| {
            let hess = hessian_at(u, node);
            let q = spectral::q_gradient(&hess, spec).map_err(|e| not_admissible(g, node, e))?;
            let psi = sample_psi(&prob.psi, u, node, true)?;

            let mut w = vec![0.0; width];
            let mut unit = vec![0i64; n];
            let center = slot_of(&unit);
            for i in 0..n {
                let hi2 = g.h[i] * g.h[i];
                unit[i] = 1;
                w[slot_of(&unit)] += q.get(i, i) / hi2 - t * psi.dp[i] / (2.0 * g.h[i]);
                unit[i] = -1;
                w[slot_of(&unit)] += q.get(i, i) / hi2 + t * psi.dp[i] / (2.0 * g.h[i]);
                unit[i] = 0;
                w[center] -= 2.0 * q.get(i, i) / hi2;
                for j in (i + 1)..n {
                    // Q^{ij} and Q^{ji} both multiply the single cross difference
                    let c = 2.0 * q.get(i, j) / (4.0 * g.h[i] * g.h[j]);
                    for (si, sj, sign) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                        unit[i] = si;
                        unit[j] = sj;
                        w[slot_of(&unit)] += sign * c;
                    }
                    unit[i] = 0;
                    unit[j] = 0;
                }
            }
            w[center] -= t * psi.dz;

            let idx = g.multi(node);
            let mut entries = Vec::with_capacity(width);
            for (slot, off) in offsets.iter().enumerate() {
                let touched = off.iter().filter(|o| **o != 0).count() <= 2;
                if !touched {
                    continue;
                }
                let nb: Vec<usize> = idx.iter().zip(off).map(|(&i, &o)| (i as i64 + o) as usize).collect();
                if let Some(col) = g.interior_position(g.linear(&nb)) {
                    entries.push((col, w[slot]));
                }
            }
            Ok((entries, psi.dz))
        })
        .collect::<Result<_, GridError>>()?;

    let mut row_ptr = Vec::with_capacity(rows.len() + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut min_psi_z = f64::INFINITY;
    for (entries, dz) in rows {
        for (c, v) in entries {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
        min_psi_z = min_psi_z.min(dz);
    }
    let count = nodes.len();
    Ok(SparseSystem {
        matrix: CsrMatrix { rows: count, row_ptr, cols, vals },
        rhs: vec![0.0; count],
        min_psi_z,
    })
}
