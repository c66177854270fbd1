//! Symmetric-matrix layer: Jacobi eigendecomposition, the transform
//! `T(A) = τ tr(A) I − A`, and the matrix operator `F(U) = f(λ[U])` with its
//! derivatives.

use crate::error::{AlgebraError, Result};
use crate::matrix::SymMatrix;
use crate::symfun::{self, QuotientSpec, MAX_DIM};

/// Sweep limit for the cyclic Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;

/// Eigenvalues closer than `REPEATED_EIG_TOL·(1 + |λ|)` use the limit branch
/// of the divided difference.
pub const REPEATED_EIG_TOL: f64 = 1e-8;

/// Ascending eigenvalues with orthonormal eigenvectors stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub values: Vec<f64>,
    /// Row-major `n×n`; column `p` is the eigenvector of `values[p]`.
    pub vectors: Vec<f64>,
}

impl EigenPair {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, p: usize) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|r| self.vectors[r * n + p]).collect()
    }

    /// `Σ_p w_p v_p v_pᵀ`.
    pub fn reassemble(&self, weights: &[f64]) -> SymMatrix {
        let n = self.dim();
        let v = &self.vectors;
        SymMatrix::from_fn(n, |i, j| (0..n).map(|p| weights[p] * v[i * n + p] * v[j * n + p]).sum())
    }
}

/// `T(A) = τ tr(A) I − A`.
pub fn eta_transform(a: &SymMatrix, tau: f64) -> SymMatrix {
    let n = a.dim();
    let shift = tau * a.trace();
    SymMatrix::from_fn(n, |i, j| if i == j { shift - a.get(i, j) } else { -a.get(i, j) })
}

/// Cyclic Jacobi eigendecomposition.
pub fn sym_eig(a: &SymMatrix) -> Result<EigenPair> {
    let n = a.dim();
    if n == 0 || n > MAX_DIM {
        return Err(AlgebraError::InvalidArgument(format!("matrix order {n} outside 1..={MAX_DIM}")));
    }
    if !a.is_finite() {
        return Err(AlgebraError::InvalidArgument("matrix has non-finite entries".into()));
    }
    let mut m = a.as_slice().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm = a.frobenius_norm();
    let threshold = 1e-14 * norm;

    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = off(&m) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                m[p * n + p] -= t * apq;
                m[q * n + q] += t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = m[r * n + p];
                        let arq = m[r * n + q];
                        let new_rp = c * arp - s * arq;
                        let new_rq = s * arp + c * arq;
                        m[r * n + p] = new_rp;
                        m[p * n + r] = new_rp;
                        m[r * n + q] = new_rq;
                        m[q * n + r] = new_rq;
                    }
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
        converged = off(&m) <= threshold;
    }
    if !converged {
        return Err(AlgebraError::EigFailure { sweeps });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[x * n + x].total_cmp(&m[y * n + y]));
    let values = order.iter().map(|&p| m[p * n + p]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &p) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + col] = v[r * n + p];
        }
    }
    Ok(EigenPair { values, vectors })
}

fn check_dim(u: &SymMatrix, spec: &QuotientSpec) -> Result<()> {
    if u.dim() != spec.n {
        return Err(AlgebraError::InvalidArgument(format!(
            "matrix order {} does not match n = {}",
            u.dim(),
            spec.n
        )));
    }
    Ok(())
}

/// `F(U) = f(λ[U])`.
pub fn f_value(u: &SymMatrix, spec: &QuotientSpec) -> Result<f64> {
    check_dim(u, spec)?;
    let eig = sym_eig(u)?;
    symfun::quotient_value_raw(&eig.values, spec)
}

/// Value, gradient `F^{ij}` and the eigendecomposition, sharing one
/// eigensolve.
#[derive(Debug, Clone)]
pub struct SpectralEval {
    pub value: f64,
    pub gradient: SymMatrix,
    pub eig: EigenPair,
    /// `∂f/∂λ_p` at the sorted eigenvalues.
    pub eigen_gradient: Vec<f64>,
}

pub fn f_evaluate(u: &SymMatrix, spec: &QuotientSpec) -> Result<SpectralEval> {
    check_dim(u, spec)?;
    let eig = sym_eig(u)?;
    let (value, eigen_gradient) = symfun::quotient_value_gradient_raw(&eig.values, spec)?;
    let gradient = eig.reassemble(&eigen_gradient);
    Ok(SpectralEval { value, gradient, eig, eigen_gradient })
}

/// `F^{ij} = ∂F/∂U_ij = Σ_p f_p v_p v_pᵀ`.
pub fn f_gradient(u: &SymMatrix, spec: &QuotientSpec) -> Result<SymMatrix> {
    f_evaluate(u, spec).map(|e| e.gradient)
}

/// `Q^{ij} = ∂F(T(A))/∂A_ij = τ tr(F') I − F'` with `F'` taken at `T(A)`.
pub fn q_gradient(a: &SymMatrix, spec: &QuotientSpec) -> Result<SymMatrix> {
    let g = f_gradient(&eta_transform(a, spec.tau), spec)?;
    Ok(eta_transform(&g, spec.tau))
}

/// `−F^{ij,ji}` at a diagonal `U`:
/// `(f_i − f_j)/(λ_j − λ_i)`, or the limit `f_ij − f_ii` when the two
/// eigenvalues coincide to within [`REPEATED_EIG_TOL`].
pub fn neg_offdiag_second(u: &SymMatrix, spec: &QuotientSpec, i: usize, j: usize) -> Result<f64> {
    check_dim(u, spec)?;
    let n = u.dim();
    if i >= n || j >= n {
        return Err(AlgebraError::InvalidArgument(format!("index out of range for n = {n}")));
    }
    if i == j {
        return Err(AlgebraError::InvalidArgument("off-diagonal second derivative needs i != j".into()));
    }
    if !u.is_diagonal() {
        return Err(AlgebraError::InvalidArgument("matrix must be diagonal".into()));
    }
    let lam = u.diagonal();
    let (li, lj) = (lam[i], lam[j]);
    if (li - lj).abs() <= REPEATED_EIG_TOL * (1.0 + li.abs().max(lj.abs())) {
        let hess = symfun::quotient_hessian_raw(&lam, spec)?;
        Ok(hess.get(i, j) - hess.get(i, i))
    } else {
        let (_, grad) = symfun::quotient_value_gradient_raw(&lam, spec)?;
        Ok((grad[i] - grad[j]) / (lj - li))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, k: usize, l: usize) -> QuotientSpec {
        QuotientSpec::new(n, k, l, 1.0).unwrap()
    }

    fn check_pair(a: &SymMatrix, eig: &EigenPair) {
        let n = a.dim();
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|r| eig.vectors[r * n + i] * eig.vectors[r * n + j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() <= 1e-12);
            }
        }
        for p in 0..n {
            let v = eig.vector(p);
            let av = a.mul_vec(&v);
            let res: f64 = av.iter().zip(&v).map(|(x, y)| (x - eig.values[p] * y).powi(2)).sum::<f64>().sqrt();
            assert!(res <= 1e-10 * (1.0 + a.frobenius_norm()));
        }
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eta_examples() {
        let i3 = SymMatrix::identity(3);
        assert_eq!(eta_transform(&i3, 1.0), i3.scaled(2.0));
        let d = SymMatrix::from_diagonal(&[1.0, 2.0, 4.0]);
        assert_eq!(eta_transform(&d, 1.0), SymMatrix::from_diagonal(&[6.0, 5.0, 3.0]));
        assert_eq!(eta_transform(&SymMatrix::zeros(3), 2.0), SymMatrix::zeros(3));
    }

    #[test]
    fn eig_examples() {
        let d = SymMatrix::from_diagonal(&[3.0, 1.0, 2.0]);
        let e = sym_eig(&d).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
        check_pair(&d, &e);
        assert!(e.vectors.iter().all(|v| *v == 0.0 || v.abs() == 1.0));

        let swap = SymMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let e = sym_eig(&swap).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-15 && (e.values[1] - 1.0).abs() < 1e-15);
        check_pair(&swap, &e);

        let a = SymMatrix::from_rows(&[
            &[4.0, -1.0, 0.5, 0.2],
            &[-1.0, 3.0, 0.1, -0.7],
            &[0.5, 0.1, -2.0, 1.1],
            &[0.2, -0.7, 1.1, 0.3],
        ]);
        let e = sym_eig(&a).unwrap();
        check_pair(&a, &e);
        let back = e.reassemble(&e.values);
        assert!(back.add_scaled(&a, -1.0).max_abs() < 1e-12);
    }

    #[test]
    fn eig_zero_matrix() {
        let e = sym_eig(&SymMatrix::zeros(3)).unwrap();
        assert_eq!(e.values, vec![0.0; 3]);
    }

    #[test]
    fn f_value_examples() {
        let two = SymMatrix::identity(3).scaled(2.0);
        assert!((f_value(&two, &spec(3, 3, 1)).unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-14);
        let d = SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        assert!((f_value(&d, &spec(3, 2, 0)).unwrap() - 11f64.sqrt()).abs() < 1e-14);
        let bad = SymMatrix::from_diagonal(&[3.0, 1.0, -1.0]);
        assert!(matches!(f_value(&bad, &spec(3, 2, 0)), Err(AlgebraError::NotAdmissible { index: 2, .. })));
        assert!(f_value(&d, &spec(4, 2, 0)).is_err());
    }

    #[test]
    fn gradient_examples() {
        let d = SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        let g = f_gradient(&d, &spec(3, 3, 1)).unwrap();
        let want = SymMatrix::from_diagonal(&[5.0 / 12.0, 1.0 / 6.0, 1.0 / 12.0]);
        assert!(g.add_scaled(&want, -1.0).max_abs() < 1e-14);

        let s = spec(4, 3, 1);
        let g = f_gradient(&SymMatrix::identity(4).scaled(0.8), &s).unwrap();
        let want = SymMatrix::identity(4).scaled(s.unit_value() / 4.0);
        assert!(g.add_scaled(&want, -1.0).max_abs() < 1e-14);
    }

    #[test]
    fn q_gradient_example_and_trace_identity() {
        let s = spec(3, 3, 1);
        // T(A) = diag(1,2,3) for A = tr/2 I − diag(1,2,3) with tr(A) = 3
        let a = SymMatrix::from_diagonal(&[2.0, 1.0, 0.0]);
        assert_eq!(eta_transform(&a, 1.0), SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]));
        let q = q_gradient(&a, &s).unwrap();
        let want = SymMatrix::from_diagonal(&[0.25, 0.5, 7.0 / 12.0]);
        assert!(q.add_scaled(&want, -1.0).max_abs() < 1e-14);

        let u = eta_transform(&a, 1.0);
        let g = f_gradient(&u, &s).unwrap();
        let f = f_value(&u, &s).unwrap();
        assert!((q.dot(&a) - f).abs() < 1e-14);
        assert!((g.dot(&u) - f).abs() < 1e-14);
    }

    #[test]
    fn offdiag_examples() {
        let s = spec(3, 3, 1);
        let d = SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        assert!((neg_offdiag_second(&d, &s, 0, 1).unwrap() - 0.25).abs() < 1e-14);
        // symmetric in (i, j)
        assert!((neg_offdiag_second(&d, &s, 1, 0).unwrap() - 0.25).abs() < 1e-14);

        let c = SymMatrix::identity(3).scaled(1.5);
        let lim = neg_offdiag_second(&c, &s, 0, 2).unwrap();
        let near = SymMatrix::from_diagonal(&[1.5, 1.5, 1.5 + 1e-5]);
        let divided = neg_offdiag_second(&near, &s, 0, 2).unwrap();
        assert!((lim - divided).abs() < 1e-4 * lim.abs().max(1.0), "{lim} vs {divided}");
        assert!(lim > 0.0);

        assert!(neg_offdiag_second(&d, &s, 1, 1).is_err());
        let full = SymMatrix::from_rows(&[&[2.0, 0.1, 0.0], &[0.1, 2.0, 0.0], &[0.0, 0.0, 2.0]]);
        assert!(neg_offdiag_second(&full, &s, 0, 1).is_err());
    }
}
