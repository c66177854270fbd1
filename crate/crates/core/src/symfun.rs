//! Elementary symmetric polynomials, Gårding cones and the Hessian quotient
//! `f(λ) = (σ_k(λ)/σ_l(λ))^{1/(k-l)}` together with its first and second
//! derivatives in closed form.
//!
//! Indices passed to this module are 0-based; orders (`k`, `l`, `j` in
//! `σ_j`) are the usual 1-based polynomial degrees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{AlgebraError, Result};
use crate::matrix::SymMatrix;

/// Largest dimension accepted by the algebra layer.
pub const MAX_DIM: usize = 8;

/// Rejections allowed before [`sample_gamma_k`] gives up.
pub const SAMPLER_MAX_REJECTIONS: usize = 100_000;

/// An ordered list of `n ≥ 2` finite eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct Lambda(Vec<f64>);

impl Lambda {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(AlgebraError::InvalidArgument(format!(
                "eigenvalue vector needs n >= 2 entries, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(AlgebraError::InvalidArgument(format!("non-finite eigenvalue {bad}")));
        }
        Ok(Lambda(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Lambda {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Parameters `(n, k, l, τ)` of the operator.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuotientSpec {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub tau: f64,
}

impl QuotientSpec {
    /// Requires `2 ≤ n ≤ 8`, `l + 2 ≤ k ≤ n` and `τ ≥ 1`.
    pub fn new(n: usize, k: usize, l: usize, tau: f64) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&n) {
            return Err(AlgebraError::InvalidArgument(format!("n = {n} outside 2..={MAX_DIM}")));
        }
        if l + 2 > k || k > n {
            return Err(AlgebraError::InvalidArgument(format!(
                "need l + 2 <= k <= n, got n = {n}, k = {k}, l = {l}"
            )));
        }
        if !(tau >= 1.0) || !tau.is_finite() {
            return Err(AlgebraError::InvalidArgument(format!("tau = {tau} must be finite and >= 1")));
        }
        Ok(QuotientSpec { n, k, l, tau })
    }

    /// `k - l`
    pub fn order_gap(&self) -> usize {
        self.k - self.l
    }

    /// `(C(n,k)/C(n,l))^{1/(k-l)}`, the value of `f` at `(1, …, 1)`.
    pub fn unit_value(&self) -> f64 {
        (binomial(self.n, self.k) / binomial(self.n, self.l)).powf(1.0 / self.order_gap() as f64)
    }
}

/// `[σ_0, σ_1, …, σ_n]`, with `σ_j = 0` outside `0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaTable(Vec<f64>);

impl SigmaTable {
    pub fn get(&self, j: isize) -> f64 {
        if j < 0 {
            return 0.0;
        }
        self.0.get(j as usize).copied().unwrap_or(0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Binomial coefficient as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coefficients of `Π (1 + λ_i t)`, skipping the indices in `skip`.
fn sigmas_skipping(values: &[f64], skip: &[usize]) -> Vec<f64> {
    let mut e = vec![0.0; values.len() + 1];
    e[0] = 1.0;
    let mut m = 0;
    for (idx, &x) in values.iter().enumerate() {
        if skip.contains(&idx) {
            continue;
        }
        m += 1;
        for j in (1..=m).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e.truncate(m + 1);
    e
}

fn sigma_at(table: &[f64], j: isize) -> f64 {
    if j < 0 {
        0.0
    } else {
        table.get(j as usize).copied().unwrap_or(0.0)
    }
}

/// All of `σ_0 … σ_n` by the coefficient recurrence `e_j ← e_j + λ_m e_{j-1}`.
pub fn sigma_all(lam: &Lambda) -> SigmaTable {
    SigmaTable(sigmas_skipping(lam.as_slice(), &[]))
}

fn check_index(n: usize, i: usize) -> Result<()> {
    if i >= n {
        return Err(AlgebraError::InvalidArgument(format!("index {i} out of range for n = {n}")));
    }
    Ok(())
}

/// `σ_{k-1}(λ|i) = ∂σ_k/∂λ_i`.
pub fn sigma_partial(lam: &Lambda, k: usize, i: usize) -> Result<f64> {
    let n = lam.len();
    if k < 1 || k > n {
        return Err(AlgebraError::InvalidArgument(format!("k = {k} outside 1..={n}")));
    }
    check_index(n, i)?;
    Ok(sigma_at(&sigmas_skipping(lam.as_slice(), &[i]), k as isize - 1))
}

/// `σ_{k-2}(λ|ij) = ∂²σ_k/∂λ_i∂λ_j` for `i ≠ j`. The diagonal second
/// derivative is identically zero and is rejected.
pub fn sigma_second_partial(lam: &Lambda, k: usize, i: usize, j: usize) -> Result<f64> {
    let n = lam.len();
    if k < 2 || k > n {
        return Err(AlgebraError::InvalidArgument(format!("k = {k} outside 2..={n}")));
    }
    check_index(n, i)?;
    check_index(n, j)?;
    if i == j {
        return Err(AlgebraError::InvalidArgument(
            "second partial needs i != j (the diagonal one is 0)".into(),
        ));
    }
    Ok(sigma_at(&sigmas_skipping(lam.as_slice(), &[i, j]), k as isize - 2))
}

/// First order `j ∈ 1..=k` with `σ_j ≤ 0`, if any.
pub fn first_cone_violation(values: &[f64], k: usize) -> Option<usize> {
    let sig = sigmas_skipping(values, &[]);
    (1..=k).find(|&j| !(sigma_at(&sig, j as isize) > 0.0))
}

/// Strict membership `λ ∈ Γ_k`: `σ_j(λ) > 0` for `1 ≤ j ≤ k`.
pub fn in_gamma_k(lam: &Lambda, k: usize) -> bool {
    first_cone_violation(lam.as_slice(), k).is_none()
}

/// `min_{1≤j≤k} σ_j(λ)/C(n,j)`; positive exactly on `Γ_k`.
pub fn admissibility_margin(values: &[f64], k: usize) -> f64 {
    let n = values.len();
    let sig = sigmas_skipping(values, &[]);
    (1..=k)
        .map(|j| sig[j] / binomial(n, j))
        .fold(f64::INFINITY, f64::min)
}

fn check_spec(values: &[f64], spec: &QuotientSpec) -> Result<Vec<f64>> {
    if values.len() != spec.n {
        return Err(AlgebraError::InvalidArgument(format!(
            "eigenvalue vector has {} entries, spec expects n = {}",
            values.len(),
            spec.n
        )));
    }
    let sig = sigmas_skipping(values, &[]);
    if let Some(index) = (1..=spec.k).find(|&j| !(sig[j] > 0.0)) {
        return Err(AlgebraError::NotAdmissible { index, eigenvalues: values.to_vec() });
    }
    Ok(sig)
}

/// `f(λ) = (σ_k/σ_l)^{1/(k-l)}` on `Γ_k`.
pub fn quotient_value(lam: &Lambda, spec: &QuotientSpec) -> Result<f64> {
    quotient_value_raw(lam.as_slice(), spec)
}

pub(crate) fn quotient_value_raw(values: &[f64], spec: &QuotientSpec) -> Result<f64> {
    let sig = check_spec(values, spec)?;
    Ok((sig[spec.k] / sig[spec.l]).powf(1.0 / spec.order_gap() as f64))
}

/// Value and gradient `f_i = ∂f/∂λ_i` together.
pub(crate) fn quotient_value_gradient_raw(values: &[f64], spec: &QuotientSpec) -> Result<(f64, Vec<f64>)> {
    let sig = check_spec(values, spec)?;
    let (k, l) = (spec.k as isize, spec.l as isize);
    let m = spec.order_gap() as f64;
    let (sk, sl) = (sig[spec.k], sig[spec.l]);
    let f = (sk / sl).powf(1.0 / m);
    let pref = f.powf(1.0 - m) / m;
    let grad = (0..values.len())
        .map(|i| {
            let del = sigmas_skipping(values, &[i]);
            let dk = sigma_at(&del, k - 1);
            let dl = sigma_at(&del, l - 1);
            pref * (dk * sl - sk * dl) / (sl * sl)
        })
        .collect();
    Ok((f, grad))
}

/// Closed-form gradient of the quotient.
pub fn quotient_gradient(lam: &Lambda, spec: &QuotientSpec) -> Result<Vec<f64>> {
    quotient_value_gradient_raw(lam.as_slice(), spec).map(|(_, g)| g)
}

/// Closed-form Hessian `∂²f/∂λ_i∂λ_j`.
///
/// With `q = σ_k/σ_l` and `f = q^{1/m}`:
/// `f_ij = (1/m) q^{1/m-1} q_ij + (1/m)(1/m-1) q^{1/m-2} q_i q_j`.
pub fn quotient_hessian(lam: &Lambda, spec: &QuotientSpec) -> Result<SymMatrix> {
    quotient_hessian_raw(lam.as_slice(), spec)
}

pub(crate) fn quotient_hessian_raw(values: &[f64], spec: &QuotientSpec) -> Result<SymMatrix> {
    let sig = check_spec(values, spec)?;
    let n = values.len();
    let (k, l) = (spec.k as isize, spec.l as isize);
    let m = spec.order_gap() as f64;
    let (sk, sl) = (sig[spec.k], sig[spec.l]);
    let q = sk / sl;

    let single: Vec<Vec<f64>> = (0..n).map(|i| sigmas_skipping(values, &[i])).collect();
    let dk: Vec<f64> = single.iter().map(|t| sigma_at(t, k - 1)).collect();
    let dl: Vec<f64> = single.iter().map(|t| sigma_at(t, l - 1)).collect();
    let qi: Vec<f64> = (0..n).map(|i| (dk[i] * sl - sk * dl[i]) / (sl * sl)).collect();

    let c1 = q.powf(1.0 / m - 1.0) / m;
    let c2 = (1.0 / m) * (1.0 / m - 1.0) * q.powf(1.0 / m - 2.0);

    let mut hess = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let (dkk, dll) = if i == j {
                (0.0, 0.0)
            } else {
                let pair = sigmas_skipping(values, &[i, j]);
                (sigma_at(&pair, k - 2), sigma_at(&pair, l - 2))
            };
            let qij = (dkk * sl + dk[i] * dl[j] - dk[j] * dl[i] - sk * dll) / (sl * sl)
                - 2.0 * (dk[i] * sl - sk * dl[i]) * dl[j] / (sl * sl * sl);
            hess.set(i, j, c1 * qij + c2 * qi[i] * qi[j]);
        }
    }
    hess.symmetrize();
    Ok(hess)
}

/// Normalised quotient mean `[(σ_a/C(n,a)) / (σ_b/C(n,b))]^{1/(a-b)}`.
fn normalized_mean(sig: &[f64], n: usize, a: usize, b: usize) -> f64 {
    ((sig[a] / binomial(n, a)) / (sig[b] / binomial(n, b))).powf(1.0 / (a - b) as f64)
}

/// Both sides of the generalised Newton–MacLaurin inequality
/// `mean(m, l) ≤ mean(r, s)` after validating the index conditions.
pub fn newton_maclaurin_sides(lam: &Lambda, m: usize, l: usize, r: usize, s: usize) -> Result<(f64, f64)> {
    let n = lam.len();
    if !(m > l && r > s && m >= r && l >= s && m <= n) {
        return Err(AlgebraError::InvalidArgument(format!(
            "need m > l >= 0, r > s >= 0, m >= r, l >= s, m <= n; got (m, l, r, s) = ({m}, {l}, {r}, {s}), n = {n}"
        )));
    }
    if let Some(index) = first_cone_violation(lam.as_slice(), m) {
        return Err(AlgebraError::InvalidArgument(format!(
            "lambda not in Gamma_{m}: sigma_{index} <= 0"
        )));
    }
    let sig = sigmas_skipping(lam.as_slice(), &[]);
    Ok((normalized_mean(&sig, n, m, l), normalized_mean(&sig, n, r, s)))
}

/// Checks the generalised Newton–MacLaurin inequality with `1e-12` slack,
/// scaled by the size of the right-hand side.
pub fn newton_maclaurin_holds(lam: &Lambda, m: usize, l: usize, r: usize, s: usize) -> Result<bool> {
    let (lhs, rhs) = newton_maclaurin_sides(lam, m, l, r, s)?;
    Ok(lhs <= rhs + 1e-12 * rhs.abs().max(1.0))
}

/// Draws `λ ∈ Γ_k` with i.i.d. `N(1, 1)` entries and rejection.
pub fn sample_gamma_k_with<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Result<Lambda> {
    if k < 1 || k > n || n < 2 {
        return Err(AlgebraError::InvalidArgument(format!("need 1 <= k <= n, n >= 2; got n = {n}, k = {k}")));
    }
    let normal = Normal::new(1.0, 1.0).expect("unit normal parameters are valid");
    let mut values = vec![0.0; n];
    for _ in 0..SAMPLER_MAX_REJECTIONS {
        values.iter_mut().for_each(|v| *v = normal.sample(rng));
        if first_cone_violation(&values, k).is_none() {
            return Ok(Lambda(values));
        }
    }
    Err(AlgebraError::SamplerExhausted { n, k, attempts: SAMPLER_MAX_REJECTIONS })
}

/// Deterministic sampler: the same `seed` always yields the same point.
pub fn sample_gamma_k(n: usize, k: usize, seed: u64) -> Result<Lambda> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_gamma_k_with(&mut rng, n, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lam(v: &[f64]) -> Lambda {
        Lambda::new(v.to_vec()).unwrap()
    }

    fn subset_sum(values: &[f64], k: usize) -> f64 {
        let n = values.len();
        (0u32..(1 << n))
            .filter(|mask| mask.count_ones() as usize == k)
            .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).map(|i| values[i]).product::<f64>())
            .sum()
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma_all(&lam(&[1.0, 1.0, 1.0])).as_slice(), &[1.0, 3.0, 3.0, 1.0]);
        assert_eq!(sigma_all(&lam(&[1.0, 2.0, 3.0])).get(2), 11.0);
        let zero = sigma_all(&lam(&[0.0; 5]));
        assert!((1..=5).all(|j| zero.get(j) == 0.0));
        assert_eq!(zero.get(0), 1.0);
        assert_eq!(zero.get(-1), 0.0);
        assert_eq!(zero.get(6), 0.0);
    }

    #[test]
    fn partial_examples() {
        let l = lam(&[1.0, 2.0, 3.0]);
        assert_eq!(sigma_partial(&l, 2, 0).unwrap(), 5.0);
        assert_eq!(sigma_partial(&l, 3, 1).unwrap(), 3.0);
        let c = 1.7;
        let sym = lam(&[c; 5]);
        for k in 1..=5 {
            let expect = binomial(4, k - 1) * c.powi(k as i32 - 1);
            assert!((sigma_partial(&sym, k, 3).unwrap() - expect).abs() < 1e-12 * expect);
        }
        assert!(sigma_partial(&l, 0, 0).is_err());
        assert!(sigma_partial(&l, 4, 0).is_err());
        assert!(sigma_partial(&l, 1, 3).is_err());
    }

    #[test]
    fn second_partial_examples() {
        let l = lam(&[1.0, 2.0, 3.0]);
        assert_eq!(sigma_second_partial(&l, 2, 0, 1).unwrap(), 1.0);
        assert_eq!(sigma_second_partial(&l, 3, 0, 2).unwrap(), 2.0);
        assert_eq!(sigma_second_partial(&lam(&[1.0; 4]), 3, 0, 1).unwrap(), 2.0);
        assert!(matches!(sigma_second_partial(&l, 2, 1, 1), Err(AlgebraError::InvalidArgument(_))));
    }

    #[test]
    fn cone_examples() {
        assert!(!in_gamma_k(&lam(&[3.0, 1.0, -1.0]), 2));
        assert!(in_gamma_k(&lam(&[3.0, 1.0, -1.0]), 1));
        for k in 1..=4 {
            assert!(in_gamma_k(&lam(&[1.0; 4]), k));
        }
        // boundary is outside
        assert!(!in_gamma_k(&lam(&[1.0, 0.0]), 2));
    }

    #[test]
    fn quotient_value_examples() {
        let s31 = QuotientSpec::new(3, 3, 1, 1.0).unwrap();
        let v = quotient_value(&lam(&[2.0, 2.0, 2.0]), &s31).unwrap();
        assert!((v - (8.0f64 / 6.0).sqrt()).abs() < 1e-14);
        let s20 = QuotientSpec::new(3, 2, 0, 1.0).unwrap();
        let v = quotient_value(&lam(&[1.0, 2.0, 3.0]), &s20).unwrap();
        assert!((v - 11f64.sqrt()).abs() < 1e-14);
        let s = QuotientSpec::new(5, 4, 1, 1.0).unwrap();
        let c = 0.37;
        let v = quotient_value(&lam(&[c; 5]), &s).unwrap();
        assert!((v - s.unit_value() * c).abs() < 1e-14);
    }

    #[test]
    fn quotient_rejects_outside_cone() {
        let s = QuotientSpec::new(3, 2, 0, 1.0).unwrap();
        match quotient_value(&lam(&[3.0, 1.0, -1.0]), &s) {
            Err(AlgebraError::NotAdmissible { index, eigenvalues }) => {
                assert_eq!(index, 2);
                assert_eq!(eigenvalues, vec![3.0, 1.0, -1.0]);
            }
            other => panic!("expected NotAdmissible, got {other:?}"),
        }
    }

    #[test]
    fn quotient_gradient_examples() {
        let s31 = QuotientSpec::new(3, 3, 1, 1.0).unwrap();
        let g = quotient_gradient(&lam(&[1.0, 2.0, 3.0]), &s31).unwrap();
        for (got, want) in g.iter().zip([5.0 / 12.0, 1.0 / 6.0, 1.0 / 12.0]) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
        let s20 = QuotientSpec::new(3, 2, 0, 1.0).unwrap();
        let g = quotient_gradient(&lam(&[1.0; 3]), &s20).unwrap();
        assert!(g.iter().all(|v| (v - 1.0 / 3f64.sqrt()).abs() < 1e-14));
        let s = QuotientSpec::new(6, 5, 2, 1.0).unwrap();
        let g = quotient_gradient(&lam(&[2.5; 6]), &s).unwrap();
        assert!(g.iter().all(|v| (v - s.unit_value() / 6.0).abs() < 1e-13));
    }

    #[test]
    fn quotient_gradient_matches_central_differences() {
        let s31 = QuotientSpec::new(3, 3, 1, 1.0).unwrap();
        let base = [1.0, 2.0, 3.0];
        let g = quotient_gradient(&lam(&base), &s31).unwrap();
        for i in 0..3 {
            let h = 1e-6 * (1.0 + base[i].abs());
            let mut p = base;
            let mut m = base;
            p[i] += h;
            m[i] -= h;
            let fd = (quotient_value(&lam(&p), &s31).unwrap() - quotient_value(&lam(&m), &s31).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "i = {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn hessian_annihilates_symmetric_point() {
        let s = QuotientSpec::new(4, 3, 1, 1.0).unwrap();
        let point = [1.3; 4];
        let h = quotient_hessian(&lam(&point), &s).unwrap();
        let hv = h.mul_vec(&point);
        assert!(hv.iter().all(|v| v.abs() < 1e-13), "{hv:?}");
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let s31 = QuotientSpec::new(3, 3, 1, 1.0).unwrap();
        let base = [1.0, 2.0, 3.0];
        let h = quotient_hessian(&lam(&base), &s31).unwrap();
        for j in 0..3 {
            let step = 1e-6 * (1.0 + base[j].abs());
            let mut p = base;
            let mut m = base;
            p[j] += step;
            m[j] -= step;
            let gp = quotient_gradient(&lam(&p), &s31).unwrap();
            let gm = quotient_gradient(&lam(&m), &s31).unwrap();
            for i in 0..3 {
                let fd = (gp[i] - gm[i]) / (2.0 * step);
                assert!((fd - h.get(i, j)).abs() <= 1e-5 * h.max_abs(), "({i},{j}): {fd} vs {}", h.get(i, j));
            }
        }
    }

    #[test]
    fn newton_maclaurin_examples() {
        assert!(newton_maclaurin_holds(&lam(&[1.0; 4]), 3, 1, 2, 0).unwrap());
        let (lhs, rhs) = newton_maclaurin_sides(&lam(&[1.0; 4]), 3, 1, 2, 0).unwrap();
        assert!((lhs - 1.0).abs() < 1e-15 && (rhs - 1.0).abs() < 1e-15);

        let l = lam(&[1.0, 2.0, 3.0]);
        let (lhs, rhs) = newton_maclaurin_sides(&l, 3, 1, 2, 0).unwrap();
        assert!((lhs - 3f64.sqrt()).abs() < 1e-14);
        assert!((rhs - (11.0f64 / 3.0).sqrt()).abs() < 1e-14);
        assert!(newton_maclaurin_holds(&l, 3, 1, 2, 0).unwrap());

        assert!(newton_maclaurin_holds(&l, 2, 2, 1, 0).is_err());
        assert!(newton_maclaurin_holds(&l, 2, 0, 3, 0).is_err());
        assert!(newton_maclaurin_holds(&lam(&[3.0, 1.0, -1.0]), 2, 0, 1, 0).is_err());
    }

    #[test]
    fn sampler_is_deterministic_and_admissible() {
        let a = sample_gamma_k(3, 3, 42).unwrap();
        let b = sample_gamma_k(3, 3, 42).unwrap();
        assert_eq!(a, b);
        assert!(in_gamma_k(&a, 3));
        let c = sample_gamma_k(3, 1, 7).unwrap();
        assert!(c.as_slice().iter().sum::<f64>() > 0.0);
        assert!(sample_gamma_k(3, 4, 0).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(QuotientSpec::new(3, 3, 1, 1.0).is_ok());
        assert!(QuotientSpec::new(3, 2, 1, 1.0).is_err());
        assert!(QuotientSpec::new(3, 4, 0, 1.0).is_err());
        assert!(QuotientSpec::new(3, 3, 0, 0.5).is_err());
        assert!(QuotientSpec::new(1, 1, 0, 1.0).is_err());
        assert!(Lambda::new(vec![1.0, f64::NAN]).is_err());
        assert!(Lambda::new(vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn recurrence_matches_subset_sums(values in prop::collection::vec(-3.0f64..3.0, 2..=8)) {
            let sig = sigma_all(&lam(&values));
            let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
            for k in 0..=values.len() {
                let scale = subset_sum(&abs, k).max(f64::MIN_POSITIVE);
                prop_assert!((sig.get(k as isize) - subset_sum(&values, k)).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn deletion_identity(values in prop::collection::vec(-3.0f64..3.0, 2..=7)) {
            let l = lam(&values);
            let sig = sigma_all(&l);
            let n = values.len();
            for k in 1..=n {
                let mut total = 0.0;
                for i in 0..n {
                    let del = sigmas_skipping(&values, &[i]);
                    let rebuilt = sigma_at(&del, k as isize) + values[i] * sigma_partial(&l, k, i).unwrap();
                    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
                    let scale = subset_sum(&abs, k).max(1e-300);
                    prop_assert!((rebuilt - sig.get(k as isize)).abs() <= 1e-12 * scale);
                    total += sigma_partial(&l, k, i).unwrap();
                }
                let expect = (n - k + 1) as f64 * sig.get(k as isize - 1);
                let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
                let scale = (n - k + 1) as f64 * subset_sum(&abs, k - 1);
                prop_assert!((total - expect).abs() <= 1e-12 * scale.max(1e-300));
            }
        }

        #[test]
        fn quotient_is_one_homogeneous(seed in 0u64..500, c in 0.05f64..20.0) {
            let spec = QuotientSpec::new(4, 3, 1, 1.0).unwrap();
            let l = sample_gamma_k(4, 3, seed).unwrap();
            let scaled = lam(&l.as_slice().iter().map(|v| v * c).collect::<Vec<_>>());
            let f = quotient_value(&l, &spec).unwrap();
            let fc = quotient_value(&scaled, &spec).unwrap();
            prop_assert!((fc - c * f).abs() <= 1e-12 * (c * f).abs());
            let g = quotient_gradient(&l, &spec).unwrap();
            let gc = quotient_gradient(&scaled, &spec).unwrap();
            for (a, b) in g.iter().zip(&gc) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
        }
    }
}
