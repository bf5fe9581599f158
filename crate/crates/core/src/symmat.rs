//! Dense real symmetric matrices and the spectral operations built on them.
//!
//! Every matrix-valued state in the crate (end-to-end matrices, gradients,
//! targets) is a [`SymMat`]. Symmetry is exact: construction stores
//! `(A + Aᵀ) / 2`, and all arithmetic below preserves it entrywise.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

/// Relative reconstruction tolerance expected from [`SymMat::eig`].
pub const TOL_EIG: f64 = 1e-10;
/// Relative tolerance for negative eigenvalues treated as PSD round-off.
pub const TOL_PSD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    m: DMatrix<f64>,
}

/// Eigendecomposition with eigenvalues sorted in non-increasing order.
///
/// Column `i` of `eigenvectors` pairs with `eigenvalues[i]`. Each column is
/// sign-normalized so its largest-magnitude entry (lowest index on ties) is
/// positive, which makes the decomposition reproducible bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct EigDecomp {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopEigPair {
    pub value: f64,
    pub vector: DVector<f64>,
    /// `λ₁ − λ₂`; infinite for 1×1 matrices.
    pub gap: f64,
}

impl SymMat {
    /// Symmetrizes `m` as `(m + mᵀ) / 2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(invalid(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(invalid("matrix dimension must be at least 1"));
        }
        Ok(Self::symmetrized(m))
    }

    fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let d = m.nrows();
        for j in 0..d {
            for i in (j + 1)..d {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self { m }
    }

    /// Wraps a matrix already known to be exactly symmetric.
    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        Self { m }
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(invalid(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        Self { m: DMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        Self { m: DMatrix::identity(dim, dim) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        assert!(!diag.is_empty(), "dimension must be at least 1");
        Self { m: DMatrix::from_diagonal(&DVector::from_column_slice(diag)) }
    }

    /// `c · v vᵀ`.
    pub fn outer(v: &DVector<f64>, c: f64) -> Self {
        let d = v.len();
        assert!(d >= 1, "dimension must be at least 1");
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            for i in j..d {
                let x = c * v[i] * v[j];
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
        Self { m }
    }

    /// `U Uᵀ` for a factor matrix `U` (d × r).
    pub fn gram(u: &DMatrix<f64>) -> Self {
        Self::symmetrized(u * u.transpose())
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.m.diagonal().iter().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|x| x.is_finite())
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|j| (0..d).all(|i| i == j || self.m[(i, j)] == 0.0))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    /// Trace inner product `⟨A, B⟩ = tr(A Bᵀ)`.
    pub fn inner(&self, other: &SymMat) -> f64 {
        self.m.dot(&other.m)
    }

    pub fn scale(&self, c: f64) -> SymMat {
        Self { m: &self.m * c }
    }

    /// `A B + B A`.
    pub fn anticommutator(&self, other: &SymMat) -> SymMat {
        let ab = &self.m * &other.m;
        Self::symmetrized(&ab + ab.transpose())
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> Result<f64> {
        let e = self.eig()?;
        Ok(e.eigenvalues.iter().fold(0.0_f64, |a, &x| a.max(x.abs())))
    }

    pub fn eig(&self) -> Result<EigDecomp> {
        if !self.is_finite() {
            return Err(invalid("eigendecomposition of a matrix with non-finite entries"));
        }
        if self.is_diagonal() {
            return Ok(diagonal_eig(&self.m));
        }
        let raw = SymmetricEigen::new(self.m.clone());
        let d = self.dim();
        let mut order: Vec<usize> = (0..d).collect();
        // stable sort keeps index order between exactly equal eigenvalues
        order.sort_by(|&a, &b| raw.eigenvalues[b].total_cmp(&raw.eigenvalues[a]));
        let eigenvalues = DVector::from_iterator(d, order.iter().map(|&k| raw.eigenvalues[k]));
        let mut eigenvectors = DMatrix::zeros(d, d);
        for (col, &k) in order.iter().enumerate() {
            let mut v = raw.eigenvectors.column(k).into_owned();
            fix_sign(&mut v);
            eigenvectors.set_column(col, &v);
        }
        Ok(EigDecomp { eigenvalues, eigenvectors })
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.eig()?.eigenvalues.iter().copied().collect())
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let e = self.eig()?;
        Ok(e.eigenvalues[self.dim() - 1])
    }

    pub fn top_eigpair(&self) -> Result<TopEigPair> {
        let e = self.eig()?;
        let value = e.eigenvalues[0];
        let gap = if self.dim() > 1 { value - e.eigenvalues[1] } else { f64::INFINITY };
        Ok(TopEigPair { value, vector: e.eigenvectors.column(0).into_owned(), gap })
    }

    pub fn frac_power(&self, p: f64) -> Result<SymMat> {
        self.frac_power_with_tol(p, TOL_PSD)
    }

    /// `V diag(max(λᵢ, 0)^p) Vᵀ`. Eigenvalues below `-tol_psd · ‖A‖₂` are
    /// rejected; smaller negative ones are clipped to zero.
    pub fn frac_power_with_tol(&self, p: f64, tol_psd: f64) -> Result<SymMat> {
        if !(p > 0.0) || !p.is_finite() {
            return Err(invalid(format!("power must be positive and finite, got {p}")));
        }
        let e = self.eig()?;
        e.check_psd(tol_psd)?;
        Ok(e.map(|l| l.max(0.0).powf(p)))
    }

    pub fn nuclear_norm(&self) -> Result<f64> {
        Ok(self.eig()?.eigenvalues.iter().map(|l| l.abs()).sum())
    }

    /// `sqrt(Σ_{i>r} σᵢ²)`: Frobenius distance to the closest rank-`r` matrix.
    pub fn low_rankness(&self, r: usize) -> Result<f64> {
        if r > self.dim() {
            return Err(invalid(format!("rank {r} exceeds dimension {}", self.dim())));
        }
        Ok(low_rankness_from_eigenvalues(self.eig()?.eigenvalues.as_slice(), r))
    }

    /// Numerical rank: eigenvalues with magnitude above `rel_tol · ‖A‖₂`.
    pub fn numerical_rank(&self, rel_tol: f64) -> Result<usize> {
        let e = self.eig()?;
        let top = e.eigenvalues.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
        Ok(e.eigenvalues.iter().filter(|l| l.abs() > rel_tol * top).count())
    }
}

/// Singular values from symmetric eigenvalues, sorted descending.
pub fn singular_values_from_eigenvalues(eigenvalues: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = eigenvalues.iter().map(|l| l.abs()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub(crate) fn low_rankness_from_eigenvalues(eigenvalues: &[f64], r: usize) -> f64 {
    singular_values_from_eigenvalues(eigenvalues)
        .iter()
        .skip(r)
        .map(|s| s * s)
        .sum::<f64>()
        .sqrt()
}

impl EigDecomp {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V diag(f(λᵢ)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMat {
        let d = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for j in 0..d {
            let s = f(self.eigenvalues[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        SymMat::symmetrized(scaled * self.eigenvectors.transpose())
    }

    pub fn reconstruct(&self) -> SymMat {
        self.map(|l| l)
    }

    pub(crate) fn check_psd(&self, tol_psd: f64) -> Result<()> {
        let d = self.dim();
        let norm = self.eigenvalues.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
        let min = self.eigenvalues[d - 1];
        let tolerance = tol_psd * norm;
        if min < -tolerance {
            return Err(Error::NotPsd { min_eigenvalue: min, tolerance });
        }
        Ok(())
    }
}

fn diagonal_eig(m: &DMatrix<f64>) -> EigDecomp {
    let d = m.nrows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| m[(b, b)].total_cmp(&m[(a, a)]));
    let eigenvalues = DVector::from_iterator(d, order.iter().map(|&k| m[(k, k)]));
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (col, &k) in order.iter().enumerate() {
        eigenvectors[(k, col)] = 1.0;
    }
    EigDecomp { eigenvalues, eigenvectors }
}

fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

impl Add for &SymMat {
    type Output = SymMat;
    fn add(self, rhs: &SymMat) -> SymMat {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch");
        SymMat { m: &self.m + &rhs.m }
    }
}

impl Sub for &SymMat {
    type Output = SymMat;
    fn sub(self, rhs: &SymMat) -> SymMat {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch");
        SymMat { m: &self.m - &rhs.m }
    }
}

impl Mul<f64> for &SymMat {
    type Output = SymMat;
    fn mul(self, c: f64) -> SymMat {
        self.scale(c)
    }
}

impl Neg for &SymMat {
    type Output = SymMat;
    fn neg(self) -> SymMat {
        SymMat { m: -&self.m }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{random_orthogonal, Stream, StreamRng};
    use rand_distr::{Distribution, StandardNormal};

    fn random_sym(d: usize, seed: u64) -> SymMat {
        let mut rng = StreamRng::new(seed, Stream::Test);
        let m = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        SymMat::new(m).unwrap()
    }

    #[test]
    fn construction_symmetrizes_exactly() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        let s = SymMat::new(m).unwrap();
        assert_eq!(s.get(0, 1), 3.0);
        assert_eq!(s.get(1, 0), 3.0);
        assert!(SymMat::new(DMatrix::zeros(2, 3)).is_err());
        assert!(SymMat::new(DMatrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn eig_of_diagonal() {
        let e = SymMat::from_diagonal(&[1.0, 3.0]).eig().unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[3.0, 1.0]);
        assert_eq!(e.eigenvectors.column(0).as_slice(), &[0.0, 1.0]);
        assert_eq!(e.eigenvectors.column(1).as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn eig_two_by_two_matches_quadratic_formula() {
        let r = 100.0_f64;
        let a = SymMat::from_row_slice(2, &[1.0, r, r, 0.0]).unwrap();
        let top = a.top_eigpair().unwrap();
        // roots of λ² − λ − R² = 0
        let oracle = (1.0 + (1.0 + 4.0 * r * r).sqrt()) / 2.0;
        assert!((top.value - oracle).abs() <= 1e-12 * oracle);
        assert!((top.value - 100.501_249_992_187_6).abs() < 1e-9);
    }

    #[test]
    fn eig_reconstruction_and_orthogonality() {
        for seed in 0..5 {
            let a = random_sym(6, seed);
            let e = a.eig().unwrap();
            let rec = e.reconstruct();
            assert!((&rec - &a).frobenius_norm() <= TOL_EIG * a.frobenius_norm());
            let vtv = e.eigenvectors.transpose() * &e.eigenvectors;
            assert!((vtv - DMatrix::identity(6, 6)).norm() <= 1e-10);
            for w in e.eigenvalues.as_slice().windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn eig_rejects_non_finite() {
        let a = SymMat::from_row_slice(2, &[f64::NAN, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(a.eig(), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn eig_is_deterministic() {
        let a = random_sym(7, 11);
        assert_eq!(a.eig().unwrap(), a.eig().unwrap());
    }

    #[test]
    fn top_eigpair_cases() {
        let t = SymMat::from_diagonal(&[2.0, 1.0, 0.0]).top_eigpair().unwrap();
        assert_eq!(t.value, 2.0);
        assert_eq!(t.vector.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(t.gap, 1.0);

        let t = SymMat::identity(3).top_eigpair().unwrap();
        assert_eq!(t.vector.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(t.gap, 0.0);
    }

    #[test]
    fn frac_power_cases() {
        let r = SymMat::from_diagonal(&[4.0, 9.0]).frac_power(0.5).unwrap();
        assert_eq!(r, SymMat::from_diagonal(&[2.0, 3.0]));
        for p in [0.3, 1.0, 2.5] {
            assert_eq!(SymMat::identity(4).frac_power(p).unwrap(), SymMat::identity(4));
        }

        let mut rng = StreamRng::new(3, Stream::Test);
        let v = random_orthogonal(2, &mut rng);
        let build = |a: f64, b: f64| {
            SymMat::new(&v * DMatrix::from_diagonal(&DVector::from_vec(vec![a, b])) * v.transpose())
                .unwrap()
        };
        let got = build(2.0, 5.0).frac_power(1.5).unwrap();
        let want = build(2.0_f64.powf(1.5), 5.0_f64.powf(1.5));
        assert!((&got - &want).frobenius_norm() <= 1e-12 * want.frobenius_norm());
    }

    #[test]
    fn frac_power_psd_tolerance() {
        let tiny_negative = SymMat::from_diagonal(&[1.0, -1e-12]);
        let r = tiny_negative.frac_power(0.5).unwrap();
        assert_eq!(r.get(1, 1), 0.0);
        let negative = SymMat::from_diagonal(&[1.0, -1e-3]);
        assert!(matches!(negative.frac_power(0.5), Err(Error::NotPsd { .. })));
        assert!(SymMat::identity(2).frac_power(0.0).is_err());
    }

    #[test]
    fn nuclear_norm_of_identity() {
        assert_eq!(SymMat::identity(4).nuclear_norm().unwrap(), 4.0);
    }

    #[test]
    fn low_rankness_cases() {
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let rank1 = SymMat::outer(&v, 3.0);
        assert!(rank1.low_rankness(1).unwrap() < 1e-12);
        assert_eq!(SymMat::from_diagonal(&[4.0, 3.0]).low_rankness(1).unwrap(), 3.0);
        assert!(SymMat::identity(2).low_rankness(3).is_err());
        assert_eq!(SymMat::identity(2).low_rankness(2).unwrap(), 0.0);
    }

    #[test]
    fn low_rankness_matches_svd_truncation() {
        let a = random_sym(8, 5);
        let svd = a.as_matrix().clone().svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut idx: Vec<usize> = (0..8).collect();
        idx.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
        let mut trunc = DMatrix::zeros(8, 8);
        for &k in idx.iter().take(3) {
            trunc += svd.singular_values[k] * u.column(k) * vt.row(k);
        }
        let oracle = (a.as_matrix() - trunc).norm();
        assert!((a.low_rankness(3).unwrap() - oracle).abs() < 1e-10);
    }
}
