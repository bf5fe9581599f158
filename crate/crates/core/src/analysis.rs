//! Spectra of the flow's Jacobian, distances between trajectories,
//! alignment with a fixed direction, and log-log slope fits.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dynamics::Trajectory;
use crate::error::{invalid, Error, Result};
use crate::losses::LossSpec;
use crate::par::par_map;
use crate::symmat::SymMat;

/// Linearization `J(W̄)[Δ] = −{∇f(W̄), Δ} − {D²f(W̄)[Δ], W̄}` of
/// `g(W) = −(∇f(W)W + W∇f(W))`. Inputs are symmetrized first, since the
/// flow only ever moves through symmetric matrices; antisymmetric
/// directions are therefore in the kernel.
#[derive(Debug, Clone)]
pub struct JacobianOp<'a> {
    spec: &'a LossSpec,
    base: SymMat,
    grad: SymMat,
}

fn sym_part(m: &DMatrix<f64>) -> Result<SymMat> {
    SymMat::new(m.clone())
}

impl<'a> JacobianOp<'a> {
    pub fn new(spec: &'a LossSpec, base: SymMat) -> Result<Self> {
        let grad = spec.gradient(&base)?;
        Ok(Self { spec, base, grad })
    }

    pub fn base_point(&self) -> &SymMat {
        &self.base
    }

    pub fn apply_sym(&self, delta: &SymMat) -> Result<SymMat> {
        let h = self.spec.hessian_apply(delta)?;
        Ok(-&(&self.grad.anticommutator(delta) + &h.anticommutator(&self.base)))
    }

    pub fn apply(&self, delta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.apply_sym(&sym_part(delta)?)?.into_matrix())
    }

    /// Adjoint under the Frobenius inner product:
    /// `J*[Y] = −{∇f(W̄), Y} − D²f(W̄)[{W̄, Y}]`.
    pub fn apply_adjoint(&self, y: &SymMat) -> Result<SymMat> {
        let h = self.spec.hessian_apply(&self.base.anticommutator(y))?;
        Ok(-&(&self.grad.anticommutator(y) + &h))
    }

    fn g(&self, w: &SymMat) -> Result<SymMat> {
        Ok(-&self.spec.gradient(w)?.anticommutator(w))
    }

    /// Central difference `(g(W̄ + hΔ) − g(W̄ − hΔ)) / 2h` with `h` scaled to
    /// the base point and `Δ`.
    pub fn apply_fd(&self, delta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let s = sym_part(delta)?;
        let n = s.frobenius_norm();
        if n == 0.0 {
            return Ok(DMatrix::zeros(delta.nrows(), delta.ncols()));
        }
        let h = 1e-5 * self.base.frobenius_norm().max(1.0) / n;
        let plus = self.g(&(&self.base + &s.scale(h)))?;
        let minus = self.g(&(&self.base - &s.scale(h)))?;
        Ok((&plus - &minus).scale(0.5 / h).into_matrix())
    }

    /// Matrix of `J` on the `d(d+1)/2` lower-triangle coordinates.
    pub fn assemble_lower_triangle(&self) -> Result<DMatrix<f64>> {
        let d = self.base.dim();
        let coords = lower_triangle_coords(d);
        let n = coords.len();
        let mut out = DMatrix::zeros(n, n);
        for (k, &(i, j)) in coords.iter().enumerate() {
            let col = self.apply_sym(&unit_sym(d, i, j))?;
            for (row, &(a, b)) in coords.iter().enumerate() {
                out[(row, k)] = col.get(a, b);
            }
        }
        Ok(out)
    }
}

fn lower_triangle_coords(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|j| (j..d).map(move |i| (i, j))).collect()
}

fn unit_sym(d: usize, i: usize, j: usize) -> SymMat {
    let mut m = DMatrix::zeros(d, d);
    m[(i, j)] = 1.0;
    m[(j, i)] = 1.0;
    SymMat::new(m).expect("square")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumPair {
    pub value: f64,
    pub i: usize,
    pub j: usize,
    /// `uᵢuⱼᵀ + uⱼuᵢᵀ`
    pub matrix: SymMat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroSpectrum {
    /// `(μᵢ + μⱼ, uᵢuⱼᵀ + uⱼuᵢᵀ)` for `i ≤ j`, eigenvalues of `−∇f(0)` descending.
    pub symmetric: Vec<SpectrumPair>,
    /// Dimension of the antisymmetric kernel, `d(d−1)/2`.
    pub antisymmetric_zero_dim: usize,
}

fn pairs_from(mu: &[f64], vecs: &DMatrix<f64>) -> Vec<SpectrumPair> {
    let k = mu.len();
    let mut out = Vec::with_capacity(k * (k + 1) / 2);
    for i in 0..k {
        for j in i..k {
            let (ui, uj) = (vecs.column(i), vecs.column(j));
            let m = ui * uj.transpose() + uj * ui.transpose();
            out.push(SpectrumPair { value: mu[i] + mu[j], i, j, matrix: SymMat::new(m).expect("square") });
        }
    }
    out
}

/// Eigen-pairs of the Jacobian at the origin from the eigendecomposition of
/// `−∇f(0)`.
pub fn jacobian_at_zero_spectrum(spec: &LossSpec) -> Result<ZeroSpectrum> {
    let d = spec.dim();
    let e = (-&spec.gradient(&SymMat::zeros(d))?).eig()?;
    Ok(ZeroSpectrum {
        symmetric: pairs_from(e.eigenvalues.as_slice(), &e.eigenvectors),
        antisymmetric_zero_dim: d * (d - 1) / 2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigenKind {
    /// `μᵢ + μⱼ` from `−∇f(W̄)` on the orthogonal complement of `W̄`.
    Type1 { i: usize, j: usize },
    /// Eigenvalue `ξ_p` of `−D²L(U)` at a factorization of `W̄`.
    Type2 { p: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEigenvalue {
    pub computed: f64,
    pub expected: f64,
    pub kind: EigenKind,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedSpectrum {
    pub labels: Vec<LabeledEigenvalue>,
    pub max_residual: f64,
    /// Eigenvalues of `J` on the antisymmetric subspace that are numerically 0.
    pub antisymmetric_zero_count: usize,
    /// `max ‖J*[Ûᵢⱼ] − (μᵢ+μⱼ)Ûᵢⱼ‖_F / ‖Ûᵢⱼ‖_F` over type-1 pairs.
    pub left_eigvec_residual: f64,
    /// `max ‖J[Ṽ_p] − ξ_p Ṽ_p‖_F / ‖Ṽ_p‖_F` over type-2 vectors.
    pub right_eigvec_residual: f64,
}

impl ClassifiedSpectrum {
    pub fn find(&self, kind: EigenKind) -> Option<&LabeledEigenvalue> {
        self.labels.iter().find(|l| l.kind == kind)
    }
}

/// Tolerance for matching computed and predicted eigenvalues.
pub const MATCH_TOL: f64 = 1e-4;

/// Hessian of `L(U) = ½ f(UUᵀ)` on `vec(U)`:
/// `D²L(U)[E] = ∇f(UUᵀ)E + D²f[UEᵀ + EUᵀ]U`.
fn factor_hessian(spec: &LossSpec, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d, r) = u.shape();
    let g = spec.gradient(&SymMat::gram(u))?;
    let n = d * r;
    let mut h = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut e = DMatrix::zeros(d, r);
        e[k] = 1.0;
        let sym = SymMat::new(u * e.transpose() + &e * u.transpose())?;
        let col = g.as_matrix() * &e + spec.hessian_apply(&sym)?.as_matrix() * u;
        h.set_column(k, &DVector::from_column_slice(col.as_slice()));
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Classifies the Jacobian spectrum at a critical point `W̄` of rank `r`:
/// type 1 `{μᵢ + μⱼ}` from `−∇f(W̄)` restricted to the kernel of `W̄`,
/// type 2 the eigenvalues of `−D²L(U)` at `W̄ = UUᵀ` minus the `r(r−1)/2`
/// rotation zeros, and the antisymmetric kernel.
pub fn critical_point_spectrum(spec: &LossSpec, w_bar: &SymMat, r: usize) -> Result<ClassifiedSpectrum> {
    let d = w_bar.dim();
    if r > d {
        return Err(invalid(format!("rank {r} exceeds dimension {d}")));
    }
    let op = JacobianOp::new(spec, w_bar.clone())?;
    let g_norm = op.g(w_bar)?.frobenius_norm();
    if g_norm > 1e-8 * w_bar.frobenius_norm().max(1.0) {
        return Err(invalid(format!("not a critical point: ‖g(W̄)‖_F = {g_norm:e}")));
    }

    // numeric spectrum on the symmetric subspace
    let jm = op.assemble_lower_triangle()?;
    let mut computed: Vec<f64> = jm.complex_eigenvalues().iter().map(|z| z.re).collect();
    computed.sort_by(|a, b| b.total_cmp(a));

    // factorization and kernel of W̄ from its top-r eigenpairs
    let we = w_bar.eig()?;
    let u = DMatrix::from_fn(d, r, |i, k| we.eigenvectors[(i, k)] * we.eigenvalues[k].max(0.0).sqrt());
    let kernel = we.eigenvectors.columns(r, d - r).into_owned();

    // type 1
    let neg_grad = -&spec.gradient(w_bar)?;
    let restricted = kernel.transpose() * neg_grad.as_matrix() * &kernel;
    let (mu, rotated) = if d > r {
        let e = SymMat::new(restricted)?.eig()?;
        (e.eigenvalues.as_slice().to_vec(), &kernel * e.eigenvectors)
    } else {
        (Vec::new(), DMatrix::zeros(d, 0))
    };
    let type1 = pairs_from(&mu, &rotated);
    let mut left_res: f64 = 0.0;
    for p in &type1 {
        let lhs = op.apply_adjoint(&p.matrix)?;
        let res = (&lhs - &p.matrix.scale(p.value)).frobenius_norm() / p.matrix.frobenius_norm();
        left_res = left_res.max(res);
    }

    // type 2
    let mut xi: Vec<(f64, DVector<f64>)> = Vec::new();
    if r > 0 {
        let h = factor_hessian(spec, &u)?;
        let e = SymmetricEigen::new(-h);
        let mut all: Vec<(f64, DVector<f64>)> =
            e.eigenvalues.iter().enumerate().map(|(k, v)| (*v, e.eigenvectors.column(k).into_owned())).collect();
        // drop the rotation zeros (E = UR with R antisymmetric)
        all.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
        xi = all.split_off(r * (r - 1) / 2);
        xi.sort_by(|a, b| b.0.total_cmp(&a.0));
    }
    let mut right_res: f64 = 0.0;
    for (value, vec) in &xi {
        let e = DMatrix::from_column_slice(d, r, vec.as_slice());
        let v = SymMat::new(&e * u.transpose() + &u * e.transpose())?;
        let n = v.frobenius_norm();
        if n > 1e-12 {
            let res = (&op.apply_sym(&v)? - &v.scale(*value)).frobenius_norm() / n;
            right_res = right_res.max(res);
        }
    }

    // greedy nearest-value matching
    let mut expected: Vec<(f64, EigenKind)> = type1
        .iter()
        .map(|p| (p.value, EigenKind::Type1 { i: p.i, j: p.j }))
        .chain(xi.iter().enumerate().map(|(p, (v, _))| (*v, EigenKind::Type2 { p })))
        .collect();
    let mut labels = Vec::with_capacity(computed.len());
    for &c in &computed {
        let (k, _) = expected
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 .0 - c).abs().total_cmp(&(b.1 .0 - c).abs()))
            .ok_or_else(|| Error::ClassificationMismatch("more computed eigenvalues than predicted".into()))?;
        let (value, kind) = expected.remove(k);
        labels.push(LabeledEigenvalue { computed: c, expected: value, kind, residual: (c - value).abs() });
    }
    let max_residual = labels.iter().map(|l| l.residual).fold(0.0, f64::max);

    // antisymmetric block through finite differences of g
    let anti: Vec<DMatrix<f64>> = (0..d)
        .flat_map(|j| (j + 1..d).map(move |i| (i, j)))
        .map(|(i, j)| {
            let mut m = DMatrix::zeros(d, d);
            m[(i, j)] = 1.0;
            m[(j, i)] = -1.0;
            m
        })
        .collect();
    let mut antisymmetric_zero_count = 0;
    for a in &anti {
        if op.apply_fd(a)?.norm() <= 1e-8 {
            antisymmetric_zero_count += 1;
        }
    }

    let out = ClassifiedSpectrum {
        labels,
        max_residual,
        antisymmetric_zero_count,
        left_eigvec_residual: left_res,
        right_eigvec_residual: right_res,
    };
    if out.max_residual > MATCH_TOL || !expected.is_empty() {
        return Err(Error::ClassificationMismatch(format!(
            "max residual {:e}, {} predicted eigenvalues unmatched; labels: {:?}",
            out.max_residual,
            expected.len(),
            out.labels
        )));
    }
    Ok(out)
}

/// For each recorded state of `traj`, the distance to the nearest of
/// `reference` in Frobenius norm.
pub fn traj_set_distance(traj: &Trajectory, reference: &[SymMat]) -> Result<Vec<f64>> {
    states_set_distance(&traj.states, reference)
}

pub fn states_set_distance(states: &[SymMat], reference: &[SymMat]) -> Result<Vec<f64>> {
    let d = reference.first().ok_or_else(|| invalid("reference set is empty"))?.dim();
    if reference.iter().chain(states).any(|m| m.dim() != d) {
        return Err(invalid("dimension mismatch between trajectory and reference"));
    }
    let items: Vec<&SymMat> = states.iter().collect();
    Ok(par_map(items, |w| {
        reference
            .iter()
            .map(|r| (w.as_matrix() - r.as_matrix()).norm())
            .fold(f64::INFINITY, f64::min)
    }))
}

/// Index of the nearest reference matrix for each state.
pub fn nearest_reference(states: &[SymMat], reference: &[SymMat]) -> Result<Vec<usize>> {
    if reference.is_empty() {
        return Err(invalid("reference set is empty"));
    }
    Ok(states
        .iter()
        .map(|w| {
            reference
                .iter()
                .map(|r| (w.as_matrix() - r.as_matrix()).norm())
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k)
                .expect("non-empty")
        })
        .collect())
}

/// `|⟨v, top eigenvector of W(t)⟩|` at each recorded time.
pub fn alignment(traj: &Trajectory, v: &DVector<f64>) -> Result<Vec<f64>> {
    traj.states.iter().map(|w| state_alignment(w, v)).collect()
}

pub fn state_alignment(w: &SymMat, v: &DVector<f64>) -> Result<f64> {
    if v.len() != w.dim() {
        return Err(invalid(format!("vector has length {} but states have dim {}", v.len(), w.dim())));
    }
    Ok(w.top_eigpair()?.vector.dot(v).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn scaling_slope(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(invalid(format!("{} xs but {} ys", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(invalid("need at least 3 points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid("all values must be positive and finite"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("xs must not all be equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit { slope, intercept, r2 })
}

/// Smallest `r`-low-rankness over the recorded states whose nearest point
/// in `points` is `points[index]`.
pub fn min_low_rankness_near(traj: &Trajectory, points: &[SymMat], index: usize, r: usize) -> Result<Option<f64>> {
    let nearest = nearest_reference(&traj.states, points)?;
    let mut best: Option<f64> = None;
    for (w, k) in traj.states.iter().zip(nearest) {
        if k == index {
            let v = w.low_rankness(r)?;
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    Ok(best)
}
