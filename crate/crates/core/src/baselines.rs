//! Comparison methods: rank-1 matrix pursuit with least-squares refits, and
//! nuclear-norm minimization by proximal gradient with a shrinking penalty.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::Warning;
use crate::error::{invalid, Error, Result};
use crate::losses::LossSpec;
use crate::symmat::SymMat;

#[derive(Debug, Clone, PartialEq)]
pub struct R1mpState {
    pub basis: Vec<DVector<f64>>,
    pub coefficients: DVector<f64>,
    pub residual_gradient: SymMat,
}

impl R1mpState {
    /// `Σᵢ αᵢ uᵢuᵢᵀ`
    pub fn estimate(&self, dim: usize) -> SymMat {
        self.basis
            .iter()
            .zip(self.coefficients.iter())
            .fold(SymMat::zeros(dim), |acc, (u, a)| &acc + &SymMat::outer(u, *a))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct R1mpStep {
    pub rank: usize,
    /// `λ₁(−∇f)` before the basis vector was added.
    pub escape_eigenvalue: f64,
    /// Objective after the refit.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct R1mpResult {
    pub estimate: SymMat,
    pub state: R1mpState,
    pub history: Vec<R1mpStep>,
    /// `λ₁(−∇f)` at the returned estimate.
    pub final_lambda1: f64,
    pub warnings: Vec<Warning>,
}

const RIDGE: f64 = 1e-12;

/// Minimizes the quadratic `f` over `span{uᵢuᵢᵀ}` via its normal equations.
fn refit(spec: &LossSpec, basis: &[DVector<f64>], rank: usize, warnings: &mut Vec<Warning>) -> Result<DVector<f64>> {
    let d = spec.dim();
    let atoms: Vec<SymMat> = basis.iter().map(|u| SymMat::outer(u, 1.0)).collect();
    let g0 = spec.gradient(&SymMat::zeros(d))?;
    let h: Vec<SymMat> = atoms.iter().map(|b| spec.hessian_apply(b)).collect::<Result<_>>()?;
    let n = atoms.len();
    let a = DMatrix::from_fn(n, n, |i, j| atoms[i].inner(&h[j]));
    let b = DVector::from_fn(n, |i, _| -g0.inner(&atoms[i]));
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(&b));
    }
    warnings.push(Warning::Ridge { rank });
    let ridged = &a + DMatrix::identity(n, n) * RIDGE;
    match ridged.clone().cholesky() {
        Some(ch) => Ok(ch.solve(&b)),
        None => ridged
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| invalid(format!("normal equations could not be solved: {e}"))),
    }
}

/// Rank-1 matrix pursuit: add the top eigenvector of `−∇f` to the basis and
/// refit all coefficients, until `λ₁(−∇f) ≤ exit_tol` or `max_rank` atoms.
pub fn r1mp_run(spec: &LossSpec, max_rank: usize, exit_tol: f64) -> Result<R1mpResult> {
    if !spec.is_quadratic() {
        return Err(Error::Unsupported("R1MP refits need a quadratic loss".into()));
    }
    let d = spec.dim();
    if max_rank > d {
        return Err(invalid(format!("max_rank {max_rank} exceeds dimension {d}")));
    }
    let mut state = R1mpState {
        basis: Vec::new(),
        coefficients: DVector::zeros(0),
        residual_gradient: spec.gradient(&SymMat::zeros(d))?,
    };
    let mut history = Vec::new();
    let mut warnings = Vec::new();
    let mut top = (-&state.residual_gradient).top_eigpair()?;
    for rank in 1..=max_rank {
        if top.value <= exit_tol {
            break;
        }
        state.basis.push(top.vector.clone());
        state.coefficients = refit(spec, &state.basis, rank, &mut warnings)?;
        let est = state.estimate(d);
        state.residual_gradient = spec.gradient(&est)?;
        history.push(R1mpStep { rank, escape_eigenvalue: top.value, loss: spec.value(&est)? });
        top = (-&state.residual_gradient).top_eigpair()?;
    }
    Ok(R1mpResult { estimate: state.estimate(d), state, history, final_lambda1: top.value, warnings })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxConfig {
    /// Starting penalty; defaults to `‖∇f(0)‖₂`.
    pub lambda0: Option<f64>,
    pub factor: f64,
    pub stages: usize,
    pub steps_per_stage: usize,
    /// Gradient step; defaults to the inverse Lipschitz constant of `∇f`.
    pub step: Option<f64>,
    pub feas_tol: f64,
    /// Restrict iterates to the PSD cone.
    pub psd: bool,
}

impl Default for ProxConfig {
    fn default() -> Self {
        Self { lambda0: None, factor: 0.5, stages: 40, steps_per_stage: 500, step: None, feas_tol: 1e-8, psd: true }
    }
}

impl ProxConfig {
    /// `λ₀, λ₀·factor, …` for the configured number of stages.
    pub fn lambda_path(&self, lambda0: f64) -> Vec<f64> {
        (0..self.stages).map(|k| lambda0 * self.factor.powi(k as i32)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuclearResult {
    pub estimate: SymMat,
    pub loss: f64,
    pub nuclear_norm: f64,
    pub lambdas: Vec<f64>,
}

/// Largest eigenvalue of the (constant) Hessian of a quadratic loss.
fn lipschitz(spec: &LossSpec) -> Result<f64> {
    let d = spec.dim();
    let mut x = SymMat::new(DMatrix::from_fn(d, d, |i, j| 1.0 + 0.1 * (i + 2 * j) as f64))?;
    let mut est = 0.0;
    for _ in 0..200 {
        let n = x.frobenius_norm();
        if n == 0.0 {
            break;
        }
        x = x.scale(1.0 / n);
        let y = spec.hessian_apply(&x)?;
        est = x.inner(&y);
        x = y;
    }
    Ok(est.max(f64::MIN_POSITIVE))
}

/// Proximal map of `τ‖·‖*` (plus the PSD indicator when `psd`).
fn shrink(w: &SymMat, tau: f64, psd: bool) -> Result<SymMat> {
    let e = w.eig()?;
    Ok(if psd {
        e.map(|l| (l - tau).max(0.0))
    } else {
        e.map(|l| l.signum() * (l.abs() - tau).max(0.0))
    })
}

/// Approximates `argmin ‖W‖* s.t. f(W) = 0` as the end of the path
/// `min f(W) + λ‖W‖*`, `λ → 0`.
pub fn nuclear_min(spec: &LossSpec, cfg: &ProxConfig) -> Result<NuclearResult> {
    if !spec.is_quadratic() {
        return Err(Error::Unsupported("nuclear_min needs a sensing or full-observation loss".into()));
    }
    if !(cfg.factor > 0.0 && cfg.factor < 1.0) || cfg.stages == 0 {
        return Err(Error::Config("penalty factor must lie in (0, 1) with at least one stage".into()));
    }
    let d = spec.dim();
    let lambda0 = match cfg.lambda0 {
        Some(l) => l,
        None => spec.gradient(&SymMat::zeros(d))?.spectral_norm()?,
    };
    let step = match cfg.step {
        Some(s) => s,
        None => 1.0 / lipschitz(spec)?,
    };
    let lambdas = cfg.lambda_path(lambda0);
    let mut w = SymMat::zeros(d);
    for &lambda in &lambdas {
        for _ in 0..cfg.steps_per_stage {
            let g = spec.gradient(&w)?;
            w = shrink(&(&w - &g.scale(step)), step * lambda, cfg.psd)?;
        }
    }
    let loss = spec.value(&w)?;
    if !(loss <= cfg.feas_tol) {
        return Err(Error::Infeasible { loss, tolerance: cfg.feas_tol });
    }
    let nuclear_norm = w.nuclear_norm()?;
    Ok(NuclearResult { estimate: w, loss, nuclear_norm, lambdas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{build_counterexample_loss, Measurement};

    #[test]
    fn r1mp_recovers_diagonal_target() {
        let spec = LossSpec::full_observation(SymMat::from_diagonal(&[3.0, 2.0, 1.0]));
        let res = r1mp_run(&spec, 3, 1e-10).unwrap();
        assert_eq!(res.history.len(), 3);
        for (k, a) in [3.0, 2.0, 1.0].iter().enumerate() {
            assert!((res.state.coefficients[k] - a).abs() < 1e-12);
            let mut e = DVector::zeros(3);
            e[k] = 1.0;
            assert_eq!(res.state.basis[k], e);
        }
        assert!(res.final_lambda1 <= 1e-10);
    }

    #[test]
    fn r1mp_single_entry() {
        let spec = LossSpec::sensing(3, vec![Measurement::completion(3, 0, 0, 5.0).unwrap()]).unwrap();
        let res = r1mp_run(&spec, 3, 1e-10).unwrap();
        assert_eq!(res.history.len(), 1);
        assert!((&res.estimate - &SymMat::from_diagonal(&[5.0, 0.0, 0.0])).frobenius_norm() < 1e-12);
    }

    #[test]
    fn r1mp_rejects_linear_loss() {
        let spec = LossSpec::linear(SymMat::identity(2), 0.0);
        assert!(matches!(r1mp_run(&spec, 1, 0.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn r1mp_loss_non_increasing() {
        let spec = build_counterexample_loss(10.0).unwrap();
        let res = r1mp_run(&spec, 4, 1e-12).unwrap();
        let mut prev = spec.value(&SymMat::zeros(4)).unwrap();
        for s in &res.history {
            assert!(s.loss <= prev + 1e-12);
            prev = s.loss;
        }
    }

    #[test]
    fn nuclear_min_returns_fully_observed_target() {
        let target = SymMat::from_row_slice(3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 0.5]).unwrap();
        let ms = (0..3)
            .flat_map(|i| (i..3).map(move |j| (i, j)))
            .map(|(i, j)| Measurement::completion(3, i, j, target.get(i, j)).unwrap())
            .collect();
        let spec = LossSpec::sensing(3, ms).unwrap();
        let res = nuclear_min(&spec, &ProxConfig::default()).unwrap();
        assert!((&res.estimate - &target).frobenius_norm() < 1e-6);
    }

    #[test]
    fn nuclear_min_matches_grid_oracle_on_rank1_completion() {
        // W* = zzᵀ with the (0,0) entry hidden: the minimum-trace PSD
        // completion is found by scanning the free entry
        let z = [0.8, -1.1, 0.6];
        let ms = (0..3)
            .flat_map(|i| (i..3).map(move |j| (i, j)))
            .filter(|&(i, j)| (i, j) != (0, 0))
            .map(|(i, j)| Measurement::completion(3, i, j, z[i] * z[j]).unwrap())
            .collect();
        let spec = LossSpec::sensing(3, ms).unwrap();
        let mut best = f64::INFINITY;
        for k in 0..=20_000 {
            let x = 2.0 * k as f64 / 20_000.0;
            let mut w = DMatrix::from_fn(3, 3, |i, j| z[i] * z[j]);
            w[(0, 0)] = x;
            let w = SymMat::new(w).unwrap();
            if w.min_eigenvalue().unwrap() >= -1e-12 {
                best = best.min(w.nuclear_norm().unwrap());
            }
        }
        let res = nuclear_min(&spec, &ProxConfig::default()).unwrap();
        assert!((res.nuclear_norm - best).abs() < 1e-3, "{} vs {}", res.nuclear_norm, best);
        assert!((res.estimate.get(0, 0) - z[0] * z[0]).abs() < 1e-3);
    }

    #[test]
    fn nuclear_min_rejects_linear() {
        let spec = LossSpec::linear(SymMat::identity(2), 0.0);
        assert!(nuclear_min(&spec, &ProxConfig::default()).is_err());
    }
}
