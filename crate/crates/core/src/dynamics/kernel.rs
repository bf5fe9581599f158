//! End-to-end dynamics of depth-`L` linear networks written in the SVD basis
//! of `W`, in normalized time `τ = L·t`:
//! `dW/dτ = −Ũ((Ũᵀ∇f(W)Ṽ) ∘ K)Ṽᵀ`.

use std::fmt;

use nalgebra::DMatrix;

use super::integrate::{integrate, Flow};
use super::{check_dims, IntegratorConfig, Termination};
use crate::error::{invalid, Result};
use crate::losses::LossSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    Finite(usize),
    Infinite,
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Depth::Finite(l) => write!(f, "{l}"),
            Depth::Infinite => f.write_str("inf"),
        }
    }
}

const FILL_TOL: f64 = 1e-12;

fn diag_entry(s: f64, depth: Depth) -> f64 {
    match depth {
        Depth::Finite(l) => s.powf(2.0 - 2.0 / l as f64),
        Depth::Infinite => s * s,
    }
}

/// Off-diagonal entry for `a > b ≥ 0`, outside the continuity band.
fn off_entry(a: f64, b: f64, depth: Depth) -> f64 {
    let num = (a - b) * (a + b);
    match depth {
        Depth::Finite(l) => {
            let l = l as f64;
            let den = if b == 0.0 {
                a.powf(2.0 / l)
            } else {
                b.powf(2.0 / l) * ((2.0 / l) * ((a - b) / b).ln_1p()).exp_m1()
            };
            num / (l * den)
        }
        Depth::Infinite if b == 0.0 => 0.0,
        Depth::Infinite => num / (2.0 * ((a - b) / b).ln_1p()),
    }
}

/// `Kᵢᵢ = σᵢ^{2−2/L}`, `Kᵢⱼ = (σᵢ² − σⱼ²) / (L(σᵢ^{2/L} − σⱼ^{2/L}))`; at
/// infinite depth `Kᵢᵢ = σᵢ²`, `Kᵢⱼ = (σᵢ² − σⱼ²) / (ln σᵢ² − ln σⱼ²)`.
/// Nearly equal pairs take the diagonal value.
pub fn kernel_matrix(sigmas: &[f64], depth: Depth) -> Result<DMatrix<f64>> {
    if depth == Depth::Finite(0) {
        return Err(invalid("depth must be at least 1"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(invalid(format!("singular values must be nonnegative and finite, got {s}")));
    }
    let n = sigmas.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let (si, sj) = (sigmas[i], sigmas[j]);
        if i == j || (si - sj).abs() <= FILL_TOL * si.max(sj).max(1.0) {
            diag_entry(si, depth)
        } else {
            off_entry(si.max(sj), si.min(sj), depth)
        }
    }))
}

struct KernelFlow<'a> {
    spec: &'a LossSpec,
    depth: Depth,
}

impl Flow for KernelFlow<'_> {
    type S = DMatrix<f64>;

    fn rhs(&mut self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let g = self.spec.gradient_general(w)?;
        let svd = w.clone().svd(true, true);
        let u = svd.u.expect("left singular vectors requested");
        let v_t = svd.v_t.expect("right singular vectors requested");
        let k = kernel_matrix(svd.singular_values.as_slice(), self.depth)?;
        let inner = (u.transpose() * g * v_t.transpose()).component_mul(&k);
        Ok(-(u * inner * v_t))
    }

    fn end_to_end_norm_bound(&self, w: &DMatrix<f64>) -> f64 {
        w.norm()
    }
}

/// Trajectory of a general square end-to-end matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTrajectory {
    /// Normalized time `τ = L·t`.
    pub times: Vec<f64>,
    pub states: Vec<DMatrix<f64>>,
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// Singular values of each state, non-increasing.
    pub singular_values: Vec<Vec<f64>>,
    pub termination: Termination,
    pub steps: usize,
}

impl KernelTrajectory {
    /// State at normalized time `tau` by linear interpolation between records.
    pub fn state_at(&self, tau: f64) -> Option<DMatrix<f64>> {
        let first = *self.times.first()?;
        let last = *self.times.last()?;
        if tau < first || tau > last {
            return None;
        }
        let k = self.times.partition_point(|t| *t < tau);
        if self.times[k] == tau || k == 0 {
            return Some(self.states[k].clone());
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (tau - t0) / (t1 - t0);
        Some(&self.states[k - 1] * (1.0 - w) + &self.states[k] * w)
    }
}

/// Integrates the depth-`L` kernel dynamics in normalized time; `horizon`
/// and `cfg.step` are in units of `τ`.
pub fn flow_kernel_depth(
    spec: &LossSpec,
    w0: &DMatrix<f64>,
    depth: Depth,
    cfg: &IntegratorConfig,
    horizon: f64,
) -> Result<KernelTrajectory> {
    if w0.nrows() != w0.ncols() {
        return Err(invalid("initial matrix must be square"));
    }
    check_dims(spec, w0.nrows())?;
    kernel_matrix(&[], depth)?;
    let raw = integrate(&mut KernelFlow { spec, depth }, w0.clone(), cfg, horizon)?;
    let mut out = KernelTrajectory {
        times: Vec::new(),
        states: Vec::new(),
        losses: Vec::new(),
        grad_norms: Vec::new(),
        singular_values: Vec::new(),
        termination: raw.termination,
        steps: raw.steps,
    };
    for ((t, w), g) in raw.times.into_iter().zip(raw.states).zip(raw.rhs_norms) {
        if !w.iter().all(|x| x.is_finite()) {
            break;
        }
        let mut sv: Vec<f64> = w.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        out.losses.push(spec.value_general(&w)?);
        out.grad_norms.push(g);
        out.singular_values.push(sv);
        out.times.push(t);
        out.states.push(w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::flow_depth2;
    use crate::symmat::SymMat;

    #[test]
    fn equal_sigmas_give_diagonal_value() {
        for depth in [Depth::Finite(1), Depth::Finite(3), Depth::Finite(50), Depth::Infinite] {
            let k = kernel_matrix(&[1.0, 1.0], depth).unwrap();
            assert_eq!(k, DMatrix::from_element(2, 2, 1.0));
        }
        let k = kernel_matrix(&[2.0, 2.0], Depth::Infinite).unwrap();
        assert_eq!(k, DMatrix::from_element(2, 2, 4.0));
    }

    #[test]
    fn depth_two_entries() {
        let k = kernel_matrix(&[3.0, 1.0], Depth::Finite(2)).unwrap();
        assert!((k[(0, 1)] - 2.0).abs() < 1e-14);
        assert!((k[(0, 0)] - 3.0).abs() < 1e-14);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
    }

    #[test]
    fn depth_one_is_all_ones() {
        let k = kernel_matrix(&[3.0, 0.5, 0.0], Depth::Finite(1)).unwrap();
        assert!(k.iter().all(|x| (x - 1.0).abs() < 1e-14));
    }

    #[test]
    fn large_depth_approaches_limit() {
        let e = std::f64::consts::E;
        let k = kernel_matrix(&[e, 1.0], Depth::Finite(1_000_000)).unwrap();
        let limit = (e * e - 1.0) / 2.0;
        assert!(((k[(0, 1)] - limit) / limit).abs() <= 1e-3);
        let kinf = kernel_matrix(&[e, 1.0], Depth::Infinite).unwrap();
        assert!((kinf[(0, 1)] - limit).abs() < 1e-14);
    }

    #[test]
    fn zero_sigma_at_infinite_depth() {
        let k = kernel_matrix(&[2.0, 0.0], Depth::Infinite).unwrap();
        assert_eq!(k[(0, 1)], 0.0);
        assert_eq!(k[(1, 1)], 0.0);
    }

    #[test]
    fn rejects_negative_sigma() {
        assert!(kernel_matrix(&[1.0, -0.1], Depth::Finite(2)).is_err());
        assert!(kernel_matrix(&[1.0], Depth::Finite(0)).is_err());
    }

    #[test]
    fn depth_two_runs_depth2_flow_at_half_speed() {
        let mut rng = crate::rng::StreamRng::new(9, crate::rng::Stream::Test);
        let a = crate::rng::gaussian_matrix(3, 3, &mut rng);
        let spec = LossSpec::full_observation(SymMat::gram(&a).scale(0.5));
        let b = crate::rng::gaussian_matrix(3, 3, &mut rng) * 0.2;
        let w0 = SymMat::gram(&b);
        let tau = 2.0;
        let k = flow_kernel_depth(&spec, w0.as_matrix(), Depth::Finite(2), &IntegratorConfig::rk4(1e-4), tau).unwrap();
        let d = flow_depth2(&spec, &w0, &IntegratorConfig::rk4(1e-4), tau / 2.0).unwrap();
        let gap = (k.states.last().unwrap() - d.final_state().unwrap().as_matrix()).norm();
        assert!(gap <= 1e-4, "gap = {gap}");
    }
}
