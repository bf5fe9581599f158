use nalgebra::DMatrix;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::integrate::{integrate, Flow};
use super::{check_dims, IntegratorConfig, Trajectory, Warning};
use crate::error::{invalid, Result};
use crate::losses::LossSpec;
use crate::rng::random_orthogonal;
use crate::symmat::{SymMat, TOL_PSD};

/// Factors `U₁ … U_L` of a deep linear network with `W = U₁⋯U_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepFactorState {
    factors: Vec<DMatrix<f64>>,
    balanced_tol: f64,
}

impl DeepFactorState {
    /// Checks conformity; `U₁` has `d` rows and `U_L` has `d` columns.
    pub fn new(factors: Vec<DMatrix<f64>>, balanced_tol: f64) -> Result<Self> {
        if factors.len() < 2 {
            return Err(invalid(format!("depth must be at least 2, got {}", factors.len())));
        }
        let d = factors[0].nrows();
        if factors[factors.len() - 1].ncols() != d {
            return Err(invalid("last factor must have as many columns as the first has rows"));
        }
        for (i, pair) in factors.windows(2).enumerate() {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(invalid(format!(
                    "factor {} is {}x{} but factor {} is {}x{}",
                    i,
                    pair[0].nrows(),
                    pair[0].ncols(),
                    i + 1,
                    pair[1].nrows(),
                    pair[1].ncols()
                )));
            }
        }
        if !(balanced_tol >= 0.0) {
            return Err(invalid("balanced_tol must be nonnegative"));
        }
        Ok(Self { factors, balanced_tol })
    }

    pub fn depth(&self) -> usize {
        self.factors.len()
    }

    pub fn dim(&self) -> usize {
        self.factors[0].nrows()
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn into_factors(self) -> Vec<DMatrix<f64>> {
        self.factors
    }

    pub fn balanced_tol(&self) -> f64 {
        self.balanced_tol
    }

    /// `U₁⋯U_L`, not symmetrized.
    pub fn end_to_end(&self) -> DMatrix<f64> {
        product(&self.factors)
    }

    /// `maxᵢ ‖UᵢᵀUᵢ − Uᵢ₊₁Uᵢ₊₁ᵀ‖_F`
    pub fn imbalance(&self) -> f64 {
        imbalance(&self.factors)
    }
}

fn product(factors: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut w = factors[0].clone();
    for u in &factors[1..] {
        w *= u;
    }
    w
}

fn imbalance(factors: &[DMatrix<f64>]) -> f64 {
    factors
        .windows(2)
        .map(|p| (p[0].transpose() * &p[0] - &p[1] * p[1].transpose()).norm())
        .fold(0.0, f64::max)
}

/// `Uᵢ = Vᵢ D^{1/L} Vᵢ₊₁ᵀ` with `V_{L+1} = V₁`, Haar `Vᵢ` and a random
/// nonnegative diagonal `D` scaled to `‖D‖_F = scale`, so `W = V₁DV₁ᵀ`.
pub fn balanced_init<R: RngCore + ?Sized>(dim: usize, depth: usize, scale: f64, rng: &mut R) -> Result<DeepFactorState> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(invalid(format!("scale must be positive, got {scale}")));
    }
    if dim == 0 || depth < 2 {
        return Err(invalid(format!("need dim ≥ 1 and depth ≥ 2, got {dim} and {depth}")));
    }
    let vs: Vec<DMatrix<f64>> = (0..depth).map(|_| random_orthogonal(dim, rng)).collect();
    let mut diag: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).map(|x: f64| x.abs()).collect();
    let norm = diag.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut diag {
        *x *= scale / norm;
    }
    balanced_from_parts(&vs, &diag)
}

/// Balanced factors from explicit orthogonal `V₁…V_L` and nonnegative `D`.
pub(crate) fn balanced_from_parts(vs: &[DMatrix<f64>], diag: &[f64]) -> Result<DeepFactorState> {
    let depth = vs.len();
    let root = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        diag.len(),
        diag.iter().map(|x| x.powf(1.0 / depth as f64)),
    ));
    let factors = (0..depth).map(|i| &vs[i] * &root * vs[(i + 1) % depth].transpose()).collect();
    let scale = diag.iter().map(|x| x * x).sum::<f64>().sqrt();
    DeepFactorState::new(factors, 1e-12 * scale.powf(2.0 / depth as f64).max(1.0))
}

/// `M^{P}` for symmetric PSD `M` and `P = L/2`. Integer powers use repeated
/// products, which keeps diagonal inputs exactly diagonal.
pub(crate) fn m_power(m: &DMatrix<f64>, depth: usize) -> Result<DMatrix<f64>> {
    if depth.is_multiple_of(2) {
        let p = depth / 2;
        let mut out = m.clone();
        for _ in 1..p {
            out = &out * m;
        }
        Ok(symmetrize(out))
    } else {
        let s = SymMat::new(m.clone())?;
        Ok(s.frac_power_with_tol(depth as f64 / 2.0, TOL_PSD.max(1e-6))?.into_matrix())
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `dM/dt = −∇f(M^P)M^P − M^P∇f(M^P)` with `P = L/2`.
struct MDynamics<'a> {
    spec: &'a LossSpec,
    depth: usize,
}

impl Flow for MDynamics<'_> {
    type S = DMatrix<f64>;

    fn rhs(&mut self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mp = m_power(m, self.depth)?;
        let gm = self.spec.gradient_general(&mp)? * &mp;
        Ok(-(&gm + gm.transpose()))
    }

    fn end_to_end_norm_bound(&self, m: &DMatrix<f64>) -> f64 {
        m.norm().powf(self.depth as f64 / 2.0)
    }

    fn end_to_end_norm(&self, m: &DMatrix<f64>) -> f64 {
        m_power(m, self.depth).map_or(f64::INFINITY, |w| w.norm())
    }
}

/// Deep end-to-end flow, integrated on `M = W^{2/L}` and reported as `W`.
pub fn flow_deep(spec: &LossSpec, w0: &SymMat, depth: usize, cfg: &IntegratorConfig, horizon: f64) -> Result<Trajectory> {
    if depth < 3 {
        return Err(invalid(format!("flow_deep needs depth ≥ 3 (got {depth}); use flow_depth2 for depth 2")));
    }
    check_dims(spec, w0.dim())?;
    let m0 = w0.frac_power(2.0 / depth as f64)?;
    let raw = integrate(&mut MDynamics { spec, depth }, m0.into_matrix(), cfg, horizon)?;
    Trajectory::assemble(spec, raw, |m| {
        if m.iter().all(|x| x.is_finite()) {
            SymMat::new(m_power(m, depth)?)
        } else {
            SymMat::new(m.clone())
        }
    })
}

/// Simultaneous GD on all factors of `L(U₁,…,U_L) = f(U₁⋯U_L)`.
struct DeepFactored<'a> {
    spec: &'a LossSpec,
}

impl Flow for DeepFactored<'_> {
    type S = Vec<DMatrix<f64>>;

    fn rhs(&mut self, us: &Vec<DMatrix<f64>>) -> Result<Vec<DMatrix<f64>>> {
        let l = us.len();
        // prefix[k] is the product of us[0..=k]; suffix the product after factor i
        let mut prefix: Vec<DMatrix<f64>> = Vec::with_capacity(l);
        prefix.push(us[0].clone());
        for u in &us[1..] {
            let next = prefix.last().unwrap() * u;
            prefix.push(next);
        }
        let g = self.spec.gradient_general(&prefix[l - 1])?;
        let mut out = vec![DMatrix::zeros(0, 0); l];
        let mut suffix: Option<DMatrix<f64>> = None;
        for i in (0..l).rev() {
            let right = match &suffix {
                Some(s) => &g * s.transpose(),
                None => g.clone(),
            };
            out[i] = match i {
                0 => -right,
                _ => -(prefix[i - 1].transpose() * right),
            };
            suffix = Some(match suffix {
                Some(s) => &us[i] * s,
                None => us[i].clone(),
            });
        }
        Ok(out)
    }

    fn end_to_end_norm_bound(&self, us: &Vec<DMatrix<f64>>) -> f64 {
        us.iter().map(|u| u.norm()).product()
    }

    fn end_to_end_norm(&self, us: &Vec<DMatrix<f64>>) -> f64 {
        product(us).norm()
    }
}

pub fn gd_deep_factored(
    spec: &LossSpec,
    state: &DeepFactorState,
    cfg: &IntegratorConfig,
    horizon: f64,
) -> Result<Trajectory> {
    gd_deep_factored_final(spec, state, cfg, horizon).map(|(traj, _)| traj)
}

/// As [`gd_deep_factored`], also returning the final factors.
pub(crate) fn gd_deep_factored_final(
    spec: &LossSpec,
    state: &DeepFactorState,
    cfg: &IntegratorConfig,
    horizon: f64,
) -> Result<(Trajectory, DeepFactorState)> {
    check_dims(spec, state.dim())?;
    let initial = state.imbalance();
    if initial > state.balanced_tol {
        return Err(invalid(format!(
            "factors are not balanced: imbalance {initial:e} exceeds {:e}",
            state.balanced_tol
        )));
    }
    let raw = integrate(&mut DeepFactored { spec }, state.factors.clone(), cfg, horizon)?;
    let drift_limit = 100.0 * state.balanced_tol;
    let drift = raw
        .times
        .iter()
        .zip(&raw.states)
        .map(|(t, us)| (*t, imbalance(us)))
        .find(|(_, v)| *v > drift_limit || v.is_nan());
    let last = raw.states.last().cloned().unwrap_or_else(|| state.factors.clone());
    let mut traj = Trajectory::assemble(spec, raw, |us| SymMat::new(product(us)))?;
    if let Some((time, imbalance)) = drift {
        traj.warnings.push(Warning::BalanceDrift { time, imbalance });
    }
    let final_state = DeepFactorState { factors: last, balanced_tol: state.balanced_tol };
    Ok((traj, final_state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{deep_diag_closed_form, Scheme, Termination};
    use crate::rng::{Stream, StreamRng};

    #[test]
    fn balanced_init_properties() {
        let mut rng = StreamRng::new(11, Stream::Test);
        for depth in [2, 3, 4] {
            let s = balanced_init(5, depth, 0.7, &mut rng).unwrap();
            assert!(s.imbalance() <= 1e-12, "imbalance {}", s.imbalance());
            let w = s.end_to_end();
            assert!((&w - w.transpose()).norm() <= 1e-12);
            assert!((w.norm() - 0.7).abs() <= 1e-12);
            assert!(SymMat::new(w).unwrap().min_eigenvalue().unwrap() > -1e-12);
        }
    }

    #[test]
    fn balanced_depth2_with_scaled_identity() {
        let mut rng = StreamRng::new(2, Stream::Test);
        let d = 3;
        let scale = 0.9;
        let vs = vec![random_orthogonal(d, &mut rng), random_orthogonal(d, &mut rng)];
        let diag = vec![scale / (d as f64).sqrt(); d];
        let s = balanced_from_parts(&vs, &diag).unwrap();
        let expected = &vs[0] * DMatrix::from_diagonal_element(d, d, diag[0]) * vs[0].transpose();
        assert!((s.end_to_end() - &expected).norm() < 1e-12);
        assert!((expected.norm() - scale).abs() < 1e-12);
    }

    #[test]
    fn deep_factored_gradient_matches_finite_differences() {
        let mut rng = StreamRng::new(5, Stream::Test);
        let target = crate::rng::gaussian_matrix(3, 3, &mut rng);
        let spec = LossSpec::full_observation(SymMat::gram(&target));
        let us: Vec<DMatrix<f64>> = vec![
            crate::rng::gaussian_matrix(3, 2, &mut rng),
            crate::rng::gaussian_matrix(2, 4, &mut rng),
            crate::rng::gaussian_matrix(4, 3, &mut rng),
        ];
        let neg_grad = DeepFactored { spec: &spec }.rhs(&us).unwrap();
        let h = 1e-6;
        for (k, u) in us.iter().enumerate() {
            for idx in 0..u.len() {
                let mut plus = us.clone();
                plus[k][idx] += h;
                let mut minus = us.clone();
                minus[k][idx] -= h;
                let fd = (spec.value_general(&product(&plus)).unwrap()
                    - spec.value_general(&product(&minus)).unwrap())
                    / (2.0 * h);
                assert!((fd + neg_grad[k][idx]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn zero_gradient_keeps_state() {
        let target = SymMat::from_diagonal(&[1.0, 0.0]);
        let spec = LossSpec::full_observation(target);
        let e1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let state = DeepFactorState::new(vec![e1.clone(), e1.clone(), e1], 1e-12).unwrap();
        let cfg = IntegratorConfig::table1(3).unwrap().with_max_steps(10);
        let traj = gd_deep_factored(&spec, &state, &cfg, 1.0).unwrap();
        assert_eq!(traj.termination, Termination::Stationary);
        assert_eq!(traj.states[0].as_matrix(), &state.end_to_end());
    }

    #[test]
    fn first_adaptive_step_uses_bias_correction() {
        let spec = LossSpec::full_observation(SymMat::from_diagonal(&[2.0]));
        let u = DMatrix::from_element(1, 1, 0.5);
        let state = DeepFactorState::new(vec![u.clone(), u.clone(), u.clone()], 1e-12).unwrap();
        let (eta, eps) = (2e-5, 1e-4);
        let cfg = IntegratorConfig::adaptive_gd(eta, 0.99, eps).with_max_steps(1);
        let traj = gd_deep_factored(&spec, &state, &cfg, 1.0).unwrap();
        // each factor gradient is (w − 2)·0.25 with w = 0.125
        let g: f64 = (0.125 - 2.0) * 0.25;
        let gnorm = (3.0 * g * g).sqrt();
        let eta0 = eta / (gnorm + eps);
        assert!((traj.times[1] - eta0).abs() < 1e-20);
        let u1 = 0.5 - eta0 * g;
        assert!((traj.states[1].get(0, 0) - u1.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn table1_presets() {
        let c3 = IntegratorConfig::table1(3).unwrap();
        assert_eq!(c3.step, 2e-5);
        assert_eq!(c3.scheme, Scheme::AdaptiveGd { alpha: 0.99, epsilon: 1e-4 });
        let c4 = IntegratorConfig::table1(4).unwrap();
        assert_eq!(c4.step, 3e-4);
        assert_eq!(c4.scheme, Scheme::AdaptiveGd { alpha: 0.99, epsilon: 1e-3 });
        assert_eq!(IntegratorConfig::table1(2).unwrap().scheme, Scheme::Euler);
    }

    #[test]
    fn flow_deep_matches_diagonal_closed_form() {
        let mu = [1.0, 0.6, 0.3];
        let spec = LossSpec::linear(SymMat::from_diagonal(&mu), 0.0);
        let w0 = SymMat::from_diagonal(&[0.05, 0.08, 0.0]);
        let depth = 4;
        let m0: Vec<f64> = w0.diagonal().iter().map(|x| x.powf(0.5)).collect();
        let cfg = IntegratorConfig::rk4(1e-3).with_record_every(10);
        let traj = flow_deep(&spec, &w0, depth, &cfg, 2.0).unwrap();
        for (t, w) in traj.times.iter().zip(&traj.states) {
            let m = deep_diag_closed_form(&m0, &mu, 2.0, *t).unwrap();
            for i in 0..3 {
                assert!((w.get(i, i) - m[i] * m[i]).abs() < 1e-6);
            }
            assert!(w.is_diagonal());
        }
    }

    #[test]
    fn flow_deep_rejects_depth_two() {
        let spec = LossSpec::linear(SymMat::identity(2), 0.0);
        assert!(flow_deep(&spec, &SymMat::identity(2), 2, &IntegratorConfig::rk4(1e-3), 1.0).is_err());
    }
}
