//! Greedy low-rank learning: grow the factorization one column at a time,
//! each time escaping the current critical point along the top eigenvector
//! of `−∇f`, and run gradient descent to the next critical point.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{
    gd_deep_factored_final, gd_factored_final, DeepFactorState, Diagnostics, IntegratorConfig, Termination,
    Trajectory, Warning,
};
use crate::error::{invalid, Error, Result};
use crate::losses::LossSpec;
use crate::symmat::{SymMat, TopEigPair};

/// Eigen-gaps below this at a phase start are reported as degenerate.
pub const DEGENERATE_GAP: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GlrlConfig {
    /// Perturbation size `ε`; deep runs scale each factor block by `ε^{1/L}`.
    pub epsilon: f64,
    pub inner: IntegratorConfig,
    /// Defaults to the matrix dimension.
    pub max_rank: Option<usize>,
    pub exit_tol: f64,
    pub depth: usize,
    /// Overrides `inner.stop_grad_norm`; defaults to `1e−9·max(1, ‖∇f(0)‖_F)`.
    pub stop_grad_norm: Option<f64>,
    /// Time budget of each phase.
    pub phase_horizon: f64,
}

impl GlrlConfig {
    pub fn new(epsilon: f64, inner: IntegratorConfig) -> Self {
        Self {
            epsilon,
            inner,
            max_rank: None,
            exit_tol: 1e-8,
            depth: 2,
            stop_grad_norm: None,
            phase_horizon: f64::INFINITY,
        }
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_max_rank(mut self, r: usize) -> Self {
        self.max_rank = Some(r);
        self
    }

    pub fn with_stop_grad_norm(mut self, tol: f64) -> Self {
        self.stop_grad_norm = Some(tol);
        self
    }

    pub fn with_exit_tol(mut self, tol: f64) -> Self {
        self.exit_tol = tol;
        self
    }

    pub fn with_phase_horizon(mut self, horizon: f64) -> Self {
        self.phase_horizon = horizon;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if let Some(r) = self.max_rank {
            if r == 0 || r > dim {
                return Err(Error::Config(format!("max_rank must lie in 1..={dim}, got {r}")));
            }
        }
        if !(self.exit_tol >= 0.0) {
            return Err(Error::Config(format!("exit_tol must be nonnegative, got {}", self.exit_tol)));
        }
        if self.depth < 2 {
            return Err(Error::Config(format!("depth must be at least 2, got {}", self.depth)));
        }
        if !(self.phase_horizon > 0.0) {
            return Err(Error::Config("phase_horizon must be positive".into()));
        }
        self.inner.validate()
    }

    fn resolved_inner(&self, spec: &LossSpec) -> Result<IntegratorConfig> {
        let tol = match self.stop_grad_norm {
            Some(t) => t,
            None => 1e-9 * spec.gradient(&SymMat::zeros(spec.dim()))?.frobenius_norm().max(1.0),
        };
        Ok(self.inner.with_stop_grad_norm(tol))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub rank: usize,
    /// `λ₁(−∇f(W̄ᵣ₋₁))`
    pub escape_eigenvalue: f64,
    pub escape_gap: f64,
    pub escape_vector: DVector<f64>,
    pub trajectory: Trajectory,
    pub critical_point: SymMat,
    pub final_grad_norm: f64,
    /// Inner loop met the stationarity threshold.
    pub converged: bool,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Terminal {
    /// `λ₁(−∇f(W_final)) ≤ exit_tol`
    pub converged: bool,
    pub final_w: SymMat,
    pub final_lambda1: f64,
    pub rank_budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlrlReport {
    pub phases: Vec<PhaseRecord>,
    pub terminal: Terminal,
    pub warnings: Vec<Warning>,
}

impl GlrlReport {
    pub fn phase(&self, rank: usize) -> Option<&PhaseRecord> {
        self.phases.iter().find(|p| p.rank == rank)
    }

    /// `W̄₀ = 0, W̄₁, …` up to the last phase.
    pub fn critical_points(&self) -> Vec<SymMat> {
        let d = self.terminal.final_w.dim();
        std::iter::once(SymMat::zeros(d)).chain(self.phases.iter().map(|p| p.critical_point.clone())).collect()
    }
}

fn escape_direction(spec: &LossSpec, w: &SymMat) -> Result<TopEigPair> {
    (-&spec.gradient(w)?).top_eigpair()
}

/// Shared outer loop; `run_phase` extends the parameters along the escape
/// vector and returns the phase trajectory.
fn greedy<P>(
    spec: &LossSpec,
    cfg: &GlrlConfig,
    mut params: P,
    mut run_phase: impl FnMut(&P, &DVector<f64>, &IntegratorConfig) -> Result<(Trajectory, P)>,
) -> Result<GlrlReport> {
    let d = spec.dim();
    cfg.validate(d)?;
    let inner = cfg.resolved_inner(spec)?;
    let max_rank = cfg.max_rank.unwrap_or(d);
    let mut phases = Vec::new();
    let mut warnings = Vec::new();
    let mut w = SymMat::zeros(d);
    let mut top = escape_direction(spec, &w)?;
    let mut stalled = false;

    for rank in 1..=max_rank {
        if top.value <= cfg.exit_tol {
            break;
        }
        if top.gap < DEGENERATE_GAP {
            warnings.push(Warning::DegenerateEscape { rank, gap: top.gap });
        }
        let (trajectory, next) = run_phase(&params, &top.vector, &inner)?;
        let critical_point = trajectory.final_state().cloned().unwrap_or_else(|| w.clone());
        let final_grad_norm = trajectory.diagnostics.last().map_or(f64::NAN, |g| g.grad_norm);
        let termination = trajectory.termination;
        warnings.extend(trajectory.warnings.iter().cloned());
        phases.push(PhaseRecord {
            rank,
            escape_eigenvalue: top.value,
            escape_gap: top.gap,
            escape_vector: top.vector.clone(),
            trajectory,
            critical_point: critical_point.clone(),
            final_grad_norm,
            converged: termination == Termination::Stationary,
            termination,
        });
        params = next;
        w = critical_point;
        if matches!(termination, Termination::Diverged { .. }) {
            stalled = true;
            break;
        }
        top = escape_direction(spec, &w)?;
    }

    let converged = !stalled && top.value <= cfg.exit_tol;
    Ok(GlrlReport {
        terminal: Terminal {
            converged,
            final_lambda1: top.value,
            rank_budget_exhausted: !converged && !stalled && phases.len() == max_rank,
            final_w: w,
        },
        phases,
        warnings,
    })
}

/// Depth-2 greedy low-rank learning: `Uᵣ(0) = [Uᵣ₋₁(∞), √ε·uᵣ]`.
pub fn glrl_run(spec: &LossSpec, cfg: &GlrlConfig) -> Result<GlrlReport> {
    if cfg.depth != 2 {
        return Err(invalid(format!("glrl_run is depth 2 only (got {}); use deep_glrl_run", cfg.depth)));
    }
    let d = spec.dim();
    let scale = cfg.epsilon.sqrt();
    greedy(spec, cfg, DMatrix::<f64>::zeros(d, 0), |u, v, inner| {
        let r = u.ncols();
        let mut u0 = u.clone().insert_column(r, 0.0);
        u0.set_column(r, &(v * scale));
        gd_factored_final(spec, &u0, inner, cfg.phase_horizon)
    })
}

/// Appends one block to each factor: `[U₁, ε′u]`, `diag(Uₖ, ε′)` in the
/// middle, and `[U_L; ε′uᵀ]`.
pub fn deep_phase_init(prev: &[DMatrix<f64>], u: &DVector<f64>, eps_root: f64) -> Vec<DMatrix<f64>> {
    let l = prev.len();
    prev.iter()
        .enumerate()
        .map(|(k, m)| {
            let (rows, cols) = m.shape();
            if k == 0 {
                let mut out = m.clone().insert_column(cols, 0.0);
                out.set_column(cols, &(u * eps_root));
                out
            } else if k == l - 1 {
                let mut out = m.clone().insert_row(rows, 0.0);
                out.set_row(rows, &(u * eps_root).transpose());
                out
            } else {
                let mut out = m.clone().insert_row(rows, 0.0).insert_column(cols, 0.0);
                out[(rows, cols)] = eps_root;
                out
            }
        })
        .collect()
}

/// Deep greedy low-rank learning with block-padded factors and `ε′ = ε^{1/L}`.
pub fn deep_glrl_run(spec: &LossSpec, cfg: &GlrlConfig) -> Result<GlrlReport> {
    if cfg.depth < 3 {
        return Err(invalid(format!("deep_glrl_run needs depth ≥ 3, got {}", cfg.depth)));
    }
    let d = spec.dim();
    let l = cfg.depth;
    let eps_root = cfg.epsilon.powf(1.0 / l as f64);
    let empty: Vec<DMatrix<f64>> = (0..l)
        .map(|k| match k {
            0 => DMatrix::zeros(d, 0),
            k if k == l - 1 => DMatrix::zeros(0, d),
            _ => DMatrix::zeros(0, 0),
        })
        .collect();
    greedy(spec, cfg, empty, |prev, v, inner| {
        let factors = deep_phase_init(prev, v, eps_root);
        let probe = DeepFactorState::new(factors, 0.0)?;
        let tol = probe.imbalance().max(1e-12);
        let state = DeepFactorState::new(probe.into_factors(), tol)?;
        let (traj, last) = gd_deep_factored_final(spec, &state, inner, cfg.phase_horizon)?;
        Ok((traj, last.into_factors()))
    })
}

/// `ln(1/ε) / (2μ₁)`, the time a phase needs to leave its `ε`-neighbourhood.
pub fn glrl_time_shift(epsilon: f64, mu1: f64) -> Result<f64> {
    if !(mu1 > 0.0) {
        return Err(Error::NoEscape(mu1));
    }
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok((1.0 / epsilon).ln() / (2.0 * mu1))
}

/// Phase `r` of `report` re-indexed by `t′ = t − ln(1/ε)/(2μ₁)` and sampled
/// on `t_grid` (linear interpolation, clamped to the recorded range).
pub fn glrl_trajectory_shifted(
    spec: &LossSpec,
    cfg: &GlrlConfig,
    report: &GlrlReport,
    r: usize,
    t_grid: &[f64],
) -> Result<Trajectory> {
    let phase = report.phase(r).ok_or_else(|| invalid(format!("no phase {r} in report")))?;
    let shift = glrl_time_shift(cfg.epsilon, phase.escape_eigenvalue)?;
    let traj = &phase.trajectory;
    let mut out = Trajectory::empty(Termination::Horizon);
    if traj.is_empty() {
        return Err(invalid(format!("phase {r} has an empty trajectory")));
    }
    for &tp in t_grid {
        let t = tp + shift;
        let (w, g) = interpolate(traj, t);
        out.diagnostics.push(Diagnostics::compute(spec, &w, g)?);
        out.states.push(w);
        out.times.push(tp);
    }
    Ok(out)
}

fn interpolate(traj: &Trajectory, t: f64) -> (SymMat, f64) {
    let times = &traj.times;
    let k = times.partition_point(|s| *s < t);
    if k == 0 {
        return (traj.states[0].clone(), traj.diagnostics[0].grad_norm);
    }
    if k == times.len() {
        let last = times.len() - 1;
        return (traj.states[last].clone(), traj.diagnostics[last].grad_norm);
    }
    let (t0, t1) = (times[k - 1], times[k]);
    let a = (t - t0) / (t1 - t0);
    let w = &traj.states[k - 1].scale(1.0 - a) + &traj.states[k].scale(a);
    let g = (1.0 - a) * traj.diagnostics[k - 1].grad_norm + a * traj.diagnostics[k].grad_norm;
    (w, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_target() -> LossSpec {
        LossSpec::full_observation(SymMat::from_diagonal(&[3.0, 2.0, 1.0]))
    }

    #[test]
    fn full_observation_phases_follow_truncations() {
        let cfg = GlrlConfig::new(1e-7, IntegratorConfig::euler(1e-2).with_record_every(100));
        let report = glrl_run(&diag_target(), &cfg).unwrap();
        assert_eq!(report.phases.len(), 3);
        assert!(report.terminal.converged);
        let expected = [[3.0, 0.0, 0.0], [3.0, 2.0, 0.0], [3.0, 2.0, 1.0]];
        for (p, e) in report.phases.iter().zip(expected) {
            assert!(p.converged);
            let err = (&p.critical_point - &SymMat::from_diagonal(&e)).frobenius_norm();
            assert!(err <= 1e-4, "phase {} error {err}", p.rank);
        }
        assert_eq!(report.phases[0].escape_vector, DVector::from_vec(vec![1.0, 0.0, 0.0]));
    }

    #[test]
    fn linear_loss_escapes_along_top_direction_then_diverges() {
        let spec = LossSpec::linear(SymMat::from_diagonal(&[2.0, 1.0]), 0.0);
        let cfg = GlrlConfig::new(1e-6, IntegratorConfig::euler(1e-2).with_max_steps(5_000));
        let report = glrl_run(&spec, &cfg).unwrap();
        let p = &report.phases[0];
        assert_eq!(p.escape_eigenvalue, 2.0);
        assert_eq!(p.escape_vector, DVector::from_vec(vec![1.0, 0.0]));
        assert!(!p.converged);
        assert!(!report.terminal.converged);
    }

    #[test]
    fn deep_init_product_is_eps_uu() {
        let u = DVector::from_vec(vec![0.6, 0.8]);
        let eps: f64 = 1e-6;
        for l in [3usize, 4, 5] {
            let empty: Vec<DMatrix<f64>> = (0..l)
                .map(|k| match k {
                    0 => DMatrix::zeros(2, 0),
                    k if k == l - 1 => DMatrix::zeros(0, 2),
                    _ => DMatrix::zeros(0, 0),
                })
                .collect();
            let fs = deep_phase_init(&empty, &u, eps.powf(1.0 / l as f64));
            let s = DeepFactorState::new(fs, 1e-12).unwrap();
            let expected = &u * u.transpose() * eps;
            assert!((s.end_to_end() - expected).norm() < 1e-18);
            assert!(s.imbalance() < 1e-10);
        }
    }

    #[test]
    fn deep_init_stays_balanced_when_previous_is_balanced() {
        let mut rng = crate::rng::StreamRng::new(4, crate::rng::Stream::Test);
        let vs: Vec<DMatrix<f64>> = (0..4).map(|_| crate::rng::random_orthogonal(3, &mut rng)).collect();
        let prev = crate::dynamics::balanced_from_parts(&vs, &[0.5, 0.3, 0.0]).unwrap();
        // the escape vector at a critical point lies in the kernel of W
        let u = vs[0].column(2).into_owned();
        let fs = deep_phase_init(prev.factors(), &u, 1e-2);
        let s = DeepFactorState::new(fs, 1e-12).unwrap();
        assert!(s.imbalance() <= 1e-10, "imbalance {}", s.imbalance());
    }

    #[test]
    fn shift_formula() {
        assert!((glrl_time_shift(1e-6, 2.0).unwrap() - 3.4538776394910684).abs() < 1e-12);
        assert_eq!(glrl_time_shift(1e-6, 0.0).unwrap_err(), Error::NoEscape(0.0));
    }

    #[test]
    fn shifted_trajectory_on_empty_grid() {
        let cfg = GlrlConfig::new(1e-6, IntegratorConfig::euler(1e-2).with_record_every(10)).with_max_rank(1);
        let report = glrl_run(&diag_target(), &cfg).unwrap();
        let t = glrl_trajectory_shifted(&diag_target(), &cfg, &report, 1, &[]).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn deterministic_report() {
        let cfg = GlrlConfig::new(1e-5, IntegratorConfig::euler(1e-2).with_record_every(50));
        let a = glrl_run(&diag_target(), &cfg).unwrap();
        let b = glrl_run(&diag_target(), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
