//! Time integration of the end-to-end, factored, deep and kernel flows,
//! plus the closed-form solutions used to check them.

mod closed_form;
mod deep;
mod depth2;
pub(crate) mod integrate;
mod kernel;

pub use closed_form::{deep_diag_blow_up_time, deep_diag_closed_form, linear_flow_closed_form, sigma_closed_form};
pub use deep::{balanced_init, flow_deep, gd_deep_factored, DeepFactorState};
#[cfg(test)]
pub(crate) use deep::balanced_from_parts;
pub(crate) use deep::gd_deep_factored_final;
pub use depth2::{flow_depth2, gd_factored};
pub(crate) use depth2::gd_factored_final;
pub use kernel::{flow_kernel_depth, kernel_matrix, Depth, KernelTrajectory};

use crate::error::{invalid, Error, Result};
use crate::losses::LossSpec;
use crate::symmat::{low_rankness_from_eigenvalues, SymMat};
use integrate::RawRun;

/// Default bound on `‖W‖_F` beyond which a run is declared diverged.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// RMSprop decay used by every adaptive preset.
pub const ADAPTIVE_ALPHA: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Euler,
    Rk4,
    /// Gradient descent with `η̃ₜ = η / (√(vₜ₊₁ / (1 − αᵗ⁺¹)) + ε)`,
    /// `vₜ₊₁ = α vₜ + (1 − α)‖∇‖²`. Time advances by `η̃ₜ`.
    AdaptiveGd { alpha: f64, epsilon: f64 },
    /// RK4 with step `min(step, fraction · ‖x‖ / ‖dx/dt‖)`, for flows that
    /// blow up in finite time.
    RelativeRk4 { fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub step: f64,
    pub max_steps: usize,
    pub stop_grad_norm: f64,
    pub record_every: usize,
    pub overflow_guard: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Rk4,
            step: 1e-3,
            max_steps: 10_000_000,
            stop_grad_norm: 0.0,
            record_every: 1,
            overflow_guard: OVERFLOW_GUARD,
        }
    }
}

impl IntegratorConfig {
    pub fn euler(step: f64) -> Self {
        Self { scheme: Scheme::Euler, step, ..Self::default() }
    }

    pub fn rk4(step: f64) -> Self {
        Self { scheme: Scheme::Rk4, step, ..Self::default() }
    }

    pub fn adaptive_gd(step: f64, alpha: f64, epsilon: f64) -> Self {
        Self { scheme: Scheme::AdaptiveGd { alpha, epsilon }, step, ..Self::default() }
    }

    pub fn relative_rk4(max_step: f64, fraction: f64) -> Self {
        Self { scheme: Scheme::RelativeRk4 { fraction }, step: max_step, ..Self::default() }
    }

    /// GD presets per depth: constant `η = 1e−3` at depth 2, adaptive
    /// `η = 2e−5, ε = 1e−4` at depth 3 and `η = 3e−4, ε = 1e−3` beyond.
    pub fn table1(depth: usize) -> Result<Self> {
        match depth {
            0 | 1 => Err(invalid(format!("depth must be at least 2, got {depth}"))),
            2 => Ok(Self::euler(1e-3)),
            3 => Ok(Self::adaptive_gd(2e-5, ADAPTIVE_ALPHA, 1e-4)),
            _ => Ok(Self::adaptive_gd(3e-4, ADAPTIVE_ALPHA, 1e-3)),
        }
    }

    pub fn with_max_steps(mut self, n: usize) -> Self {
        self.max_steps = n;
        self
    }

    pub fn with_stop_grad_norm(mut self, tol: f64) -> Self {
        self.stop_grad_norm = tol;
        self
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn with_overflow_guard(mut self, guard: f64) -> Self {
        self.overflow_guard = guard;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        if !(self.stop_grad_norm >= 0.0) {
            return bad(format!("stop_grad_norm must be nonnegative, got {}", self.stop_grad_norm));
        }
        if !(self.overflow_guard > 0.0) {
            return bad(format!("overflow_guard must be positive, got {}", self.overflow_guard));
        }
        match self.scheme {
            Scheme::AdaptiveGd { alpha, epsilon } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return bad(format!("adaptive alpha must lie in (0, 1), got {alpha}"));
                }
                if !(epsilon > 0.0) {
                    return bad(format!("adaptive epsilon must be positive, got {epsilon}"));
                }
            }
            Scheme::RelativeRk4 { fraction } => {
                if !(fraction > 0.0) {
                    return bad(format!("relative step fraction must be positive, got {fraction}"));
                }
            }
            Scheme::Euler | Scheme::Rk4 => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    Horizon,
    Stationary,
    MaxSteps,
    /// Non-finite state or `‖W‖_F` at the overflow guard. The trajectory is
    /// truncated at `time`.
    Diverged { time: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// Factor imbalance grew past 100× the initial tolerance.
    BalanceDrift { time: f64, imbalance: f64 },
    /// Top eigenvalue of `−∇f` was not separated at a phase start.
    DegenerateEscape { rank: usize, gap: f64 },
    /// Normal equations were regularized.
    Ridge { rank: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub loss: f64,
    /// Norm of the integrated vector field (the parameter gradient for GD).
    pub grad_norm: f64,
    /// Eigenvalues of the state, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// `low_rankness[k]` is the (k+1)-low-rankness.
    pub low_rankness: Vec<f64>,
}

impl Diagnostics {
    pub fn compute(spec: &LossSpec, w: &SymMat, grad_norm: f64) -> Result<Self> {
        let eigenvalues = w.eigenvalues()?;
        let low_rankness = (1..=w.dim()).map(|r| low_rankness_from_eigenvalues(&eigenvalues, r)).collect();
        Ok(Self { loss: spec.value(w)?, grad_norm, eigenvalues, low_rankness })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SymMat>,
    pub diagnostics: Vec<Diagnostics>,
    pub termination: Termination,
    /// Number of integration steps taken.
    pub steps: usize,
    pub warnings: Vec<Warning>,
}

impl Trajectory {
    pub fn empty(termination: Termination) -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            diagnostics: Vec::new(),
            termination,
            steps: 0,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.states.first().map(SymMat::dim)
    }

    pub fn final_state(&self) -> Option<&SymMat> {
        self.states.last()
    }

    pub fn final_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self.termination, Termination::Diverged { .. })
    }

    /// Turns a diverged run into [`Error::Diverged`].
    pub fn into_result(self) -> Result<Self> {
        match self.termination {
            Termination::Diverged { time } => Err(Error::Diverged { time }),
            _ => Ok(self),
        }
    }

    pub(crate) fn assemble<S>(
        spec: &LossSpec,
        raw: RawRun<S>,
        mut to_w: impl FnMut(&S) -> Result<SymMat>,
    ) -> Result<Self> {
        let mut out = Self::empty(raw.termination);
        out.steps = raw.steps;
        for ((t, s), g) in raw.times.into_iter().zip(&raw.states).zip(raw.rhs_norms) {
            let w = to_w(s)?;
            if !w.is_finite() {
                // a non-finite state only appears as the last record of a diverged run
                break;
            }
            out.diagnostics.push(Diagnostics::compute(spec, &w, g)?);
            out.times.push(t);
            out.states.push(w);
        }
        Ok(out)
    }
}

pub(crate) fn check_dims(spec: &LossSpec, d: usize) -> Result<()> {
    if spec.dim() != d {
        return Err(invalid(format!("loss has dim {} but the state has dim {d}", spec.dim())));
    }
    Ok(())
}
