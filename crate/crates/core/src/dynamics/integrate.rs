//! Fixed-step and adaptive time stepping shared by every flow.

use nalgebra::DMatrix;

use super::{IntegratorConfig, Scheme, Termination};
use crate::error::Result;

/// Vector-space operations needed by the steppers.
pub(crate) trait State: Clone {
    /// `self + a · dir`
    fn axpy(&self, a: f64, dir: &Self) -> Self;
    fn norm_sq(&self) -> f64;
    fn is_finite(&self) -> bool;
}

impl State for DMatrix<f64> {
    fn axpy(&self, a: f64, dir: &Self) -> Self {
        self + dir * a
    }

    fn norm_sq(&self) -> f64 {
        self.norm_squared()
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

impl State for Vec<DMatrix<f64>> {
    fn axpy(&self, a: f64, dir: &Self) -> Self {
        self.iter().zip(dir).map(|(x, d)| x + d * a).collect()
    }

    fn norm_sq(&self) -> f64 {
        self.iter().map(|m| m.norm_squared()).sum()
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }
}

/// An autonomous ODE `dx/dt = rhs(x)` together with the norm of the
/// end-to-end matrix it represents.
pub(crate) trait Flow {
    type S: State;

    fn rhs(&mut self, x: &Self::S) -> Result<Self::S>;

    /// Cheap upper bound on `‖W‖_F` for the end-to-end matrix of `x`.
    fn end_to_end_norm_bound(&self, x: &Self::S) -> f64;

    /// Exact `‖W‖_F`; only evaluated when the bound crosses the guard.
    fn end_to_end_norm(&self, x: &Self::S) -> f64 {
        self.end_to_end_norm_bound(x)
    }
}

pub(crate) struct RawRun<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub rhs_norms: Vec<f64>,
    pub termination: Termination,
    pub steps: usize,
}

fn rk4_step<F: Flow>(flow: &mut F, x: &F::S, k1: &F::S, h: f64) -> Result<F::S> {
    let k2 = flow.rhs(&x.axpy(0.5 * h, k1))?;
    let k3 = flow.rhs(&x.axpy(0.5 * h, &k2))?;
    let k4 = flow.rhs(&x.axpy(h, &k3))?;
    Ok(x.axpy(h / 6.0, k1).axpy(h / 3.0, &k2).axpy(h / 3.0, &k3).axpy(h / 6.0, &k4))
}

// Fixed-step grids are `n · step` rather than a running sum, so runs with
// the same step land on identical times.
fn fixed_step(step: f64, n: usize, t: f64, horizon: f64) -> f64 {
    ((n + 1) as f64 * step).min(horizon) - t
}

/// Integrates `flow` from `x0` until `horizon`, stationarity, `max_steps`
/// or the overflow guard, recording every `record_every`-th step plus the
/// last one.
pub(crate) fn integrate<F: Flow>(
    flow: &mut F,
    x0: F::S,
    cfg: &IntegratorConfig,
    horizon: f64,
) -> Result<RawRun<F::S>> {
    cfg.validate()?;
    let mut run = RawRun {
        times: Vec::new(),
        states: Vec::new(),
        rhs_norms: Vec::new(),
        termination: Termination::Horizon,
        steps: 0,
    };
    let mut x = x0;
    let mut t = 0.0_f64;
    let mut n = 0_usize;
    let mut v = 0.0_f64;
    let mut alpha_pow = 1.0_f64;

    loop {
        let diverged = !x.is_finite()
            || (flow.end_to_end_norm_bound(&x) >= cfg.overflow_guard
                && flow.end_to_end_norm(&x) >= cfg.overflow_guard);
        let k1 = if diverged { None } else { Some(flow.rhs(&x)?) };
        let gnorm = k1.as_ref().map_or(f64::INFINITY, |k| k.norm_sq().sqrt());

        let stop = if diverged || !gnorm.is_finite() {
            Some(Termination::Diverged { time: t })
        } else if gnorm <= cfg.stop_grad_norm {
            Some(Termination::Stationary)
        } else if t >= horizon {
            Some(Termination::Horizon)
        } else if n >= cfg.max_steps {
            Some(Termination::MaxSteps)
        } else {
            None
        };

        if n.is_multiple_of(cfg.record_every) || stop.is_some() {
            run.times.push(t);
            run.states.push(x.clone());
            run.rhs_norms.push(gnorm);
        }
        if let Some(stop) = stop {
            run.termination = stop;
            run.steps = n;
            return Ok(run);
        }
        let k1 = k1.expect("rhs evaluated when not diverged");

        let remaining = horizon - t;
        let (next, h) = match cfg.scheme {
            Scheme::Euler => {
                let h = fixed_step(cfg.step, n, t, horizon);
                (x.axpy(h, &k1), h)
            }
            Scheme::Rk4 => {
                let h = fixed_step(cfg.step, n, t, horizon);
                (rk4_step(flow, &x, &k1, h)?, h)
            }
            Scheme::RelativeRk4 { fraction } => {
                let xn = x.norm_sq().sqrt();
                let h = cfg.step.min(fraction * xn / gnorm).min(remaining);
                (rk4_step(flow, &x, &k1, h)?, h)
            }
            Scheme::AdaptiveGd { alpha, epsilon } => {
                v = alpha * v + (1.0 - alpha) * gnorm * gnorm;
                alpha_pow *= alpha;
                let h = (cfg.step / ((v / (1.0 - alpha_pow)).sqrt() + epsilon)).min(remaining);
                (x.axpy(h, &k1), h)
            }
        };
        x = next;
        t = match cfg.scheme {
            Scheme::Euler | Scheme::Rk4 => ((n + 1) as f64 * cfg.step).min(horizon),
            _ if h == remaining => horizon,
            _ => t + h,
        };
        n += 1;
    }
}
