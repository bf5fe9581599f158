use nalgebra::DMatrix;

use super::integrate::{integrate, Flow};
use super::{check_dims, IntegratorConfig, Trajectory};
use crate::error::{invalid, Result};
use crate::losses::LossSpec;
use crate::symmat::{SymMat, TOL_PSD};

/// `dW/dt = −(∇f(W)W + W∇f(W))`
struct EndToEnd<'a> {
    spec: &'a LossSpec,
}

impl Flow for EndToEnd<'_> {
    type S = DMatrix<f64>;

    fn rhs(&mut self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let g = self.spec.gradient_general(w)?;
        let gw = &g * w;
        Ok(-(&gw + gw.transpose()))
    }

    fn end_to_end_norm_bound(&self, w: &DMatrix<f64>) -> f64 {
        w.norm()
    }
}

/// `dU/dt = −∇f(UUᵀ)U`
struct Factored<'a> {
    spec: &'a LossSpec,
}

impl Flow for Factored<'_> {
    type S = DMatrix<f64>;

    fn rhs(&mut self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let w = u * u.transpose();
        Ok(-(self.spec.gradient_general(&w)? * u))
    }

    fn end_to_end_norm_bound(&self, u: &DMatrix<f64>) -> f64 {
        u.norm_squared()
    }

    fn end_to_end_norm(&self, u: &DMatrix<f64>) -> f64 {
        (u * u.transpose()).norm()
    }
}

pub fn flow_depth2(spec: &LossSpec, w0: &SymMat, cfg: &IntegratorConfig, horizon: f64) -> Result<Trajectory> {
    check_dims(spec, w0.dim())?;
    w0.eig()?.check_psd(TOL_PSD)?;
    let raw = integrate(&mut EndToEnd { spec }, w0.as_matrix().clone(), cfg, horizon)?;
    Trajectory::assemble(spec, raw, |w| SymMat::new(w.clone()))
}

/// Gradient descent on `L(U) = ½ f(UUᵀ)`; records `W = UUᵀ`.
pub fn gd_factored(spec: &LossSpec, u0: &DMatrix<f64>, cfg: &IntegratorConfig, horizon: f64) -> Result<Trajectory> {
    gd_factored_final(spec, u0, cfg, horizon).map(|(traj, _)| traj)
}

/// As [`gd_factored`], also returning the final factor.
pub(crate) fn gd_factored_final(
    spec: &LossSpec,
    u0: &DMatrix<f64>,
    cfg: &IntegratorConfig,
    horizon: f64,
) -> Result<(Trajectory, DMatrix<f64>)> {
    check_dims(spec, u0.nrows())?;
    if u0.ncols() == 0 {
        return Err(invalid("factor must have at least one column"));
    }
    let raw = integrate(&mut Factored { spec }, u0.clone(), cfg, horizon)?;
    let last = raw.states.last().cloned().unwrap_or_else(|| u0.clone());
    let traj = Trajectory::assemble(spec, raw, |u| Ok(SymMat::gram(u)))?;
    Ok((traj, last))
}
