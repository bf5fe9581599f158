//! The 4×4 completion instance on which small-initialization gradient flow
//! does not find the minimum nuclear norm solution, and the deep diagonal
//! instance whose first escape direction is not the top eigenvector.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::analysis::state_alignment;
use crate::dynamics::integrate::{integrate, Flow};
use crate::dynamics::{
    deep_diag_blow_up_time, flow_deep, flow_depth2, IntegratorConfig, Termination, Trajectory,
};
use crate::error::{invalid, Error, Result};
use crate::losses::{build_counterexample_loss, LossSpec};
use crate::par::par_map;
use crate::rng::{gaussian_matrix, Stream, StreamRng};
use crate::symmat::SymMat;

#[derive(Debug, Clone)]
pub struct Counterexample4x4 {
    pub r: f64,
    /// Minimum nuclear norm completion, rank 2, `‖·‖* = 4R`.
    pub m_norm: SymMat,
    /// `(1,R,1,R)(1,R,1,R)ᵀ`, `‖·‖* = 2R² + 2`.
    pub m_rank: SymMat,
    pub loss: LossSpec,
}

pub fn build_4x4(r: f64) -> Result<Counterexample4x4> {
    let loss = build_counterexample_loss(r)?;
    #[rustfmt::skip]
    let m_norm = SymMat::from_row_slice(4, &[
        r, 1.0, 1.0, r,
        1.0, r, r, 1.0,
        1.0, r, r, 1.0,
        r, 1.0, 1.0, r,
    ])?;
    let m_rank = SymMat::outer(&DVector::from_vec(vec![1.0, r, 1.0, r]), 1.0);
    for (name, m, nuc) in [("M_norm", &m_norm, 4.0 * r), ("M_rank", &m_rank, 2.0 * r * r + 2.0)] {
        let f = loss.value(m)?;
        if f != 0.0 {
            return Err(invalid(format!("{name} is not feasible: f = {f:e}")));
        }
        let got = m.nuclear_norm()?;
        if (got - nuc).abs() > 1e-9 * nuc {
            return Err(invalid(format!("{name} has nuclear norm {got}, expected {nuc}")));
        }
        if m.min_eigenvalue()? < -1e-9 * nuc {
            return Err(invalid(format!("{name} is not PSD")));
        }
    }
    Ok(Counterexample4x4 { r, m_norm, m_rank, loss })
}

#[derive(Debug, Clone)]
pub struct RefutationRun {
    pub scale: f64,
    pub final_state: SymMat,
    pub final_time: f64,
    pub termination: Termination,
    pub dist_to_rank: f64,
    pub dist_to_norm: f64,
    pub nuclear_norm: f64,
}

#[derive(Debug, Clone)]
pub struct RefutationReport {
    pub runs: Vec<RefutationRun>,
    /// At the smallest scale the limit is closer to `M_rank` than to
    /// `M_norm`, and its nuclear norm is at least `40R`.
    pub pass: bool,
}

/// Runs the depth-2 flow from `scale · I` for every scale, until the
/// stopping rule in `cfg` or `horizon`.
pub fn verify_gf_refutes_conjecture(
    ce: &Counterexample4x4,
    scales: &[f64],
    cfg: &IntegratorConfig,
    horizon: f64,
) -> Result<RefutationReport> {
    if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0)) {
        return Err(invalid("scales must be a non-empty list of positive numbers"));
    }
    cfg.validate()?;
    let runs = par_map(scales.to_vec(), |scale| -> Result<RefutationRun> {
        let w0 = SymMat::identity(4).scale(scale);
        let traj = flow_depth2(&ce.loss, &w0, cfg, horizon)?.into_result()?;
        let w = traj.final_state().expect("non-empty trajectory").clone();
        Ok(RefutationRun {
            scale,
            final_time: traj.final_time().unwrap_or(0.0),
            termination: traj.termination,
            dist_to_rank: (&w - &ce.m_rank).frobenius_norm(),
            dist_to_norm: (&w - &ce.m_norm).frobenius_norm(),
            nuclear_norm: w.nuclear_norm()?,
            final_state: w,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let smallest = runs.iter().min_by(|a, b| a.scale.total_cmp(&b.scale)).expect("non-empty");
    let pass = smallest.dist_to_rank < smallest.dist_to_norm && smallest.nuclear_norm >= 10.0 * 4.0 * ce.r;
    Ok(RefutationReport { runs, pass })
}

/// Top eigenvector of `[[1, R], [R, 0]]`, with positive entries.
pub fn xy_direction(r: f64) -> Result<DVector<f64>> {
    let a = SymMat::from_row_slice(2, &[1.0, r, r, 0.0])?;
    let v = a.top_eigpair()?.vector;
    Ok(if v[0] < 0.0 { -v } else { v })
}

/// `g(x, y) = ½(x² − 1)² + (xy − R)²`
pub fn xy_energy(r: f64, x: f64, y: f64) -> f64 {
    0.5 * (x * x - 1.0).powi(2) + (x * y - r).powi(2)
}

/// Rank-one reduction of the depth-2 flow: with `U = (x, y, x, y)ᵀ`,
/// `dU/dt = −∇f(UUᵀ)U` is `ẋ = (1 − x²)x − y(xy − R)`, `ẏ = −x(xy − R)`,
/// which is `−½∇g`.
struct XyFlow {
    r: f64,
}

impl Flow for XyFlow {
    type S = DMatrix<f64>;

    fn rhs(&mut self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (x, y) = (s[0], s[1]);
        let c = x * y - self.r;
        Ok(DMatrix::from_column_slice(2, 1, &[(1.0 - x * x) * x - y * c, -x * c]))
    }

    fn end_to_end_norm_bound(&self, s: &DMatrix<f64>) -> f64 {
        2.0 * s.norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XyTrajectory {
    pub r: f64,
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub energies: Vec<f64>,
    pub termination: Termination,
    pub steps: usize,
}

impl XyTrajectory {
    /// `(x,y,x,y)(x,y,x,y)ᵀ` at record `k`.
    pub fn lifted(&self, k: usize) -> SymMat {
        let (x, y) = (self.xs[k], self.ys[k]);
        SymMat::outer(&DVector::from_vec(vec![x, y, x, y]), 1.0)
    }

    /// Starting matrix of the equivalent 4×4 flow, `2ε·û₁û₁ᵀ` for the unit
    /// escape direction `û₁`.
    pub fn lifted_start(&self) -> SymMat {
        self.lifted(0)
    }
}

/// Integrates the planar reduction from `√ε · v₁`.
pub fn xy_oracle(r: f64, eps: f64, horizon: f64, cfg: &IntegratorConfig) -> Result<XyTrajectory> {
    if !(eps > 0.0) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    if !(r > 1.0) {
        return Err(invalid(format!("R must exceed 1, got {r}")));
    }
    cfg.validate()?;
    let v = xy_direction(r)? * eps.sqrt();
    let raw = integrate(&mut XyFlow { r }, DMatrix::from_column_slice(2, 1, v.as_slice()), cfg, horizon)?;
    if let Termination::Diverged { time } = raw.termination {
        return Err(Error::Diverged { time });
    }
    let xs: Vec<f64> = raw.states.iter().map(|s| s[0]).collect();
    let ys: Vec<f64> = raw.states.iter().map(|s| s[1]).collect();
    let energies = xs.iter().zip(&ys).map(|(x, y)| xy_energy(r, *x, *y)).collect();
    Ok(XyTrajectory { r, times: raw.times, xs, ys, energies, termination: raw.termination, steps: raw.steps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepEscapeInstance {
    /// Stored with the sign of the listed diagonal, `(2, 0.9, 0.8, …, 0.1)`;
    /// the flow uses `−grad0` as the descent direction at the origin.
    pub grad0: SymMat,
    pub w0: SymMat,
    pub alpha: f64,
    pub depth: usize,
}

impl DeepEscapeInstance {
    /// `W(0)₂₂ = 16α`, other diagonal entries `Unif[0.9, 1.1]·α`.
    pub fn new(alpha: f64, seed: u64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        let mut grad = vec![2.0];
        grad.extend((1..10).rev().map(|k| k as f64 / 10.0));
        let mut rng = StreamRng::new(seed, Stream::Init);
        let w: Vec<f64> = (0..10)
            .map(|i| if i == 1 { 16.0 * alpha } else { rng.random_range(0.9..=1.1) * alpha })
            .collect();
        Ok(Self { grad0: SymMat::from_diagonal(&grad), w0: SymMat::from_diagonal(&w), alpha, depth: 4 })
    }

    pub fn paper(seed: u64) -> Result<Self> {
        Self::new(1e-16, seed)
    }

    /// Same construction at `α = 1e−8`; the flow from `αW` is the flow
    /// from `W` with time scaled by `α^{−(P−1)}`, so only the clock changes.
    pub fn rescaled(seed: u64) -> Result<Self> {
        Self::new(1e-8, seed)
    }

    pub fn loss(&self) -> LossSpec {
        LossSpec::linear(self.grad0.clone(), 0.0)
    }

    pub fn m0(&self) -> Vec<f64> {
        let p = 2.0 / self.depth as f64;
        self.w0.diagonal().iter().map(|w| w.powf(p)).collect()
    }

    /// Closed-form blow-up time of each diagonal entry of `M`,
    /// `(2 M(0)ᵢᵢ μᵢ)⁻¹` at depth 4.
    pub fn blow_up_times(&self) -> Vec<Option<f64>> {
        let p = self.depth as f64 / 2.0;
        self.m0().iter().zip(self.grad0.diagonal()).map(|(m, mu)| deep_diag_blow_up_time(*m, mu, p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyEscapeRun {
    pub noise_eps: f64,
    pub seed: u64,
    /// `‖W(t)‖_F / ‖W(0)‖_F`
    pub growth: Vec<f64>,
    /// `|⟨e₁, top eigenvector of W(t)⟩|`
    pub alignment: Vec<f64>,
    pub final_alignment: f64,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepEscapeReport {
    pub blow_up_times: Vec<Option<f64>>,
    /// Index (0-based) of the entry that blows up first.
    pub first_index: usize,
    pub first_is_strict: bool,
    pub runs: Vec<NoisyEscapeRun>,
}

impl DeepEscapeReport {
    pub fn final_alignment(&self, noise_eps: f64, seed: u64) -> Option<f64> {
        self.runs.iter().find(|r| r.noise_eps == noise_eps && r.seed == seed).map(|r| r.final_alignment)
    }
}

/// `W(0) + (αε/2)(Z + Zᵀ)` with standard normal `Z`.
pub fn noisy_start(inst: &DeepEscapeInstance, noise_eps: f64, seed: u64) -> Result<SymMat> {
    let d = inst.w0.dim();
    let z = gaussian_matrix(d, d, &mut StreamRng::new(seed, Stream::Noise));
    let noise = (&z + z.transpose()) * (0.5 * inst.alpha * noise_eps);
    SymMat::new(inst.w0.as_matrix() + noise)
}

/// Blow-up ordering from the closed form, then one deep flow per
/// `(noise, seed)` pair run up to the overflow guard in `cfg`.
pub fn deep_escape_demo(
    inst: &DeepEscapeInstance,
    noise_eps: &[f64],
    seeds: &[u64],
    cfg: &IntegratorConfig,
) -> Result<DeepEscapeReport> {
    cfg.validate()?;
    let blow_up_times = inst.blow_up_times();
    let mut order: Vec<(usize, f64)> =
        blow_up_times.iter().enumerate().filter_map(|(i, t)| t.map(|t| (i, t))).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1));
    let first_index = order.first().map(|p| p.0).ok_or_else(|| invalid("no entry blows up"))?;
    let first_is_strict = order.len() < 2 || order[0].1 < order[1].1;

    let spec = inst.loss();
    let e1 = {
        let mut v = DVector::zeros(inst.w0.dim());
        v[0] = 1.0;
        v
    };
    let jobs: Vec<(f64, u64)> = noise_eps.iter().flat_map(|e| seeds.iter().map(move |s| (*e, *s))).collect();
    let runs = par_map(jobs, |(eps, seed)| -> Result<NoisyEscapeRun> {
        let w0 = noisy_start(inst, eps, seed)?;
        let traj = flow_deep(&spec, &w0, inst.depth, cfg, f64::INFINITY)?;
        let n0 = w0.frobenius_norm();
        let growth = traj.states.iter().map(|w| w.frobenius_norm() / n0).collect();
        let alignment: Vec<f64> = traj.states.iter().map(|w| state_alignment(w, &e1)).collect::<Result<_>>()?;
        Ok(NoisyEscapeRun {
            noise_eps: eps,
            seed,
            growth,
            final_alignment: *alignment.last().unwrap_or(&0.0),
            alignment,
            termination: traj.termination,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(DeepEscapeReport { blow_up_times, first_index, first_is_strict, runs })
}

#[derive(Debug, Clone)]
pub struct Rank1EscapeReport {
    pub trajectory: Trajectory,
    /// `|⟨v₁, top eigenvector of W(t)⟩|`
    pub alignment: Vec<f64>,
    pub final_alignment: f64,
}

/// Deep flow from `M(0) = u₀u₀ᵀ` under the linear loss with gradient
/// `grad0`, tracking alignment with the top eigenvector `v₁` of `−grad0`.
pub fn rank1_escape_invariance(
    dim: usize,
    depth: usize,
    grad0: &SymMat,
    u0: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> Result<Rank1EscapeReport> {
    if grad0.dim() != dim || u0.len() != dim {
        return Err(invalid(format!("expected dimension {dim}")));
    }
    if u0.norm() == 0.0 {
        return Err(invalid("u0 must be nonzero"));
    }
    let v1 = (-grad0).top_eigpair()?.vector;
    if v1.dot(u0).abs() <= 1e-12 * u0.norm() {
        return Err(Error::NoAlignment);
    }
    let spec = LossSpec::linear(-grad0, 0.0);
    let w0 = SymMat::outer(u0, u0.norm().powi(depth as i32 - 2));
    let trajectory = if depth == 2 {
        flow_depth2(&spec, &w0, cfg, f64::INFINITY)?
    } else {
        flow_deep(&spec, &w0, depth, cfg, f64::INFINITY)?
    };
    let alignment: Vec<f64> = trajectory.states.iter().map(|w| state_alignment(w, &v1)).collect::<Result<_>>()?;
    let final_alignment = *alignment.last().unwrap_or(&0.0);
    Ok(Rank1EscapeReport { trajectory, alignment, final_alignment })
}
