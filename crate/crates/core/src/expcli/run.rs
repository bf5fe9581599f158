//! Running one [`ExperimentConfig`] end to end.
//!
//! Every run writes into its own directory:
//!
//! - `config.toml`: the resolved config, including the rng tag
//! - `summary.csv`: one row per phase (GLRL, R1MP) or one row per run
//! - `trajectory.csv` (GD, kernel-depth) or `trajectory_rank<r>.csv` per GLRL phase
//! - `estimate.csv`: the final matrix
//! - `states.csv` / `states_rank<r>.csv` when `save_states` is set
//! - `ground_truth.csv` for random instances

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::config::{Algorithm, ExperimentConfig, InitShape, LossChoice, Reference};
use super::gen::{test_loss, CompletionInstance};
use super::output::{
    termination_label, write_kernel_trajectory, write_matrix, write_states, write_summary, write_trajectory, SummaryRow,
};
use crate::analysis::states_set_distance;
use crate::baselines::{nuclear_min, r1mp_run, ProxConfig};
use crate::dynamics::{
    balanced_init, flow_kernel_depth, gd_deep_factored, gd_factored, DeepFactorState, Depth, Termination, Trajectory,
};
use crate::error::{Error, Result};
use crate::glrl::{deep_glrl_run, glrl_run, GlrlConfig, GlrlReport};
use crate::losses::{build_counterexample_loss, LossSpec};
use crate::rng::{gaussian_matrix, Stream, StreamRng};
use crate::symmat::SymMat;

/// Exit codes of the `glrl` binary.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Config(_) | Error::InvalidInput(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub loss: LossSpec,
    /// Absent for the 4×4 counterexample.
    pub w_star: Option<SymMat>,
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    match cfg.loss {
        LossChoice::Completion => {
            let inst = CompletionInstance::generate(cfg.seed, cfg.dim, cfg.rank, cfg.observe_prob, cfg.frob_norm)?;
            Ok(Problem { loss: inst.loss, w_star: Some(inst.w_star) })
        }
        LossChoice::FullObservation => {
            let inst = CompletionInstance::generate(cfg.seed, cfg.dim, cfg.rank, 1.0, cfg.frob_norm)?;
            Ok(Problem { loss: LossSpec::full_observation(inst.w_star.clone()), w_star: Some(inst.w_star) })
        }
        LossChoice::Counterexample => {
            Ok(Problem { loss: build_counterexample_loss(cfg.counterexample_r)?, w_star: None })
        }
    }
}

/// PSD initial point for the configured shape.
pub fn initial_point(cfg: &ExperimentConfig, loss: &LossSpec) -> Result<SymMat> {
    let d = loss.dim();
    match cfg.init {
        InitShape::Identity => Ok(SymMat::identity(d).scale(cfg.init_scale)),
        InitShape::Random => {
            let state = balanced_init(d, cfg.depth.max(2), cfg.init_scale, &mut StreamRng::new(cfg.seed, Stream::Init))?;
            SymMat::new(state.end_to_end())
        }
        InitShape::Rank1TopEig => {
            let top = (-&loss.gradient(&SymMat::zeros(d))?).top_eigpair()?;
            Ok(SymMat::outer(&top.vector, cfg.init_scale))
        }
    }
}

/// Balanced factors for GD; random starts come straight from [`balanced_init`],
/// the others use `W(0)^{1/L}` for every factor.
fn initial_factors(cfg: &ExperimentConfig, loss: &LossSpec) -> Result<DeepFactorState> {
    if cfg.init == InitShape::Random {
        return balanced_init(loss.dim(), cfg.depth, cfg.init_scale, &mut StreamRng::new(cfg.seed, Stream::Init));
    }
    let w0 = initial_point(cfg, loss)?;
    let root = w0.frac_power(1.0 / cfg.depth as f64)?.into_matrix();
    let tol = 1e-12 * w0.frobenius_norm().powf(2.0 / cfg.depth as f64).max(1.0);
    DeepFactorState::new(vec![root; cfg.depth], tol)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub summary: Vec<SummaryRow>,
    pub estimate: SymMat,
    pub diverged_at: Option<f64>,
}

fn glrl_config(cfg: &ExperimentConfig, depth: usize) -> Result<GlrlConfig> {
    let mut g = GlrlConfig::new(cfg.epsilon, cfg.integrator()?)
        .with_depth(depth)
        .with_exit_tol(cfg.exit_tol)
        .with_phase_horizon(cfg.horizon);
    if cfg.max_rank > 0 {
        g = g.with_max_rank(cfg.max_rank);
    }
    if cfg.stop_grad_norm > 0.0 {
        g = g.with_stop_grad_norm(cfg.stop_grad_norm);
    }
    Ok(g)
}

fn reference_states(cfg: &ExperimentConfig, problem: &Problem) -> Result<Option<Vec<SymMat>>> {
    match cfg.reference {
        Reference::None => Ok(None),
        Reference::GroundTruth => match &problem.w_star {
            Some(w) => Ok(Some(vec![w.clone()])),
            None => Err(Error::Config("the counterexample loss has no ground truth reference".into())),
        },
        Reference::Glrl => {
            let report = glrl_run(&problem.loss, &glrl_config(cfg, 2)?)?;
            Ok(Some(report.phases.into_iter().flat_map(|p| p.trajectory.states).collect()))
        }
    }
}

fn nuclear(w: &SymMat) -> Result<f64> {
    w.nuclear_norm()
}

fn trajectory_row(cfg: &ExperimentConfig, problem: &Problem, traj: &Trajectory, phase: usize) -> Result<SummaryRow> {
    let last = traj.final_state().ok_or_else(|| Error::InvalidInput("empty trajectory".into()))?;
    let diag = traj.diagnostics.last().expect("diagnostics recorded with states");
    Ok(SummaryRow {
        algorithm: cfg.algorithm.to_string(),
        phase,
        rank: None,
        steps: Some(traj.steps),
        final_time: traj.final_time(),
        termination: termination_label(&traj.termination).into(),
        loss: diag.loss,
        grad_norm: Some(diag.grad_norm),
        escape_eigenvalue: None,
        nuclear_norm: Some(nuclear(last)?),
        test_loss: problem.w_star.as_ref().map(|w| test_loss(last, w)),
        converged: None,
    })
}

fn write_traj_files(
    dir: &Path,
    suffix: &str,
    cfg: &ExperimentConfig,
    traj: &Trajectory,
    reference: Option<&[SymMat]>,
) -> Result<()> {
    let dist = reference.map(|r| states_set_distance(&traj.states, r)).transpose()?;
    write_trajectory(&dir.join(format!("trajectory{suffix}.csv")), traj, dist.as_deref())?;
    if cfg.save_states {
        write_states(&dir.join(format!("states{suffix}.csv")), &traj.times, &traj.states)?;
    }
    Ok(())
}

fn diverged_time(t: &Termination) -> Option<f64> {
    match t {
        Termination::Diverged { time } => Some(*time),
        _ => None,
    }
}

fn glrl_outputs(
    cfg: &ExperimentConfig,
    problem: &Problem,
    report: &GlrlReport,
    dir: &Path,
    reference: Option<&[SymMat]>,
) -> Result<(Vec<SummaryRow>, Option<f64>)> {
    let mut rows = Vec::new();
    let mut diverged = None;
    for p in &report.phases {
        write_traj_files(dir, &format!("_rank{}", p.rank), cfg, &p.trajectory, reference)?;
        let mut row = trajectory_row(cfg, problem, &p.trajectory, p.rank)?;
        row.rank = Some(p.rank);
        row.escape_eigenvalue = Some(p.escape_eigenvalue);
        row.grad_norm = Some(p.final_grad_norm);
        row.converged = Some(p.converged);
        row.loss = problem.loss.value(&p.critical_point)?;
        row.nuclear_norm = Some(nuclear(&p.critical_point)?);
        row.test_loss = problem.w_star.as_ref().map(|w| test_loss(&p.critical_point, w));
        rows.push(row);
        diverged = diverged.or(diverged_time(&p.termination));
    }
    let t = &report.terminal;
    rows.push(SummaryRow {
        algorithm: cfg.algorithm.to_string(),
        phase: report.phases.len() + 1,
        rank: Some(report.phases.len()),
        termination: if t.rank_budget_exhausted { "rank_budget".into() } else { "exit".into() },
        loss: problem.loss.value(&t.final_w)?,
        escape_eigenvalue: Some(t.final_lambda1),
        nuclear_norm: Some(nuclear(&t.final_w)?),
        test_loss: problem.w_star.as_ref().map(|w| test_loss(&t.final_w, w)),
        converged: Some(t.converged),
        ..SummaryRow::default()
    });
    Ok((rows, diverged))
}

/// Runs `cfg` and writes its outputs. A diverged trajectory still writes
/// everything, then returns [`Error::Diverged`].
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    let problem = build_problem(cfg)?;
    if let Some(w) = &problem.w_star {
        write_matrix(&dir.join("ground_truth.csv"), w)?;
    }
    let reference = reference_states(cfg, &problem)?;
    let reference = reference.as_deref();
    let horizon = cfg.horizon;

    let (summary, estimate, diverged_at) = match cfg.algorithm {
        Algorithm::Gd => {
            let state = initial_factors(cfg, &problem.loss)?;
            let traj = if cfg.depth == 2 {
                gd_factored(&problem.loss, &state.factors()[0], &cfg.integrator()?, horizon)?
            } else {
                gd_deep_factored(&problem.loss, &state, &cfg.integrator()?, horizon)?
            };
            write_traj_files(&dir, "", cfg, &traj, reference)?;
            let row = trajectory_row(cfg, &problem, &traj, 1)?;
            let est = traj.final_state().cloned().expect("nonempty trajectory");
            (vec![row], est, diverged_time(&traj.termination))
        }
        Algorithm::Glrl | Algorithm::DeepGlrl => {
            let report = if cfg.algorithm == Algorithm::Glrl {
                glrl_run(&problem.loss, &glrl_config(cfg, 2)?)?
            } else {
                deep_glrl_run(&problem.loss, &glrl_config(cfg, cfg.depth)?)?
            };
            let (rows, div) = glrl_outputs(cfg, &problem, &report, &dir, reference)?;
            (rows, report.terminal.final_w.clone(), div)
        }
        Algorithm::R1mp => {
            let max_rank = if cfg.max_rank > 0 { cfg.max_rank } else { problem.loss.dim() };
            let res = r1mp_run(&problem.loss, max_rank, cfg.exit_tol)?;
            let mut rows = Vec::new();
            for (k, h) in res.history.iter().enumerate() {
                rows.push(SummaryRow {
                    algorithm: cfg.algorithm.to_string(),
                    phase: k + 1,
                    rank: Some(h.rank),
                    termination: "refit".into(),
                    loss: h.loss,
                    escape_eigenvalue: Some(h.escape_eigenvalue),
                    ..SummaryRow::default()
                });
            }
            rows.push(SummaryRow {
                algorithm: cfg.algorithm.to_string(),
                phase: res.history.len() + 1,
                rank: Some(res.history.len()),
                termination: "exit".into(),
                loss: problem.loss.value(&res.estimate)?,
                escape_eigenvalue: Some(res.final_lambda1),
                nuclear_norm: Some(nuclear(&res.estimate)?),
                test_loss: problem.w_star.as_ref().map(|w| test_loss(&res.estimate, w)),
                converged: Some(res.final_lambda1 <= cfg.exit_tol),
                ..SummaryRow::default()
            });
            (rows, res.estimate, None)
        }
        Algorithm::NuclearMin => {
            let res = nuclear_min(&problem.loss, &ProxConfig::default())?;
            let row = SummaryRow {
                algorithm: cfg.algorithm.to_string(),
                phase: 1,
                steps: None,
                termination: "path".into(),
                loss: res.loss,
                nuclear_norm: Some(res.nuclear_norm),
                test_loss: problem.w_star.as_ref().map(|w| test_loss(&res.estimate, w)),
                ..SummaryRow::default()
            };
            (vec![row], res.estimate, None)
        }
        Algorithm::KernelDepth => {
            let d = problem.loss.dim();
            let w0 = match cfg.init {
                InitShape::Random => {
                    let g = gaussian_matrix(d, d, &mut StreamRng::new(cfg.seed, Stream::Init));
                    let n = g.norm();
                    g * (cfg.init_scale / n)
                }
                _ => initial_point(cfg, &problem.loss)?.into_matrix(),
            };
            let depth = if cfg.depth == 0 { Depth::Infinite } else { Depth::Finite(cfg.depth) };
            let traj = flow_kernel_depth(&problem.loss, &w0, depth, &cfg.integrator()?, horizon)?;
            write_kernel_trajectory(&dir.join("trajectory.csv"), &traj)?;
            let last: DMatrix<f64> = traj.states.last().cloned().expect("nonempty trajectory");
            let sym = SymMat::new((&last + last.transpose()) * 0.5)?;
            let row = SummaryRow {
                algorithm: cfg.algorithm.to_string(),
                phase: 1,
                steps: Some(traj.steps),
                final_time: traj.times.last().copied(),
                termination: termination_label(&traj.termination).into(),
                loss: *traj.losses.last().expect("nonempty trajectory"),
                grad_norm: traj.grad_norms.last().copied(),
                nuclear_norm: traj.singular_values.last().map(|s| s.iter().sum()),
                test_loss: problem.w_star.as_ref().map(|w| test_loss(&sym, w)),
                ..SummaryRow::default()
            };
            (vec![row], sym, diverged_time(&traj.termination))
        }
    };
    write_summary(&dir.join("summary.csv"), &summary)?;
    write_matrix(&dir.join("estimate.csv"), &estimate)?;
    if let Some(time) = diverged_at {
        return Err(Error::Diverged { time });
    }
    Ok(RunOutput { dir, summary, estimate, diverged_at })
}
