//! CSV writers. Floats are printed in `{:.16e}` form (17 significant digits),
//! so a value read back is bit-identical.

use std::path::Path;

use crate::dynamics::{KernelTrajectory, Termination, Trajectory};
use crate::error::Result;
use crate::symmat::SymMat;

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

pub fn termination_label(t: &Termination) -> &'static str {
    match t {
        Termination::Horizon => "horizon",
        Termination::Stationary => "stationary",
        Termination::MaxSteps => "max_steps",
        Termination::Diverged { .. } => "diverged",
    }
}

fn header(d: usize, spectrum: &str, with_ref: bool) -> Vec<String> {
    let mut h = vec!["time".to_string(), "loss".into(), "grad_norm".into()];
    h.extend((1..=d).map(|k| format!("{spectrum}_{k}")));
    h.extend((1..=d).map(|k| format!("lowrank_{k}")));
    if with_ref {
        h.push("dist_to_ref".into());
    }
    h
}

/// `time, loss, grad_norm, lambda_1..d, lowrank_1..d[, dist_to_ref]`, one row per record.
pub fn write_trajectory(path: &Path, traj: &Trajectory, dist_to_ref: Option<&[f64]>) -> Result<()> {
    let d = traj.dim().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(d, "lambda", dist_to_ref.is_some()))?;
    for (k, (t, diag)) in traj.times.iter().zip(&traj.diagnostics).enumerate() {
        let mut row = vec![fmt_f64(*t), fmt_f64(diag.loss), fmt_f64(diag.grad_norm)];
        row.extend(diag.eigenvalues.iter().map(|&x| fmt_f64(x)));
        row.extend(diag.low_rankness.iter().map(|&x| fmt_f64(x)));
        if let Some(dist) = dist_to_ref {
            row.push(fmt_f64(dist[k]));
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Kernel runs store singular values, so the spectrum columns are `sigma_k`.
pub fn write_kernel_trajectory(path: &Path, traj: &KernelTrajectory) -> Result<()> {
    let d = traj.states.first().map_or(0, |m| m.nrows());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(d, "sigma", false))?;
    for k in 0..traj.times.len() {
        let sv = &traj.singular_values[k];
        let mut row = vec![fmt_f64(traj.times[k]), fmt_f64(traj.losses[k]), fmt_f64(traj.grad_norms[k])];
        row.extend(sv.iter().map(|&x| fmt_f64(x)));
        row.extend((1..=d).map(|r| fmt_f64(sv[r.min(d)..].iter().map(|s| s * s).sum::<f64>().sqrt())));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// `time, w_1_1, w_1_2, …` with the full state row-major.
pub fn write_states(path: &Path, times: &[f64], states: &[SymMat]) -> Result<()> {
    let d = states.first().map_or(0, SymMat::dim);
    let mut w = csv::Writer::from_path(path)?;
    let mut h = vec!["time".to_string()];
    for i in 1..=d {
        h.extend((1..=d).map(|j| format!("w_{i}_{j}")));
    }
    w.write_record(h)?;
    for (t, s) in times.iter().zip(states) {
        let m = s.as_matrix();
        let mut row = vec![fmt_f64(*t)];
        for i in 0..d {
            row.extend((0..d).map(|j| fmt_f64(m[(i, j)])));
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_states`].
pub fn read_states(path: &Path) -> Result<(Vec<f64>, Vec<SymMat>)> {
    let mut r = csv::Reader::from_path(path)?;
    let n = r.headers()?.len();
    let d = (1..=n).find(|d| d * d + 1 == n).ok_or_else(|| {
        crate::error::invalid(format!("{}: {n} columns is not 1 + d² for any d", path.display()))
    })?;
    let (mut times, mut states) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let vals = parse_record(&rec?)?;
        times.push(vals[0]);
        states.push(SymMat::from_row_slice(d, &vals[1..])?);
    }
    Ok((times, states))
}

fn parse_record(rec: &csv::StringRecord) -> Result<Vec<f64>> {
    rec.iter()
        .map(|s| s.trim().parse::<f64>().map_err(|_| crate::error::invalid(format!("bad number '{s}'"))))
        .collect()
}

/// Headerless, one matrix row per line.
pub fn write_matrix(path: &Path, m: &SymMat) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    let a = m.as_matrix();
    for i in 0..a.nrows() {
        w.write_record((0..a.ncols()).map(|j| fmt_f64(a[(i, j)])))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<SymMat> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        rows.push(parse_record(&rec?)?);
    }
    let d = rows.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(crate::error::invalid(format!("{} is not a square matrix", path.display())));
    }
    SymMat::from_row_slice(d, &rows.concat())
}

/// Plain table with a header; cells are already formatted.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of `summary.csv`; `None` fields are written empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub phase: usize,
    pub rank: Option<usize>,
    pub steps: Option<usize>,
    pub final_time: Option<f64>,
    pub termination: String,
    pub loss: f64,
    pub grad_norm: Option<f64>,
    pub escape_eigenvalue: Option<f64>,
    pub nuclear_norm: Option<f64>,
    pub test_loss: Option<f64>,
    pub converged: Option<bool>,
}

pub const SUMMARY_HEADER: [&str; 12] = [
    "algorithm",
    "phase",
    "rank",
    "steps",
    "final_time",
    "termination",
    "loss",
    "grad_norm",
    "escape_eigenvalue",
    "nuclear_norm",
    "test_loss",
    "converged",
];

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.algorithm.clone(),
            r.phase.to_string(),
            r.rank.map(|x| x.to_string()).unwrap_or_default(),
            r.steps.map(|x| x.to_string()).unwrap_or_default(),
            opt(r.final_time),
            r.termination.clone(),
            fmt_f64(r.loss),
            opt(r.grad_norm),
            opt(r.escape_eigenvalue),
            opt(r.nuclear_norm),
            opt(r.test_loss),
            r.converged.map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
