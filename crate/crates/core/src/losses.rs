//! Convex objectives over symmetric matrices with exact gradients.
//!
//! All three kinds are quadratic or affine, so values, gradients and the
//! Hessian action are closed-form.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::symmat::SymMat;

/// One linear measurement `y ≈ ⟨W, X⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    x: SymMat,
    y: f64,
    /// Nonzero upper-triangle entries `(i, j, X_ij)` with `i ≤ j`.
    support: Vec<(usize, usize, f64)>,
}

impl Measurement {
    pub fn new(x: SymMat, y: f64) -> Self {
        let d = x.dim();
        let mut support = Vec::new();
        for j in 0..d {
            for i in 0..=j {
                let v = x.get(i, j);
                if v != 0.0 {
                    support.push((i, j, v));
                }
            }
        }
        Self { x, y, support }
    }

    /// Observation of entry `(p, q)`: `X = ½ e_p e_qᵀ + ½ e_q e_pᵀ`.
    pub fn completion(dim: usize, p: usize, q: usize, y: f64) -> Result<Self> {
        if p >= dim || q >= dim {
            return Err(invalid(format!("entry ({p}, {q}) outside a {dim}x{dim} matrix")));
        }
        let mut m = DMatrix::zeros(dim, dim);
        m[(p, q)] += 0.5;
        m[(q, p)] += 0.5;
        Ok(Self::new(SymMat::new(m)?, y))
    }

    pub fn x(&self) -> &SymMat {
        &self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    fn inner(&self, w: &DMatrix<f64>) -> f64 {
        self.support
            .iter()
            .map(|&(i, j, v)| if i == j { v * w[(i, j)] } else { v * (w[(i, j)] + w[(j, i)]) })
            .sum()
    }

    fn accumulate(&self, c: f64, g: &mut DMatrix<f64>) {
        for &(i, j, v) in &self.support {
            g[(i, j)] += c * v;
            if i != j {
                g[(j, i)] += c * v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    /// `½ Σ (⟨W, Xᵢ⟩ − yᵢ)²`
    Sensing(Vec<Measurement>),
    /// `½ ‖W − W*‖²_F`
    FullObservation(SymMat),
    /// `offset − ⟨W, Q⟩`
    Linear { q: SymMat, offset: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    dim: usize,
    kind: LossKind,
}

impl LossSpec {
    pub fn sensing(dim: usize, measurements: Vec<Measurement>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if let Some(m) = measurements.iter().find(|m| m.dim() != dim) {
            return Err(invalid(format!("measurement of dimension {} in a {dim}-dim loss", m.dim())));
        }
        Ok(Self { dim, kind: LossKind::Sensing(measurements) })
    }

    pub fn full_observation(target: SymMat) -> Self {
        Self { dim: target.dim(), kind: LossKind::FullObservation(target) }
    }

    pub fn linear(q: SymMat, offset: f64) -> Self {
        Self { dim: q.dim(), kind: LossKind::Linear { q, offset } }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &LossKind {
        &self.kind
    }

    /// True for losses with a nonzero, constant Hessian (sensing and full
    /// observation); linear losses are affine and unbounded below.
    pub fn is_quadratic(&self) -> bool {
        !matches!(self.kind, LossKind::Linear { .. })
    }

    fn check(&self, rows: usize, cols: usize) -> Result<()> {
        if rows != self.dim || cols != self.dim {
            return Err(invalid(format!(
                "loss of dimension {} evaluated at a {rows}x{cols} matrix",
                self.dim
            )));
        }
        Ok(())
    }

    pub fn value(&self, w: &SymMat) -> Result<f64> {
        self.value_general(w.as_matrix())
    }

    /// Value at a general square matrix (used by the SVD-based depth flows).
    pub fn value_general(&self, w: &DMatrix<f64>) -> Result<f64> {
        self.check(w.nrows(), w.ncols())?;
        Ok(match &self.kind {
            LossKind::Sensing(ms) => {
                0.5 * ms.iter().map(|m| (m.inner(w) - m.y).powi(2)).sum::<f64>()
            }
            LossKind::FullObservation(t) => 0.5 * (w - t.as_matrix()).norm_squared(),
            LossKind::Linear { q, offset } => offset - w.dot(q.as_matrix()),
        })
    }

    pub fn gradient(&self, w: &SymMat) -> Result<SymMat> {
        self.check(w.dim(), w.dim())?;
        // every branch yields an exactly symmetric matrix
        Ok(SymMat::from_symmetric_unchecked(self.gradient_general(w.as_matrix())?))
    }

    pub fn gradient_general(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(w.nrows(), w.ncols())?;
        Ok(match &self.kind {
            LossKind::Sensing(ms) => {
                let mut g = DMatrix::zeros(self.dim, self.dim);
                for m in ms {
                    m.accumulate(m.inner(w) - m.y, &mut g);
                }
                g
            }
            LossKind::FullObservation(t) => w - t.as_matrix(),
            LossKind::Linear { q, .. } => -q.as_matrix(),
        })
    }

    /// Hessian action `D²f[Δ]`, exact for every kind.
    pub fn hessian_apply(&self, delta: &SymMat) -> Result<SymMat> {
        self.check(delta.dim(), delta.dim())?;
        Ok(match &self.kind {
            LossKind::Sensing(ms) => {
                let mut h = DMatrix::zeros(self.dim, self.dim);
                for m in ms {
                    m.accumulate(m.inner(delta.as_matrix()), &mut h);
                }
                SymMat::from_symmetric_unchecked(h)
            }
            LossKind::FullObservation(_) => delta.clone(),
            LossKind::Linear { .. } => SymMat::zeros(self.dim),
        })
    }

    /// `f'(W) = ½(f(W) + f(Wᵀ))`. Every loss here is built from symmetric
    /// matrices and is already transpose-invariant, so this is a copy.
    pub fn symmetrize(&self) -> LossSpec {
        self.clone()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("glrl-loss v1\n");
        let _ = writeln!(out, "dim {}", self.dim);
        let write_rows = |out: &mut String, m: &SymMat| {
            for i in 0..m.dim() {
                let row: Vec<String> = (0..m.dim()).map(|j| format!("{}", m.get(i, j))).collect();
                let _ = writeln!(out, "row {}", row.join(" "));
            }
        };
        match &self.kind {
            LossKind::Sensing(ms) => {
                out.push_str("kind sensing\n");
                for m in ms {
                    let _ = write!(out, "m {}", m.y);
                    for &(i, j, v) in &m.support {
                        let _ = write!(out, " {i} {j} {v}");
                    }
                    out.push('\n');
                }
            }
            LossKind::FullObservation(t) => {
                out.push_str("kind full\n");
                write_rows(&mut out, t);
            }
            LossKind::Linear { q, offset } => {
                out.push_str("kind linear\n");
                let _ = writeln!(out, "offset {offset}");
                write_rows(&mut out, q);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some("glrl-loss v1") {
            return Err(invalid("loss file must start with 'glrl-loss v1'"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| invalid(format!("bad number '{s}'")));
        let idx = |s: &str| s.parse::<usize>().map_err(|_| invalid(format!("bad index '{s}'")));

        let dim = match lines.next().and_then(|l| l.strip_prefix("dim ")) {
            Some(d) => idx(d.trim())?,
            None => return Err(invalid("expected 'dim <d>'")),
        };
        let kind = lines.next().and_then(|l| l.strip_prefix("kind ")).map(str::trim);
        let mut offset = 0.0;
        let mut rows: Vec<f64> = Vec::new();
        let mut measurements = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("m") => {
                    let y = num(it.next().ok_or_else(|| invalid("measurement without value"))?)?;
                    let rest: Vec<&str> = it.collect();
                    if !rest.len().is_multiple_of(3) {
                        return Err(invalid("measurement entries must be 'i j value' triples"));
                    }
                    let mut x = DMatrix::zeros(dim, dim);
                    for t in rest.chunks(3) {
                        let (i, j, v) = (idx(t[0])?, idx(t[1])?, num(t[2])?);
                        if i >= dim || j >= dim {
                            return Err(invalid(format!("entry ({i}, {j}) out of range")));
                        }
                        x[(i, j)] = v;
                        x[(j, i)] = v;
                    }
                    measurements.push(Measurement::new(SymMat::new(x)?, y));
                }
                Some("row") => {
                    for v in it {
                        rows.push(num(v)?);
                    }
                }
                Some("offset") => {
                    offset = num(it.next().ok_or_else(|| invalid("offset without value"))?)?;
                }
                Some(other) => return Err(invalid(format!("unknown loss line '{other}'"))),
                None => {}
            }
        }
        match kind {
            Some("sensing") => Self::sensing(dim, measurements),
            Some("full") => Ok(Self::full_observation(SymMat::from_row_slice(dim, &rows)?)),
            Some("linear") => Ok(Self::linear(SymMat::from_row_slice(dim, &rows)?, offset)),
            _ => Err(invalid("expected 'kind sensing|full|linear'")),
        }
    }
}

/// Observed entries of the 4×4 completion counterexample (0-based).
pub const COUNTEREXAMPLE_OMEGA: [(usize, usize); 6] = [(0, 2), (0, 3), (1, 2), (2, 0), (2, 1), (3, 0)];

/// Observed value of the 4×4 counterexample at `(i, j)`: 1 on the two
/// (1,3)/(3,1) positions, `R` elsewhere in Ω.
pub(crate) fn counterexample_value(r: f64, i: usize, j: usize) -> f64 {
    if (i, j) == (0, 2) || (i, j) == (2, 0) {
        1.0
    } else {
        r
    }
}

/// `f(W) = ½ Σ_{(i,j)∈Ω} (W_ij − M_ij)²` for the 4×4 counterexample. Each
/// ordered pair in Ω is its own symmetrized measurement, so both `(i, j)` and
/// `(j, i)` contribute.
pub fn build_counterexample_loss(r: f64) -> Result<LossSpec> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(invalid(format!("R must be a finite number above 1, got {r}")));
    }
    let ms = COUNTEREXAMPLE_OMEGA
        .iter()
        .map(|&(i, j)| Measurement::completion(4, i, j, counterexample_value(r, i, j)))
        .collect::<Result<Vec<_>>>()?;
    LossSpec::sensing(4, ms)
}
