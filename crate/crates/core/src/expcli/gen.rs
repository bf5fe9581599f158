//! Synthetic low-rank ground truths and entry observations.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::losses::{LossSpec, Measurement};
use crate::rng::{random_orthogonal, Stream, StreamRng};
use crate::symmat::SymMat;

/// `W* = U S Uᵀ` with Haar `U` and `r` nonzero entries `|N(0,1)|` in `S`,
/// rescaled to `‖W*‖_F = frob_norm`.
pub fn gen_ground_truth<R: RngCore + ?Sized>(d: usize, rank: usize, frob_norm: f64, rng: &mut R) -> Result<SymMat> {
    if d == 0 || rank == 0 || rank > d {
        return Err(invalid(format!("need 1 ≤ rank ≤ dim, got rank {rank} and dim {d}")));
    }
    if !(frob_norm > 0.0 && frob_norm.is_finite()) {
        return Err(invalid(format!("frob_norm must be positive, got {frob_norm}")));
    }
    let u = random_orthogonal(d, rng);
    let mut s: Vec<f64> = (0..rank).map(|_| StandardNormal.sample(rng)).map(|x: f64| x.abs()).collect();
    let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut s {
        *x *= frob_norm / norm;
    }
    let cols = u.columns(0, rank);
    let scaled = cols * nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s));
    SymMat::new(scaled * cols.transpose())
}

/// Each unordered pair `i ≤ j` is observed with probability `p`, as the
/// symmetrized measurement `½(eᵢeⱼᵀ + eⱼeᵢᵀ)` with value `W*ᵢⱼ`.
pub fn gen_measurements<R: RngCore + ?Sized>(w_star: &SymMat, p: f64, rng: &mut R) -> Result<Vec<Measurement>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid(format!("observation probability must lie in (0, 1], got {p}")));
    }
    let d = w_star.dim();
    let mut out = Vec::new();
    for j in 0..d {
        for i in 0..=j {
            if rng.random::<f64>() < p {
                out.push(Measurement::completion(d, i, j, w_star.get(i, j))?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CompletionInstance {
    pub w_star: SymMat,
    pub loss: LossSpec,
}

impl CompletionInstance {
    /// Ground truth and measurements from their own streams of `seed`.
    pub fn generate(seed: u64, d: usize, rank: usize, p: f64, frob_norm: f64) -> Result<Self> {
        let w_star = gen_ground_truth(d, rank, frob_norm, &mut StreamRng::new(seed, Stream::GroundTruth))?;
        let ms = gen_measurements(&w_star, p, &mut StreamRng::new(seed, Stream::Measurements))?;
        let loss = LossSpec::sensing(d, ms)?;
        Ok(Self { w_star, loss })
    }

    /// `‖W − W*‖²_F / d²`
    pub fn test_loss(&self, w: &SymMat) -> f64 {
        test_loss(w, &self.w_star)
    }
}

pub fn test_loss(w: &SymMat, w_star: &SymMat) -> f64 {
    let d = w_star.dim() as f64;
    (w.as_matrix() - w_star.as_matrix()).norm_squared() / (d * d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_truth_rank_and_norm() {
        let mut rng = StreamRng::new(3, Stream::GroundTruth);
        let w = gen_ground_truth(8, 3, 20.0, &mut rng).unwrap();
        assert!((w.frobenius_norm() - 20.0).abs() < 1e-12);
        let ev = w.eigenvalues().unwrap();
        let top = ev[0].abs();
        assert_eq!(ev.iter().filter(|v| v.abs() > 1e-10 * top).count(), 3);
        assert!(w.min_eigenvalue().unwrap() > -1e-10 * top);
        let full = gen_ground_truth(4, 4, 1.0, &mut rng).unwrap();
        assert_eq!(full.numerical_rank(1e-10).unwrap(), 4);
        assert!(gen_ground_truth(4, 5, 1.0, &mut rng).is_err());
    }

    #[test]
    fn ground_truth_is_reproducible() {
        let a = gen_ground_truth(6, 2, 1.0, &mut StreamRng::new(9, Stream::GroundTruth)).unwrap();
        let b = gen_ground_truth(6, 2, 1.0, &mut StreamRng::new(9, Stream::GroundTruth)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_observation_sees_every_pair() {
        let w = SymMat::identity(5);
        let ms = gen_measurements(&w, 1.0, &mut StreamRng::new(0, Stream::Measurements)).unwrap();
        assert_eq!(ms.len(), 15);
        let t = gen_ground_truth(5, 2, 3.0, &mut StreamRng::new(1, Stream::GroundTruth)).unwrap();
        for m in gen_measurements(&t, 1.0, &mut StreamRng::new(1, Stream::Measurements)).unwrap() {
            assert!((m.x().inner(&t) - m.y()).abs() < 1e-15);
        }
        assert!(gen_measurements(&w, 0.0, &mut StreamRng::new(0, Stream::Measurements)).is_err());
    }

    #[test]
    fn observation_count_within_three_sigma() {
        let (d, p) = (10, 0.3);
        let n = (d * (d + 1) / 2) as f64;
        let w = SymMat::zeros(d);
        let counts: Vec<f64> = (0..100)
            .map(|s| gen_measurements(&w, p, &mut StreamRng::new(s, Stream::Measurements)).unwrap().len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / 100.0;
        let sd_of_mean = (n * p * (1.0 - p) / 100.0).sqrt();
        assert!((mean - n * p).abs() <= 3.0 * sd_of_mean, "mean {mean}");
        for c in counts {
            assert!((c - n * p).abs() <= 5.0 * (n * p * (1.0 - p)).sqrt());
        }
    }
}
