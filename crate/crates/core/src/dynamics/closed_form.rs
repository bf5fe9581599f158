use crate::error::{invalid, Error, Result};
use crate::symmat::SymMat;

/// Diagonal entry of the depth-2 flow for a full-observation target with
/// eigenvalue `mu`, started from `alpha`:
/// `αμ / (α + (μ − α)e^{−2μt})`, or `α / (1 + 2αt)` when `μ = 0`.
pub fn sigma_closed_form(alpha: f64, mu: f64, t: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    if mu == 0.0 {
        return Ok(alpha / (1.0 + 2.0 * alpha * t));
    }
    Ok(alpha * mu / (alpha + (mu - alpha) * (-2.0 * mu * t).exp()))
}

/// Time at which `dm/dt = 2μ m^P` started from `m0` blows up, if it does.
pub fn deep_diag_blow_up_time(m0: f64, mu: f64, p: f64) -> Option<f64> {
    (m0 > 0.0 && mu > 0.0).then(|| m0.powf(-(p - 1.0)) / (2.0 * mu * (p - 1.0)))
}

/// Solution of the diagonal deep flow `dmᵢ/dt = 2μᵢ mᵢ^P`:
/// `mᵢ(t) = (m0ᵢ^{−(P−1)} − 2μᵢ(P−1)t)^{−1/(P−1)}`, with zero entries fixed.
pub fn deep_diag_closed_form(m0: &[f64], mu: &[f64], p: f64, t: f64) -> Result<Vec<f64>> {
    if m0.len() != mu.len() {
        return Err(invalid(format!("m0 has {} entries but mu has {}", m0.len(), mu.len())));
    }
    if !(p > 1.0) {
        return Err(invalid(format!("P must exceed 1, got {p}")));
    }
    m0.iter()
        .zip(mu)
        .enumerate()
        .map(|(i, (&m, &mu))| {
            if m < 0.0 || !m.is_finite() {
                return Err(invalid(format!("m0[{i}] = {m} is not a nonnegative number")));
            }
            if m == 0.0 {
                return Ok(0.0);
            }
            let base = m.powf(-(p - 1.0)) - 2.0 * mu * (p - 1.0) * t;
            if base <= 0.0 {
                let time = deep_diag_blow_up_time(m, mu, p).unwrap_or(f64::INFINITY);
                return Err(Error::BlowUp { index: i, time, requested: t });
            }
            Ok(base.powf(-1.0 / (p - 1.0)))
        })
        .collect()
}

/// `e^{tQ} W0 e^{tQ}`, the depth-2 flow under the linear loss `−⟨Q, W⟩`.
pub fn linear_flow_closed_form(q: &SymMat, w0: &SymMat, t: f64) -> Result<SymMat> {
    if q.dim() != w0.dim() {
        return Err(invalid(format!("Q has dim {} but W0 has dim {}", q.dim(), w0.dim())));
    }
    let e = q.eig()?.map(|l| (t * l).exp());
    SymMat::new(e.as_matrix() * w0.as_matrix() * e.as_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rk4_scalar(f: impl Fn(f64) -> f64, x0: f64, h: f64, steps: usize) -> f64 {
        let mut x = x0;
        for _ in 0..steps {
            let k1 = f(x);
            let k2 = f(x + 0.5 * h * k1);
            let k3 = f(x + 0.5 * h * k2);
            let k4 = f(x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        x
    }

    #[test]
    fn sigma_endpoints() {
        assert_eq!(sigma_closed_form(0.3, 2.0, 0.0).unwrap(), 0.3);
        assert!((sigma_closed_form(1e-3, 2.0, 25.0).unwrap() - 2.0).abs() < 1e-8);
        assert!(sigma_closed_form(0.0, 1.0, 1.0).is_err());
        assert_eq!(sigma_closed_form(0.5, 0.0, 1.0).unwrap(), 0.25);
    }

    #[test]
    fn sigma_matches_logistic_ode() {
        let (alpha, mu) = (1e-3, 2.0);
        let x = rk4_scalar(|s| 2.0 * s * (mu - s), alpha, 1e-4, 30_000);
        assert!((x - sigma_closed_form(alpha, mu, 3.0).unwrap()).abs() < 1e-8);
        let x = rk4_scalar(|s| -2.0 * s * s, 0.5, 1e-3, 1000);
        assert!((x - sigma_closed_form(0.5, 0.0, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn deep_diag_basics() {
        let m0 = [0.0, 0.5, 0.2];
        let mu = [1.0, 1.0, -1.0];
        assert_eq!(deep_diag_closed_form(&m0, &mu, 2.0, 0.0).unwrap(), m0.to_vec());
        let m = deep_diag_closed_form(&m0, &mu, 2.0, 0.5).unwrap();
        assert_eq!(m[0], 0.0);
        // P = 2: m(t) = 1 / (1/m0 − 2μt)
        assert!((m[1] - 1.0 / (2.0 - 1.0)).abs() < 1e-15);
        assert!((m[2] - 1.0 / (5.0 + 1.0)).abs() < 1e-15);
        let err = deep_diag_closed_form(&m0, &mu, 2.0, 1.0).unwrap_err();
        assert_eq!(err, Error::BlowUp { index: 1, time: 1.0, requested: 1.0 });
    }

    #[test]
    fn deep_diag_matches_ode() {
        let p = 1.5;
        let x = rk4_scalar(|m| 2.0 * 0.7 * m.powf(p), 0.3, 1e-4, 10_000);
        let exact = deep_diag_closed_form(&[0.3], &[0.7], p, 1.0).unwrap()[0];
        assert!((x - exact).abs() < 1e-10);
    }
}
