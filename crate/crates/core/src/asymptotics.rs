//! Limit covariances of the QMLE and the standardizations used to compare
//! Monte Carlo estimates with their limit laws.
//!
//! With `m₃ = E b³₀` and `v = var(b²₀)`:
//!
//! ```text
//! Ω_*  = [[1/ω², m₃/(2ω⁴)], [m₃/(2ω⁴), v/(4ω⁸)]]      score covariance
//! Ω_** = diag(−1/ω², −1/(2ω⁴))                          limit Hessian
//! Ω₀   = Ω_**⁻¹ Ω_* Ω_**⁻¹ = [[ω², ω² m₃], [ω² m₃, v]]
//! ```

use nalgebra::{Matrix2, SymmetricEigen, Vector2};

use crate::error::{Error, Result};
use crate::estimator::EstimateResult;
use crate::innovations::{moment_summary, tail_norming, InnovationSpec, InnovationVariant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitCovariances {
    pub omega0: Matrix2<f64>,
    pub omega_star: Matrix2<f64>,
    pub omega_dstar: Matrix2<f64>,
}

impl LimitCovariances {
    /// Largest entry-wise gap between `Ω₀` and `Ω_**⁻¹ Ω_* Ω_**⁻¹`.
    pub fn sandwich_residual(&self) -> Result<f64> {
        let inv = self
            .omega_dstar
            .try_inverse()
            .ok_or_else(|| Error::Numerical("Ω_** is singular".into()))?;
        let sandwich = inv * self.omega_star * inv;
        Ok((sandwich - self.omega0).amax())
    }
}

/// `Ω₀`, `Ω_*` and `Ω_**` for a law with finite `E b⁴`.
pub fn limit_covariances(spec: &InnovationSpec) -> Result<LimitCovariances> {
    spec.validate()?;
    if spec.variant == InnovationVariant::PointMassB {
        return Err(Error::Domain(
            "limit covariances need a random coefficient b".into(),
        ));
    }
    let m = moment_summary(spec);
    if !m.var_b2.is_finite() {
        return Err(Error::Domain(
            "var(b²) is infinite for this law; use the stable-limit standardization".into(),
        ));
    }
    let w = m.omega_sq;
    let w2 = w * w;
    let omega0 = Matrix2::new(w, w * m.eb3, w * m.eb3, m.var_b2);
    let omega_star = Matrix2::new(
        1.0 / w,
        m.eb3 / (2.0 * w2),
        m.eb3 / (2.0 * w2),
        m.var_b2 / (4.0 * w2 * w2),
    );
    let omega_dstar = Matrix2::new(-1.0 / w, 0.0, 0.0, -1.0 / (2.0 * w2));
    Ok(LimitCovariances {
        omega0,
        omega_star,
        omega_dstar,
    })
}

fn symmetric_power(m: &Matrix2<f64>, power: f64) -> Result<Matrix2<f64>> {
    let eig = SymmetricEigen::new(*m);
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&l| l <= 1e-14 * scale) {
        return Err(Error::Numerical(format!(
            "covariance matrix is singular or indefinite (eigenvalues {}, {})",
            eig.eigenvalues[0], eig.eigenvalues[1]
        )));
    }
    let d = Matrix2::from_diagonal(&eig.eigenvalues.map(|l| l.powf(power)));
    Ok(eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// `Ω₀^{−1/2} · √n · deviation` with the symmetric square root.
pub fn whiten(deviation: (f64, f64), n: usize, cov: &LimitCovariances) -> Result<(f64, f64)> {
    let root_inv = symmetric_power(&cov.omega0, -0.5)?;
    let z = root_inv * Vector2::new(deviation.0, deviation.1) * (n as f64).sqrt();
    Ok((z[0], z[1]))
}

/// Inverse of [`whiten`]: the deviation `η̂ − η` behind whitened coordinates.
pub fn unwhiten(z: (f64, f64), n: usize, cov: &LimitCovariances) -> Result<(f64, f64)> {
    let root = symmetric_power(&cov.omega0, 0.5)?;
    let d = root * Vector2::new(z.0, z.1) / (n as f64).sqrt();
    Ok((d[0], d[1]))
}

/// Whitened `√n (η̂ − η)`; asymptotically two independent standard normals.
pub fn standardize_normal(
    est: &EstimateResult,
    truth: (f64, f64),
    n: usize,
    cov: &LimitCovariances,
) -> Result<(f64, f64)> {
    whiten((est.eta1 - truth.0, est.eta2 - truth.1), n, cov)
}

/// `(√n (η̂₁ − φ)/ω, n (η̂₂ − ω²)/a_n)` for the heavy-tailed law.
pub fn standardize_stable_parts(
    eta: (f64, f64),
    truth: (f64, f64),
    n: usize,
    spec: &InnovationSpec,
) -> Result<(f64, f64)> {
    let a_n = tail_norming(spec, n as u64)?;
    let nf = n as f64;
    let z1 = nf.sqrt() * (eta.0 - truth.0) / truth.1.sqrt();
    let w = nf * (eta.1 - truth.1) / a_n;
    Ok((z1, w))
}

pub fn standardize_stable(
    est: &EstimateResult,
    truth: (f64, f64),
    n: usize,
    spec: &InnovationSpec,
) -> Result<(f64, f64)> {
    standardize_stable_parts((est.eta1, est.eta2), truth, n, spec)
}
