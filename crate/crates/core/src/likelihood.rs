//! Gaussian quasi-log-likelihood
//!
//! ```text
//! L_n(u) = Σ_{k=1..n} ℓ_k(u),
//! ℓ_k(u) = −½ ( log(x X²_{k−1} + y) + (X_k − s X_{k−1})² / (x X²_{k−1} + y) ),
//! ```
//!
//! its analytic derivatives in `(s, x)`, and their deterministic limits.
//!
//! Every per-term quantity is a bounded ratio. When `|X_{k−1}| > 1` the
//! terms are evaluated through `q = X²/(xX² + y) = 1/(x + y/X²)` and the
//! scaled residual `X_k/X_{k−1} − s`, so nothing of order `X⁴` is ever formed.
//!
//! Conventions: [`gradient`] is the raw score of `L_n` (not divided by `n`);
//! [`hessian`] is the second-derivative matrix of `L_n / n`.

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::process::{ldexp, Scaled, Trajectory};

/// A point `u = (s, x, y)` with `x, y > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodPoint {
    pub s: f64,
    pub x: f64,
    pub y: f64,
}

impl LikelihoodPoint {
    pub fn new(s: f64, x: f64, y: f64) -> Result<Self> {
        if !s.is_finite() {
            return Err(Error::Domain(format!("s must be finite, got {s}")));
        }
        if !(x.is_finite() && x > 0.0) || !(y.is_finite() && y > 0.0) {
            return Err(Error::Domain(format!(
                "x and y must be positive, got x = {x}, y = {y}"
            )));
        }
        Ok(Self { s, x, y })
    }
}

/// Per-observation pieces of `ℓ_k` and its derivatives.
#[derive(Debug, Clone, Copy, Default)]
struct Term {
    /// `log(x X²_{k−1} + y)`
    log_v: f64,
    /// `(X_k − s X_{k−1})² / v`
    r2_over_v: f64,
    // first and second partials of ℓ_k in (s, x)
    d_s: f64,
    d_x: f64,
    h_ss: f64,
    h_sx: f64,
    h_xx: f64,
}

/// One transition `X_{k−1} → X_k` in the form the per-term formulas use.
#[derive(Debug, Clone, Copy)]
enum Step {
    /// `X_{k−1} = 0`
    Zero { cur: f64 },
    /// `0 < |X_{k−1}| ≤ 1`
    Small { prev: f64, cur: f64 },
    /// `|X_{k−1}| > 1`, carried as `log|X_{k−1}|`, `1/X²_{k−1}` and `X_k/X_{k−1}`.
    Large {
        ln_abs_prev: f64,
        inv_sq: f64,
        ratio: f64,
    },
}

impl Step {
    #[inline]
    fn raw(prev: f64, cur: f64) -> Step {
        if prev == 0.0 {
            Step::Zero { cur }
        } else if prev.abs() > 1.0 {
            Step::Large {
                ln_abs_prev: prev.abs().ln(),
                inv_sq: 1.0 / (prev * prev),
                ratio: cur / prev,
            }
        } else {
            Step::Small { prev, cur }
        }
    }

    fn scaled(prev: Scaled, cur: Scaled) -> Step {
        if prev.mantissa == 0.0 {
            return Step::Zero { cur: cur.to_f64() };
        }
        let p = prev.to_f64();
        if p.abs() <= 1.0 {
            return Step::Small {
                prev: p,
                cur: cur.to_f64(),
            };
        }
        let m = prev.mantissa;
        Step::Large {
            ln_abs_prev: prev.ln_abs(),
            inv_sq: ldexp(1.0 / (m * m), -2 * prev.exponent),
            ratio: ldexp(cur.mantissa / m, cur.exponent - prev.exponent),
        }
    }
}

#[inline]
fn term(step: Step, u: &LikelihoodPoint) -> Term {
    match step {
        Step::Zero { cur } => Term {
            log_v: u.y.ln(),
            r2_over_v: cur * cur / u.y,
            ..Term::default()
        },
        Step::Large {
            ln_abs_prev,
            inv_sq,
            ratio,
        } => {
            let den = u.x + u.y * inv_sq;
            let q = 1.0 / den;
            let rr = ratio - u.s;
            let rr2 = rr * rr;
            Term {
                log_v: 2.0 * ln_abs_prev + den.ln(),
                r2_over_v: rr2 * q,
                d_s: rr * q,
                d_x: -0.5 * (q - rr2 * q * q),
                h_ss: -q,
                h_sx: -rr * q * q,
                h_xx: 0.5 * q * q - rr2 * q * q * q,
            }
        }
        Step::Small { prev, cur } => {
            let p2 = prev * prev;
            let v = u.x * p2 + u.y;
            let r = cur - u.s * prev;
            let q = p2 / v;
            let rp_v = r * prev / v;
            Term {
                log_v: v.ln(),
                r2_over_v: r * r / v,
                d_s: rp_v,
                d_x: -0.5 * (q - rp_v * rp_v),
                h_ss: -q,
                h_sx: -rp_v * q,
                h_xx: 0.5 * q * q - rp_v * rp_v * q,
            }
        }
    }
}

/// Accepts paths whose raw values overflowed as long as the scaled channel
/// covers every index.
pub(crate) fn check_trajectory(traj: &Trajectory) -> Result<()> {
    if traj.x.len() < 2 {
        return Err(Error::Usage(
            "the likelihood needs at least X_0 and X_1".into(),
        ));
    }
    if let Some(k) = traj.x.iter().position(|v| !v.is_finite()) {
        let covered = traj
            .scaled
            .as_ref()
            .is_some_and(|s| s.len() == traj.x.len() && s.iter().all(|v| v.mantissa.is_finite()));
        if !covered {
            return Err(Error::Numerical(format!(
                "X_{k} = {} is not finite",
                traj.x[k]
            )));
        }
    }
    Ok(())
}

fn steps(traj: &Trajectory) -> impl Iterator<Item = Step> + '_ {
    traj.x.windows(2).enumerate().map(move |(i, w)| {
        if w[0].is_finite() && w[1].is_finite() {
            Step::raw(w[0], w[1])
        } else {
            let s = traj
                .scaled
                .as_ref()
                .expect("check_trajectory guarantees a scaled channel");
            Step::scaled(s[i], s[i + 1])
        }
    })
}

/// `L_n(u)`, summed with compensation.
pub fn loglik(traj: &Trajectory, u: &LikelihoodPoint) -> Result<f64> {
    check_trajectory(traj)?;
    let sum: CompensatedSum = steps(traj)
        .map(|step| {
            let t = term(step, u);
            -0.5 * (t.log_v + t.r2_over_v)
        })
        .collect();
    finite(sum.value(), "log-likelihood")
}

/// `(L_n(u) − L_n(θ)) / n` in one pass, differencing the terms before
/// summing. The log parts are combined as
/// `½ log((ω²X² + σ²)/(xX² + y))`, which stays O(1) however large `X` is.
pub fn loglik_diff_normalized(
    traj: &Trajectory,
    u: &LikelihoodPoint,
    theta: &LikelihoodPoint,
) -> Result<f64> {
    check_trajectory(traj)?;
    let n = traj.n() as f64;
    let sum: CompensatedSum = steps(traj)
        .map(|step| {
            let tu = term(step, u);
            let tt = term(step, theta);
            let log_ratio = match step {
                Step::Zero { .. } => (theta.y / u.y).ln(),
                Step::Small { prev, .. } => {
                    let p2 = prev * prev;
                    ((theta.x * p2 + theta.y) / (u.x * p2 + u.y)).ln()
                }
                Step::Large { inv_sq, .. } => {
                    ((theta.x + theta.y * inv_sq) / (u.x + u.y * inv_sq)).ln()
                }
            };
            0.5 * log_ratio + 0.5 * (tt.r2_over_v - tu.r2_over_v)
        })
        .collect();
    finite(sum.value() / n, "normalized likelihood difference")
}

/// Limit of the normalized likelihood difference,
/// `f(s, x) = ½ ( log(ω²/x) + 1 − ω²/x − (φ − s)²/x )`.
pub fn limit_f(s: f64, x: f64, phi: f64, omega_sq: f64) -> Result<f64> {
    if !(x > 0.0 && omega_sq > 0.0) {
        return Err(Error::Domain(format!(
            "limit_f needs x > 0 and omega_sq > 0, got x = {x}, omega_sq = {omega_sq}"
        )));
    }
    let ratio = omega_sq / x;
    Ok(0.5 * (ratio.ln() + 1.0 - ratio - (phi - s) * (phi - s) / x))
}

/// Value, score and normalized Hessian of `L_n` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalModel {
    pub value: f64,
    /// `(∂L_n/∂s, ∂L_n/∂x)`, not divided by `n`.
    pub gradient: [f64; 2],
    /// Second derivatives of `L_n / n`.
    pub hessian: Matrix2<f64>,
}

/// Everything Newton's method needs from one pass over the data.
pub fn local_model(traj: &Trajectory, u: &LikelihoodPoint) -> Result<LocalModel> {
    check_trajectory(traj)?;
    let mut value = CompensatedSum::new();
    let mut gs = CompensatedSum::new();
    let mut gx = CompensatedSum::new();
    let mut hss = CompensatedSum::new();
    let mut hsx = CompensatedSum::new();
    let mut hxx = CompensatedSum::new();
    for step in steps(traj) {
        let t = term(step, u);
        value.add(-0.5 * (t.log_v + t.r2_over_v));
        gs.add(t.d_s);
        gx.add(t.d_x);
        hss.add(t.h_ss);
        hsx.add(t.h_sx);
        hxx.add(t.h_xx);
    }
    let n = traj.n() as f64;
    let off = hsx.value() / n;
    let model = LocalModel {
        value: value.value(),
        gradient: [gs.value(), gx.value()],
        hessian: Matrix2::new(hss.value() / n, off, off, hxx.value() / n),
    };
    if !(model.value.is_finite()
        && model.gradient.iter().all(|g| g.is_finite())
        && model.hessian.iter().all(|h| h.is_finite()))
    {
        return Err(Error::Numerical(format!(
            "non-finite likelihood model at (s, x, y) = ({}, {}, {})",
            u.s, u.x, u.y
        )));
    }
    Ok(model)
}

/// Score `(∂L_n/∂s, ∂L_n/∂x)` at `u`, un-normalized.
pub fn gradient(traj: &Trajectory, u: &LikelihoodPoint) -> Result<[f64; 2]> {
    local_model(traj, u).map(|m| m.gradient)
}

/// `∂²(L_n/n)` in `(s, x)`; the off-diagonal entries share one sum.
pub fn hessian(traj: &Trajectory, u: &LikelihoodPoint) -> Result<Matrix2<f64>> {
    local_model(traj, u).map(|m| m.hessian)
}

/// Deterministic limit of [`hessian`]:
/// `[[−1/x, −(φ−s)/x²], [−(φ−s)/x², 1/(2x²) − ((φ−s)² + ω²)/x³]]`.
pub fn hessian_limit(u: &LikelihoodPoint, phi: f64, omega_sq: f64) -> Matrix2<f64> {
    let d = phi - u.s;
    let x = u.x;
    let off = -d / (x * x);
    Matrix2::new(
        -1.0 / x,
        off,
        off,
        0.5 / (x * x) - (d * d + omega_sq) / (x * x * x),
    )
}

/// Sufficient sums for evaluating `L_n(·, x, y)` at many `s` at once:
/// `L_n(s, x, y) = −½ (A + B₀ − 2 s B₁ + s² B₂)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ColumnSums {
    a: f64,
    b0: f64,
    b1: f64,
    b2: f64,
}

impl ColumnSums {
    pub(crate) fn new(traj: &Trajectory, x: f64, y: f64) -> Self {
        let (mut a, mut b0, mut b1, mut b2) = (
            CompensatedSum::new(),
            CompensatedSum::new(),
            CompensatedSum::new(),
            CompensatedSum::new(),
        );
        for step in steps(traj) {
            match step {
                Step::Zero { cur } => {
                    a.add(y.ln());
                    b0.add(cur * cur / y);
                }
                Step::Large {
                    ln_abs_prev,
                    inv_sq,
                    ratio,
                } => {
                    let den = x + y * inv_sq;
                    let q = 1.0 / den;
                    a.add(2.0 * ln_abs_prev + den.ln());
                    b0.add(ratio * ratio * q);
                    b1.add(ratio * q);
                    b2.add(q);
                }
                Step::Small { prev, cur } => {
                    let v = x * prev * prev + y;
                    a.add(v.ln());
                    b0.add(cur * cur / v);
                    b1.add(cur * prev / v);
                    b2.add(prev * prev / v);
                }
            }
        }
        ColumnSums {
            a: a.value(),
            b0: b0.value(),
            b1: b1.value(),
            b2: b2.value(),
        }
    }

    #[inline]
    pub(crate) fn at(&self, s: f64) -> f64 {
        -0.5 * (self.a + self.b0 - 2.0 * s * self.b1 + s * s * self.b2)
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what} is not finite ({v})")))
    }
}
