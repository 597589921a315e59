//! Simulation of `X_k = (φ + b_k) X_{k−1} + e_k` from a constant start and
//! the growth diagnostics built from the recorded coefficients.
//!
//! Alongside the raw path the simulator can keep a scaled copy
//! `X_k = m_k · 2^{E_k}` (mantissa in `[1, 2)`, integer binary exponent).
//! Rescaling by powers of two is exact, so the scaled recursion reproduces
//! the raw one bit for bit while the raw values are representable, and keeps
//! going once `|X_k|` passes `f64::MAX`. `log|X_k| = ln|m_k| + E_k ln 2` and
//! `sign(X_k) = sign(m_k)` come from this channel.

use std::fmt::Write as _;

use crate::csv::fmt_f64;
use crate::error::{Error, Result};
use crate::innovations::{InnovationSampler, InnovationSpec, SeedStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub phi: f64,
    pub x0: f64,
}

impl ModelParams {
    /// `phi` with the default start `X₀ = 1`.
    pub fn new(phi: f64) -> Self {
        Self { phi, x0: 1.0 }
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.phi.is_finite() || !self.x0.is_finite() {
            return Err(Error::Config(format!(
                "phi and x0 must be finite, got phi = {}, x0 = {}",
                self.phi, self.x0
            )));
        }
        Ok(())
    }
}

/// A float carried as `mantissa · 2^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaled {
    pub mantissa: f64,
    pub exponent: i64,
}

/// `x · 2^k` without intermediate overflow for any `k`.
pub fn ldexp(mut x: f64, mut k: i64) -> f64 {
    const STEP: i64 = 1000;
    while k > STEP {
        x *= pow2(STEP);
        k -= STEP;
        if !x.is_finite() || x == 0.0 {
            return x;
        }
    }
    while k < -STEP {
        x *= pow2(-STEP);
        k += STEP;
        if x == 0.0 {
            return x;
        }
    }
    x * pow2(k)
}

fn pow2(k: i64) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}

impl Scaled {
    pub const ZERO: Scaled = Scaled {
        mantissa: 0.0,
        exponent: 0,
    };

    pub fn new(value: f64) -> Self {
        Scaled {
            mantissa: value,
            exponent: 0,
        }
        .normalized()
    }

    /// Brings a finite nonzero mantissa into `[1, 2)` in magnitude.
    fn normalized(self) -> Self {
        let m = self.mantissa;
        if m == 0.0 || !m.is_finite() {
            return Scaled {
                mantissa: m,
                exponent: 0,
            };
        }
        let bits = m.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as i64;
        if biased == 0 {
            // subnormal: lift into the normal range first
            let lifted = m * pow2(600);
            return Scaled {
                mantissa: lifted,
                exponent: self.exponent - 600,
            }
            .normalized();
        }
        let shift = biased - 1023;
        Scaled {
            mantissa: m * pow2(-shift),
            exponent: self.exponent + shift,
        }
    }

    pub fn to_f64(self) -> f64 {
        ldexp(self.mantissa, self.exponent)
    }

    pub fn ln_abs(self) -> f64 {
        if self.mantissa == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.mantissa.abs().ln() + self.exponent as f64 * std::f64::consts::LN_2
        }
    }

    pub fn signum(self) -> f64 {
        if self.mantissa == 0.0 {
            0.0
        } else {
            self.mantissa.signum()
        }
    }

    /// `coef · self + add`, rounded exactly like the unscaled expression.
    #[inline]
    pub fn mul_add(self, coef: f64, add: f64) -> Self {
        if self.mantissa == 0.0 {
            return Scaled::new(add);
        }
        Scaled {
            mantissa: coef * self.mantissa + ldexp(add, -self.exponent),
            exponent: self.exponent,
        }
        .normalized()
    }

    #[inline]
    pub fn scale_by(self, coef: f64) -> Self {
        Scaled {
            mantissa: self.mantissa * coef,
            exponent: self.exponent,
        }
        .normalized()
    }
}

/// Where a trajectory came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub params: ModelParams,
    pub spec: InnovationSpec,
    pub seed: SeedStream,
}

/// A path `X₀..X_n`, optionally with its innovations `(b_k, e_k)` and the
/// scaled copy used beyond the overflow horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `X₀..X_n`; entries past the overflow horizon are `±inf`.
    pub x: Vec<f64>,
    /// `b_1..b_n` (index `k − 1` holds `b_k`).
    pub b: Option<Vec<f64>>,
    pub e: Option<Vec<f64>>,
    pub scaled: Option<Vec<Scaled>>,
    /// First `k` whose raw value overflowed.
    pub overflow_index: Option<usize>,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimulationOptions {
    pub record_innovations: bool,
    /// Keep the scaled channel and tolerate raw overflow.
    pub scaled_channel: bool,
}

impl Trajectory {
    /// Wraps an observed path.
    pub fn from_observations(x: Vec<f64>) -> Self {
        Trajectory {
            x,
            b: None,
            e: None,
            scaled: None,
            overflow_index: None,
            provenance: None,
        }
    }

    /// Number of transitions `n`.
    pub fn n(&self) -> usize {
        self.x.len().saturating_sub(1)
    }

    /// Path truncated to `X₀..X_m`.
    pub fn prefix(&self, m: usize) -> Trajectory {
        let m = m.min(self.n());
        Trajectory {
            x: self.x[..=m].to_vec(),
            b: self.b.as_ref().map(|b| b[..m].to_vec()),
            e: self.e.as_ref().map(|e| e[..m].to_vec()),
            scaled: self.scaled.as_ref().map(|s| s[..=m].to_vec()),
            overflow_index: self.overflow_index.filter(|&k| k <= m),
            provenance: self.provenance,
        }
    }

    fn innovations(&self) -> Result<(&[f64], &[f64])> {
        match (&self.b, &self.e) {
            (Some(b), Some(e)) => Ok((b, e)),
            _ => Err(Error::Usage(
                "trajectory was simulated without recording innovations".into(),
            )),
        }
    }

    fn phi(&self) -> Result<f64> {
        self.provenance
            .map(|p| p.params.phi)
            .ok_or_else(|| Error::Usage("trajectory carries no model parameters".into()))
    }

    /// `log|X_k|`, from the scaled channel when present.
    pub fn ln_abs(&self, k: usize) -> f64 {
        match &self.scaled {
            Some(s) => s[k].ln_abs(),
            None => self.x[k].abs().ln(),
        }
    }

    fn scaled_at(&self, k: usize) -> Result<Scaled> {
        match &self.scaled {
            Some(s) => Ok(s[k]),
            None if self.x[k].is_finite() => Ok(Scaled::new(self.x[k])),
            None => Err(Error::Numerical(format!(
                "X_{k} is not finite and no scaled channel was kept"
            ))),
        }
    }

    /// CSV export with header `k,x,b,e`; `b` and `e` are empty when not recorded.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,x,b,e\n");
        for (k, x) in self.x.iter().enumerate() {
            let (b, e) = match (k, &self.b, &self.e) {
                (k, Some(b), Some(e)) if k > 0 => (fmt_f64(b[k - 1]), fmt_f64(e[k - 1])),
                _ => (String::new(), String::new()),
            };
            writeln!(out, "{k},{},{b},{e}", fmt_f64(*x)).expect("writing to a String");
        }
        out
    }
}

/// Simulates `n` steps, failing at the first raw overflow.
pub fn simulate(
    params: ModelParams,
    spec: &InnovationSpec,
    n: usize,
    stream: SeedStream,
    record_innovations: bool,
) -> Result<Trajectory> {
    simulate_with(
        params,
        spec,
        n,
        stream,
        SimulationOptions {
            record_innovations,
            scaled_channel: false,
        },
    )
}

pub fn simulate_with(
    params: ModelParams,
    spec: &InnovationSpec,
    n: usize,
    stream: SeedStream,
    opts: SimulationOptions,
) -> Result<Trajectory> {
    params.validate()?;
    if n == 0 {
        return Err(Error::Usage("simulate needs n >= 1".into()));
    }
    let sampler = InnovationSampler::new(spec)?;
    let mut rng = stream.rng();

    let mut x = Vec::with_capacity(n + 1);
    let mut bs = opts.record_innovations.then(|| Vec::with_capacity(n));
    let mut es = opts.record_innovations.then(|| Vec::with_capacity(n));
    let mut scaled = opts.scaled_channel.then(|| Vec::with_capacity(n + 1));
    let mut overflow_index = None;

    let mut state = Scaled::new(params.x0);
    x.push(params.x0);
    if let Some(s) = scaled.as_mut() {
        s.push(state);
    }
    for k in 1..=n {
        let (b, e) = sampler.sample(&mut rng);
        state = state.mul_add(params.phi + b, e);
        let raw = state.to_f64();
        if !raw.is_finite() && overflow_index.is_none() {
            if !opts.scaled_channel {
                return Err(Error::Overflow { index: k });
            }
            overflow_index = Some(k);
        }
        x.push(raw);
        if let Some(s) = scaled.as_mut() {
            s.push(state);
        }
        if let (Some(bs), Some(es)) = (bs.as_mut(), es.as_mut()) {
            bs.push(b);
            es.push(e);
        }
    }
    Ok(Trajectory {
        x,
        b: bs,
        e: es,
        scaled,
        overflow_index,
        provenance: Some(Provenance {
            params,
            spec: *spec,
            seed: stream,
        }),
    })
}

/// Cumulative log-coefficient `S(i)`, sign product `γ_i` and the normalized
/// path `e^{−S(i)} γ_i X_i`, all indexed `0..=n` with `S(0) = 0`, `γ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthDiagnostics {
    pub s: Vec<f64>,
    pub gamma: Vec<i8>,
    pub normalized: Vec<f64>,
}

/// Prefix products `Π_{j≤i} (φ + b_j) = γ_i e^{S(i)}` in scaled form.
fn coefficient_products(traj: &Trajectory) -> Result<Vec<Scaled>> {
    let phi = traj.phi()?;
    let (b, _) = traj.innovations()?;
    let mut out = Vec::with_capacity(b.len() + 1);
    let mut p = Scaled::new(1.0);
    out.push(p);
    for (i, &bi) in b.iter().enumerate() {
        let coef = phi + bi;
        if coef == 0.0 {
            return Err(Error::DegeneratePath { index: i + 1 });
        }
        p = p.scale_by(coef);
        out.push(p);
    }
    Ok(out)
}

pub fn growth_diagnostics(traj: &Trajectory) -> Result<GrowthDiagnostics> {
    let phi = traj.phi()?;
    let (b, _) = traj.innovations()?;
    let products = coefficient_products(traj)?;
    let mut s = Vec::with_capacity(b.len() + 1);
    let mut gamma = Vec::with_capacity(b.len() + 1);
    let mut acc = crate::numeric::CompensatedSum::new();
    s.push(0.0);
    gamma.push(1i8);
    for &bi in b {
        let coef = phi + bi;
        acc.add(coef.abs().ln());
        s.push(acc.value());
        let last = *gamma.last().expect("non-empty");
        gamma.push(if coef < 0.0 { -last } else { last });
    }
    let mut normalized = Vec::with_capacity(products.len());
    for (i, p) in products.iter().enumerate() {
        let xi = traj.scaled_at(i)?;
        let value = if xi.mantissa == 0.0 {
            0.0
        } else {
            ldexp(xi.mantissa / p.mantissa, xi.exponent - p.exponent)
        };
        normalized.push(value);
    }
    Ok(GrowthDiagnostics {
        s,
        gamma,
        normalized,
    })
}

/// Partial sums `Y_i = Σ_{j≤i} e^{−S(j)} γ_j e_j` for `i = 0..=m` (`Y_0 = 0`).
pub fn y_partial_sums(traj: &Trajectory, m: usize) -> Result<Vec<f64>> {
    let (_, e) = traj.innovations()?;
    if m > e.len() {
        return Err(Error::Usage(format!(
            "asked for {m} partial sums of a path with n = {}",
            e.len()
        )));
    }
    let products = coefficient_products(traj)?;
    let mut out = Vec::with_capacity(m + 1);
    let mut acc = crate::numeric::CompensatedSum::new();
    out.push(0.0);
    for j in 1..=m {
        let p = products[j];
        acc.add(ldexp(e[j - 1] / p.mantissa, -p.exponent));
        out.push(acc.value());
    }
    Ok(out)
}

/// `log|X_n| / n`.
pub fn empirical_growth_rate(traj: &Trajectory) -> Result<f64> {
    let n = traj.n();
    if n == 0 {
        return Err(Error::Usage("growth rate needs n >= 1".into()));
    }
    let ln = traj.ln_abs(n);
    if ln == f64::NEG_INFINITY {
        return Err(Error::Numerical("X_n = 0, growth rate undefined".into()));
    }
    if !ln.is_finite() {
        return Err(Error::Numerical(format!(
            "log|X_n| = {ln}; keep the scaled channel for paths past the overflow horizon"
        )));
    }
    Ok(ln / n as f64)
}
