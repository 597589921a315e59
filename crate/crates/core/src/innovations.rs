//! Innovation laws for the pairs `(b_k, e_k)`, seeded random streams and the
//! moment and Lyapunov-exponent calculators that decide which limit regime
//! a parameter set belongs to.
//!
//! Three coefficient laws are supported:
//!
//! * `GaussianBGaussianE`: `b ~ N(0, ω²)`.
//! * `PointMassB`: `b ≡ b_point`, used for deterministic paths.
//! * `ParetoTailB`: `b = ±√V` with a fair random sign and
//!   `P{V > v} = (c/v)^α` for `v ≥ c`, `c = ω²(α−1)/α`, so that `E b² = ω²`
//!   while `var(b²) = ∞` for `1 < α < 2`.
//!
//! The noise `e` is either centered Gaussian with variance σ² or a point
//! mass. `b` and `e` are always drawn independently.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric;

/// Random generator behind every [`SeedStream`].
pub type StreamRng = ChaCha8Rng;

/// A reproducible random stream identified by `(master_seed, stream_index)`.
///
/// The generator is ChaCha8 keyed by `master_seed` (expanded through
/// `seed_from_u64`) with its 64-bit stream counter set to `stream_index`, so
/// distinct indices under one master seed give non-overlapping keystreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }

    /// Sub-stream `index` of this stream.
    ///
    /// The child's master seed is `splitmix64(master ^ splitmix64(stream_index))`
    /// and its stream index is `index`; children of different parents
    /// therefore live under different ChaCha keys.
    pub fn child(&self, index: u64) -> SeedStream {
        SeedStream {
            master_seed: splitmix64(self.master_seed ^ splitmix64(self.stream_index)),
            stream_index: index,
        }
    }
}

/// Law family of the random coefficient `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InnovationVariant {
    GaussianBGaussianE,
    PointMassB,
    ParetoTailB,
}

impl fmt::Display for InnovationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            InnovationVariant::GaussianBGaussianE => "GaussianBGaussianE",
            InnovationVariant::PointMassB => "PointMassB",
            InnovationVariant::ParetoTailB => "ParetoTailB",
        };
        f.write_str(name)
    }
}

impl FromStr for InnovationVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "GaussianBGaussianE" => Ok(InnovationVariant::GaussianBGaussianE),
            "PointMassB" => Ok(InnovationVariant::PointMassB),
            "ParetoTailB" => Ok(InnovationVariant::ParetoTailB),
            other => Err(format!(
                "unknown variant `{other}` (expected GaussianBGaussianE, PointMassB or ParetoTailB)"
            )),
        }
    }
}

/// Law of the additive noise `e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ELaw {
    /// Centered normal with variance `sigma_sq`.
    Gaussian,
    /// Degenerate at the given value.
    PointMass(f64),
}

impl fmt::Display for ELaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ELaw::Gaussian => f.write_str("Gaussian"),
            ELaw::PointMass(c) => write!(f, "PointMass({c})"),
        }
    }
}

impl FromStr for ELaw {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "Gaussian" {
            return Ok(ELaw::Gaussian);
        }
        if let Some(inner) = s
            .strip_prefix("PointMass(")
            .and_then(|rest| rest.strip_suffix(')'))
        {
            return inner
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|c| c.is_finite())
                .map(ELaw::PointMass)
                .ok_or_else(|| format!("bad point mass value `{inner}`"));
        }
        Err(format!(
            "unknown e law `{s}` (expected Gaussian or PointMass(c))"
        ))
    }
}

/// Joint law of the i.i.d. pairs `(b_k, e_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnovationSpec {
    pub variant: InnovationVariant,
    /// `E b²`; ignored for `PointMassB`.
    pub omega_sq: f64,
    /// `E e²` when `e_law` is Gaussian.
    pub sigma_sq: f64,
    /// Tail index, only read for `ParetoTailB`.
    pub alpha: f64,
    /// Location of `b`, only read for `PointMassB`.
    pub b_point: f64,
    pub e_law: ELaw,
}

impl InnovationSpec {
    pub fn gaussian(omega_sq: f64, sigma_sq: f64) -> Self {
        Self {
            variant: InnovationVariant::GaussianBGaussianE,
            omega_sq,
            sigma_sq,
            alpha: 1.5,
            b_point: 0.0,
            e_law: ELaw::Gaussian,
        }
    }

    pub fn point_mass(b_point: f64, e_law: ELaw) -> Self {
        Self {
            variant: InnovationVariant::PointMassB,
            omega_sq: 1.0,
            sigma_sq: 1.0,
            alpha: 1.5,
            b_point,
            e_law,
        }
    }

    pub fn pareto(alpha: f64, omega_sq: f64, sigma_sq: f64) -> Self {
        Self {
            variant: InnovationVariant::ParetoTailB,
            omega_sq,
            sigma_sq,
            alpha,
            b_point: 0.0,
            e_law: ELaw::Gaussian,
        }
    }

    pub fn with_e_law(mut self, e_law: ELaw) -> Self {
        self.e_law = e_law;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        match self.variant {
            InnovationVariant::GaussianBGaussianE => {
                positive("omega_sq", self.omega_sq)?;
                if self.e_law != ELaw::Gaussian {
                    return Err(Error::Config(
                        "GaussianBGaussianE requires e_law = Gaussian".into(),
                    ));
                }
            }
            InnovationVariant::PointMassB => {
                if !self.b_point.is_finite() {
                    return Err(Error::Config(format!(
                        "b_point must be finite, got {}",
                        self.b_point
                    )));
                }
            }
            InnovationVariant::ParetoTailB => {
                positive("omega_sq", self.omega_sq)?;
                if !(self.alpha > 1.0 && self.alpha < 2.0) {
                    return Err(Error::Config(format!(
                        "alpha must lie in (1, 2), got {}",
                        self.alpha
                    )));
                }
            }
        }
        if self.e_law == ELaw::Gaussian {
            positive("sigma_sq", self.sigma_sq)?;
        }
        Ok(())
    }

    /// Scale `c` of the Pareto tail `P{b² > v} = (c/v)^α`.
    pub fn tail_scale(&self) -> Result<f64> {
        self.require_heavy_tail()?;
        Ok(self.omega_sq * (self.alpha - 1.0) / self.alpha)
    }

    fn require_heavy_tail(&self) -> Result<()> {
        if self.variant != InnovationVariant::ParetoTailB {
            return Err(Error::Domain(format!(
                "operation needs a ParetoTailB law, got {}",
                self.variant
            )));
        }
        Ok(())
    }

    /// Whether `b` is a genuine random variable (not a point mass).
    pub fn is_random_b(&self) -> bool {
        self.variant != InnovationVariant::PointMassB
    }
}

/// Validated sampler for one [`InnovationSpec`].
#[derive(Debug, Clone, Copy)]
pub struct InnovationSampler {
    spec: InnovationSpec,
    b_scale: f64,
    e_scale: f64,
    inv_alpha: f64,
}

impl InnovationSampler {
    pub fn new(spec: &InnovationSpec) -> Result<Self> {
        spec.validate()?;
        let b_scale = match spec.variant {
            InnovationVariant::GaussianBGaussianE => spec.omega_sq.sqrt(),
            InnovationVariant::PointMassB => spec.b_point,
            InnovationVariant::ParetoTailB => spec.tail_scale()?,
        };
        Ok(Self {
            spec: *spec,
            b_scale,
            e_scale: spec.sigma_sq.sqrt(),
            inv_alpha: 1.0 / spec.alpha,
        })
    }

    pub fn spec(&self) -> &InnovationSpec {
        &self.spec
    }

    #[inline]
    pub fn sample_b<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.spec.variant {
            InnovationVariant::GaussianBGaussianE => {
                self.b_scale * rng.sample::<f64, _>(StandardNormal)
            }
            InnovationVariant::PointMassB => self.b_scale,
            InnovationVariant::ParetoTailB => {
                let v = self.sample_b_squared(rng);
                if rng.random::<bool>() {
                    v.sqrt()
                } else {
                    -v.sqrt()
                }
            }
        }
    }

    /// One draw of `b²` for the Pareto law by inversion: `c · U^{-1/α}`.
    #[inline]
    pub fn sample_b_squared<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        debug_assert_eq!(self.spec.variant, InnovationVariant::ParetoTailB);
        // 1 - U lies in (0, 1]
        let u = 1.0 - rng.random::<f64>();
        self.b_scale * u.powf(-self.inv_alpha)
    }

    #[inline]
    pub fn sample_e<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.spec.e_law {
            ELaw::Gaussian => self.e_scale * rng.sample::<f64, _>(StandardNormal),
            ELaw::PointMass(c) => c,
        }
    }

    /// One pair `(b, e)`; `b` is drawn first.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let b = self.sample_b(rng);
        let e = self.sample_e(rng);
        (b, e)
    }
}

/// Draws one `(b₀, e₀)` pair from `spec`, advancing `rng`.
pub fn sample_pair<R: Rng + ?Sized>(spec: &InnovationSpec, rng: &mut R) -> Result<(f64, f64)> {
    Ok(InnovationSampler::new(spec)?.sample(rng))
}

/// Closed-form moments of an innovation law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    /// `E b²`
    pub omega_sq: f64,
    /// `E e²`
    pub sigma_sq: f64,
    /// `E b³`
    pub eb3: f64,
    /// `var(b²)`; `+inf` for the Pareto tail with `α < 2`.
    pub var_b2: f64,
}

/// Moments entering the limit covariance.
///
/// For `ParetoTailB`, `E b³` is reported as 0: `b` is symmetric, and the
/// value is the symmetric principal value when `E|b|³` itself diverges
/// (`α ≤ 3/2`).
pub fn moment_summary(spec: &InnovationSpec) -> Moments {
    let sigma_sq = match spec.e_law {
        ELaw::Gaussian => spec.sigma_sq,
        ELaw::PointMass(c) => c * c,
    };
    match spec.variant {
        InnovationVariant::GaussianBGaussianE => Moments {
            omega_sq: spec.omega_sq,
            sigma_sq,
            eb3: 0.0,
            var_b2: 2.0 * spec.omega_sq * spec.omega_sq,
        },
        InnovationVariant::PointMassB => Moments {
            omega_sq: spec.b_point * spec.b_point,
            sigma_sq,
            eb3: spec.b_point.powi(3),
            var_b2: 0.0,
        },
        InnovationVariant::ParetoTailB => Moments {
            omega_sq: spec.omega_sq,
            sigma_sq,
            eb3: 0.0,
            var_b2: f64::INFINITY,
        },
    }
}

const LYAPUNOV_ABS_TOL: f64 = 1e-10;
const LYAPUNOV_MAX_SEGMENTS: usize = 20_000;
// N(0,1) mass beyond ±37 is below 1e-298
const GAUSS_CUTOFF: f64 = 37.0;

/// `E log|φ + b₀|`, the almost-sure growth rate of `|X_n|`.
///
/// Point masses are evaluated exactly. The Gaussian and Pareto laws are
/// integrated with adaptive Gauss–Kronrod, split at the log singularity
/// `φ + b = 0`; the absolute accuracy is better than 1e-8.
///
/// For the Pareto law the symmetric sign gives
/// `E log|φ+b| = ½ E log|b² − φ²|`, and with `b² = c·U^{-1/α}` this is a
/// one-dimensional integral over `u ∈ (0, 1)`.
pub fn lyapunov_exponent(spec: &InnovationSpec, phi: f64) -> Result<f64> {
    spec.validate()?;
    if !phi.is_finite() {
        return Err(Error::Config(format!("phi must be finite, got {phi}")));
    }
    match spec.variant {
        InnovationVariant::PointMassB => Ok((phi + spec.b_point).abs().ln()),
        InnovationVariant::GaussianBGaussianE => {
            let omega = spec.omega_sq.sqrt();
            let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let integrand = |t: f64| (phi + omega * t).abs().ln() * density(t);
            let split = -phi / omega;
            let mut points = vec![-GAUSS_CUTOFF, 0.0, GAUSS_CUTOFF];
            if split.abs() < GAUSS_CUTOFF {
                points.push(split);
            }
            points.sort_by(f64::total_cmp);
            points.dedup();
            integrate_pieces(integrand, &points)
        }
        InnovationVariant::ParetoTailB => {
            let c = spec.tail_scale()?;
            let inv_alpha = 1.0 / spec.alpha;
            let phi_sq = phi * phi;
            let integrand = |u: f64| {
                let v = c * u.powf(-inv_alpha);
                if v > 2.0 * phi_sq {
                    v.ln() + (1.0 - phi_sq / v).abs().ln()
                } else {
                    (v - phi_sq).abs().ln()
                }
            };
            let mut points = vec![0.0, 1.0];
            if phi_sq > c {
                points.push((c / phi_sq).powf(spec.alpha));
            }
            points.sort_by(f64::total_cmp);
            points.dedup();
            Ok(0.5 * integrate_pieces(integrand, &points)?)
        }
    }
}

fn integrate_pieces<F: Fn(f64) -> f64>(f: F, points: &[f64]) -> Result<f64> {
    let mut total = numeric::CompensatedSum::new();
    for w in points.windows(2) {
        let q = numeric::integrate(&f, w[0], w[1], LYAPUNOV_ABS_TOL, 0.0, LYAPUNOV_MAX_SEGMENTS)?;
        total.add(q.value);
    }
    Ok(total.value())
}

/// Norming constant `a_n = inf{x : P{b² > x} ≤ 1/n}` of the heavy-tailed
/// partial sums; equal to `c · n^{1/α}` for the pure Pareto tail.
pub fn tail_norming(spec: &InnovationSpec, n: u64) -> Result<f64> {
    spec.validate()?;
    let c = spec.tail_scale()?;
    if n == 0 {
        return Err(Error::Usage("tail_norming needs n >= 1".into()));
    }
    Ok(c * (n as f64).powf(1.0 / spec.alpha))
}

/// `reps` independent draws of `(1/a_m) Σ_{i≤m} (b_i² − ω²)`, the empirical
/// reference law for the stable limit. Draw `r` uses `stream.child(r)`.
pub fn sample_stable_reference(
    alpha: f64,
    m: u64,
    reps: usize,
    spec: &InnovationSpec,
    stream: SeedStream,
) -> Result<Vec<f64>> {
    spec.validate()?;
    spec.require_heavy_tail()?;
    if alpha != spec.alpha {
        return Err(Error::Domain(format!(
            "reference alpha {alpha} does not match the law's alpha {}",
            spec.alpha
        )));
    }
    let a_m = tail_norming(spec, m)?;
    let sampler = InnovationSampler::new(spec)?;
    let omega_sq = spec.omega_sq;
    Ok((0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream.child(r).rng();
            let mut sum = 0.0;
            for _ in 0..m {
                sum += sampler.sample_b_squared(&mut rng) - omega_sq;
            }
            sum / a_m
        })
        .collect())
}
