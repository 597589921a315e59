//! Replication engine: runs independent simulate → estimate pipelines and
//! turns the standardized outputs into pass/fail verdicts.
//!
//! Replication `r` draws everything from `SeedStream::new(master_seed, r)`,
//! so any single replication can be rerun in isolation with
//! [`run_single_rep`], and results do not depend on the number of threads.

pub mod stats;
pub mod surface;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::asymptotics::{
    limit_covariances, standardize_normal, standardize_stable, LimitCovariances,
};
use crate::csv::fmt_f64;
use crate::error::{Error, Result};
use crate::estimator::{phi_interval, profile_over_y, EstimatorConfig, SearchRegion};
use crate::innovations::{
    lyapunov_exponent, moment_summary, sample_stable_reference, InnovationSpec, InnovationVariant,
    SeedStream,
};
use crate::likelihood::{loglik_diff_normalized, LikelihoodPoint};
use crate::numeric::normal_cdf;
use crate::process::{
    empirical_growth_rate, growth_diagnostics, simulate_with, ModelParams, SimulationOptions,
};

pub use stats::{ks_one_sample, ks_two_sample, rank_correlation};
pub use surface::{
    likelihood_surface_scan, RungGap, RungMedian, SurfaceLattice, SurfaceRow, SurfaceScan,
};

/// Stream index reserved for the stable-law reference sample.
pub const REFERENCE_STREAM: u64 = u64::MAX;

/// Largest tolerated share of failed replications.
pub const MAX_FAILED_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    NormalLimit,
    StableLimit,
    Consistency,
    YProfile,
    Growth,
    LikelihoodSurface,
    Identifiability,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::NormalLimit,
        ExperimentKind::StableLimit,
        ExperimentKind::Consistency,
        ExperimentKind::YProfile,
        ExperimentKind::Growth,
        ExperimentKind::LikelihoodSurface,
        ExperimentKind::Identifiability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::NormalLimit => "normal_limit",
            ExperimentKind::StableLimit => "stable_limit",
            ExperimentKind::Consistency => "consistency",
            ExperimentKind::YProfile => "y_profile",
            ExperimentKind::Growth => "growth",
            ExperimentKind::LikelihoodSurface => "likelihood_surface",
            ExperimentKind::Identifiability => "identifiability",
        }
    }

    /// Kinds that run the QMLE over the search region.
    pub fn estimates(self) -> bool {
        matches!(
            self,
            ExperimentKind::NormalLimit
                | ExperimentKind::StableLimit
                | ExperimentKind::Consistency
                | ExperimentKind::YProfile
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                format!(
                    "unknown experiment kind {s:?}; expected one of {}",
                    names.join(", ")
                )
            })
    }
}

/// Size of the heavy-tailed reference sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableReference {
    /// Summands per reference draw.
    pub m: u64,
    pub reps: usize,
}

impl Default for StableReference {
    fn default() -> Self {
        StableReference {
            m: 100_000,
            reps: 2000,
        }
    }
}

/// Profiles of `L_n / n` in `y` and in `x` over one geometric grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentProfile {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for IdentProfile {
    fn default() -> Self {
        IdentProfile {
            lo: 0.25,
            hi: 4.0,
            points: 17,
        }
    }
}

impl IdentProfile {
    pub fn grid(&self) -> Vec<f64> {
        let ratio = (self.hi / self.lo).ln();
        (0..self.points)
            .map(|i| self.lo * (ratio * i as f64 / (self.points - 1) as f64).exp())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub params: ModelParams,
    pub spec: InnovationSpec,
    pub n: usize,
    pub reps: usize,
    pub master_seed: u64,
    pub region: SearchRegion,
    pub y_values: Vec<f64>,
    pub estimator: EstimatorConfig,
    pub ci_level: f64,
    pub surface: SurfaceLattice,
    pub stable: StableReference,
    pub ident: IdentProfile,
}

impl ExperimentConfig {
    /// Reference setting for `kind`: Gaussian `b` and `e` with
    /// `φ = 1.5, ω² = σ² = 1`, `n = 2000`, `reps = 1000`, `y = σ²`.
    /// The stable kind switches to the Pareto tail with `α = 1.5`.
    pub fn reference(kind: ExperimentKind) -> Self {
        let phi = 1.5;
        let spec = match kind {
            ExperimentKind::StableLimit => InnovationSpec::pareto(1.5, 1.0, 1.0),
            _ => InnovationSpec::gaussian(1.0, 1.0),
        };
        ExperimentConfig {
            kind,
            params: ModelParams::new(phi),
            spec,
            n: 2000,
            reps: 1000,
            master_seed: 1,
            region: default_region(phi, spec.omega_sq, kind),
            y_values: vec![spec.sigma_sq],
            estimator: EstimatorConfig::default(),
            ci_level: 0.95,
            surface: SurfaceLattice::around(phi, spec.omega_sq, spec.sigma_sq),
            stable: StableReference::default(),
            ident: IdentProfile::default(),
        }
    }

    /// `(φ, ω²)`.
    pub fn truth(&self) -> (f64, f64) {
        (self.params.phi, moment_summary(&self.spec).omega_sq)
    }

    pub fn stream(&self, rep: u64) -> SeedStream {
        SeedStream::new(self.master_seed, rep)
    }

    /// Checks every precondition, including the Lyapunov gate, and returns
    /// the Lyapunov exponent.
    pub fn validate(&self) -> Result<f64> {
        if self.reps < 1 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.n < 10 {
            return Err(Error::Config(format!(
                "n must be at least 10, got {}",
                self.n
            )));
        }
        self.params.validate()?;
        self.spec.validate()?;
        if self.kind.estimates() {
            self.region.validate()?;
            self.estimator.validate()?;
        }
        if self.y_values.is_empty() || self.y_values.iter().any(|&y| !(y.is_finite() && y > 0.0)) {
            return Err(Error::Config(
                "y_values must be a nonempty list of positive numbers".into(),
            ));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        let (phi, omega_sq) = self.truth();
        if self.kind.estimates() && !self.region.contains_with_margin(phi, omega_sq, 0.05) {
            return Err(Error::Config(format!(
                "truth (phi, omega_sq) = ({phi}, {omega_sq}) must lie inside the search region \
                 with a 5% margin on each side"
            )));
        }
        match self.kind {
            ExperimentKind::NormalLimit => {
                limit_covariances(&self.spec)?;
            }
            ExperimentKind::StableLimit => {
                if self.spec.variant != InnovationVariant::ParetoTailB {
                    return Err(Error::Config(
                        "stable_limit needs innov.variant = ParetoTailB".into(),
                    ));
                }
                if self.stable.m < 1 || self.stable.reps < 1 {
                    return Err(Error::Config(
                        "stable reference needs m >= 1 and reps >= 1".into(),
                    ));
                }
            }
            ExperimentKind::LikelihoodSurface => {
                self.surface.validate(self.n)?;
            }
            ExperimentKind::Identifiability => {
                if !(self.ident.lo > 0.0 && self.ident.hi > self.ident.lo && self.ident.points >= 2)
                {
                    return Err(Error::Config(
                        "ident needs 0 < lo < hi and at least 2 points".into(),
                    ));
                }
            }
            ExperimentKind::Consistency | ExperimentKind::YProfile | ExperimentKind::Growth => {}
        }
        let lyap = lyapunov_exponent(&self.spec, phi)?;
        if lyap < 0.0 {
            return Err(Error::Config(format!(
                "E log|phi + b| = {lyap:.6} < 0: the process is in the stationary regime"
            )));
        }
        let sigma_sq = moment_summary(&self.spec).sigma_sq;
        let varies_y = match self.kind {
            ExperimentKind::LikelihoodSurface | ExperimentKind::Identifiability => true,
            ExperimentKind::Growth => true,
            _ => self.y_values.iter().any(|&y| y != sigma_sq),
        };
        if varies_y && lyap <= 0.0 {
            return Err(Error::Config(format!(
                "E log|phi + b| = {lyap} must be strictly positive for this experiment"
            )));
        }
        Ok(lyap)
    }
}

/// `[φ − 1, φ + 1] × [ω²/4, 4ω²]`, widened to `10ω²` above for the stable
/// kind, whose variance estimates have a heavy right tail.
/// A degenerate `ω² = 0` (point-mass `b = 0`) falls back to `ω² = 1` scaling.
pub fn default_region(phi: f64, omega_sq: f64, kind: ExperimentKind) -> SearchRegion {
    let omega_sq = if omega_sq > 0.0 { omega_sq } else { 1.0 };
    let x_hi = if kind == ExperimentKind::StableLimit {
        10.0
    } else {
        4.0
    };
    SearchRegion {
        s_lo: phi - 1.0,
        s_hi: phi + 1.0,
        x_lo: omega_sq / 4.0,
        x_hi: x_hi * omega_sq,
    }
}

/// One line of `records.csv`.
///
/// Column meaning depends on the experiment kind:
///
/// | kind | y | eta1 | eta2 | z1 | z2_or_w |
/// |---|---|---|---|---|---|
/// | normal_limit | y | η̂₁ | η̂₂ | whitened 1 | whitened 2 |
/// | stable_limit | y | η̂₁ | η̂₂ | √n(η̂₁−φ)/ω | n(η̂₂−ω²)/a_n |
/// | consistency | y | η̂₁ | η̂₂ | η̂₁−φ | η̂₂−ω² |
/// | y_profile | y | η̂₁ | η̂₂ | √n(η̂₁−φ)/ω | √n(η̂₁−φ)/√η̂₂ |
/// | growth | NaN | normalized(n) | normalized(n/2) | abs gap | rate − Lyapunov |
/// | identifiability | NaN | range in y | range in x | NaN | NaN |
/// | likelihood_surface | NaN | ladder n | sup-gap | y-spread | NaN |
#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub rep: u64,
    pub y: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub z1: f64,
    pub z2_or_w: f64,
    pub failed: bool,
    pub reason: String,
}

impl RepRecord {
    pub const CSV_HEADER: &'static str = "rep,y,eta1,eta2,z1,z2_or_w,failed,reason";

    fn ok(rep: u64, y: f64, eta: (f64, f64), z: (f64, f64)) -> Self {
        RepRecord {
            rep,
            y,
            eta1: eta.0,
            eta2: eta.1,
            z1: z.0,
            z2_or_w: z.1,
            failed: false,
            reason: String::new(),
        }
    }

    fn from_gap(g: &surface::RungGap) -> Self {
        RepRecord::ok(
            g.rep,
            f64::NAN,
            (g.n as f64, g.sup_gap),
            (g.y_spread, f64::NAN),
        )
    }

    fn failure(rep: u64, err: &Error) -> Self {
        let reason: String = err
            .to_string()
            .chars()
            .map(|c| match c {
                ',' => ';',
                '\n' | '\r' => ' ',
                c => c,
            })
            .collect();
        RepRecord {
            rep,
            y: f64::NAN,
            eta1: f64::NAN,
            eta2: f64::NAN,
            z1: f64::NAN,
            z2_or_w: f64::NAN,
            failed: true,
            reason,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.rep,
            fmt_f64(self.y),
            fmt_f64(self.eta1),
            fmt_f64(self.eta2),
            fmt_f64(self.z1),
            fmt_f64(self.z2_or_w),
            self.failed,
            self.reason
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.splitn(8, ',').collect();
        if fields.len() != 8 {
            return Err(Error::Config(format!(
                "record row needs 8 fields: {line:?}"
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|e| {
                Error::Config(format!("bad number {:?} in record row: {e}", fields[i]))
            })
        };
        Ok(RepRecord {
            rep: fields[0]
                .parse()
                .map_err(|e| Error::Config(format!("bad rep {:?}: {e}", fields[0])))?,
            y: num(1)?,
            eta1: num(2)?,
            eta2: num(3)?,
            z1: num(4)?,
            z2_or_w: num(5)?,
            failed: fields[6]
                .parse()
                .map_err(|e| Error::Config(format!("bad flag {:?}: {e}", fields[6])))?,
            reason: fields[7].to_string(),
        })
    }
}

pub fn records_to_csv(records: &[RepRecord]) -> String {
    let mut out = String::from(RepRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<RepRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == RepRecord::CSV_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "records file must start with {:?}, found {other:?}",
                RepRecord::CSV_HEADER
            )))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(RepRecord::parse_csv_row)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub statistic: String,
    /// `y` slice the statistic belongs to; NaN when it applies to all.
    pub y: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub checks: Vec<Check>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn value(&self, statistic: &str, y: Option<f64>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.statistic == statistic
                    && match y {
                        Some(y) => r.y == y,
                        None => r.y.is_nan(),
                    }
            })
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("statistic,y,value\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{}\n",
                r.statistic,
                fmt_f64(r.y),
                fmt_f64(r.value)
            ));
        }
        out
    }

    /// One `PASS`/`FAIL` line per check and a closing overall line.
    pub fn verdict_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{tag} {}: {}\n", c.name, c.detail));
        }
        let overall = if self.passed() { "PASS" } else { "FAIL" };
        out.push_str(&format!("overall: {overall}\n"));
        out
    }

    fn row(&mut self, statistic: &str, y: f64, value: f64) {
        self.rows.push(SummaryRow {
            statistic: statistic.to_string(),
            y,
            value,
        });
    }

    fn check(&mut self, name: String, passed: bool, detail: String) {
        self.checks.push(Check {
            name,
            passed,
            detail,
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub lyapunov: f64,
    pub records: Vec<RepRecord>,
    /// `(rep, reason)` for every failed replication.
    pub failed_reps: Vec<(u64, String)>,
    pub reference: Option<Vec<f64>>,
    pub surface: Option<SurfaceScan>,
    pub summary: Summary,
    pub wall_time: Duration,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.summary.passed()
    }
}

/// Everything a replication needs that does not depend on its stream.
#[derive(Debug, Clone)]
struct Context {
    truth: (f64, f64),
    lyapunov: f64,
    cov: Option<LimitCovariances>,
}

impl Context {
    fn new(cfg: &ExperimentConfig, lyapunov: f64) -> Result<Self> {
        let cov = match cfg.kind {
            ExperimentKind::NormalLimit => Some(limit_covariances(&cfg.spec)?),
            _ => None,
        };
        Ok(Context {
            truth: cfg.truth(),
            lyapunov,
            cov,
        })
    }
}

/// Runs replication `rep` alone and returns its records (a single failed
/// record if any stage errs).
pub fn run_single_rep(cfg: &ExperimentConfig, rep: u64) -> Result<Vec<RepRecord>> {
    let lyap = cfg.validate()?;
    let ctx = Context::new(cfg, lyap)?;
    Ok(rep_records(cfg, &ctx, rep))
}

fn rep_records(cfg: &ExperimentConfig, ctx: &Context, rep: u64) -> Vec<RepRecord> {
    pipeline(cfg, ctx, rep).unwrap_or_else(|e| vec![RepRecord::failure(rep, &e)])
}

fn pipeline(cfg: &ExperimentConfig, ctx: &Context, rep: u64) -> Result<Vec<RepRecord>> {
    let (phi, omega_sq) = ctx.truth;
    let n = cfg.n;
    let nf = n as f64;
    let opts = SimulationOptions {
        record_innovations: cfg.kind == ExperimentKind::Growth,
        scaled_channel: true,
    };
    if cfg.kind == ExperimentKind::LikelihoodSurface {
        let (_, gaps) = surface::replication_gaps(cfg, rep)?;
        return Ok(gaps.iter().map(RepRecord::from_gap).collect());
    }
    let traj = simulate_with(cfg.params, &cfg.spec, n, cfg.stream(rep), opts)?;
    match cfg.kind {
        ExperimentKind::Growth => {
            let g = growth_diagnostics(&traj)?;
            let (a, b) = (g.normalized[n], g.normalized[n / 2]);
            let rate = empirical_growth_rate(&traj)?;
            Ok(vec![RepRecord::ok(
                rep,
                f64::NAN,
                (a, b),
                ((a - b).abs(), rate - ctx.lyapunov),
            )])
        }
        ExperimentKind::Identifiability => {
            let sigma_sq = moment_summary(&cfg.spec).sigma_sq;
            let theta = LikelihoodPoint::new(phi, omega_sq, sigma_sq)?;
            let grid = cfg.ident.grid();
            let range = |points: &mut dyn Iterator<Item = Result<LikelihoodPoint>>| -> Result<f64> {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for u in points {
                    let d = loglik_diff_normalized(&traj, &u?, &theta)?;
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
                Ok(hi - lo)
            };
            let y_range = range(&mut grid.iter().map(|&y| LikelihoodPoint::new(phi, omega_sq, y)))?;
            let x_range = range(&mut grid.iter().map(|&x| LikelihoodPoint::new(phi, x, sigma_sq)))?;
            Ok(vec![RepRecord::ok(
                rep,
                f64::NAN,
                (y_range, x_range),
                (f64::NAN, f64::NAN),
            )])
        }
        _ => {
            let ests = profile_over_y(&traj, &cfg.region, &cfg.y_values, &cfg.estimator)?;
            ests.iter()
                .map(|est| {
                    if !est.converged {
                        return Err(Error::Numerical(format!(
                            "Newton iteration did not converge at y = {}",
                            est.y
                        )));
                    }
                    let dev = est.eta1 - phi;
                    let z = match cfg.kind {
                        ExperimentKind::NormalLimit => standardize_normal(
                            est,
                            ctx.truth,
                            n,
                            ctx.cov.as_ref().expect("normal kind has covariances"),
                        )?,
                        ExperimentKind::StableLimit => {
                            standardize_stable(est, ctx.truth, n, &cfg.spec)?
                        }
                        ExperimentKind::Consistency => (dev, est.eta2 - omega_sq),
                        ExperimentKind::YProfile => (
                            nf.sqrt() * dev / omega_sq.sqrt(),
                            nf.sqrt() * dev / est.eta2.sqrt(),
                        ),
                        _ => unreachable!("non-estimating kinds handled above"),
                    };
                    Ok(RepRecord::ok(rep, est.y, (est.eta1, est.eta2), z))
                })
                .collect()
        }
    }
}

/// Runs all replications (in parallel on the current rayon pool) and
/// aggregates them.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let lyapunov = cfg.validate()?;
    let ctx = Context::new(cfg, lyapunov)?;

    let (records, surface) = if cfg.kind == ExperimentKind::LikelihoodSurface {
        let scan = likelihood_surface_scan(cfg)?;
        let mut records: Vec<RepRecord> = scan.gaps.iter().map(RepRecord::from_gap).collect();
        records.extend(
            scan.failures
                .iter()
                .map(|(rep, e)| RepRecord::failure(*rep, e)),
        );
        records.sort_by_key(|r| r.rep);
        (records, Some(scan))
    } else {
        let per_rep: Vec<Vec<RepRecord>> = (0..cfg.reps as u64)
            .into_par_iter()
            .map(|rep| rep_records(cfg, &ctx, rep))
            .collect();
        (per_rep.into_iter().flatten().collect::<Vec<_>>(), None)
    };

    let failed_reps: Vec<(u64, String)> = records
        .iter()
        .filter(|r| r.failed)
        .map(|r| (r.rep, r.reason.clone()))
        .collect();
    if failed_reps.len() as f64 > MAX_FAILED_SHARE * cfg.reps as f64 {
        return Err(Error::ExperimentFailed {
            failed: failed_reps.len(),
            reps: cfg.reps,
            first_reason: failed_reps[0].1.clone(),
        });
    }

    let reference = match cfg.kind {
        ExperimentKind::StableLimit => Some(stable_reference(cfg)?),
        _ => None,
    };
    let summary = summarize(cfg, &records, reference.as_deref())?;
    Ok(ExperimentReport {
        config: cfg.clone(),
        lyapunov,
        records,
        failed_reps,
        reference,
        surface,
        summary,
        wall_time: start.elapsed(),
    })
}

/// The partial-sum reference sample for the stable coordinate.
pub fn stable_reference(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    sample_stable_reference(
        cfg.spec.alpha,
        cfg.stable.m,
        cfg.stable.reps,
        &cfg.spec,
        cfg.stream(REFERENCE_STREAM),
    )
}

/// Recomputes the summary and verdict checks from the records alone (and
/// the stable reference sample for the stable kind). The result does not
/// depend on record order.
pub fn summarize(
    cfg: &ExperimentConfig,
    records: &[RepRecord],
    reference: Option<&[f64]>,
) -> Result<Summary> {
    let lyapunov = cfg.validate()?;
    let mut ok: Vec<&RepRecord> = records.iter().filter(|r| !r.failed).collect();
    ok.sort_by(|a, b| {
        a.rep
            .cmp(&b.rep)
            .then(a.y.total_cmp(&b.y))
            .then(a.eta1.total_cmp(&b.eta1))
    });
    let mut failed: Vec<u64> = records.iter().filter(|r| r.failed).map(|r| r.rep).collect();
    failed.sort_unstable();
    failed.dedup();

    let mut sum = Summary::default();
    sum.row("replications", f64::NAN, cfg.reps as f64);
    sum.row("failed_replications", f64::NAN, failed.len() as f64);
    sum.check(
        "failed_share".into(),
        failed.len() as f64 <= MAX_FAILED_SHARE * cfg.reps as f64,
        format!(
            "{} of {} replications failed (limit 5%)",
            failed.len(),
            cfg.reps
        ),
    );

    let (phi, omega_sq) = cfg.truth();
    let nf = cfg.n as f64;
    let slice = |y: f64| -> Vec<&RepRecord> { ok.iter().copied().filter(|r| r.y == y).collect() };
    let col = |rs: &[&RepRecord], f: fn(&RepRecord) -> f64| -> Vec<f64> {
        rs.iter().map(|r| f(r)).collect()
    };

    match cfg.kind {
        ExperimentKind::NormalLimit => {
            for &y in &cfg.y_values {
                let rs = slice(y);
                let (z1, z2) = (col(&rs, |r| r.z1), col(&rs, |r| r.z2_or_w));
                sum.row("count", y, rs.len() as f64);
                let (m1, m2) = (stats::mean(&z1), stats::mean(&z2));
                sum.row("mean_z1", y, m1);
                sum.row("mean_z2", y, m2);
                let cov = [
                    stats::covariance(&z1, &z1),
                    stats::covariance(&z1, &z2),
                    stats::covariance(&z2, &z2),
                ];
                sum.row("cov_11", y, cov[0]);
                sum.row("cov_12", y, cov[1]);
                sum.row("cov_22", y, cov[2]);
                let ks1 = ks_or_nan(&z1, normal_cdf);
                let ks2 = ks_or_nan(&z2, normal_cdf);
                sum.row("ks_d_z1", y, ks1.0);
                sum.row("ks_p_z1", y, ks1.1);
                sum.row("ks_d_z2", y, ks2.0);
                sum.row("ks_p_z2", y, ks2.1);
                let covered = coverage(&rs, phi, cfg.n, cfg.ci_level)?;
                sum.row("ci_covered", y, covered as f64);
                sum.row("ci_coverage", y, covered as f64 / rs.len() as f64);

                sum.check(
                    format!("mean_z1[y={y}]"),
                    m1.abs() < 0.1,
                    format!("|{m1:.4}| < 0.1"),
                );
                sum.check(
                    format!("mean_z2[y={y}]"),
                    m2.abs() < 0.1,
                    format!("|{m2:.4}| < 0.1"),
                );
                let dev = (cov[0] - 1.0)
                    .abs()
                    .max(cov[1].abs())
                    .max((cov[2] - 1.0).abs());
                sum.check(
                    format!("covariance[y={y}]"),
                    dev < 0.15,
                    format!(
                        "cov = [[{:.4}, {:.4}], [{:.4}, {:.4}]], max |cov - I| = {dev:.4} < 0.15",
                        cov[0], cov[1], cov[1], cov[2]
                    ),
                );
                ks_check(&mut sum, format!("ks_z1[y={y}]"), ks1);
                ks_check(&mut sum, format!("ks_z2[y={y}]"), ks2);
            }
        }
        ExperimentKind::YProfile => {
            for &y in &cfg.y_values {
                let rs = slice(y);
                let (z1, z2) = (col(&rs, |r| r.z1), col(&rs, |r| r.z2_or_w));
                sum.row("count", y, rs.len() as f64);
                let ks1 = ks_or_nan(&z1, normal_cdf);
                let ks2 = ks_or_nan(&z2, normal_cdf);
                sum.row("ks_d_z1", y, ks1.0);
                sum.row("ks_p_z1", y, ks1.1);
                sum.row("ks_d_selfnorm", y, ks2.0);
                sum.row("ks_p_selfnorm", y, ks2.1);
                let covered = coverage(&rs, phi, cfg.n, cfg.ci_level)?;
                let cov_rate = covered as f64 / rs.len() as f64;
                sum.row("ci_covered", y, covered as f64);
                sum.row("ci_coverage", y, cov_rate);
                ks_check(&mut sum, format!("ks_z1[y={y}]"), ks1);
                ks_check(&mut sum, format!("ks_selfnorm[y={y}]"), ks2);
                sum.check(
                    format!("ci_coverage[y={y}]"),
                    cov_rate > 0.92 && cov_rate < 0.975,
                    format!("{covered}/{} = {cov_rate:.4} in (0.92, 0.975)", rs.len()),
                );
            }
            if cfg.y_values.len() >= 2 {
                let spread = y_spread_of_eta1(&ok, cfg.y_values.len());
                let med = stats::median(&spread);
                let bound = 0.5 * omega_sq.sqrt() / nf.sqrt();
                sum.row("median_sd_eta1_across_y", f64::NAN, med);
                sum.check(
                    "y_insensitivity".into(),
                    med < bound,
                    format!("median sd of eta1 across y = {med:.3e} < {bound:.3e}"),
                );
            }
        }
        ExperimentKind::Consistency => {
            for &y in &cfg.y_values {
                let rs = slice(y);
                let hits = rs
                    .iter()
                    .filter(|r| r.z1.abs() < 0.15 && r.z2_or_w.abs() < 0.15)
                    .count();
                let share = hits as f64 / rs.len() as f64;
                sum.row("count", y, rs.len() as f64);
                sum.row(
                    "mean_abs_err_eta1",
                    y,
                    stats::mean(&col(&rs, |r| r.z1.abs())),
                );
                sum.row(
                    "mean_abs_err_eta2",
                    y,
                    stats::mean(&col(&rs, |r| r.z2_or_w.abs())),
                );
                sum.row("share_within_0.15", y, share);
                sum.check(
                    format!("consistency[y={y}]"),
                    share >= 0.95,
                    format!(
                        "{hits}/{} estimates within 0.15 of the truth (>= 95%)",
                        rs.len()
                    ),
                );
            }
        }
        ExperimentKind::StableLimit => {
            let reference = reference.ok_or_else(|| {
                Error::Usage("stable_limit summaries need the reference sample".into())
            })?;
            sum.row("reference_size", f64::NAN, reference.len() as f64);
            for &y in &cfg.y_values {
                let rs = slice(y);
                let (z1, w) = (col(&rs, |r| r.z1), col(&rs, |r| r.z2_or_w));
                sum.row("count", y, rs.len() as f64);
                let ksw = if w.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    ks_two_sample(&w, reference)?
                };
                let ks1 = ks_or_nan(&z1, normal_cdf);
                let tau = rank_correlation(&z1, &w).unwrap_or(f64::NAN);
                sum.row("ks_d_w_vs_reference", y, ksw.0);
                sum.row("ks_p_w_vs_reference", y, ksw.1);
                sum.row("ks_d_z1", y, ks1.0);
                sum.row("ks_p_z1", y, ks1.1);
                sum.row("kendall_tau", y, tau);
                sum.row("median_w", y, stats::median(&w));
                ks_check(&mut sum, format!("ks_w_vs_reference[y={y}]"), ksw);
                ks_check(&mut sum, format!("ks_z1[y={y}]"), ks1);
                sum.check(
                    format!("kendall_tau[y={y}]"),
                    tau.abs() < 0.05,
                    format!("|{tau:.4}| < 0.05"),
                );
            }
        }
        ExperimentKind::Growth => {
            let gap = col(&ok, |r| r.z1);
            let rate_err = col(&ok, |r| r.z2_or_w.abs());
            let (mg, mr) = (stats::median(&gap), stats::median(&rate_err));
            sum.row("lyapunov_exponent", f64::NAN, lyapunov);
            sum.row("median_normalized_gap", f64::NAN, mg);
            sum.row("median_abs_rate_error", f64::NAN, mr);
            sum.check(
                "normalized_convergence".into(),
                mg < 1e-3,
                format!("median |normalized(n) - normalized(n/2)| = {mg:.3e} < 1e-3"),
            );
            sum.check(
                "growth_rate".into(),
                mr < 0.05,
                format!("median |log|X_n|/n - {lyapunov:.6}| = {mr:.4} < 0.05"),
            );
        }
        ExperimentKind::Identifiability => {
            let yr = col(&ok, |r| r.eta1);
            let xr = col(&ok, |r| r.eta2);
            let max_y = yr.iter().copied().fold(f64::NAN, f64::max);
            let min_x = xr.iter().copied().fold(f64::NAN, f64::min);
            sum.row("median_y_profile_range", f64::NAN, stats::median(&yr));
            sum.row("max_y_profile_range", f64::NAN, max_y);
            sum.row("median_x_profile_range", f64::NAN, stats::median(&xr));
            sum.row("min_x_profile_range", f64::NAN, min_x);
            sum.check(
                "y_profile_flat".into(),
                max_y < 0.02,
                format!("largest range of L_n/n over y = {max_y:.3e} < 0.02"),
            );
            sum.check(
                "x_profile_informative".into(),
                min_x > 0.2,
                format!("smallest range of L_n/n over x = {min_x:.4} > 0.2"),
            );
        }
        ExperimentKind::LikelihoodSurface => {
            let ladder = cfg.surface.rungs(cfg.n);
            let mut medians = Vec::with_capacity(ladder.len());
            for &m in &ladder {
                let rs: Vec<&RepRecord> =
                    ok.iter().copied().filter(|r| r.eta1 == m as f64).collect();
                let gap = stats::median(&col(&rs, |r| r.eta2));
                let spread = stats::median(&col(&rs, |r| r.z1));
                sum.row(&format!("median_sup_gap[n={m}]"), f64::NAN, gap);
                sum.row(&format!("median_y_spread[n={m}]"), f64::NAN, spread);
                medians.push((m, gap, spread));
            }
            let decreasing = medians.windows(2).all(|w| w[1].1 < w[0].1);
            let listing: Vec<String> = medians
                .iter()
                .map(|(m, g, _)| format!("{m}: {g:.4}"))
                .collect();
            sum.check(
                "sup_gap_decreasing".into(),
                decreasing,
                format!("median sup-gap by n = {}", listing.join(", ")),
            );
            let &(m, gap, spread) = medians.last().expect("ladder is nonempty");
            sum.check(
                "sup_gap_small".into(),
                gap < 0.05,
                format!("median sup-gap at n = {m} is {gap:.4} < 0.05"),
            );
            sum.check(
                "y_flatness".into(),
                spread < 0.05,
                format!("median spread over y at n = {m} is {spread:.4} < 0.05"),
            );
        }
    }
    Ok(sum)
}

fn ks_or_nan<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> (f64, f64) {
    ks_one_sample(sample, cdf).unwrap_or((f64::NAN, f64::NAN))
}

fn ks_check(sum: &mut Summary, name: String, (d, p): (f64, f64)) {
    sum.check(name, p > 0.01, format!("D = {d:.4}, p = {p:.4} > 0.01"));
}

/// Number of records whose interval for `φ` contains the truth.
fn coverage(rs: &[&RepRecord], phi: f64, n: usize, level: f64) -> Result<usize> {
    let mut covered = 0;
    for r in rs {
        if phi_interval(r.eta1, r.eta2, n, level)?.contains(phi) {
            covered += 1;
        }
    }
    Ok(covered)
}

/// Sample standard deviation of `eta1` across the `y` values, per
/// replication with a complete set of estimates. `ok` must be sorted by rep.
fn y_spread_of_eta1(ok: &[&RepRecord], ys: usize) -> Vec<f64> {
    ok.chunk_by(|a, b| a.rep == b.rep)
        .filter(|g| g.len() == ys)
        .map(|g| {
            let v: Vec<f64> = g.iter().map(|r| r.eta1).collect();
            stats::covariance(&v, &v).sqrt()
        })
        .collect()
}
