//! Quasi-maximum likelihood estimation of `(φ, ω²)` over a compact rectangle.
//!
//! `qmle` first evaluates `L_n(·, ·, y)` on a full grid (each grid column
//! costs one pass over the data, since `L_n` is quadratic in `s` for fixed
//! `x` and `y`), then runs projected Newton from the best few nodes and keeps
//! the best endpoint. The grid maximum is retained as an audit value: the
//! returned log-likelihood never falls below it.

use std::cmp::Ordering;

use nalgebra::{Matrix2, SymmetricEigen};

use crate::csv::fmt_f64;
use crate::error::{Error, Result};
use crate::likelihood::{check_trajectory, local_model, ColumnSums, LikelihoodPoint, LocalModel};
use crate::numeric::normal_quantile;
use crate::process::Trajectory;

/// The rectangle `[s_lo, s_hi] × [x_lo, x_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchRegion {
    pub s_lo: f64,
    pub s_hi: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl SearchRegion {
    pub fn new(s_lo: f64, s_hi: f64, x_lo: f64, x_hi: f64) -> Result<Self> {
        let region = Self {
            s_lo,
            s_hi,
            x_lo,
            x_hi,
        };
        region.validate()?;
        Ok(region)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.s_lo, self.s_hi, self.x_lo, self.x_hi]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.s_lo >= self.s_hi || self.x_lo <= 0.0 || self.x_lo >= self.x_hi {
            return Err(Error::Config(format!(
                "search region needs s_lo < s_hi and 0 < x_lo < x_hi, got [{}, {}] x [{}, {}]",
                self.s_lo, self.s_hi, self.x_lo, self.x_hi
            )));
        }
        Ok(())
    }

    /// Whether `(s, x)` lies inside with at least `frac` of each side length
    /// to spare on both ends.
    pub fn contains_with_margin(&self, s: f64, x: f64, frac: f64) -> bool {
        let ms = frac * (self.s_hi - self.s_lo);
        let mx = frac * (self.x_hi - self.x_lo);
        s >= self.s_lo + ms && s <= self.s_hi - ms && x >= self.x_lo + mx && x <= self.x_hi - mx
    }

    pub fn contains(&self, s: f64, x: f64) -> bool {
        self.contains_with_margin(s, x, 0.0)
    }

    fn lower(&self) -> [f64; 2] {
        [self.s_lo, self.x_lo]
    }

    fn upper(&self) -> [f64; 2] {
        [self.s_hi, self.x_hi]
    }

    fn project(&self, z: [f64; 2]) -> [f64; 2] {
        [
            z[0].clamp(self.s_lo, self.s_hi),
            z[1].clamp(self.x_lo, self.x_hi),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub grid_s: usize,
    pub grid_x: usize,
    /// Stopping tolerance on the sup-norm of the projected score divided by `n`.
    pub newton_tol: f64,
    pub max_iters: usize,
    /// Number of best grid nodes refined by Newton.
    pub refine_starts: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            grid_s: 64,
            grid_x: 64,
            newton_tol: 1e-10,
            max_iters: 100,
            refine_starts: 3,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_s < 2 || self.grid_x < 2 {
            return Err(Error::Config("grid sizes must be at least 2".into()));
        }
        if self.max_iters == 0 || self.refine_starts == 0 {
            return Err(Error::Config(
                "max_iters and refine_starts must be positive".into(),
            ));
        }
        if !(self.newton_tol > 0.0 && self.newton_tol < 1.0) {
            return Err(Error::Config(format!(
                "newton_tol must lie in (0, 1), got {}",
                self.newton_tol
            )));
        }
        Ok(())
    }
}

/// Best grid node seen during the global search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAudit {
    pub s: f64,
    pub x: f64,
    pub value: f64,
    pub nodes: usize,
}

/// One maximizer `η̂_n(y) = (eta1, eta2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateResult {
    pub n: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub y: f64,
    pub loglik_value: f64,
    /// `‖∇L_n‖_∞ / n` at the returned point (full, not projected, score).
    pub grad_norm: f64,
    pub iterations: usize,
    pub on_boundary: bool,
    /// `eta2` equals the lower variance bound `x_lo`.
    pub eta2_at_floor: bool,
    /// Newton could not move off the best grid node.
    pub grid_fallback_used: bool,
    pub converged: bool,
    pub audit: GridAudit,
}

impl EstimateResult {
    pub const CSV_HEADER: &'static str = "n,y,eta1,eta2,loglik,grad_norm,on_boundary";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.n,
            fmt_f64(self.y),
            fmt_f64(self.eta1),
            fmt_f64(self.eta2),
            fmt_f64(self.loglik_value),
            fmt_f64(self.grad_norm),
            self.on_boundary
        )
    }
}

fn lex_cmp(a: (f64, f64), b: (f64, f64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))
}

/// Candidate ordering: larger value first, then lexicographically smaller `(s, x)`.
fn better(a: (f64, f64, f64), b: (f64, f64, f64)) -> Ordering {
    b.2.total_cmp(&a.2).then(lex_cmp((a.0, a.1), (b.0, b.1)))
}

fn grid_axis(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let step = (hi - lo) / (count - 1) as f64;
    (0..count)
        .map(|i| {
            if i + 1 == count {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct NewtonOutcome {
    z: [f64; 2],
    model: LocalModel,
    iterations: usize,
    converged: bool,
    moved: bool,
}

fn point(z: [f64; 2], y: f64) -> LikelihoodPoint {
    LikelihoodPoint {
        s: z[0],
        x: z[1],
        y,
    }
}

/// Coordinates pinned at a bound with the score pointing outward.
fn active_set(z: [f64; 2], g: [f64; 2], region: &SearchRegion) -> [bool; 2] {
    let (lo, hi) = (region.lower(), region.upper());
    [0, 1].map(|i| (z[i] <= lo[i] && g[i] < 0.0) || (z[i] >= hi[i] && g[i] > 0.0))
}

fn sup_norm(v: [f64; 2]) -> f64 {
    v[0].abs().max(v[1].abs())
}

/// Newton direction for maximization on the free coordinates, with the
/// Hessian's eigenvalues clipped below zero so the step is an ascent step.
fn ascent_direction(g: [f64; 2], h: &Matrix2<f64>, active: [bool; 2]) -> [f64; 2] {
    let clip = |lambda: f64, scale: f64| lambda.min(-1e-8 * scale.max(1.0));
    match active {
        [true, true] => [0.0, 0.0],
        [false, true] => [-g[0] / clip(h[(0, 0)], h[(0, 0)].abs()), 0.0],
        [true, false] => [0.0, -g[1] / clip(h[(1, 1)], h[(1, 1)].abs())],
        [false, false] => {
            let eig = SymmetricEigen::new(*h);
            let scale = eig.eigenvalues.amax();
            let mut d = [0.0; 2];
            for k in 0..2 {
                let lambda = clip(eig.eigenvalues[k], scale);
                let v = eig.eigenvectors.column(k);
                let coef = (v[0] * g[0] + v[1] * g[1]) / lambda;
                d[0] -= coef * v[0];
                d[1] -= coef * v[1];
            }
            d
        }
    }
}

fn projected_newton(
    traj: &Trajectory,
    region: &SearchRegion,
    y: f64,
    start: [f64; 2],
    cfg: &EstimatorConfig,
) -> Result<NewtonOutcome> {
    let n = traj.n() as f64;
    let mut z = region.project(start);
    let mut model = local_model(traj, &point(z, y))?;
    let mut moved = false;
    for iter in 0..cfg.max_iters {
        let g = [model.gradient[0] / n, model.gradient[1] / n];
        let active = active_set(z, g, region);
        let pg = [0, 1].map(|i| if active[i] { 0.0 } else { g[i] });
        if sup_norm(pg) <= cfg.newton_tol {
            return Ok(NewtonOutcome {
                z,
                model,
                iterations: iter,
                converged: true,
                moved,
            });
        }
        let d = ascent_direction(g, &model.hessian, active);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = region.project([z[0] + t * d[0], z[1] + t * d[1]]);
            if trial == z {
                break;
            }
            let step = [trial[0] - z[0], trial[1] - z[1]];
            let predicted = g[0] * step[0] + g[1] * step[1];
            let trial_model = local_model(traj, &point(trial, y))?;
            let gain = (trial_model.value - model.value) / n;
            let trial_g = [trial_model.gradient[0] / n, trial_model.gradient[1] / n];
            let trial_active = active_set(trial, trial_g, region);
            let trial_pg = [0, 1].map(|i| if trial_active[i] { 0.0 } else { trial_g[i] });
            // Near the optimum the value change drowns in rounding; accept
            // steps that keep the value and shrink the projected score.
            let noise = 1e-13 * model.value.abs().max(1.0) / n;
            let armijo = gain >= 1e-4 * predicted;
            let flat = gain >= -noise && sup_norm(trial_pg) < sup_norm(pg);
            if armijo || flat {
                accepted = Some((trial, trial_model));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, trial_model)) => {
                z = trial;
                model = trial_model;
                moved = true;
            }
            None => {
                return Ok(NewtonOutcome {
                    z,
                    model,
                    iterations: iter,
                    converged: false,
                    moved,
                })
            }
        }
    }
    let g = [model.gradient[0] / n, model.gradient[1] / n];
    let active = active_set(z, g, region);
    let pg = [0, 1].map(|i| if active[i] { 0.0 } else { g[i] });
    Ok(NewtonOutcome {
        z,
        model,
        iterations: cfg.max_iters,
        converged: sup_norm(pg) <= cfg.newton_tol,
        moved,
    })
}

fn check_estimable(traj: &Trajectory) -> Result<()> {
    check_trajectory(traj)?;
    if traj.n() < 2 {
        return Err(Error::Usage(
            "estimation needs a trajectory with at least 3 points".into(),
        ));
    }
    if traj.x[..traj.n()].iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateData(
            "every X_{k-1} is zero, the likelihood is flat in (s, x)".into(),
        ));
    }
    Ok(())
}

/// Evaluates the grid; returns the nodes sorted best first.
fn grid_search(
    traj: &Trajectory,
    region: &SearchRegion,
    y: f64,
    cfg: &EstimatorConfig,
) -> Result<Vec<(f64, f64, f64)>> {
    let s_axis = grid_axis(region.s_lo, region.s_hi, cfg.grid_s);
    let x_axis = grid_axis(region.x_lo, region.x_hi, cfg.grid_x);
    let mut nodes = Vec::with_capacity(s_axis.len() * x_axis.len());
    for &x in &x_axis {
        let column = ColumnSums::new(traj, x, y);
        for &s in &s_axis {
            let value = column.at(s);
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "log-likelihood is not finite at (s, x, y) = ({s}, {x}, {y})"
                )));
            }
            nodes.push((s, x, value));
        }
    }
    nodes.sort_by(|a, b| better(*a, *b));
    Ok(nodes)
}

/// Global maximizer of `L_n(s, x, y)` over `region`.
pub fn qmle(
    traj: &Trajectory,
    region: &SearchRegion,
    y: f64,
    cfg: &EstimatorConfig,
) -> Result<EstimateResult> {
    region.validate()?;
    cfg.validate()?;
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::Domain(format!("y must be positive, got {y}")));
    }
    check_estimable(traj)?;
    let n = traj.n();
    let nodes = grid_search(traj, region, y, cfg)?;
    let best_node = nodes[0];
    let audit = GridAudit {
        s: best_node.0,
        x: best_node.1,
        value: best_node.2,
        nodes: nodes.len(),
    };

    let mut best: Option<(f64, f64, f64, NewtonOutcome)> = None;
    for &(s, x, _) in nodes.iter().take(cfg.refine_starts) {
        let outcome = projected_newton(traj, region, y, [s, x], cfg)?;
        let cand = (outcome.z[0], outcome.z[1], outcome.model.value);
        let replace = match &best {
            None => true,
            Some((bs, bx, bv, _)) => better(cand, (*bs, *bx, *bv)) == Ordering::Less,
        };
        if replace {
            best = Some((cand.0, cand.1, cand.2, outcome));
        }
    }
    let (eta1, eta2, value, outcome) = best.expect("refine_starts >= 1");
    let g = [
        outcome.model.gradient[0] / n as f64,
        outcome.model.gradient[1] / n as f64,
    ];
    let on_boundary = active_set(outcome.z, g, region).iter().any(|&a| a)
        || eta1 == region.s_lo
        || eta1 == region.s_hi
        || eta2 == region.x_lo
        || eta2 == region.x_hi;
    Ok(EstimateResult {
        n,
        eta1,
        eta2,
        y,
        loglik_value: value,
        grad_norm: sup_norm(g),
        iterations: outcome.iterations,
        on_boundary,
        eta2_at_floor: eta2 == region.x_lo,
        grid_fallback_used: !outcome.moved,
        converged: outcome.converged,
        audit,
    })
}

/// One [`qmle`] per value of `y`.
pub fn profile_over_y(
    traj: &Trajectory,
    region: &SearchRegion,
    y_values: &[f64],
    cfg: &EstimatorConfig,
) -> Result<Vec<EstimateResult>> {
    if y_values.is_empty() {
        return Err(Error::Usage("profile_over_y needs at least one y".into()));
    }
    y_values
        .iter()
        .map(|&y| qmle(traj, region, y, cfg))
        .collect()
}

/// Normal-theory interval for `φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiInterval {
    pub lo: f64,
    pub hi: f64,
    /// `eta2` sits on the region boundary; the interval may undercover.
    pub boundary_warning: bool,
}

impl PhiInterval {
    pub fn contains(&self, phi: f64) -> bool {
        self.lo <= phi && phi <= self.hi
    }
}

/// `eta1 ± z_{(1+level)/2} √(eta2/n)`.
pub fn ci_phi(result: &EstimateResult, n: usize, level: f64) -> Result<PhiInterval> {
    let mut ci = phi_interval(result.eta1, result.eta2, n, level)?;
    ci.boundary_warning = result.eta2_at_floor;
    Ok(ci)
}

/// The interval of [`ci_phi`] from bare estimates, without the boundary flag.
pub fn phi_interval(eta1: f64, eta2: f64, n: usize, level: f64) -> Result<PhiInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    if eta2.is_nan() || eta2 <= 0.0 || n == 0 {
        return Err(Error::Domain(format!(
            "interval needs eta2 > 0 and n > 0, got eta2 = {eta2}, n = {n}"
        )));
    }
    let z = normal_quantile(0.5 * (1.0 + level));
    let half = z * (eta2 / n as f64).sqrt();
    Ok(PhiInterval {
        lo: eta1 - half,
        hi: eta1 + half,
        boundary_warning: false,
    })
}
