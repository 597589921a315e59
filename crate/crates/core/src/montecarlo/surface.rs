//! Uniform convergence of the normalized likelihood surface to `f(s, x)`
//! over a finite lattice, tracked along a ladder of sample sizes.

use rayon::prelude::*;

use super::{stats, ExperimentConfig, ExperimentKind};
use crate::csv::fmt_f64;
use crate::error::{Error, Result};
use crate::innovations::moment_summary;
use crate::likelihood::{limit_f, loglik_diff_normalized, LikelihoodPoint};
use crate::process::{simulate_with, SimulationOptions};

/// A `points[0] × points[1] × points[2]` lattice over `s × x × y`, with
/// evenly spaced nodes including both ends of each range.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceLattice {
    pub s_range: (f64, f64),
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub points: [usize; 3],
    /// Sample sizes at which the surface is evaluated; empty means
    /// `{n/4, n/2, n}`.
    pub ladder: Vec<usize>,
}

impl SurfaceLattice {
    /// `[φ − ½, φ + ½] × [ω²/2, 2ω²] × [σ²/2, 2σ²]` with 9 × 9 × 3 nodes.
    pub fn around(phi: f64, omega_sq: f64, sigma_sq: f64) -> Self {
        SurfaceLattice {
            s_range: (phi - 0.5, phi + 0.5),
            x_range: (0.5 * omega_sq, 2.0 * omega_sq),
            y_range: (0.5 * sigma_sq, 2.0 * sigma_sq),
            points: [9, 9, 3],
            ladder: Vec::new(),
        }
    }

    pub fn rungs(&self, n: usize) -> Vec<usize> {
        if self.ladder.is_empty() {
            vec![n / 4, n / 2, n]
        } else {
            self.ladder.clone()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let ranges = [self.s_range, self.x_range, self.y_range];
        if ranges
            .iter()
            .any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi))
        {
            return Err(Error::Config("surface ranges need finite lo < hi".into()));
        }
        if self.x_range.0 <= 0.0 || self.y_range.0 <= 0.0 {
            return Err(Error::Config(
                "surface x and y ranges must be positive".into(),
            ));
        }
        if self.points.iter().any(|&p| p < 2) {
            return Err(Error::Config(
                "surface lattices need at least 2 points per axis".into(),
            ));
        }
        let rungs = self.rungs(n);
        if rungs.iter().any(|&m| m < 2 || m > n) || rungs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "surface ladder {rungs:?} must increase strictly within [2, n = {n}]"
            )));
        }
        Ok(())
    }

    fn axis((lo, hi): (f64, f64), points: usize, i: usize) -> f64 {
        if i + 1 == points {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (points - 1) as f64
        }
    }

    /// Nodes in `s`-major order with `y` varying fastest.
    pub fn nodes(&self) -> Vec<(f64, f64, f64)> {
        let [ps, px, py] = self.points;
        let mut out = Vec::with_capacity(ps * px * py);
        for i in 0..ps {
            for j in 0..px {
                for k in 0..py {
                    out.push((
                        Self::axis(self.s_range, ps, i),
                        Self::axis(self.x_range, px, j),
                        Self::axis(self.y_range, py, k),
                    ));
                }
            }
        }
        out
    }
}

/// `(L_m(u) − L_m(θ))/m` and `f(s, x)` at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceRow {
    pub rep: u64,
    pub n: usize,
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub diff: f64,
    pub f: f64,
}

impl SurfaceRow {
    pub const CSV_HEADER: &'static str = "rep,n,s,x,y,diff,f";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.rep,
            self.n,
            fmt_f64(self.s),
            fmt_f64(self.x),
            fmt_f64(self.y),
            fmt_f64(self.diff),
            fmt_f64(self.f)
        )
    }
}

/// Per replication and rung: `sup |diff − f|` over the lattice and the
/// largest spread of `diff` across the `y` nodes at fixed `(s, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RungGap {
    pub rep: u64,
    pub n: usize,
    pub sup_gap: f64,
    pub y_spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RungMedian {
    pub n: usize,
    pub sup_gap: f64,
    pub y_spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceScan {
    pub rows: Vec<SurfaceRow>,
    pub gaps: Vec<RungGap>,
    pub failures: Vec<(u64, Error)>,
    pub medians: Vec<RungMedian>,
}

impl SurfaceScan {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from(SurfaceRow::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn medians_csv(&self) -> String {
        let mut out = String::from("n,median_sup_gap,median_y_spread\n");
        for m in &self.medians {
            out.push_str(&format!(
                "{},{},{}\n",
                m.n,
                fmt_f64(m.sup_gap),
                fmt_f64(m.y_spread)
            ));
        }
        out
    }
}

type ReplicationScan = (Vec<SurfaceRow>, Vec<RungGap>);

/// Surface table and rung gaps of one replication.
pub fn replication_gaps(cfg: &ExperimentConfig, rep: u64) -> Result<ReplicationScan> {
    let (phi, omega_sq) = cfg.truth();
    let sigma_sq = moment_summary(&cfg.spec).sigma_sq;
    let theta = LikelihoodPoint::new(phi, omega_sq, sigma_sq)?;
    let lattice = &cfg.surface;
    let rungs = lattice.rungs(cfg.n);
    let longest = *rungs.last().expect("validated ladder is nonempty");
    let opts = SimulationOptions {
        record_innovations: false,
        scaled_channel: true,
    };
    let traj = simulate_with(cfg.params, &cfg.spec, longest, cfg.stream(rep), opts)?;
    let nodes = lattice.nodes();
    let py = lattice.points[2];

    let mut rows = Vec::with_capacity(nodes.len() * rungs.len());
    let mut gaps = Vec::with_capacity(rungs.len());
    for &m in &rungs {
        let part = traj.prefix(m);
        let mut sup_gap: f64 = 0.0;
        let mut y_spread: f64 = 0.0;
        for column in nodes.chunks(py) {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &(s, x, y) in column {
                let diff = loglik_diff_normalized(&part, &LikelihoodPoint::new(s, x, y)?, &theta)?;
                let f = limit_f(s, x, phi, omega_sq)?;
                sup_gap = sup_gap.max((diff - f).abs());
                lo = lo.min(diff);
                hi = hi.max(diff);
                rows.push(SurfaceRow {
                    rep,
                    n: m,
                    s,
                    x,
                    y,
                    diff,
                    f,
                });
            }
            y_spread = y_spread.max(hi - lo);
        }
        gaps.push(RungGap {
            rep,
            n: m,
            sup_gap,
            y_spread,
        });
    }
    Ok((rows, gaps))
}

/// Runs every replication of a `likelihood_surface` configuration.
pub fn likelihood_surface_scan(cfg: &ExperimentConfig) -> Result<SurfaceScan> {
    if cfg.kind != ExperimentKind::LikelihoodSurface {
        return Err(Error::Usage(format!(
            "surface scans need experiment.kind = likelihood_surface, got {}",
            cfg.kind
        )));
    }
    cfg.validate()?;
    let outcomes: Vec<(u64, Result<ReplicationScan>)> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| (rep, replication_gaps(cfg, rep)))
        .collect();
    let mut scan = SurfaceScan {
        rows: Vec::new(),
        gaps: Vec::new(),
        failures: Vec::new(),
        medians: Vec::new(),
    };
    for (rep, outcome) in outcomes {
        match outcome {
            Ok((rows, gaps)) => {
                scan.rows.extend(rows);
                scan.gaps.extend(gaps);
            }
            Err(e) => scan.failures.push((rep, e)),
        }
    }
    for m in cfg.surface.rungs(cfg.n) {
        let (g, s): (Vec<f64>, Vec<f64>) = scan
            .gaps
            .iter()
            .filter(|g| g.n == m)
            .map(|g| (g.sup_gap, g.y_spread))
            .unzip();
        scan.medians.push(RungMedian {
            n: m,
            sup_gap: stats::median(&g),
            y_spread: stats::median(&s),
        });
    }
    Ok(scan)
}
