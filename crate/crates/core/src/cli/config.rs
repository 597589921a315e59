//! Plain-text `section.key = value` configuration with `#` comments.
//!
//! Unknown keys, duplicates, malformed values and violated invariants are
//! all fatal and reported with the key and its line (line 0 stands for a
//! command-line override).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimator::SearchRegion;
use crate::innovations::{
    lyapunov_exponent, moment_summary, ELaw, InnovationSpec, InnovationVariant,
};
use crate::montecarlo::{default_region, ExperimentConfig, ExperimentKind, SurfaceLattice};

pub const KEYS: &[&str] = &[
    "experiment.kind",
    "model.phi",
    "model.x0",
    "innov.variant",
    "innov.omega_sq",
    "innov.sigma_sq",
    "innov.alpha",
    "innov.b_point",
    "innov.e_law",
    "run.n",
    "run.reps",
    "run.seed",
    "run.stream",
    "run.y_values",
    "run.ci_level",
    "region.s_lo",
    "region.s_hi",
    "region.x_lo",
    "region.x_hi",
    "estimator.grid_s",
    "estimator.grid_x",
    "estimator.newton_tol",
    "estimator.max_iters",
    "estimator.refine_starts",
    "surface.s_lo",
    "surface.s_hi",
    "surface.x_lo",
    "surface.x_hi",
    "surface.y_lo",
    "surface.y_hi",
    "surface.points_s",
    "surface.points_x",
    "surface.points_y",
    "surface.ladder",
    "stable.reference_m",
    "stable.reference_reps",
    "ident.lo",
    "ident.hi",
    "ident.points",
];

/// Which invariants a command needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Replicated experiments: every [`ExperimentConfig`] invariant.
    Experiment,
    /// Single-path commands: model, law, `n ≥ 1` and the Lyapunov gate.
    Simulation,
    /// Simulation plus a valid search region, estimator settings and `y` list.
    Estimation,
}

/// A parsed configuration: the experiment plus the stream used by
/// single-path commands.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub stream: u64,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

struct Entries(HashMap<String, Entry>);

impl Entries {
    fn line(&self, key: &str) -> usize {
        self.0.get(key).map_or(0, |e| e.line)
    }

    /// The first key of `section` set in the input, else `fallback`.
    fn section_key(&self, section: &str, fallback: &'static str) -> &'static str {
        KEYS.iter()
            .copied()
            .find(|k| k.starts_with(section) && self.0.contains_key(*k))
            .unwrap_or(fallback)
    }

    fn err(&self, key: &str, message: impl Into<String>) -> Error {
        Error::ConfigKey {
            key: key.to_string(),
            line: self.line(key),
            message: message.into(),
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|err| self.err(key, format!("cannot parse {:?}: {err}", e.value))),
        }
    }

    fn real(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.get::<f64>(key)?.unwrap_or(default);
        if !v.is_finite() {
            return Err(self.err(key, format!("must be finite, got {v}")));
        }
        Ok(v)
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.real(key, default)?;
        if v <= 0.0 {
            return Err(self.err(key, format!("must be positive, got {v}")));
        }
        Ok(v)
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(',')
                .map(|item| {
                    item.trim().parse::<T>().map_err(|err| {
                        self.err(
                            key,
                            format!("cannot parse list item {:?}: {err}", item.trim()),
                        )
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }
}

fn read_entries(text: &str, overrides: &[(String, String)]) -> Result<Entries> {
    let mut map: HashMap<String, Entry> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigKey {
            key: content.to_string(),
            line,
            message: "expected `section.key = value`".into(),
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::ConfigKey {
                key: key.to_string(),
                line,
                message: "unknown key".into(),
            });
        }
        if let Some(prev) = map.get(key) {
            return Err(Error::ConfigKey {
                key: key.to_string(),
                line,
                message: format!("duplicate key (first set on line {})", prev.line),
            });
        }
        map.insert(
            key.to_string(),
            Entry {
                value: value.trim().to_string(),
                line,
            },
        );
    }
    for (key, value) in overrides {
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::ConfigKey {
                key: key.clone(),
                line: 0,
                message: "unknown key in override".into(),
            });
        }
        map.insert(
            key.clone(),
            Entry {
                value: value.trim().to_string(),
                line: 0,
            },
        );
    }
    Ok(Entries(map))
}

/// Splits a `key=value` override.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    arg.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Usage(format!("override {arg:?} is not of the form key=value")))
}

/// Parses and fully validates an experiment configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_run_config(text, &[], Purpose::Experiment, None).map(|c| c.experiment)
}

/// Parses `text`, applies `overrides` after the file values, fills
/// defaults and enforces the invariants `purpose` needs.
///
/// `implied` is the kind a subcommand runs; it fills a missing
/// `experiment.kind` and conflicts with a different one.
pub fn parse_run_config(
    text: &str,
    overrides: &[(String, String)],
    purpose: Purpose,
    implied: Option<ExperimentKind>,
) -> Result<RunConfig> {
    let e = read_entries(text, overrides)?;
    let kind = match (e.get::<ExperimentKind>("experiment.kind")?, implied) {
        (Some(k), Some(want)) if k != want => {
            return Err(e.err(
                "experiment.kind",
                format!("this command runs {want} experiments, the config asks for {k}"),
            ))
        }
        (Some(k), _) => k,
        (None, Some(want)) => want,
        (None, None) => ExperimentKind::NormalLimit,
    };
    let mut cfg = ExperimentConfig::reference(kind);

    cfg.params.phi = e.real("model.phi", cfg.params.phi)?;
    cfg.params.x0 = e.real("model.x0", cfg.params.x0)?;

    let variant = e
        .get::<InnovationVariant>("innov.variant")?
        .unwrap_or(cfg.spec.variant);
    let alpha = e.real("innov.alpha", cfg.spec.alpha)?;
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(e.err(
            "innov.alpha",
            format!("alpha must lie in (1, 2), got {alpha}"),
        ));
    }
    cfg.spec = InnovationSpec {
        variant,
        omega_sq: e.positive("innov.omega_sq", cfg.spec.omega_sq)?,
        sigma_sq: e.positive("innov.sigma_sq", cfg.spec.sigma_sq)?,
        alpha,
        b_point: e.real("innov.b_point", cfg.spec.b_point)?,
        e_law: e.get::<ELaw>("innov.e_law")?.unwrap_or(cfg.spec.e_law),
    };
    cfg.spec.validate().map_err(|err| {
        e.err(
            if e.0.contains_key("innov.e_law") {
                "innov.e_law"
            } else {
                "innov.variant"
            },
            err.to_string(),
        )
    })?;

    let n = e.get::<usize>("run.n")?.unwrap_or(cfg.n);
    if n < 1 {
        return Err(e.err("run.n", "n must be at least 1"));
    }
    cfg.n = n;
    cfg.reps = e.get::<usize>("run.reps")?.unwrap_or(cfg.reps);
    if cfg.reps < 1 {
        return Err(e.err("run.reps", "reps must be at least 1"));
    }
    cfg.master_seed = e.get::<u64>("run.seed")?.unwrap_or(cfg.master_seed);
    let stream = e.get::<u64>("run.stream")?.unwrap_or(0);
    let moments = moment_summary(&cfg.spec);
    let default_y = if moments.sigma_sq > 0.0 {
        moments.sigma_sq
    } else {
        1.0
    };
    cfg.y_values = e.list::<f64>("run.y_values")?.unwrap_or(vec![default_y]);
    if cfg.y_values.is_empty() || cfg.y_values.iter().any(|&y| !(y.is_finite() && y > 0.0)) {
        return Err(e.err("run.y_values", "y values must be positive and finite"));
    }
    cfg.ci_level = e.real("run.ci_level", cfg.ci_level)?;
    if !(cfg.ci_level > 0.0 && cfg.ci_level < 1.0) {
        return Err(e.err("run.ci_level", "ci_level must lie in (0, 1)"));
    }

    let (phi, omega_sq) = cfg.truth();
    let base = default_region(phi, omega_sq, kind);
    cfg.region = SearchRegion {
        s_lo: e.real("region.s_lo", base.s_lo)?,
        s_hi: e.real("region.s_hi", base.s_hi)?,
        x_lo: e.real("region.x_lo", base.x_lo)?,
        x_hi: e.real("region.x_hi", base.x_hi)?,
    };

    let est = &mut cfg.estimator;
    est.grid_s = e.get("estimator.grid_s")?.unwrap_or(est.grid_s);
    est.grid_x = e.get("estimator.grid_x")?.unwrap_or(est.grid_x);
    est.newton_tol = e.get("estimator.newton_tol")?.unwrap_or(est.newton_tol);
    est.max_iters = e.get("estimator.max_iters")?.unwrap_or(est.max_iters);
    est.refine_starts = e
        .get("estimator.refine_starts")?
        .unwrap_or(est.refine_starts);

    let lattice =
        SurfaceLattice::around(phi, if omega_sq > 0.0 { omega_sq } else { 1.0 }, default_y);
    cfg.surface = SurfaceLattice {
        s_range: (
            e.real("surface.s_lo", lattice.s_range.0)?,
            e.real("surface.s_hi", lattice.s_range.1)?,
        ),
        x_range: (
            e.real("surface.x_lo", lattice.x_range.0)?,
            e.real("surface.x_hi", lattice.x_range.1)?,
        ),
        y_range: (
            e.real("surface.y_lo", lattice.y_range.0)?,
            e.real("surface.y_hi", lattice.y_range.1)?,
        ),
        points: [
            e.get("surface.points_s")?.unwrap_or(lattice.points[0]),
            e.get("surface.points_x")?.unwrap_or(lattice.points[1]),
            e.get("surface.points_y")?.unwrap_or(lattice.points[2]),
        ],
        ladder: e.list::<usize>("surface.ladder")?.unwrap_or_default(),
    };

    cfg.stable.m = e.get("stable.reference_m")?.unwrap_or(cfg.stable.m);
    cfg.stable.reps = e.get("stable.reference_reps")?.unwrap_or(cfg.stable.reps);
    cfg.ident.lo = e.positive("ident.lo", cfg.ident.lo)?;
    cfg.ident.hi = e.positive("ident.hi", cfg.ident.hi)?;
    cfg.ident.points = e.get("ident.points")?.unwrap_or(cfg.ident.points);

    cfg.params
        .validate()
        .map_err(|err| e.err("model.phi", err.to_string()))?;
    match purpose {
        Purpose::Experiment => {
            cfg.validate().map_err(|err| attribute(&e, err))?;
        }
        Purpose::Simulation | Purpose::Estimation => {
            let lyap = lyapunov_exponent(&cfg.spec, phi)
                .map_err(|err| e.err("model.phi", err.to_string()))?;
            if lyap < 0.0 {
                return Err(e.err(
                    "model.phi",
                    format!(
                        "E log|phi + b| = {lyap:.6} < 0: the process is in the stationary regime"
                    ),
                ));
            }
            if purpose == Purpose::Estimation {
                cfg.region.validate().map_err(|err| {
                    e.err(e.section_key("region.", "region.s_lo"), err.to_string())
                })?;
                cfg.estimator.validate().map_err(|err| {
                    e.err(
                        e.section_key("estimator.", "estimator.grid_s"),
                        err.to_string(),
                    )
                })?;
            }
        }
    }
    Ok(RunConfig {
        experiment: cfg,
        stream,
    })
}

/// Maps an [`ExperimentConfig::validate`] failure onto the key most
/// responsible for it.
fn attribute(e: &Entries, err: Error) -> Error {
    let msg = err.to_string();
    const TABLE: &[(&str, &str, &str)] = &[
        ("E log|phi + b|", "model.phi", "model.phi"),
        ("margin", "region.", "region.s_lo"),
        ("n must", "run.n", "run.n"),
        ("reps must", "run.reps", "run.reps"),
        ("surface", "surface.", "surface.s_lo"),
        ("ident", "ident.", "ident.points"),
        ("stable reference", "stable.", "stable.reference_m"),
        ("stable_limit", "innov.variant", "innov.variant"),
        ("var(b²)", "innov.variant", "innov.variant"),
        ("random coefficient", "innov.variant", "innov.variant"),
        ("region", "region.", "region.s_lo"),
        ("grid", "estimator.", "estimator.grid_s"),
        ("newton", "estimator.", "estimator.newton_tol"),
        ("iter", "estimator.", "estimator.max_iters"),
        ("refine", "estimator.", "estimator.refine_starts"),
    ];
    let key = TABLE
        .iter()
        .find(|(needle, _, _)| msg.contains(needle))
        .map_or("experiment.kind", |&(_, section, fallback)| {
            e.section_key(section, fallback)
        });
    e.err(key, msg)
}

/// Canonical text of `cfg`; parsing it back yields the same configuration.
pub fn echo(run: &RunConfig) -> String {
    let c = &run.experiment;
    let list = |v: &[f64]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = String::from("# effective configuration\n");
    let mut put = |k: &str, v: String| {
        writeln!(out, "{k} = {v}").expect("writing to a String");
    };
    put("experiment.kind", c.kind.to_string());
    put("model.phi", c.params.phi.to_string());
    put("model.x0", c.params.x0.to_string());
    put("innov.variant", c.spec.variant.to_string());
    put("innov.omega_sq", c.spec.omega_sq.to_string());
    put("innov.sigma_sq", c.spec.sigma_sq.to_string());
    put("innov.alpha", c.spec.alpha.to_string());
    put("innov.b_point", c.spec.b_point.to_string());
    put("innov.e_law", c.spec.e_law.to_string());
    put("run.n", c.n.to_string());
    put("run.reps", c.reps.to_string());
    put("run.seed", c.master_seed.to_string());
    put("run.stream", run.stream.to_string());
    put("run.y_values", list(&c.y_values));
    put("run.ci_level", c.ci_level.to_string());
    put("region.s_lo", c.region.s_lo.to_string());
    put("region.s_hi", c.region.s_hi.to_string());
    put("region.x_lo", c.region.x_lo.to_string());
    put("region.x_hi", c.region.x_hi.to_string());
    put("estimator.grid_s", c.estimator.grid_s.to_string());
    put("estimator.grid_x", c.estimator.grid_x.to_string());
    put("estimator.newton_tol", c.estimator.newton_tol.to_string());
    put("estimator.max_iters", c.estimator.max_iters.to_string());
    put(
        "estimator.refine_starts",
        c.estimator.refine_starts.to_string(),
    );
    put("surface.s_lo", c.surface.s_range.0.to_string());
    put("surface.s_hi", c.surface.s_range.1.to_string());
    put("surface.x_lo", c.surface.x_range.0.to_string());
    put("surface.x_hi", c.surface.x_range.1.to_string());
    put("surface.y_lo", c.surface.y_range.0.to_string());
    put("surface.y_hi", c.surface.y_range.1.to_string());
    put("surface.points_s", c.surface.points[0].to_string());
    put("surface.points_x", c.surface.points[1].to_string());
    put("surface.points_y", c.surface.points[2].to_string());
    if !c.surface.ladder.is_empty() {
        let ladder: Vec<String> = c.surface.ladder.iter().map(|m| m.to_string()).collect();
        put("surface.ladder", ladder.join(","));
    }
    put("stable.reference_m", c.stable.m.to_string());
    put("stable.reference_reps", c.stable.reps.to_string());
    put("ident.lo", c.ident.lo.to_string());
    put("ident.hi", c.ident.hi.to_string());
    put("ident.points", c.ident.points.to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::EstimatorConfig;
    use proptest::prelude::*;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let cfg = parse_config("experiment.kind = normal_limit\n").unwrap();
        assert_eq!(
            cfg,
            ExperimentConfig::reference(ExperimentKind::NormalLimit)
        );
        assert_eq!(cfg.params.phi, 1.5);
        assert_eq!(cfg.y_values, vec![1.0]);
        assert_eq!(cfg.region, SearchRegion::new(0.5, 2.5, 0.25, 4.0).unwrap());
        assert_eq!(cfg.estimator, EstimatorConfig::default());
        assert_eq!(parse_config("").unwrap(), cfg);
    }

    #[test]
    fn comments_blank_lines_and_spacing() {
        let text = "# header\n\n  model.phi=1.6   # trailing\nrun.y_values = 0.25, 1 ,4\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.params.phi, 1.6);
        assert_eq!(cfg.y_values, vec![0.25, 1.0, 4.0]);
    }

    fn key_error(text: &str) -> (String, usize) {
        match parse_config(text) {
            Err(Error::ConfigKey { key, line, .. }) => (key, line),
            other => panic!("expected a key error, got {other:?}"),
        }
    }

    #[test]
    fn alpha_outside_the_stable_range_is_rejected() {
        assert_eq!(key_error("innov.alpha = 2.5"), ("innov.alpha".into(), 1));
        assert_eq!(
            key_error("run.n = 100\ninnov.alpha = 1.0"),
            ("innov.alpha".into(), 2)
        );
    }

    #[test]
    fn stationary_settings_fail_the_lyapunov_gate() {
        let text = "model.phi = 0.1\ninnov.variant = GaussianBGaussianE\ninnov.omega_sq = 0.01\n";
        let err = parse_config(text).unwrap_err();
        assert!(
            matches!(&err, Error::ConfigKey { key, line: 1, message }
            if key == "model.phi" && message.contains("stationary")),
            "{err}"
        );
        let sim = parse_run_config(text, &[], Purpose::Simulation, None).unwrap_err();
        assert!(sim.to_string().contains("stationary"));
    }

    #[test]
    fn implied_kind_fills_or_conflicts() {
        let run =
            parse_run_config("", &[], Purpose::Experiment, Some(ExperimentKind::Growth)).unwrap();
        assert_eq!(run.experiment.kind, ExperimentKind::Growth);
        let err = parse_run_config(
            "experiment.kind = normal_limit",
            &[],
            Purpose::Experiment,
            Some(ExperimentKind::Growth),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ConfigKey { line: 1, .. }));
    }

    #[test]
    fn strictness() {
        assert_eq!(key_error("model.phii = 1"), ("model.phii".into(), 1));
        assert_eq!(
            key_error("model.phi = 1.5\nmodel.phi = 1.6"),
            ("model.phi".into(), 2)
        );
        assert_eq!(key_error("\nrun.n = ten"), ("run.n".into(), 2));
        assert_eq!(key_error("model.phi"), ("model.phi".into(), 1));
        assert_eq!(key_error("run.n = 5"), ("run.n".into(), 1));
        assert_eq!(key_error("region.s_hi = 1.55"), ("region.s_hi".into(), 1));
        assert_eq!(
            key_error("experiment.kind = nope"),
            ("experiment.kind".into(), 1)
        );
        assert_eq!(
            key_error("innov.e_law = PointMass(1)"),
            ("innov.e_law".into(), 1)
        );
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let ov = vec![parse_override("model.phi=1.7").unwrap()];
        let run = parse_run_config("model.phi = 1.6\n", &ov, Purpose::Experiment, None).unwrap();
        assert_eq!(run.experiment.params.phi, 1.7);
        assert!(parse_override("model.phi").is_err());
        let bad = vec![("model.psi".to_string(), "1".to_string())];
        assert!(matches!(
            parse_run_config("", &bad, Purpose::Experiment, None),
            Err(Error::ConfigKey { line: 0, .. })
        ));
    }

    #[test]
    fn purposes_scope_the_invariants() {
        let text = "innov.variant = PointMassB\ninnov.b_point = 0\ninnov.e_law = PointMass(1)\nmodel.phi = 2\nmodel.x0 = 0\nrun.n = 3\n";
        assert!(parse_config(text).is_err());
        let run = parse_run_config(text, &[], Purpose::Simulation, None).unwrap();
        assert_eq!(run.experiment.n, 3);
        let deterministic_growth = format!("{text}experiment.kind = growth\nrun.n = 10\n");
        assert!(parse_config(&deterministic_growth.replace("run.n = 3\n", "")).is_ok());
    }

    #[test]
    fn echo_round_trips_every_kind() {
        for kind in ExperimentKind::ALL {
            let text =
                format!("experiment.kind = {kind}\nrun.y_values = 0.3,1,3.7\nrun.seed = 99\n");
            let run = parse_run_config(&text, &[], Purpose::Experiment, None).unwrap();
            let echoed = echo(&run);
            let again = parse_run_config(&echoed, &[], Purpose::Experiment, None).unwrap();
            assert_eq!(again, run);
            assert_eq!(echo(&again), echoed);
        }
    }

    proptest! {
        #[test]
        fn echo_preserves_awkward_floats(
            phi in 1.2f64..3.0, omega_sq in 0.3f64..3.0, y in 1e-3f64..10.0, seed in any::<u64>(),
        ) {
            let text = format!(
                "model.phi = {phi}\ninnov.omega_sq = {omega_sq}\nrun.y_values = {y}\nrun.seed = {seed}\n"
            );
            if let Ok(run) = parse_run_config(&text, &[], Purpose::Estimation, None) {
                let again = parse_run_config(&echo(&run), &[], Purpose::Estimation, None).unwrap();
                prop_assert_eq!(again, run);
            }
        }
    }
}
