//! Monte Carlo experiments: configuration, aggregation and reports.

pub mod acceptance;
mod experiments;
pub mod stats;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{self, ModelConfig};
use crate::error::{Error, Result};
pub use experiments::{
    run_adaptive_table, run_counts_misestimation, run_delocalization, run_local_law, run_outlier_location, run_overlap,
    run_prial, run_sticking, TABLE1_DIMS, TABLE1_SIGMAS, TABLE1_VALUES,
};
use stats::{summarize, Summary};

/// Default multiplier applied to theoretical scales in pass criteria.
pub const DEFAULT_TOLERANCE: f64 = 5.0;
pub const DEFAULT_REPS: usize = 200;
pub const REFERENCE_REPS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    OutlierLocation,
    Sticking,
    Overlap,
    Delocalization,
    CountsMisestimation,
    AdaptiveTable,
    Prial,
    LocalLaw,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::OutlierLocation,
        ExperimentKind::Sticking,
        ExperimentKind::Overlap,
        ExperimentKind::Delocalization,
        ExperimentKind::CountsMisestimation,
        ExperimentKind::AdaptiveTable,
        ExperimentKind::Prial,
        ExperimentKind::LocalLaw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::OutlierLocation => "outlier-location",
            ExperimentKind::Sticking => "sticking",
            ExperimentKind::Overlap => "overlap",
            ExperimentKind::Delocalization => "delocalization",
            ExperimentKind::CountsMisestimation => "counts-misestimation",
            ExperimentKind::AdaptiveTable => "adaptive-table",
            ExperimentKind::Prial => "prial",
            ExperimentKind::LocalLaw => "local-law",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind \"{name}\"")))
    }
}

/// Where the number of excluded top eigenvalues `r + s` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSource {
    /// Supercritical spikes of the configured model.
    Model,
    /// The eigenvalue-ratio count `q` with a calibrated threshold.
    Estimate,
}

/// Everything an experiment needs. Knobs a kind does not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ModelConfig,
    pub reps: usize,
    pub seed: u64,
    /// Multiplier on theoretical scales.
    pub tolerance: f64,
    /// Constant `C` in `C log n` / `C log^2 n` bounds.
    pub log_constant: f64,
    /// counts-misestimation: Figure-2 parameter `x`; prial: values of `n`.
    #[serde(default)]
    pub sweep: Vec<f64>,
    /// adaptive-table: `(p, n)` columns.
    #[serde(default)]
    pub dims: Vec<(usize, usize)>,
    /// adaptive-table: values of the A-spike.
    #[serde(default)]
    pub sigmas: Vec<f64>,
    /// overlap: label set `S`; empty means the first supercritical label.
    #[serde(default)]
    pub label_set: Vec<usize>,
    /// local-law: real parts of `z`; empty means ten points inside the bulk.
    #[serde(default)]
    pub energies: Vec<f64>,
    /// local-law: `eta = n^{-eta_exponent}`.
    pub eta_exponent: f64,
    /// Number of non-outlier indices examined (sticking, delocalization).
    pub indices: usize,
    /// delocalization: number of random population directions.
    pub directions: usize,
    /// Null resamples used to calibrate `omega`.
    pub resamples: usize,
    pub epsilon: f64,
    pub scan_fraction: f64,
    /// counts-misestimation: `(q, q_a, q_b)` truth; defaults to the nominal
    /// spike counts.
    #[serde(default)]
    pub truth: Option<(usize, usize, usize)>,
    /// counts-misestimation: misestimation frequencies must stay below
    /// `max_frequency` for sweep values at or above this point.
    #[serde(default)]
    pub pass_from: Option<f64>,
    pub max_frequency: f64,
    pub rank_source: RankSource,
    pub clip: bool,
    /// prial: replace the data-driven estimator by the oracle.
    pub oracle: bool,
}

fn base(kind: ExperimentKind, model: ModelConfig) -> ExperimentConfig {
    ExperimentConfig {
        kind,
        model,
        reps: DEFAULT_REPS,
        seed: 20_240_601,
        tolerance: DEFAULT_TOLERANCE,
        log_constant: 5.0,
        sweep: Vec::new(),
        dims: Vec::new(),
        sigmas: Vec::new(),
        label_set: Vec::new(),
        energies: Vec::new(),
        eta_exponent: 0.4,
        indices: 10,
        directions: 20,
        resamples: 2000,
        epsilon: 0.05,
        scan_fraction: crate::estimators::DEFAULT_SCAN_FRACTION,
        truth: None,
        pass_from: None,
        max_frequency: 0.05,
        rank_source: RankSource::Model,
        clip: true,
        oracle: false,
    }
}

impl ExperimentConfig {
    /// Reference settings for each kind, as used by the acceptance suite.
    pub fn preset(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::OutlierLocation => base(kind, ModelConfig::identity_spiked(1000, 1000, &[3.0], &[])),
            ExperimentKind::Sticking => base(kind, ModelConfig::identity_spiked(500, 500, &[4.0], &[])),
            ExperimentKind::Overlap => base(kind, ModelConfig::identity_spiked(2000, 2000, &[3.0], &[])),
            ExperimentKind::Delocalization => ExperimentConfig {
                reps: 100,
                ..base(kind, ModelConfig::null(500, 500))
            },
            ExperimentKind::CountsMisestimation => ExperimentConfig {
                sweep: vec![1.2, 1.4, 1.6, 1.8, 2.0, 2.5, 3.0, 4.0],
                pass_from: Some(3.0),
                ..base(kind, ModelConfig::identity_spiked(300, 300, &[4.0], &[]))
            },
            ExperimentKind::AdaptiveTable => ExperimentConfig {
                dims: TABLE1_DIMS.to_vec(),
                sigmas: TABLE1_SIGMAS.to_vec(),
                ..base(kind, ModelConfig::identity_spiked(100, 200, &[4.0], &[3.0]))
            },
            ExperimentKind::Prial => ExperimentConfig {
                sweep: vec![100.0, 200.0, 300.0],
                ..base(kind, ModelConfig::identity_spiked(300, 300, &[8.0, 5.0], &[3.0]))
            },
            ExperimentKind::LocalLaw => ExperimentConfig {
                reps: 100,
                ..base(kind, ModelConfig::null(400, 400))
            },
        }
    }

    /// Reads a config document on top of the preset of its `kind`;
    /// overrides are applied last.
    pub fn load(text: &str, overrides: &[String], kind: Option<ExperimentKind>) -> Result<Self> {
        let mut user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (path, value) = config::parse_override(o)?;
            config::apply_override(&mut user, &path, value)?;
        }
        let declared = match user.get("kind") {
            Some(v) => Some(ExperimentKind::parse(
                v.as_str()
                    .ok_or_else(|| Error::Config("kind must be a string".into()))?,
            )?),
            None => None,
        };
        let kind = match (declared, kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!(
                    "config declares kind {} but {} was requested",
                    a.name(),
                    b.name()
                )))
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => return Err(Error::Config("experiment kind missing".into())),
        };
        let preset = toml::Table::try_from(Self::preset(kind)).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = preset;
        merge(&mut merged, user);
        let cfg: Self =
            ExperimentConfig::deserialize(toml::Value::Table(merged)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        let empty_sweep = match self.kind {
            ExperimentKind::Prial => self.sweep.is_empty(),
            ExperimentKind::AdaptiveTable => self.dims.is_empty() || self.sigmas.is_empty(),
            _ => false,
        };
        if empty_sweep {
            return Err(Error::Config(format!("{} needs a non-empty sweep", self.kind.name())));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

fn merge(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

/// Raw per-replication values of one quantity and their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub raw: Vec<f64>,
    pub summary: Summary,
}

impl Metric {
    pub fn new(name: impl Into<String>, raw: Vec<f64>) -> Self {
        let summary = summarize(&raw);
        Self {
            name: name.into(),
            raw,
            summary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Median,
    Q95,
    Min,
    Max,
}

impl Statistic {
    pub fn of(self, s: &Summary) -> f64 {
        match self {
            Statistic::Mean => s.mean,
            Statistic::Median => s.q50,
            Statistic::Q95 => s.q95,
            Statistic::Min => s.min,
            Statistic::Max => s.max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
}

/// A pass criterion on a stored metric: `statistic` (minus `target` in
/// absolute value, when given) compared with
/// `max(scale * multiplier, se_allowance * standard error)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub metric: String,
    pub statistic: Statistic,
    pub target: Option<f64>,
    pub comparison: Comparison,
    pub scale: f64,
    /// `None` for fixed bounds that do not scale with the tolerance.
    pub multiplier: Option<f64>,
    pub se_allowance: f64,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    fn evaluate(&mut self, metric: &Metric) {
        let stat = self.statistic.of(&metric.summary);
        self.value = match self.target {
            Some(t) => (stat - t).abs(),
            None => stat,
        };
        self.bound = (self.scale * self.multiplier.unwrap_or(1.0)).max(self.se_allowance * metric.summary.std_error);
        self.passed = match self.comparison {
            Comparison::AtMost => self.value <= self.bound,
            Comparison::AtLeast => self.value >= self.bound,
        };
    }
}

/// Builder for [`Check`]s.
pub(crate) struct CheckSpec {
    check: Check,
}

impl CheckSpec {
    pub fn at_most(name: impl Into<String>, metric: &str, statistic: Statistic, scale: f64) -> Self {
        Self::new(name, metric, statistic, scale, Comparison::AtMost)
    }

    pub fn at_least(name: impl Into<String>, metric: &str, statistic: Statistic, scale: f64) -> Self {
        Self::new(name, metric, statistic, scale, Comparison::AtLeast)
    }

    fn new(name: impl Into<String>, metric: &str, statistic: Statistic, scale: f64, comparison: Comparison) -> Self {
        Self {
            check: Check {
                name: name.into(),
                metric: metric.into(),
                statistic,
                target: None,
                comparison,
                scale,
                multiplier: None,
                se_allowance: 0.0,
                value: f64::NAN,
                bound: f64::NAN,
                passed: false,
            },
        }
    }

    pub fn scaled(mut self, multiplier: f64) -> Self {
        self.check.multiplier = Some(multiplier);
        self
    }

    pub fn target(mut self, t: f64) -> Self {
        self.check.target = Some(t);
        self
    }

    pub fn se_allowance(mut self, k: f64) -> Self {
        self.check.se_allowance = k;
        self
    }
}

/// A rectangular numeric table written as CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub kind: ExperimentKind,
    pub reps: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub wall_time_s: f64,
    pub metrics: Vec<Metric>,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub passed: bool,
}

impl AggregateReport {
    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Re-evaluates every check from the stored raw values with a new
    /// tolerance multiplier.
    pub fn recheck(&mut self, tolerance: f64) {
        self.tolerance = tolerance;
        let metrics = &self.metrics;
        for c in &mut self.checks {
            if c.multiplier.is_some() {
                c.multiplier = Some(tolerance);
            }
            if let Some(m) = metrics.iter().find(|m| m.name == c.metric) {
                c.evaluate(m);
            }
        }
        self.passed = self.checks.iter().all(|c| c.passed);
    }
}

/// Collects metrics and checks while an experiment runs.
pub(crate) struct ReportBuilder {
    kind: ExperimentKind,
    reps: usize,
    seed: u64,
    tolerance: f64,
    start: Instant,
    metrics: Vec<Metric>,
    checks: Vec<CheckSpec>,
    tables: Vec<Table>,
}

impl ReportBuilder {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            kind: cfg.kind,
            reps: cfg.reps,
            seed: cfg.seed,
            tolerance: cfg.tolerance,
            start: Instant::now(),
            metrics: Vec::new(),
            checks: Vec::new(),
            tables: Vec::new(),
        }
    }

    pub fn metric(&mut self, name: impl Into<String>, raw: Vec<f64>) -> &Metric {
        self.metrics.push(Metric::new(name, raw));
        self.metrics.last().expect("just pushed")
    }

    pub fn check(&mut self, spec: CheckSpec) {
        self.checks.push(spec);
    }

    pub fn table(&mut self, table: Table) {
        self.tables.push(table);
    }

    pub fn finish(self) -> Result<AggregateReport> {
        let mut checks = Vec::with_capacity(self.checks.len());
        for spec in self.checks {
            let mut c = spec.check;
            let m = self.metrics.iter().find(|m| m.name == c.metric).ok_or_else(|| {
                Error::InvalidArgument(format!("check {} refers to unknown metric {}", c.name, c.metric))
            })?;
            c.evaluate(m);
            checks.push(c);
        }
        Ok(AggregateReport {
            kind: self.kind,
            reps: self.reps,
            seed: self.seed,
            tolerance: self.tolerance,
            wall_time_s: self.start.elapsed().as_secs_f64(),
            passed: checks.iter().all(|c| c.passed),
            metrics: self.metrics,
            checks,
            tables: self.tables,
        })
    }
}

/// Runs the experiment named by `cfg.kind`.
pub fn run(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::OutlierLocation => run_outlier_location(cfg),
        ExperimentKind::Sticking => run_sticking(cfg),
        ExperimentKind::Overlap => run_overlap(cfg),
        ExperimentKind::Delocalization => run_delocalization(cfg),
        ExperimentKind::CountsMisestimation => run_counts_misestimation(cfg),
        ExperimentKind::AdaptiveTable => run_adaptive_table(cfg),
        ExperimentKind::Prial => run_prial(cfg),
        ExperimentKind::LocalLaw => run_local_law(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for kind in ExperimentKind::ALL {
            let text = format!("kind = \"{}\"\n", kind.name());
            let cfg = ExperimentConfig::load(&text, &[], None).unwrap();
            assert_eq!(cfg, ExperimentConfig::preset(kind));
        }
    }

    #[test]
    fn partial_model_override() {
        let cfg = ExperimentConfig::load(
            "kind = \"sticking\"\nreps = 7\n[model]\nn = 300\n",
            &["model.p=250".into()],
            None,
        )
        .unwrap();
        assert_eq!(cfg.reps, 7);
        assert_eq!((cfg.model.p, cfg.model.n), (250, 300));
        assert_eq!(cfg.model.spikes_a.len(), 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::load("kind = \"prial\"\nrepz = 3\n", &[], None).unwrap_err();
        assert!(err.to_string().contains("repz"));
        assert!(ExperimentConfig::load("kind = \"prial\"\nreps = 0\n", &[], None).is_err());
        assert!(ExperimentConfig::load("kind = \"stickng\"\n", &[], None).is_err());
    }

    #[test]
    fn recheck_uses_raw_values() {
        let cfg = ExperimentConfig::preset(ExperimentKind::Sticking);
        let mut b = ReportBuilder::new(&cfg);
        b.metric("x", vec![1.0, 2.0, 3.0]);
        b.check(CheckSpec::at_most("x_small", "x", Statistic::Median, 1.0).scaled(5.0));
        b.check(CheckSpec::at_most("fixed", "x", Statistic::Max, 3.0));
        let mut r = b.finish().unwrap();
        assert!(r.passed);
        r.recheck(0.0);
        assert!(!r.check("x_small").unwrap().passed);
        assert!(r.check("fixed").unwrap().passed);
        assert!(!r.passed);
    }
}
