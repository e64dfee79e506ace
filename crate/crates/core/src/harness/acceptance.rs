//! The acceptance suite: ten criteria with fixed settings and tolerances.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run, ExperimentConfig, ExperimentKind, Statistic, REFERENCE_REPS};
use crate::config::ModelConfig;
use crate::dequiv::{find_edge, g2c, m2c_inverse_real, Law};
use crate::error::Result;
use crate::estimators::{d_hat, rho_hat};
use crate::spectra::PopulationSpectrum;
use crate::spike_theory::bbp_thresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    /// 200-replication runs; Table 1 is reproduced with 200 replications.
    Fast,
    /// Adds the 2000-replication Table 1 reproduction.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

pub const CRITERIA: [(u8, &str); 10] = [
    (1, "mp-closed-forms"),
    (2, "inverse-derivative-consistency"),
    (3, "outlier-location"),
    (4, "overlap"),
    (5, "table1-reproduction"),
    (6, "spike-counting"),
    (7, "sticking-interlacing"),
    (8, "delocalization"),
    (9, "averaged-local-law"),
    (10, "shrinkage-prial"),
];

/// Settings shared by the criteria; `tolerance_scale` multiplies every
/// tolerance (zero makes the Monte Carlo criteria fail).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub tier: Tier,
    pub seed: u64,
    pub tolerance_scale: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            tier: Tier::Fast,
            seed: 20_240_601,
            tolerance_scale: 1.0,
        }
    }
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

pub fn run_criterion(id: u8, opts: &SuiteOptions) -> CriterionResult {
    let start = Instant::now();
    let name = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .map(|c| c.1)
        .unwrap_or("unknown")
        .to_string();
    let res = match id {
        1 => mp_closed_forms(opts),
        2 => inverse_consistency(opts),
        3 => outlier_location(opts),
        4 => overlap(opts),
        5 => table1(opts),
        6 => spike_counting(opts),
        7 => sticking(opts),
        8 => delocalization(opts),
        9 => local_law(opts),
        10 => shrinkage(opts),
        _ => Ok(outcome(false, format!("no criterion {id}"))),
    };
    let o = res.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
    CriterionResult {
        id,
        name,
        passed: o.passed,
        detail: o.detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_all(opts: &SuiteOptions) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|c| run_criterion(c.0, opts)).collect()
}

/// `PASS`/`FAIL` line for a criterion.
pub fn format_line(r: &CriterionResult) -> String {
    format!(
        "[{}] criterion {:>2} {:<32} {:>8.1}s  {}",
        if r.passed { "PASS" } else { "FAIL" },
        r.id,
        r.name,
        r.seconds,
        r.detail
    )
}

fn mp_law(d: f64) -> Law {
    let n = 400;
    Law::null((d * n as f64).round() as usize, n)
}

fn mp_closed_forms(opts: &SuiteOptions) -> Result<Outcome> {
    let tol = 1e-8 * opts.tolerance_scale;
    let mut worst: f64 = 0.0;
    for d in [0.25, 0.5, 1.0, 2.0] {
        let law = mp_law(d);
        let edge = find_edge(&law, 1e-13)?;
        let sd = d.sqrt();
        let (thr_a, _) = bbp_thresholds(&edge);
        worst = worst
            .max((edge.lambda_plus - (1.0 + sd).powi(2)).abs())
            .max((edge.m2_at_edge + 1.0 / (1.0 + sd)).abs())
            .max((thr_a - (1.0 + sd)).abs());
    }
    Ok(outcome(
        worst <= tol,
        format!("max deviation {worst:.2e} (tolerance {tol:.0e})"),
    ))
}

fn inverse_consistency(opts: &SuiteOptions) -> Result<Outcome> {
    let spec_a = PopulationSpectrum::from_blocks(&[(3.0, 60), (1.0, 140)])?;
    let spec_b = PopulationSpectrum::from_blocks(&[(2.0, 100), (0.5, 200)])?;
    let law = Law::new(&spec_a, &spec_b);
    let edge = find_edge(&law, 1e-13)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut round, mut deriv): (f64, f64) = (0.0, 0.0);
    let lo = edge.window_start(crate::dequiv::Side::A);
    for _ in 0..50 {
        let x = edge.lambda_plus + rng.random_range(0.05..20.0);
        let m = m2c_inverse_real(&law, x, &edge)?;
        round = round.max((g2c(&law, m, &edge)?.value - x).abs());
        let zeta = lo * rng.random_range(0.05..0.95);
        let h = 1e-6 * zeta.abs();
        let fd = (g2c(&law, zeta + h, &edge)?.value - g2c(&law, zeta - h, &edge)?.value) / (2.0 * h);
        let an = g2c(&law, zeta, &edge)?.derivative;
        deriv = deriv.max(((an - fd) / an).abs());
    }
    let (t1, t2) = (1e-8 * opts.tolerance_scale, 1e-4 * opts.tolerance_scale);
    Ok(outcome(
        round <= t1 && deriv <= t2,
        format!("round trip {round:.2e} (tol {t1:.0e}), derivative rel. error {deriv:.2e} (tol {t2:.0e})"),
    ))
}

fn preset(kind: ExperimentKind, opts: &SuiteOptions) -> ExperimentConfig {
    ExperimentConfig {
        seed: opts.seed,
        ..ExperimentConfig::preset(kind)
    }
}

fn outlier_location(opts: &SuiteOptions) -> Result<Outcome> {
    let median_at = |n: usize| -> Result<f64> {
        let cfg = ExperimentConfig {
            model: ModelConfig::identity_spiked(n, n, &[3.0], &[]),
            ..preset(ExperimentKind::OutlierLocation, opts)
        };
        let r = run(&cfg)?;
        Ok(Statistic::Median.of(&r.metric("dev_label1").expect("metric").summary))
    };
    let m1000 = median_at(1000)?;
    let bound = 5.0 * opts.tolerance_scale / 1000f64.sqrt();
    let m500 = median_at(500)?;
    let m2000 = median_at(2000)?;
    let ratio = m500 / m2000;
    let (lo, hi) = (1.5, 3.0);
    let rate_ok = if opts.tolerance_scale > 0.0 {
        ratio >= lo && ratio <= hi
    } else {
        false
    };
    Ok(outcome(
        m1000 <= bound && rate_ok,
        format!(
            "median |l1 - 4.5| at n=1000: {m1000:.4} (bound {bound:.4}); median ratio n=500/n=2000: {ratio:.3} (range [{lo}, {hi}])"
        ),
    ))
}

fn overlap(opts: &SuiteOptions) -> Result<Outcome> {
    let r = run(&preset(ExperimentKind::Overlap, opts))?;
    let mean = r.metric("overlap_label1").expect("metric").summary.mean;
    let tol = 0.03 * opts.tolerance_scale;
    Ok(outcome(
        (mean - 0.5).abs() <= tol,
        format!("mean overlap {mean:.4} (target 0.5 +/- {tol})"),
    ))
}

fn table1(opts: &SuiteOptions) -> Result<Outcome> {
    let reps = match opts.tier {
        Tier::Fast => super::DEFAULT_REPS,
        Tier::Paper => REFERENCE_REPS,
    };
    let cfg = ExperimentConfig {
        reps,
        ..preset(ExperimentKind::AdaptiveTable, opts)
    };
    let r = run(&cfg)?;
    let mut fails = Vec::new();
    let mut worst: f64 = 0.0;
    for c in &r.checks {
        let bound = (0.1 * opts.tolerance_scale).max(3.0 * opts.tolerance_scale * se_of(&r, &c.metric));
        let ok = c.value <= bound;
        worst = worst.max(c.value);
        if !ok {
            fails.push(c.metric.trim_start_matches("sigma_hat_").to_string());
        }
    }
    Ok(outcome(
        fails.is_empty(),
        format!(
            "{} reps; {}/{} cells within max(0.1, 3 SE); largest |mean - table| {worst:.3}{}",
            reps,
            r.checks.len() - fails.len(),
            r.checks.len(),
            if fails.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", fails.join(" "))
            }
        ),
    ))
}

fn se_of(r: &super::AggregateReport, metric: &str) -> f64 {
    r.metric(metric).map(|m| m.summary.std_error).unwrap_or(f64::NAN)
}

fn spike_counting(opts: &SuiteOptions) -> Result<Outcome> {
    let case = |a: &[f64], b: &[f64], truth: (usize, usize, usize)| -> Result<f64> {
        let cfg = ExperimentConfig {
            model: ModelConfig::identity_spiked(150, 200, a, b),
            reps: 500,
            sweep: Vec::new(),
            pass_from: None,
            truth: Some(truth),
            resamples: 2000,
            epsilon: 0.05,
            ..preset(ExperimentKind::CountsMisestimation, opts)
        };
        let r = run(&cfg)?;
        Ok(1.0 - r.metric("miss").expect("metric").summary.mean)
    };
    let p1 = case(&[5.0], &[5.0], (2, 1, 1))?;
    let p2 = case(&[3.0, 2.0], &[], (2, 2, 0))?;
    let need = 1.0 - 0.1 * opts.tolerance_scale;
    Ok(outcome(
        p1 >= need && p2 >= need,
        format!("P(correct) case I {p1:.3}, case II {p2:.3} (need >= {need:.2})"),
    ))
}

fn sticking(opts: &SuiteOptions) -> Result<Outcome> {
    let r = run(&preset(ExperimentKind::Sticking, opts))?;
    let inter = r.metric("interlacing").expect("metric").summary.min;
    let bound = 10.0 * opts.tolerance_scale;
    let worst = (1..=10)
        .filter_map(|i| r.metric(&format!("n_dev_i{i}")))
        .map(|m| m.summary.q50)
        .fold(0.0, f64::max);
    Ok(outcome(
        inter >= 1.0 && worst <= bound,
        format!("interlacing fraction {inter:.3}; largest median n|l~(i+1) - l(i)| {worst:.3} (bound {bound})"),
    ))
}

fn delocalization(opts: &SuiteOptions) -> Result<Outcome> {
    let r = run(&preset(ExperimentKind::Delocalization, opts))?;
    let q95 = r.metric("bulk").expect("metric").summary.q95;
    let bound = 5.0 * opts.tolerance_scale * 500f64.ln().powi(2);
    Ok(outcome(
        q95 <= bound,
        format!("95% quantile of n|<v,xi>|^2 {q95:.3} (bound {bound:.1})"),
    ))
}

fn local_law(opts: &SuiteOptions) -> Result<Outcome> {
    let r = run(&preset(ExperimentKind::LocalLaw, opts))?;
    let bound = 5.0 * opts.tolerance_scale * 400f64.ln();
    let worst = (0..10)
        .filter_map(|t| r.metric(&format!("m_E{t}")))
        .map(|m| m.summary.q95)
        .fold(0.0, f64::max);
    Ok(outcome(
        worst <= bound,
        format!("largest 95% quantile of n eta |m - mc| over the grid {worst:.3} (bound {bound:.2})"),
    ))
}

fn shrinkage(opts: &SuiteOptions) -> Result<Outcome> {
    let dh = d_hat(4.5, 1.0)?;
    let rh = rho_hat(dh, 1.0);
    let closed = (dh - 2.0).abs() <= 1e-12 && (rh - 1.0).abs() <= 1e-12;
    let r = run(&preset(ExperimentKind::Prial, opts))?;
    let mut vals = Vec::new();
    for n in [100, 200, 300] {
        vals.push(r.metric(&format!("prial_n{n}")).expect("metric").summary.mean);
    }
    let table = r.tables.iter().find(|t| t.name == "prial").expect("table");
    let se: Vec<f64> = table.rows.iter().map(|row| row[3]).collect();
    let positive = vals.iter().all(|&v| v > 0.0);
    let k = 2.0 * opts.tolerance_scale;
    let monotone = (1..vals.len()).all(|i| vals[i] - vals[i - 1] >= -k * (se[i].powi(2) + se[i - 1].powi(2)).sqrt());
    Ok(outcome(
        closed && positive && monotone && opts.tolerance_scale > 0.0,
        format!(
            "d_hat(4.5) = {dh}, rho_hat = {rh}; PRIAL at n=100,200,300: {:.2}%, {:.2}%, {:.2}% (SE {:.2}, {:.2}, {:.2})",
            vals[0], vals[1], vals[2], se[0], se[1], se[2]
        ),
    ))
}
