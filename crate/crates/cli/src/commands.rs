use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use sepspike::config::{self, ModelConfig};
use sepspike::dequiv::{default_grid, density, find_edge, EdgeData, Law, SolverOptions};
use sepspike::estimators::{
    adaptive_spikes, adaptive_value, calibrate_omega, d_hat, estimate_counts, rho_hat, scan_cap, shrink,
    AdaptiveEstimate, ShrinkOptions, ShrinkageResult, SpikeCountResult, ThresholdCalibration,
};
use sepspike::harness::acceptance::{format_line, run_criterion, CriterionResult, SuiteOptions, Tier, CRITERIA};
use sepspike::harness::{run, AggregateReport, ExperimentConfig};
use sepspike::par::try_map_indexed;
use sepspike::sampling::{DrawOptions, EntryLaw, MaterialBasis, SampleDraw, Sampler, Spectrum, Vectors};
use sepspike::spike_theory::{overlap_prediction, predict_outliers, OverlapPrediction, Predictions};

use crate::output::{csv_writer, ensure_dir, file_stem, in_dir, num, print_json, write_json};
use crate::{
    Cli, Command, Common, EstimateArgs, ExperimentArgs, LawArgs, PredictArgs, SampleArgs, TierArg, VerifyArgs,
};

/// Seed used when neither a flag, the config nor `SEPSPIKE_SEED` sets one.
const DEFAULT_SEED: u64 = 20_240_601;

/// Returns whether everything that was checked passed.
pub fn dispatch(cli: &Cli) -> Result<bool> {
    let v = cli.verbose;
    match &cli.command {
        Command::Law(a) => law(a, v).map(|_| true),
        Command::Predict(a) => predict(a, v).map(|_| true),
        Command::Sample(a) => sample(a, v).map(|_| true),
        Command::Estimate(a) => estimate(a, v).map(|_| true),
        Command::Experiment(a) => experiment(a, v),
        Command::Verify(a) => verify(a),
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("SEPSPIKE_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| anyhow!("SEPSPIKE_SEED must be an unsigned integer, got \"{s}\"")),
        Err(_) => Ok(None),
    }
}

fn read_config(common: &Common) -> Result<Option<String>> {
    common
        .config
        .as_ref()
        .map(|p| fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
        .transpose()
}

/// Model config from `--config` (a 200 x 200 null model when absent) with
/// `--set` overrides.
fn load_model(common: &Common, verbose: u8) -> Result<ModelConfig> {
    let text = read_config(common)?.unwrap_or_else(|| "p = 200\nn = 200\n".into());
    let cfg: ModelConfig = config::load(&text, &common.overrides)?;
    if verbose > 0 {
        eprintln!("model: p = {}, n = {}, entries {:?}", cfg.p, cfg.n, cfg.entry_law);
    }
    Ok(cfg)
}

fn resolve_seed(flag: Option<u64>, cfg: Option<u64>) -> Result<u64> {
    Ok(match (flag, cfg) {
        (Some(s), _) | (None, Some(s)) => s,
        (None, None) => env_seed()?.unwrap_or(DEFAULT_SEED),
    })
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, steps] = parts[..] else {
        bail!("--grid expects lo:hi:steps, got \"{spec}\"");
    };
    let lo: f64 = lo.parse().with_context(|| format!("bad grid start \"{lo}\""))?;
    let hi: f64 = hi.parse().with_context(|| format!("bad grid end \"{hi}\""))?;
    let steps: usize = steps.parse().with_context(|| format!("bad grid size \"{steps}\""))?;
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) || steps < 2 {
        bail!("--grid needs lo < hi and at least 2 steps");
    }
    Ok((0..steps)
        .map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64)
        .collect())
}

fn print_edge(edge: &EdgeData) {
    println!("lambda_plus   {:.12}", edge.lambda_plus);
    println!("m1c(edge)     {:.12}", edge.m1_at_edge);
    println!("m2c(edge)     {:.12}", edge.m2_at_edge);
    println!("margin_a      {:.6}", edge.margin_a);
    println!("margin_b      {:.6}", edge.margin_b);
    println!("curvature     {:.6e}", edge.curvature);
}

fn law(a: &LawArgs, verbose: u8) -> Result<()> {
    let cfg = load_model(&a.common, verbose)?;
    let law = Law::from_model(&cfg.model()?);
    let edge = find_edge(&law, 1e-12)?;
    if a.edge_only {
        if let Some(dir) = &a.common.out {
            ensure_dir(dir)?;
            write_json(&in_dir(dir, "edge.json"), &edge)?;
        }
        if a.common.json {
            print_json(&edge)?;
        } else {
            print_edge(&edge);
        }
        return Ok(());
    }
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => default_grid(&law, &edge, 400),
    };
    let curve = density(&law, &grid, a.eta, &SolverOptions::default())?;
    if !curve.failed.is_empty() {
        eprintln!(
            "warning: solver failed at {} grid points (written as NaN)",
            curve.failed.len()
        );
    }
    let write_csv = |path: Option<&Path>| -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["E", "rho_c", "re_m1", "im_m1", "re_m2", "im_m2"])?;
        for k in 0..curve.grid.len() {
            let (m1, m2) = (curve.m1[k], curve.m2[k]);
            w.write_record([curve.grid[k], curve.rho[k], m1.re, m1.im, m2.re, m2.im].map(num))?;
        }
        w.flush()?;
        Ok(())
    };
    match &a.common.out {
        Some(dir) => {
            ensure_dir(dir)?;
            write_csv(Some(&in_dir(dir, "density.csv")))?;
            write_json(&in_dir(dir, "edge.json"), &edge)?;
            if a.common.json {
                print_json(&edge)?;
            } else {
                print_edge(&edge);
                println!("density written to {}", in_dir(dir, "density.csv").display());
            }
        }
        None if a.common.json => {
            #[derive(Serialize)]
            struct Out<'a> {
                edge: &'a EdgeData,
                density: &'a sepspike::dequiv::DensityCurve,
            }
            print_json(&Out {
                edge: &edge,
                density: &curve,
            })?;
        }
        None => write_csv(None)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictOut {
    edge: EdgeData,
    predictions: Predictions,
    #[serde(skip_serializing_if = "Option::is_none")]
    overlap: Option<OverlapPrediction>,
}

fn predict(a: &PredictArgs, verbose: u8) -> Result<()> {
    let cfg = load_model(&a.common, verbose)?;
    let model = cfg.model()?;
    let edge = find_edge(&Law::from_model(&model), 1e-12)?;
    let predictions = predict_outliers(&model, &edge, cfg.phi()?)?;
    let overlap = if a.overlap.is_empty() {
        None
    } else {
        Some(overlap_prediction(&model, &edge, &predictions, &a.overlap)?)
    };
    let out = PredictOut {
        edge,
        predictions,
        overlap,
    };
    if let Some(dir) = &a.common.out {
        ensure_dir(dir)?;
        write_json(&in_dir(dir, "predictions.json"), &out)?;
    }
    if a.common.json {
        return print_json(&out);
    }
    let p = &out.predictions;
    println!(
        "lambda_+ = {:.6}, thresholds: A {:.6}, B {:.6}, phi_n = {:.4}",
        p.lambda_plus, p.threshold_a, p.threshold_b, p.phi_n
    );
    println!(
        "{:>5} {:>6} {:>6} {:>10} {:>12} {:>10} {:>12} {:>8}",
        "label", "origin", "index", "sigma", "theta", "delta", "fluct_scale", "outlier"
    );
    for o in &p.outliers {
        println!(
            "{:>5} {:>6} {:>6} {:>10.4} {:>12.6} {:>10.4} {:>12.3e} {:>8}",
            o.label,
            format!("{:?}", o.origin),
            o.population_index,
            o.sigma_tilde,
            o.theta,
            o.delta,
            o.fluctuation_scale,
            if o.supercritical { "yes" } else { "no" }
        );
    }
    if let Some(ov) = &out.overlap {
        for e in &ov.entries {
            println!("overlap label {}: {:.6} (psi {:.3e})", e.label, e.z_value, e.psi);
        }
    }
    Ok(())
}

fn parse_law(s: &str) -> Result<EntryLaw> {
    let law = match s.split_once(':') {
        None if s == "gaussian" => EntryLaw::Gaussian,
        None if s == "uniform" => EntryLaw::Uniform,
        Some(("student_t" | "student-t", dof)) => EntryLaw::StudentT {
            dof: dof
                .parse()
                .with_context(|| format!("bad degrees of freedom \"{dof}\""))?,
        },
        _ => bail!("unknown entry law \"{s}\" (expected gaussian, uniform or student_t:<dof>)"),
    };
    law.validate()?;
    Ok(law)
}

fn sample(a: &SampleArgs, verbose: u8) -> Result<()> {
    let mut cfg = load_model(&a.common, verbose)?;
    if let Some(l) = &a.law {
        cfg.entry_law = parse_law(l)?;
    }
    if a.reps == 0 {
        bail!("--reps must be at least 1");
    }
    let seed = resolve_seed(a.seed, cfg.seed)?;
    let model = cfg.model()?;
    let k = a.overlaps.unwrap_or(0).min(cfg.p.min(cfg.n));
    if k > 0 && a.common.out.is_none() {
        bail!("--overlaps writes overlaps.csv and needs --out");
    }
    let sampler = Sampler::new(
        &model,
        DrawOptions {
            entries: cfg.entries()?,
            with_unspiked: a.coupled,
            vectors: if k > 0 { Vectors::Top(k) } else { Vectors::None },
            spectrum: Spectrum::Full,
        },
    )?;
    let draws = try_map_indexed(a.reps, |r| sampler.draw(seed, r as u64))?;
    let rejected: u64 = draws.iter().map(|d| d.truncation_rejections).sum();
    if verbose > 0 {
        eprintln!("{} draws, seed {seed}, {rejected} truncation redraws", draws.len());
    }
    let header: &[&str] = if a.coupled {
        &["index", "lambda", "lambda_unspiked"]
    } else {
        &["index", "lambda"]
    };
    let rows = |d: &SampleDraw| -> Vec<Vec<String>> {
        d.eigenvalues
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let mut row = vec![(i + 1).to_string(), num(l)];
                if let Some(u) = &d.unspiked {
                    row.push(num(u[i]));
                }
                row
            })
            .collect()
    };
    match &a.common.out {
        Some(dir) => {
            ensure_dir(dir)?;
            for (r, d) in draws.iter().enumerate() {
                let mut w = csv_writer(Some(&in_dir(dir, &format!("draw_{r:04}.csv"))))?;
                w.write_record(header)?;
                for row in rows(d) {
                    w.write_record(&row)?;
                }
                w.flush()?;
            }
            if k > 0 {
                write_overlaps(&in_dir(dir, "overlaps.csv"), &draws, &sampler, k)?;
            }
            println!("{} draws written to {}", draws.len(), dir.display());
        }
        None => {
            let mut w = csv_writer(None)?;
            let mut full = vec!["rep"];
            full.extend_from_slice(header);
            w.write_record(&full)?;
            for (r, d) in draws.iter().enumerate() {
                for row in rows(d) {
                    let mut rec = vec![r.to_string()];
                    rec.extend(row);
                    w.write_record(&rec)?;
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn write_overlaps(path: &Path, draws: &[SampleDraw], sampler: &Sampler, k: usize) -> Result<()> {
    let mut w = csv_writer(Some(path))?;
    w.write_record(["rep", "side", "direction", "k", "overlap"])?;
    for (r, d) in draws.iter().enumerate() {
        for (side, basis) in [("a", sampler.basis_a()), ("b", sampler.basis_b())] {
            for i in 1..=k {
                let v = basis.direction(i)?;
                for j in 1..=k {
                    let o = if side == "a" {
                        d.overlap_left(&v, j)?
                    } else {
                        d.overlap_right(&v, j)?
                    };
                    w.write_record([r.to_string(), side.into(), i.to_string(), j.to_string(), num(o)])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a plain numeric matrix; entries separated by commas or whitespace,
/// `#` starts a comment.
fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .with_context(|| format!("{}:{}: bad number \"{t}\"", path.display(), ln + 1))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Serialize)]
struct CalibrationOut {
    omega: f64,
    resamples: usize,
    epsilon: f64,
    coverage: f64,
    consistency_window: bool,
}

impl From<&ThresholdCalibration> for CalibrationOut {
    fn from(c: &ThresholdCalibration) -> Self {
        Self {
            omega: c.omega,
            resamples: c.resamples,
            epsilon: c.epsilon,
            coverage: c.coverage(),
            consistency_window: c.consistency_window,
        }
    }
}

/// Estimates from a data file, where spike origins are unknown: every top
/// index is read both as an A-spike and as a B-spike.
#[derive(Serialize)]
struct IndexEstimate {
    index: usize,
    lambda: f64,
    sigma_hat_a: f64,
    sigma_hat_b: f64,
}

#[derive(Serialize)]
struct EstimateOut {
    source: &'static str,
    dims: (usize, usize),
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    top_eigenvalues: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibration: Option<CalibrationOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    counts: Option<SpikeCountResult>,
    r_plus_s: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    adaptive: Option<Vec<AdaptiveEstimate>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    adaptive_by_index: Option<Vec<IndexEstimate>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shrink: Option<ShrinkageResult>,
}

fn estimate(a: &EstimateArgs, verbose: u8) -> Result<()> {
    if !(a.counts || a.adaptive || a.shrink) {
        bail!("nothing to estimate: pass --counts, --adaptive and/or --shrink");
    }
    let model_cfg = if a.data.is_none() {
        Some(load_model(&a.common, verbose)?)
    } else {
        None
    };
    let seed = resolve_seed(a.seed, model_cfg.as_ref().and_then(|c| c.seed))?;
    let (draw, sim) = match (&a.data, &model_cfg) {
        (Some(path), _) => {
            let rows = read_matrix(path)?;
            let vectors = if a.counts { Vectors::All } else { Vectors::None };
            (SampleDraw::from_data(&rows, vectors)?, None)
        }
        (None, Some(cfg)) => {
            let model = cfg.model()?;
            let sampler = Sampler::new(
                &model,
                DrawOptions {
                    entries: cfg.entries()?,
                    vectors: if a.counts {
                        Vectors::Top(scan_cap(cfg.p, cfg.n, a.scan_fraction))
                    } else {
                        Vectors::None
                    },
                    ..DrawOptions::default()
                },
            )?;
            let draw = sampler.draw(seed, 0)?;
            (draw, Some((model, sampler, cfg)))
        }
        (None, None) => unreachable!("model config loaded when no data file is given"),
    };
    let (p, n) = draw.dims;

    let calibration = match a.calibrate.as_slice() {
        [] => None,
        [count, eps] => {
            let count: usize = count
                .parse()
                .with_context(|| format!("bad resample count \"{count}\""))?;
            let eps: f64 = eps.parse().with_context(|| format!("bad epsilon \"{eps}\""))?;
            if verbose > 0 {
                eprintln!("calibrating omega from {count} null resamples");
            }
            Some(calibrate_omega(p, n, count, eps, a.scan_fraction, seed ^ 0x9e37_79b9)?)
        }
        _ => unreachable!("clap enforces two values"),
    };
    let omega = a.omega.or(calibration.as_ref().map(|c| c.omega));

    let counts = if a.counts {
        let omega = omega.ok_or_else(|| anyhow!("--counts needs --omega or --calibrate N EPSILON"))?;
        let identity = (MaterialBasis::Identity(p), MaterialBasis::Identity(n));
        let bases = match &sim {
            Some((_, s, _)) => (s.basis_a(), s.basis_b()),
            None => (&identity.0, &identity.1),
        };
        Some(estimate_counts(&draw, Some(bases), omega, a.scan_fraction)?)
    } else {
        None
    };

    let predictions = match &sim {
        Some((model, _, cfg)) => {
            let edge = find_edge(&Law::from_model(model), 1e-12)?;
            Some(predict_outliers(model, &edge, cfg.phi()?)?)
        }
        None => None,
    };
    let r_plus_s = match (a.rank, &counts, &predictions) {
        (Some(k), _, _) => k,
        (None, Some(c), _) => c.q.value,
        (None, None, Some(pr)) => pr.labels.total_spikes(),
        (None, None, None) => bail!("a data file needs --rank or --counts to fix the number of spikes"),
    };

    let (mut adaptive, mut adaptive_by_index, mut shrunk) = (None, None, None);
    if a.adaptive {
        match (&sim, &predictions) {
            (Some(_), Some(pr)) => adaptive = Some(adaptive_spikes(&draw, &pr.labels, r_plus_s)?),
            _ => {
                let (q1, q2) = (draw.q1_spectrum(), draw.q2_spectrum());
                let mut v = Vec::new();
                for i in 0..r_plus_s.min(draw.eigenvalues.len()) {
                    let x = draw.eigenvalues[i];
                    v.push(IndexEstimate {
                        index: i + 1,
                        lambda: x,
                        sigma_hat_a: adaptive_value(&q2, r_plus_s, x, n)?,
                        sigma_hat_b: adaptive_value(&q1, r_plus_s, x, n)?,
                    });
                }
                adaptive_by_index = Some(v);
            }
        }
    }
    if a.shrink {
        let opts = ShrinkOptions {
            r_plus_s,
            clip: !a.no_clip,
        };
        shrunk = Some(match (&sim, &predictions) {
            (Some((model, _, _)), Some(pr)) => shrink(&draw, model, &pr.labels, opts)?,
            _ => {
                // every top index is treated as an A-spike
                let d_n = p as f64 / n as f64;
                let mut d_hats = Vec::new();
                let mut rho = Vec::new();
                for i in 0..r_plus_s.min(draw.eigenvalues.len()) {
                    let dh = d_hat(draw.eigenvalues[i], d_n)?;
                    let r = rho_hat(dh, d_n);
                    d_hats.push((i + 1, dh));
                    rho.push(if opts.clip { r.max(0.0) } else { r });
                }
                ShrinkageResult {
                    d_hat: d_hats,
                    shrunk: rho.iter().map(|r| 1.0 + r).collect(),
                    rho_hat: rho,
                    d_n,
                }
            }
        });
    }

    let out = EstimateOut {
        source: if sim.is_some() { "simulated" } else { "data" },
        dims: (p, n),
        seed: sim.as_ref().map(|_| seed),
        top_eigenvalues: draw.eigenvalues.iter().take(10).copied().collect(),
        calibration: calibration.as_ref().map(CalibrationOut::from),
        counts,
        r_plus_s,
        adaptive,
        adaptive_by_index,
        shrink: shrunk,
    };
    if let Some(dir) = &a.common.out {
        ensure_dir(dir)?;
        write_json(&in_dir(dir, "estimate.json"), &out)?;
    }
    if a.common.json {
        return print_json(&out);
    }
    println!("{} draw, p = {p}, n = {n}", out.source);
    if let Some(c) = &out.calibration {
        println!(
            "omega = {:.6} from {} resamples (epsilon {}, coverage {:.4}, consistency window {})",
            c.omega, c.resamples, c.epsilon, c.coverage, c.consistency_window
        );
    }
    if let Some(c) = &out.counts {
        let flag = |s: bool| if s { " (saturated)" } else { "" };
        println!(
            "q = {}{}, q_a = {}{}, q_b = {}{}  (omega {:.6}, scan cap {})",
            c.q.value,
            flag(c.q.saturated),
            c.q_a.value,
            flag(c.q_a.saturated),
            c.q_b.value,
            flag(c.q_b.saturated),
            c.omega,
            c.cap
        );
    }
    println!("spikes excluded from the bulk: {r_plus_s}");
    for e in out.adaptive.iter().flatten() {
        println!(
            "label {} ({:?} index {}): sigma_hat = {:.6}",
            e.label, e.origin, e.population_index, e.sigma_hat
        );
    }
    for e in out.adaptive_by_index.iter().flatten() {
        println!(
            "index {}: lambda = {:.6}, sigma_hat (A) = {:.6}, sigma_hat (B) = {:.6}",
            e.index, e.lambda, e.sigma_hat_a, e.sigma_hat_b
        );
    }
    if let Some(s) = &out.shrink {
        for (label, dh) in &s.d_hat {
            println!(
                "label {label}: d_hat = {dh:.6}, shrunk eigenvalue = {:.6}",
                s.shrunk[label - 1]
            );
        }
    }
    Ok(())
}

fn experiment(a: &ExperimentArgs, verbose: u8) -> Result<bool> {
    let text = read_config(&a.common)?.unwrap_or_default();
    let declares_seed = toml::from_str::<toml::Table>(&text)
        .map(|t| t.contains_key("seed"))
        .unwrap_or(false);
    let mut overrides = Vec::new();
    if !declares_seed {
        if let Some(s) = env_seed()? {
            overrides.push(format!("seed={s}"));
        }
    }
    overrides.extend(a.common.overrides.iter().cloned());
    if let Some(r) = a.reps {
        overrides.push(format!("reps={r}"));
    }
    if let Some(s) = a.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(t) = a.tolerance {
        overrides.push(format!("tolerance={t}"));
    }
    let cfg = ExperimentConfig::load(&text, &overrides, Some(a.kind))?;
    if verbose > 0 {
        eprintln!(
            "running {} with {} replications, seed {}",
            cfg.kind.name(),
            cfg.reps,
            cfg.seed
        );
    }
    let report = run(&cfg)?;
    let dir = a
        .common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("results").join(cfg.kind.name()));
    write_report(&dir, &cfg, &report)?;
    if a.common.json {
        print_json(&report)?;
    } else {
        print_report(&report);
        println!("report written to {}", dir.display());
    }
    Ok(report.passed)
}

/// `report.json`, the resolved config, a summary CSV, one raw-value CSV per
/// metric and one CSV per table.
fn write_report(dir: &Path, cfg: &ExperimentConfig, report: &AggregateReport) -> Result<()> {
    ensure_dir(dir)?;
    write_json(&in_dir(dir, "report.json"), report)?;
    fs::write(in_dir(dir, "config.toml"), toml::to_string(cfg)?)?;
    let mut w = csv_writer(Some(&in_dir(dir, "summary.csv")))?;
    w.write_record([
        "metric",
        "count",
        "mean",
        "sd",
        "std_error",
        "min",
        "q05",
        "q50",
        "q95",
        "max",
    ])?;
    for m in &report.metrics {
        let s = &m.summary;
        let mut rec = vec![m.name.clone(), s.count.to_string()];
        rec.extend([s.mean, s.sd, s.std_error, s.min, s.q05, s.q50, s.q95, s.max].map(num));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut w = csv_writer(Some(&in_dir(dir, "checks.csv")))?;
    w.write_record(["check", "metric", "value", "bound", "passed"])?;
    for c in &report.checks {
        w.write_record([
            c.name.clone(),
            c.metric.clone(),
            num(c.value),
            num(c.bound),
            c.passed.to_string(),
        ])?;
    }
    w.flush()?;
    let metrics_dir = dir.join("metrics");
    ensure_dir(&metrics_dir)?;
    for m in &report.metrics {
        let mut w = csv_writer(Some(&in_dir(&metrics_dir, &format!("{}.csv", file_stem(&m.name)))))?;
        w.write_record(["rep", "value"])?;
        for (i, &v) in m.raw.iter().enumerate() {
            w.write_record([i.to_string(), num(v)])?;
        }
        w.flush()?;
    }
    for t in &report.tables {
        let mut w = csv_writer(Some(&in_dir(dir, &format!("{}.csv", file_stem(&t.name)))))?;
        w.write_record(&t.columns)?;
        for row in &t.rows {
            w.write_record(row.iter().map(|&x| num(x)))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn print_report(r: &AggregateReport) {
    println!(
        "{}: {} replications, seed {}, tolerance {}, {:.1}s",
        r.kind.name(),
        r.reps,
        r.seed,
        r.tolerance,
        r.wall_time_s
    );
    for c in &r.checks {
        println!(
            "  [{}] {:<40} value {:>12.6} bound {:>12.6}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.bound
        );
    }
    println!(
        "{}",
        if r.passed {
            "all checks passed"
        } else {
            "some checks failed"
        }
    );
}

fn verify(a: &VerifyArgs) -> Result<bool> {
    let opts = SuiteOptions {
        tier: match a.tier {
            TierArg::Fast => Tier::Fast,
            TierArg::Paper => Tier::Paper,
        },
        seed: resolve_seed(a.seed, None)?,
        tolerance_scale: a.tolerance_scale,
    };
    let ids: Vec<u8> = if a.only.is_empty() {
        CRITERIA.iter().map(|c| c.0).collect()
    } else {
        for id in &a.only {
            if !CRITERIA.iter().any(|c| c.0 == *id) {
                bail!("unknown criterion {id} (valid ids are 1 to {})", CRITERIA.len());
            }
        }
        a.only.clone()
    };
    let mut results: Vec<CriterionResult> = Vec::new();
    for id in ids {
        let r = run_criterion(id, &opts);
        if !a.common.json {
            println!("{}", format_line(&r));
        }
        results.push(r);
    }
    let passed = results.iter().all(|r| r.passed);
    if let Some(dir) = &a.common.out {
        ensure_dir(dir)?;
        write_json(&in_dir(dir, "verify.json"), &results)?;
    }
    if a.common.json {
        print_json(&results)?;
    } else {
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
        if failed.is_empty() {
            println!("all {} criteria passed", results.len());
        } else {
            println!("failed: {}", failed.join(", "));
        }
    }
    Ok(passed)
}
