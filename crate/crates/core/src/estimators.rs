//! Data-driven inference: spike counts, the resampled ratio threshold,
//! adaptive spike estimates and eigenvalue shrinkage.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::try_map_indexed;
use crate::sampling::{DrawOptions, MaterialBasis, SampleDraw, Sampler, Spectrum};
use crate::spectra::SeparableModel;
use crate::spike_theory::{LabelMap, Origin};

/// Default fraction of `min(p, n)` scanned by the counting statistics.
pub const DEFAULT_SCAN_FRACTION: f64 = 0.1;

/// Minimum number of null resamples accepted by [`calibrate_omega`].
pub const MIN_RESAMPLES: usize = 100;

/// Number of indices scanned: `floor(c * min(p, n))`, at least one.
pub fn scan_cap(p: usize, n: usize, c: f64) -> usize {
    ((c * p.min(n) as f64).floor() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub omega: f64,
    pub resamples: usize,
    pub epsilon: f64,
    pub c: f64,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    /// `T_i - 1` per resample, in resample order.
    pub statistics: Vec<f64>,
    /// `n^{-2/3} + phi_n^2 < omega < 1`.
    pub consistency_window: bool,
}

impl ThresholdCalibration {
    /// Fraction of resamples with `T_i <= 1 + omega`.
    pub fn coverage(&self) -> f64 {
        let hit = self.statistics.iter().filter(|&&t| t <= self.omega).count();
        hit as f64 / self.statistics.len() as f64
    }
}

/// `max_{k <= cap} lambda_k / lambda_{k+1}` over a descending spectrum.
pub fn max_ratio(eigs: &[f64], cap: usize) -> f64 {
    (0..cap.min(eigs.len().saturating_sub(1)))
        .map(|k| eigs[k] / eigs[k + 1])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `omega` from `resamples` independent Gaussian null draws `X X^T`: the
/// `ceil((1 - epsilon) N)`-th order statistic of `T_i - 1`.
pub fn calibrate_omega(
    p: usize,
    n: usize,
    resamples: usize,
    epsilon: f64,
    c: f64,
    seed: u64,
) -> Result<ThresholdCalibration> {
    if resamples < MIN_RESAMPLES {
        return Err(Error::InsufficientResamples {
            got: resamples,
            min: MIN_RESAMPLES,
        });
    }
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon = {epsilon} outside [0, 0.5)")));
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidArgument(format!("scan fraction c = {c} outside (0, 1]")));
    }
    let cap = scan_cap(p, n, c);
    let keep = (cap + 1).min(p.min(n));
    let sampler = Sampler::new(
        &SeparableModel::null(p, n),
        DrawOptions {
            spectrum: Spectrum::Top(keep),
            ..DrawOptions::default()
        },
    )?;
    let statistics = try_map_indexed(resamples, |i| {
        let draw = sampler.draw(seed, i as u64)?;
        Ok::<_, Error>(max_ratio(&draw.eigenvalues, cap) - 1.0)
    })?;
    let mut sorted = statistics.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((1.0 - epsilon) * resamples as f64).ceil() as usize;
    let omega = sorted[rank.clamp(1, resamples) - 1];
    let nf = n as f64;
    let floor = nf.powf(-2.0 / 3.0) + 1.0 / nf;
    Ok(ThresholdCalibration {
        omega,
        resamples,
        epsilon,
        c,
        p,
        n,
        seed,
        statistics,
        consistency_window: omega > floor && omega < 1.0,
    })
}

/// A count together with whether the scan ran out of indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub value: usize,
    pub saturated: bool,
}

fn first_below(stats: &[f64], omega: f64) -> Count {
    match stats.iter().position(|&t| t <= omega) {
        Some(i) => Count {
            value: i,
            saturated: false,
        },
        None => Count {
            value: stats.len(),
            saturated: true,
        },
    }
}

/// `lambda_{i+1} / lambda_{i+2} - 1` for `i = 0..cap` (1-based eigenvalues).
pub fn ratio_statistics(eigs: &[f64], cap: usize) -> Vec<f64> {
    let len = cap.min(eigs.len().saturating_sub(1));
    (0..len).map(|i| eigs[i] / eigs[i + 1] - 1.0).collect()
}

/// The eigenvalue-ratio count `q` on a descending spectrum.
pub fn count_outliers(eigs: &[f64], omega: f64, cap: usize) -> (Count, Vec<f64>) {
    let stats = ratio_statistics(eigs, cap);
    (first_below(&stats, omega), stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeCountResult {
    pub q: Count,
    pub q_a: Count,
    pub q_b: Count,
    pub omega: f64,
    pub cap: usize,
    pub ratios: Vec<f64>,
    /// `max_k |<v_{i+1}, xi_k>|^2` for `i = 0..cap`.
    pub max_overlaps_a: Vec<f64>,
    pub max_overlaps_b: Vec<f64>,
}

impl SpikeCountResult {
    pub fn triple(&self) -> (usize, usize, usize) {
        (self.q.value, self.q_a.value, self.q_b.value)
    }
}

fn max_overlaps(vectors: &Mat<f64>, basis: &MaterialBasis, dim: usize, cap: usize) -> Result<Vec<f64>> {
    let k = cap.min(vectors.ncols());
    let mut out = Vec::with_capacity(cap.min(dim));
    for i in 0..cap.min(dim) {
        let v = basis.direction(i + 1)?;
        let mut best: f64 = 0.0;
        for c in 0..k {
            let col = vectors.col(c);
            let d: f64 = v.iter().enumerate().map(|(r, x)| x * col[r]).sum();
            best = best.max(d * d);
        }
        out.push(best);
    }
    Ok(out)
}

/// `(q, q_a, q_b)` from a draw that carries singular vectors, given the
/// population eigenbases of `A~` and `B~`.
pub fn estimate_counts(
    draw: &SampleDraw,
    bases: Option<(&MaterialBasis, &MaterialBasis)>,
    omega: f64,
    c: f64,
) -> Result<SpikeCountResult> {
    let (basis_a, basis_b) = bases.ok_or(Error::MissingBases)?;
    let left = draw.left.as_ref().ok_or(Error::MissingVectors)?;
    let right = draw.right.as_ref().ok_or(Error::MissingVectors)?;
    let (p, n) = draw.dims;
    let cap = scan_cap(p, n, c);
    let (q, ratios) = count_outliers(&draw.eigenvalues, omega, cap);
    let max_overlaps_a = max_overlaps(left, basis_a, p, cap)?;
    let max_overlaps_b = max_overlaps(right, basis_b, n, cap)?;
    Ok(SpikeCountResult {
        q,
        q_a: first_below(&max_overlaps_a, omega),
        q_b: first_below(&max_overlaps_b, omega),
        omega,
        cap,
        ratios,
        max_overlaps_a,
        max_overlaps_b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveEstimate {
    pub origin: Origin,
    pub population_index: usize,
    pub label: usize,
    pub sigma_hat: f64,
}

/// `-( (1/n) sum_{nu > r+s} 1 / (lambda_nu - x) )^{-1}`.
pub fn adaptive_value(spectrum: &[f64], skip: usize, x: f64, n: usize) -> Result<f64> {
    let mut acc = 0.0;
    for &l in spectrum.iter().skip(skip) {
        let gap = l - x;
        if gap.abs() < 1e-10 {
            return Err(Error::DivergentSum(gap.abs()));
        }
        acc += 1.0 / gap;
    }
    Ok(-(n as f64) / acc)
}

/// Spike estimates that use only the sample spectrum: A-spikes through the
/// `Q~2` spectrum, B-spikes through the `Q~1` spectrum, each excluding the
/// top `r_plus_s` eigenvalues.
pub fn adaptive_spikes(draw: &SampleDraw, labels: &LabelMap, r_plus_s: usize) -> Result<Vec<AdaptiveEstimate>> {
    if draw.eigenvalues.len() < draw.rank() {
        return Err(Error::InvalidArgument(
            "adaptive estimates need the full spectrum".into(),
        ));
    }
    let n = draw.dims.1;
    let q2 = draw.q2_spectrum();
    let q1 = draw.q1_spectrum();
    let mut out = Vec::new();
    let sides = [
        (Origin::A, labels.a_spikes().collect::<Vec<_>>(), &q2),
        (Origin::B, labels.b_spikes().collect::<Vec<_>>(), &q1),
    ];
    for (origin, spikes, spectrum) in sides {
        for (pos, label) in spikes {
            if label > r_plus_s {
                continue;
            }
            let x = draw.eigenvalues[label - 1];
            out.push(AdaptiveEstimate {
                origin,
                population_index: pos,
                label,
                sigma_hat: adaptive_value(spectrum, r_plus_s, x, n)?,
            });
        }
    }
    out.sort_by_key(|e| e.label);
    Ok(out)
}

/// Stieltjes transform of the standard Marchenko-Pastur law with ratio `d`,
/// for `x > lambda_+`.
pub fn mp_m2c(x: f64, d: f64) -> Result<f64> {
    let lp = (1.0 + d.sqrt()).powi(2);
    let lm = (1.0 - d.sqrt()).powi(2);
    if !(x > lp) {
        return Err(Error::BelowEdge { x, edge: lp });
    }
    Ok((d - 1.0 - x + ((x - lp) * (x - lm)).sqrt()) / (2.0 * x))
}

/// `d_hat = -1 / m2c(x) - 1`.
pub fn d_hat(x: f64, d: f64) -> Result<f64> {
    Ok(-1.0 / mp_m2c(x, d)? - 1.0)
}

/// `(d_hat^2 - d) / (d_hat + d)`.
pub fn rho_hat(d_hat: f64, d: f64) -> f64 {
    (d_hat * d_hat - d) / (d_hat + d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkOptions {
    pub r_plus_s: usize,
    /// Clip negative `rho_hat` at zero.
    pub clip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageResult {
    /// `(label, d_hat)` for A-spikes among the top `r + s`.
    pub d_hat: Vec<(usize, f64)>,
    /// `rho_hat` for sample indices `1..=r+s`; zero off the A-labels.
    pub rho_hat: Vec<f64>,
    /// Eigenvalues of the shrunk estimator on the top `r + s` sample
    /// directions (`1 + rho_hat`); it equals 1 elsewhere.
    pub shrunk: Vec<f64>,
    pub d_n: f64,
}

impl ShrinkageResult {
    /// The `p x p` estimator in the eigenbasis `left` of `Q~1`.
    pub fn matrix(&self, left: MatRef<'_, f64>) -> Result<Mat<f64>> {
        if left.ncols() < self.shrunk.len() {
            return Err(Error::IndexOutOfRange {
                index: self.shrunk.len(),
                size: left.ncols(),
            });
        }
        let p = left.nrows();
        let mut m = Mat::<f64>::identity(p, p);
        for (k, &s) in self.shrunk.iter().enumerate() {
            let w = s - 1.0;
            let col = left.col(k);
            for j in 0..p {
                for i in 0..p {
                    m[(i, j)] += w * col[i] * col[j];
                }
            }
        }
        Ok(m)
    }
}

/// Shrinkage of the top sample eigenvalues of `Q~1` in the setting
/// `A = I`, `B = I` with finitely many spikes.
pub fn shrink(
    draw: &SampleDraw,
    model: &SeparableModel,
    labels: &LabelMap,
    opts: ShrinkOptions,
) -> Result<ShrinkageResult> {
    if !model.a().base_spectrum().is_identity() || !model.b().base_spectrum().is_identity() {
        return Err(Error::NotIsotropicBase);
    }
    let k = opts.r_plus_s;
    if k > draw.eigenvalues.len() {
        return Err(Error::IndexOutOfRange {
            index: k,
            size: draw.eigenvalues.len(),
        });
    }
    let d_n = model.ratio();
    let mut rho = vec![0.0; k];
    let mut d_hats = Vec::new();
    for (_, label) in labels.a_spikes() {
        if label > k {
            continue;
        }
        let dh = d_hat(draw.eigenvalues[label - 1], d_n)?;
        let r = rho_hat(dh, d_n);
        rho[label - 1] = if opts.clip { r.max(0.0) } else { r };
        d_hats.push((label, dh));
    }
    d_hats.sort_by_key(|e| e.0);
    Ok(ShrinkageResult {
        d_hat: d_hats,
        shrunk: rho.iter().map(|r| 1.0 + r).collect(),
        rho_hat: rho,
        d_n,
    })
}

/// Frobenius-optimal eigenvalues in the sample eigenbasis:
/// `1 + sum_j (sigma_j - 1) |<v_j, xi_i>|^2` over the A-spikes, for
/// `i = 1..=k`.
pub fn oracle_eigenvalues(
    draw: &SampleDraw,
    model: &SeparableModel,
    basis_a: &MaterialBasis,
    k: usize,
) -> Result<Vec<f64>> {
    let dirs = model
        .a()
        .spikes()
        .entries()
        .iter()
        .map(|s| Ok((s.spiked - s.base, basis_a.direction(s.index)?)))
        .collect::<Result<Vec<_>>>()?;
    (1..=k)
        .map(|i| {
            let mut v = 1.0;
            for (w, dir) in &dirs {
                v += w * draw.overlap_left(dir, i)?;
            }
            Ok(v)
        })
        .collect()
}

/// Squared Frobenius distance between two matrices sharing the eigenbasis
/// of `Q~1`. The second equals 1 beyond its listed eigenvalues; `tail`
/// holds the remaining eigenvalues of the first (empty when they are 1).
pub fn spectral_loss(first: &[f64], second: &[f64], tail: &[f64]) -> f64 {
    let head: f64 = first.iter().zip(second).map(|(a, b)| (a - b).powi(2)).sum();
    head + tail.iter().map(|t| (t - 1.0).powi(2)).sum::<f64>()
}

/// Losses of one replication: shrinkage estimator and `Q~1`, both against
/// the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPair {
    pub estimator: f64,
    pub baseline: f64,
}

pub fn shrinkage_losses(draw: &SampleDraw, shrunk: &ShrinkageResult, oracle: &[f64]) -> LossPair {
    let k = shrunk.shrunk.len();
    let q1 = draw.q1_spectrum();
    LossPair {
        estimator: spectral_loss(&shrunk.shrunk, oracle, &[]),
        baseline: spectral_loss(&q1[..k], oracle, &q1[k..]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prial {
    /// Percent.
    pub value: f64,
    /// Delta-method standard error, percent.
    pub std_error: f64,
    pub reps: usize,
}

/// `100 (1 - mean(estimator) / mean(baseline))`.
pub fn prial(losses: &[LossPair]) -> Result<Prial> {
    let reps = losses.len();
    if reps == 0 {
        return Err(Error::InvalidArgument("PRIAL needs at least one replication".into()));
    }
    let nf = reps as f64;
    let me = losses.iter().map(|l| l.estimator).sum::<f64>() / nf;
    let mb = losses.iter().map(|l| l.baseline).sum::<f64>() / nf;
    if !(mb > 0.0) {
        return Err(Error::InvalidArgument("baseline loss is zero".into()));
    }
    let ratio = me / mb;
    let std_error = if reps > 1 {
        let (mut vee, mut vbb, mut veb) = (0.0, 0.0, 0.0);
        for l in losses {
            let (e, b) = (l.estimator - me, l.baseline - mb);
            vee += e * e;
            vbb += b * b;
            veb += e * b;
        }
        let k = 1.0 / (nf - 1.0);
        let var = (vee * k - 2.0 * ratio * veb * k + ratio * ratio * vbb * k) / (mb * mb * nf);
        100.0 * var.max(0.0).sqrt()
    } else {
        f64::NAN
    };
    Ok(Prial {
        value: 100.0 * (1.0 - ratio),
        std_error,
        reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dequiv::{find_edge, m2c_inverse_real, Law};
    use crate::sampling::Vectors;
    use crate::spectra::make_spiked;
    use crate::spike_theory::{gaussian_phi, predict_outliers};
    use proptest::prelude::*;

    fn fake_draw(eigs: Vec<f64>, p: usize, n: usize) -> SampleDraw {
        SampleDraw {
            eigenvalues: eigs,
            left: None,
            right: None,
            unspiked: None,
            seed: 0,
            stream: 0,
            dims: (p, n),
            truncation_rejections: 0,
        }
    }

    #[test]
    fn ratio_count_example() {
        let mut eigs = vec![9.0, 5.0, 2.95, 2.90, 2.88];
        eigs.extend((0..40).map(|i| 2.8 - 0.05 * i as f64));
        let (q, stats) = count_outliers(&eigs, 0.05, 10);
        assert_eq!(q.value, 2);
        assert!(!q.saturated);
        assert!((stats[1] - (5.0 / 2.95 - 1.0)).abs() < 1e-12);
        assert!((stats[2] - (2.95 / 2.90 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn saturation_returns_cap() {
        let eigs: Vec<f64> = (0..20).map(|i| 2f64.powi(-i)).collect();
        let (q, _) = count_outliers(&eigs, 0.05, 5);
        assert_eq!(
            q,
            Count {
                value: 5,
                saturated: true
            }
        );
    }

    #[test]
    fn counts_need_vectors_and_bases() {
        let d = fake_draw(vec![3.0, 2.0, 1.0], 3, 3);
        let b = MaterialBasis::Identity(3);
        assert_eq!(estimate_counts(&d, None, 0.1, 1.0), Err(Error::MissingBases));
        assert_eq!(
            estimate_counts(&d, Some((&b, &b)), 0.1, 1.0),
            Err(Error::MissingVectors)
        );
    }

    #[test]
    fn mp_shrinkage_example() {
        assert!((mp_m2c(4.5, 1.0).unwrap() + 1.0 / 3.0).abs() < 1e-14);
        let dh = d_hat(4.5, 1.0).unwrap();
        assert!((dh - 2.0).abs() < 1e-12);
        assert!((rho_hat(dh, 1.0) - 1.0).abs() < 1e-12);
        assert!(matches!(d_hat(4.0, 1.0), Err(Error::BelowEdge { .. })));
    }

    #[test]
    fn closed_form_matches_general_solver() {
        for (p, n) in [(100, 200), (300, 200)] {
            let law = Law::null(p, n);
            let edge = find_edge(&law, 1e-12).unwrap();
            let d = p as f64 / n as f64;
            for x in [edge.lambda_plus + 0.3, 7.0, 15.0] {
                let general = m2c_inverse_real(&law, x, &edge).unwrap();
                assert!((mp_m2c(x, d).unwrap() - general).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn insufficient_resamples() {
        assert_eq!(
            calibrate_omega(50, 50, 10, 0.05, 0.1, 1).unwrap_err(),
            Error::InsufficientResamples { got: 10, min: 100 }
        );
    }

    #[test]
    fn epsilon_zero_is_max() {
        let cal = calibrate_omega(40, 60, 120, 0.0, 0.2, 5).unwrap();
        let max = cal.statistics.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(cal.omega, max);
        assert_eq!(cal.coverage(), 1.0);
        let cal = calibrate_omega(40, 60, 120, 0.1, 0.2, 5).unwrap();
        assert!(cal.coverage() >= 0.9);
        assert!(cal.omega > 0.0 && cal.omega < 1.0);
    }

    #[test]
    fn prial_endpoints() {
        let same: Vec<LossPair> = (1..5)
            .map(|i| LossPair {
                estimator: 0.0,
                baseline: i as f64,
            })
            .collect();
        assert_eq!(prial(&same).unwrap().value, 100.0);
        let base: Vec<LossPair> = (1..5)
            .map(|i| LossPair {
                estimator: i as f64,
                baseline: i as f64,
            })
            .collect();
        let r = prial(&base).unwrap();
        assert!(r.value.abs() < 1e-12);
        assert!(r.std_error.abs() < 1e-12);
    }

    #[test]
    fn shrink_requires_identity_base() {
        let spec = crate::spectra::PopulationSpectrum::constant(10, 2.0);
        let model = SeparableModel::new(&spec, &crate::spectra::PopulationSpectrum::identity(20));
        let law = Law::from_model(&model);
        let edge = find_edge(&law, 1e-10).unwrap();
        let pred = predict_outliers(&model, &edge, gaussian_phi(20)).unwrap();
        let d = fake_draw(vec![1.0; 10], 10, 20);
        let opts = ShrinkOptions {
            r_plus_s: 0,
            clip: true,
        };
        assert_eq!(shrink(&d, &model, &pred.labels, opts), Err(Error::NotIsotropicBase));
    }

    #[test]
    fn shrunk_matrix_has_shrunk_spectrum() {
        let model = make_spiked(&SeparableModel::null(30, 60), &[4.0], &[]).unwrap();
        let sampler = Sampler::new(
            &model,
            DrawOptions {
                vectors: Vectors::All,
                ..DrawOptions::default()
            },
        )
        .unwrap();
        let draw = sampler.draw(3, 0).unwrap();
        let edge = find_edge(&Law::from_model(&model), 1e-10).unwrap();
        let pred = predict_outliers(&model, &edge, gaussian_phi(60)).unwrap();
        let res = shrink(
            &draw,
            &model,
            &pred.labels,
            ShrinkOptions {
                r_plus_s: 1,
                clip: true,
            },
        )
        .unwrap();
        let m = res.matrix(draw.left.as_ref().unwrap().as_ref()).unwrap();
        let (vals, _) = crate::linalg::symmetric_eigen(m.as_ref()).unwrap();
        assert!((vals[0] - res.shrunk[0]).abs() < 1e-10);
        assert!((vals[1] - 1.0).abs() < 1e-10);
        let oracle = oracle_eigenvalues(&draw, &model, sampler.basis_a(), 1).unwrap();
        assert!(oracle[0] > 1.0 && oracle[0] < 5.0);
    }

    proptest! {
        #[test]
        fn q_is_scale_invariant(mut eigs in prop::collection::vec(0.1f64..10.0, 12..40), scale in 0.01f64..100.0, omega in 0.01f64..0.5) {
            eigs.sort_by(|a, b| b.total_cmp(a));
            let scaled: Vec<f64> = eigs.iter().map(|x| x * scale).collect();
            prop_assert_eq!(count_outliers(&eigs, omega, 8).0, count_outliers(&scaled, omega, 8).0);
        }

        #[test]
        fn d_hat_increasing(d in 0.1f64..3.0, a in 0.001f64..20.0, b in 0.001f64..20.0) {
            let lp = (1.0 + d.sqrt()).powi(2);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-6);
            prop_assert!(d_hat(lp + lo, d).unwrap() < d_hat(lp + hi, d).unwrap());
        }

        #[test]
        fn rho_vanishes_at_threshold(d in 0.05f64..4.0) {
            prop_assert!(rho_hat(d.sqrt(), d).abs() < 1e-12);
            let lp = (1.0 + d.sqrt()).powi(2);
            let dh = d_hat(lp + 1e-10, d).unwrap();
            prop_assert!((dh - d.sqrt()).abs() < 1e-3);
        }
    }
}
