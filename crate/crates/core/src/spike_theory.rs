//! Theory-side predictions for spiked models: BBP thresholds, outlier
//! locations and labels, eigenvector overlaps and separation diagnostics.

use serde::{Deserialize, Serialize};

use crate::dequiv::{g1c, g2c, EdgeData, Law};
use crate::error::{Error, Result};
use crate::spectra::{SeparableModel, DEFAULT_TAU};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    A,
    B,
}

/// `(-1 / m2c(lambda_+), -1 / m1c(lambda_+))`.
pub fn bbp_thresholds(edge: &EdgeData) -> (f64, f64) {
    (-1.0 / edge.m2_at_edge, -1.0 / edge.m1_at_edge)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierPrediction {
    pub origin: Origin,
    /// 1-based position in the population spectrum of the originating side.
    pub population_index: usize,
    pub sigma_tilde: f64,
    pub is_outlier: bool,
    pub supercritical: bool,
    /// Classical location; `lambda_+` for spikes below threshold.
    pub theta: f64,
    pub delta: f64,
    pub fluctuation_scale: f64,
    pub label: usize,
    /// The other Stieltjes component at `theta` (`m1c(theta)` for A-spikes,
    /// `m2c(theta)` for B-spikes).
    pub companion: f64,
}

/// Labels of sample eigenvalues: spikes get `1..=r+s` by decreasing
/// classical location; other positions follow in population order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    p: usize,
    n: usize,
    a_positions: Vec<usize>,
    a_labels: Vec<usize>,
    b_positions: Vec<usize>,
    b_labels: Vec<usize>,
}

impl LabelMap {
    pub fn r(&self) -> usize {
        self.a_positions.len()
    }

    pub fn s(&self) -> usize {
        self.b_positions.len()
    }

    pub fn total_spikes(&self) -> usize {
        self.r() + self.s()
    }

    fn label_of(positions: &[usize], labels: &[usize], pos: usize, offset: usize) -> usize {
        if let Some(k) = positions.iter().position(|&q| q == pos) {
            return labels[k];
        }
        let before = positions.iter().filter(|&&q| q < pos).count();
        offset + pos - before
    }

    /// `alpha(i)` for a 1-based A position.
    pub fn alpha(&self, position: usize) -> usize {
        Self::label_of(&self.a_positions, &self.a_labels, position, self.total_spikes())
    }

    /// `beta(mu)` for a 1-based B position.
    pub fn beta(&self, position: usize) -> usize {
        Self::label_of(&self.b_positions, &self.b_labels, position, self.total_spikes())
    }

    /// Spike positions and labels on side A.
    pub fn a_spikes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.a_positions.iter().copied().zip(self.a_labels.iter().copied())
    }

    pub fn b_spikes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.b_positions.iter().copied().zip(self.b_labels.iter().copied())
    }

    /// Origin and position of a spike label.
    pub fn spike(&self, label: usize) -> Option<(Origin, usize)> {
        self.a_spikes()
            .find(|&(_, l)| l == label)
            .map(|(p, _)| (Origin::A, p))
            .or_else(|| self.b_spikes().find(|&(_, l)| l == label).map(|(p, _)| (Origin::B, p)))
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p, self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub lambda_plus: f64,
    pub threshold_a: f64,
    pub threshold_b: f64,
    pub phi_n: f64,
    pub n: usize,
    /// A-spikes first, then B-spikes, each in population order.
    pub outliers: Vec<OutlierPrediction>,
    pub labels: LabelMap,
}

impl Predictions {
    /// Labels of supercritical spikes, ascending.
    pub fn supercritical_labels(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .outliers
            .iter()
            .filter(|o| o.supercritical)
            .map(|o| o.label)
            .collect();
        v.sort_unstable();
        v
    }

    pub fn by_label(&self, label: usize) -> Option<&OutlierPrediction> {
        self.outliers.iter().find(|o| o.label == label)
    }

    pub fn count(&self, origin: Origin, supercritical_only: bool) -> usize {
        self.outliers
            .iter()
            .filter(|o| o.origin == origin && (o.supercritical || !supercritical_only))
            .count()
    }
}

/// Gaussian-entry support parameter `n^{-1/2}`.
pub fn gaussian_phi(n: usize) -> f64 {
    (n as f64).powf(-0.5)
}

/// Locations, gaps, fluctuation scales and labels for every spike.
pub fn predict_outliers(model: &SeparableModel, edge: &EdgeData, phi_n: f64) -> Result<Predictions> {
    let n = model.n();
    let nf = n as f64;
    if !(phi_n > 0.0 && phi_n < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "phi_n must lie in [n^(-1/2), 1), got {phi_n}"
        )));
    }
    let law = Law::from_model(model);
    let (thr_a, thr_b) = bbp_thresholds(edge);
    let margin = nf.powf(-1.0 / 3.0) + phi_n;
    let mut outliers = Vec::new();
    for (origin, side, thr) in [(Origin::A, model.a(), thr_a), (Origin::B, model.b(), thr_b)] {
        for spike in side.spikes().entries() {
            let st = spike.spiked;
            let is_outlier = st > thr;
            let (theta, companion) = if is_outlier {
                let gv = match origin {
                    Origin::A => g2c(&law, -1.0 / st, edge)?,
                    Origin::B => g1c(&law, -1.0 / st, edge)?,
                };
                (gv.value, gv.companion)
            } else {
                let c = match origin {
                    Origin::A => edge.m1_at_edge,
                    Origin::B => edge.m2_at_edge,
                };
                (edge.lambda_plus, c)
            };
            let delta = if is_outlier { (st - thr).sqrt() } else { 0.0 };
            outliers.push(OutlierPrediction {
                origin,
                population_index: spike.index,
                sigma_tilde: st,
                is_outlier,
                supercritical: st >= thr + margin,
                theta,
                delta,
                fluctuation_scale: delta / nf.sqrt() + phi_n * delta * delta,
                label: 0,
                companion,
            });
        }
    }
    let mut order: Vec<usize> = (0..outliers.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&outliers[i], &outliers[j]);
        b.theta
            .total_cmp(&a.theta)
            .then((a.origin == Origin::B).cmp(&(b.origin == Origin::B)))
            .then(a.population_index.cmp(&b.population_index))
    });
    for (rank, &k) in order.iter().enumerate() {
        outliers[k].label = rank + 1;
    }
    let pick = |origin: Origin| -> (Vec<usize>, Vec<usize>) {
        outliers
            .iter()
            .filter(|o| o.origin == origin)
            .map(|o| (o.population_index, o.label))
            .unzip()
    };
    let (a_positions, a_labels) = pick(Origin::A);
    let (b_positions, b_labels) = pick(Origin::B);
    Ok(Predictions {
        lambda_plus: edge.lambda_plus,
        threshold_a: thr_a,
        threshold_b: thr_b,
        phi_n,
        n,
        labels: LabelMap {
            p: model.p(),
            n,
            a_positions,
            a_labels,
            b_positions,
            b_labels,
        },
        outliers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapEntry {
    pub label: usize,
    pub origin: Origin,
    pub population_index: usize,
    pub sigma_tilde: f64,
    /// Limit of the squared projection of the population direction onto
    /// the sample singular vectors labelled by the set.
    pub z_value: f64,
    /// `phi_n + n^{-1/2} / Delta`.
    pub psi: f64,
    pub delta_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapPrediction {
    pub set: Vec<usize>,
    pub entries: Vec<OverlapEntry>,
}

/// Overlap of each spike direction in `set` with the sample vectors of
/// the set: `g'(-1/s) / (s g(-1/s))` with `g = g2c` for A-spikes and `g1c`
/// for B-spikes.
pub fn overlap_prediction(
    model: &SeparableModel,
    edge: &EdgeData,
    predictions: &Predictions,
    set: &[usize],
) -> Result<OverlapPrediction> {
    let law = Law::from_model(model);
    let sep = separation(model, edge, predictions, set)?;
    let mut entries = Vec::new();
    for &label in set {
        let o = predictions
            .by_label(label)
            .filter(|o| o.supercritical)
            .ok_or(Error::LabelNotOutlier(label))?;
        let arg = -1.0 / o.sigma_tilde;
        let gv = match o.origin {
            Origin::A => g2c(&law, arg, edge)?,
            Origin::B => g1c(&law, arg, edge)?,
        };
        entries.push(OverlapEntry {
            label,
            origin: o.origin,
            population_index: o.population_index,
            sigma_tilde: o.sigma_tilde,
            z_value: gv.derivative / (o.sigma_tilde * gv.value),
            psi: predictions.phi_n + (predictions.n as f64).powf(-0.5) / o.delta,
            delta_s: sep.delta_in_set(label).unwrap_or(f64::INFINITY),
        });
    }
    Ok(OverlapPrediction {
        set: set.to_vec(),
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub from: usize,
    pub to: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonOverlap {
    pub label: usize,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    /// Spike-to-spike deltas, rows indexed by the first label.
    pub pairs: Vec<PairDelta>,
    /// `delta_a(S)` for labels in the set (`+inf` when the minimum is empty).
    pub delta_set: Vec<(usize, f64)>,
    /// `delta_a(S)` for spike labels outside the set.
    pub delta_outside: Vec<(usize, f64)>,
    pub alpha_plus: f64,
    pub tau: f64,
    pub non_overlap: Vec<NonOverlap>,
}

impl SeparationReport {
    pub fn delta_in_set(&self, label: usize) -> Option<f64> {
        self.delta_set.iter().find(|d| d.0 == label).map(|d| d.1)
    }

    pub fn non_overlap_pass(&self) -> bool {
        self.non_overlap.iter().all(|n| n.pass)
    }
}

/// Pairwise separation quantities, `alpha_+` and non-overlap margins.
pub fn separation(
    model: &SeparableModel,
    edge: &EdgeData,
    predictions: &Predictions,
    set: &[usize],
) -> Result<SeparationReport> {
    let labels = &predictions.labels;
    let sa = model.a().spiked();
    let sb = model.b().spiked();
    for &l in set {
        if !predictions.by_label(l).is_some_and(|o| o.supercritical) {
            return Err(Error::LabelNotOutlier(l));
        }
    }
    let in_set = |l: usize| set.contains(&l);

    // delta from the row of spike `o` to a population direction
    let to_a = |o: &OutlierPrediction, j: usize| -> f64 {
        match o.origin {
            Origin::A => (sa[j - 1] - o.sigma_tilde).abs(),
            Origin::B => (sa[j - 1] + 1.0 / o.companion).abs(),
        }
    };
    let to_b = |o: &OutlierPrediction, nu: usize| -> f64 {
        match o.origin {
            Origin::A => (sb[nu - 1] + 1.0 / o.companion).abs(),
            Origin::B => (sb[nu - 1] - o.sigma_tilde).abs(),
        }
    };

    let mut pairs = Vec::new();
    for o in &predictions.outliers {
        for q in &predictions.outliers {
            if q.label == o.label {
                continue;
            }
            let value = match q.origin {
                Origin::A => to_a(o, q.population_index),
                Origin::B => to_b(o, q.population_index),
            };
            pairs.push(PairDelta {
                from: o.label,
                to: q.label,
                value,
            });
        }
    }

    let mut delta_set = Vec::new();
    for &l in set {
        let o = predictions.by_label(l).expect("checked above");
        let mut best = f64::INFINITY;
        for j in 1..=sa.len() {
            if !in_set(labels.alpha(j)) {
                best = best.min(to_a(o, j));
            }
        }
        for nu in 1..=sb.len() {
            if !in_set(labels.beta(nu)) {
                best = best.min(to_b(o, nu));
            }
        }
        delta_set.push((l, best));
    }

    let mut delta_outside = Vec::new();
    for q in predictions.outliers.iter().filter(|q| !in_set(q.label)) {
        let mut best = f64::INFINITY;
        for &l in set {
            let o = predictions.by_label(l).expect("checked above");
            let v = match q.origin {
                Origin::A => to_a(o, q.population_index),
                Origin::B => to_b(o, q.population_index),
            };
            best = best.min(v);
        }
        delta_outside.push((q.label, best));
    }

    let alpha_plus = predictions
        .outliers
        .iter()
        .map(|o| {
            let thr = match o.origin {
                Origin::A => predictions.threshold_a,
                Origin::B => predictions.threshold_b,
            };
            (o.sigma_tilde - thr).abs()
        })
        .fold(f64::INFINITY, f64::min);

    let tau = DEFAULT_TAU;
    let non_overlap = predictions
        .outliers
        .iter()
        .map(|o| {
            let margin = pairs
                .iter()
                .filter(|pd| pd.from == o.label)
                .map(|pd| pd.value)
                .fold(f64::INFINITY, f64::min);
            NonOverlap {
                label: o.label,
                margin,
                pass: margin >= tau,
            }
        })
        .collect();

    let _ = edge;
    Ok(SeparationReport {
        pairs,
        delta_set,
        delta_outside,
        alpha_plus,
        tau,
        non_overlap,
    })
}

/// Delocalisation bound for the squared overlap of a non-outlier sample
/// vector of index `i` with a population direction of eigenvalue `sigma`.
pub fn delocalization_bound(sigma: f64, threshold: f64, n: usize, phi_n: f64, i: usize) -> f64 {
    let nf = n as f64;
    let kappa = (i as f64).powf(2.0 / 3.0) * nf.powf(-2.0 / 3.0);
    (1.0 / nf + phi_n.powi(3)) / ((sigma - threshold).powi(2) + phi_n * phi_n + kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dequiv::find_edge;
    use crate::spectra::make_spiked;

    fn setup(p: usize, n: usize, da: &[f64], db: &[f64]) -> (SeparableModel, EdgeData) {
        let m = make_spiked(&SeparableModel::null(p, n), da, db).unwrap();
        let e = find_edge(&Law::from_model(&m), 1e-10).unwrap();
        (m, e)
    }

    fn mp_overlap(s: f64, d: f64) -> f64 {
        let m = -1.0 / s;
        let g = -1.0 / m + d / (m + 1.0);
        let gp = 1.0 / (m * m) - d / ((m + 1.0) * (m + 1.0));
        gp / (s * g)
    }

    #[test]
    fn thresholds_mp() {
        for (d, p, n) in [(1.0, 100, 100), (0.25, 50, 200)] {
            let (_, e) = setup(p, n, &[], &[]);
            let (a, b) = bbp_thresholds(&e);
            let d: f64 = d;
            assert!((a - (1.0 + d.sqrt())).abs() < 1e-9);
            assert!((b - (1.0 + (1.0 / d).sqrt())).abs() < 1e-9);
        }
    }

    #[test]
    fn single_spike_prediction() {
        let n = 1000;
        let (m, e) = setup(n, n, &[2.0], &[]);
        let pr = predict_outliers(&m, &e, gaussian_phi(n)).unwrap();
        let o = pr.outliers[0];
        assert!((o.theta - 4.5).abs() < 1e-10);
        assert!((o.delta - 1.0).abs() < 1e-9);
        let nf = n as f64;
        assert!((o.fluctuation_scale - 2.0 / nf.sqrt()).abs() < 1e-9);
        assert!(o.is_outlier && o.supercritical);
        assert!((o.companion + 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn boundary_spike_is_not_outlier() {
        let (m, e) = setup(100, 100, &[1.0], &[]);
        let (thr, _) = bbp_thresholds(&e);
        // sigma = 2 equals the threshold up to rounding in the edge
        let o = predict_outliers(&m, &e, 0.1).unwrap().outliers[0];
        if o.sigma_tilde <= thr {
            assert!(!o.is_outlier);
            assert_eq!(o.theta, e.lambda_plus);
            assert_eq!(o.delta, 0.0);
        } else {
            assert!(o.delta < 1e-4);
        }
    }

    #[test]
    fn labels_follow_theta() {
        // A-spike sigma 3 gives 4.5; B-spike with theta 5 needs g1c(-1/s) = 5
        let (m, e) = setup(200, 200, &[2.0], &[(5.0 + 5f64.sqrt()) / 2.0 - 1.0 + 0.0]);
        let pr = predict_outliers(&m, &e, gaussian_phi(200)).unwrap();
        let a = pr.outliers.iter().find(|o| o.origin == Origin::A).unwrap();
        let b = pr.outliers.iter().find(|o| o.origin == Origin::B).unwrap();
        assert!(b.theta > a.theta);
        assert_eq!((b.label, a.label), (1, 2));
        assert_eq!(pr.labels.alpha(1), 2);
        assert_eq!(pr.labels.beta(1), 1);
        assert_eq!(pr.labels.alpha(2), 3);
        assert_eq!(pr.labels.beta(5), 6);
    }

    #[test]
    fn overlap_closed_forms() {
        let (m, e) = setup(400, 400, &[2.0], &[]);
        let pr = predict_outliers(&m, &e, gaussian_phi(400)).unwrap();
        let ov = overlap_prediction(&m, &e, &pr, &[1]).unwrap();
        assert!((ov.entries[0].z_value - 0.5).abs() < 1e-9);

        let (m, e) = setup(200, 400, &[3.0], &[]);
        let pr = predict_outliers(&m, &e, gaussian_phi(400)).unwrap();
        let ov = overlap_prediction(&m, &e, &pr, &[1]).unwrap();
        assert!((ov.entries[0].z_value - 0.809_523_809_523_809_5).abs() < 1e-9);

        let (m, e) = setup(400, 400, &[1e4], &[]);
        let pr = predict_outliers(&m, &e, gaussian_phi(400)).unwrap();
        let ov = overlap_prediction(&m, &e, &pr, &[1]).unwrap();
        assert!(ov.entries[0].z_value > 0.999);
    }

    #[test]
    fn overlap_rejects_subcritical_label() {
        let (m, e) = setup(100, 100, &[0.5], &[]);
        let pr = predict_outliers(&m, &e, gaussian_phi(100)).unwrap();
        assert_eq!(
            overlap_prediction(&m, &e, &pr, &[1]).unwrap_err(),
            Error::LabelNotOutlier(1)
        );
    }

    #[test]
    fn separation_examples() {
        let (m, e) = setup(200, 200, &[4.0, 2.0], &[]);
        let pr = predict_outliers(&m, &e, gaussian_phi(200)).unwrap();
        let sep = separation(&m, &e, &pr, &[1]).unwrap();
        let d12 = sep.pairs.iter().find(|p| p.from == 1 && p.to == 2).unwrap();
        assert!((d12.value - 2.0).abs() < 1e-12);
        assert!(sep.non_overlap_pass());
        // in-set delta includes the bulk directions (sigma = 1)
        assert!((sep.delta_in_set(1).unwrap() - 2.0).abs() < 1e-12);

        let (m, e) = setup(200, 200, &[2.0, 2.0], &[]);
        let pr = predict_outliers(&m, &e, gaussian_phi(200)).unwrap();
        let sep = separation(&m, &e, &pr, &[1, 2]).unwrap();
        assert!(!sep.non_overlap_pass());

        let (m, e) = setup(300, 300, &[2.0], &[1.5]);
        let pr = predict_outliers(&m, &e, gaussian_phi(300)).unwrap();
        let la = pr.labels.alpha(1);
        let lb = pr.labels.beta(1);
        let sep = separation(&m, &e, &pr, &[la]).unwrap();
        let d = sep.pairs.iter().find(|p| p.from == la && p.to == lb).unwrap();
        assert!((d.value - (2.5f64 - 3.0).abs()).abs() < 1e-9);
    }

    #[test]
    fn delocalization_bound_monotone() {
        let a = delocalization_bound(1.0, 2.0, 500, 500f64.powf(-0.5), 3);
        let b = delocalization_bound(1.5, 2.0, 500, 500f64.powf(-0.5), 3);
        assert!(a > 0.0 && b > a);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn overlap_matches_closed_form(s in 2.2f64..30.0, dsel in 0usize..3) {
                let (p, n, d) = [(100, 400, 0.25), (200, 400, 0.5), (300, 300, 1.0)][dsel];
                let thr = 1.0 + f64::sqrt(d);
                prop_assume!(s > thr + 0.2);
                let (m, e) = setup(p, n, &[s - 1.0], &[]);
                let pr = predict_outliers(&m, &e, gaussian_phi(n)).unwrap();
                let ov = overlap_prediction(&m, &e, &pr, &[1]).unwrap();
                let z = ov.entries[0].z_value;
                prop_assert!(z > 0.0 && z <= 1.0);
                prop_assert!((z - mp_overlap(s, d)).abs() < 1e-8);
            }

            #[test]
            fn outlier_scale_below_gap(s in 2.5f64..20.0) {
                let n = 1000;
                let (m, e) = setup(n, n, &[s - 1.0], &[]);
                let phi = gaussian_phi(n);
                let o = predict_outliers(&m, &e, phi).unwrap().outliers[0];
                let nf = n as f64;
                if o.delta * o.delta >= 10.0 * (nf.powf(-1.0 / 3.0) + phi) {
                    prop_assert!(o.fluctuation_scale < (o.theta - e.lambda_plus) / 2.0);
                }
            }
        }
    }
}
