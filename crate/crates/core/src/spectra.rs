//! Population spectra, spike perturbations and the spiked separable model.
//!
//! Spectra are stored in descending order. A spiked model keeps the base
//! eigenvalue paired with its perturbed value at the same position, and the
//! positions are ordered so that the perturbed spectrum is non-increasing.
//! Position `i` of a spectrum corresponds to column `i` of the eigenbasis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default regularity constant used by [`validate`].
pub const DEFAULT_TAU: f64 = 0.05;

/// Largest number of spikes accepted on either side.
pub const MAX_SPIKES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpectrum {
    values: Vec<f64>,
}

impl PopulationSpectrum {
    /// Builds a spectrum from arbitrary non-negative values, sorting them
    /// into descending order.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSpectrum("empty spectrum".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidSpectrum(format!(
                "eigenvalues must be finite and non-negative, got {bad}"
            )));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { values })
    }

    pub fn identity(dim: usize) -> Self {
        Self::constant(dim, 1.0)
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        assert!(dim > 0 && value >= 0.0);
        Self {
            values: vec![value; dim],
        }
    }

    /// Spectrum built from `(value, count)` blocks.
    pub fn from_blocks(blocks: &[(f64, usize)]) -> Result<Self> {
        let values = blocks.iter().flat_map(|&(v, c)| std::iter::repeat_n(v, c)).collect();
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max(&self) -> f64 {
        self.values[0]
    }

    /// Fraction of eigenvalues in `[0, t]`.
    pub fn mass_below(&self, t: f64) -> f64 {
        self.values.iter().filter(|&&v| v <= t).count() as f64 / self.dim() as f64
    }

    pub fn rank(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// Whether every eigenvalue equals one.
    pub fn is_identity(&self) -> bool {
        self.values.iter().all(|&v| v == 1.0)
    }

    pub fn esd(&self) -> DiscreteMeasure {
        esd(self)
    }
}

/// A finitely supported probability measure with atoms in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteMeasure {
    /// `(location, mass)` pairs, locations strictly decreasing.
    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// Integral of `g` against the measure.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|&(x, w)| w * g(x)).sum()
    }
}

/// Empirical spectral distribution: mass `1/dim` at each eigenvalue, with
/// repeated eigenvalues merged into a single atom.
pub fn esd(spectrum: &PopulationSpectrum) -> DiscreteMeasure {
    let w = 1.0 / spectrum.dim() as f64;
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for &v in spectrum.values() {
        match atoms.last_mut() {
            Some(last) if last.0 == v => last.1 += w,
            _ => atoms.push((v, w)),
        }
    }
    DiscreteMeasure { atoms }
}

/// Request to perturb the base eigenvalue at a 1-based position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeSpec {
    pub index: usize,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    /// 1-based position in the model (after reordering).
    pub index: usize,
    /// 1-based position in the base spectrum before reordering.
    pub base_index: usize,
    pub base: f64,
    pub d: f64,
    /// `base * (1 + d)`.
    pub spiked: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpikeSet {
    entries: Vec<Spike>,
}

impl SpikeSet {
    /// Entries ordered by model position.
    pub fn entries(&self) -> &[Spike] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Eigenbasis of a population matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    #[default]
    Identity,
    /// Haar-distributed orthogonal basis generated from a seed.
    Haar { seed: u64 },
    /// Explicit orthogonal matrix, column-major.
    Explicit { dim: usize, columns: Vec<f64> },
}

/// One side (A or B) of the model: paired base/perturbed spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideSpectrum {
    base: Vec<f64>,
    spiked: Vec<f64>,
    spikes: SpikeSet,
    basis: Basis,
}

impl SideSpectrum {
    fn unspiked(spectrum: &PopulationSpectrum) -> Self {
        Self {
            base: spectrum.values().to_vec(),
            spiked: spectrum.values().to_vec(),
            spikes: SpikeSet::default(),
            basis: Basis::Identity,
        }
    }

    /// Base eigenvalues in model order (paired with [`Self::spiked`]).
    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// Perturbed eigenvalues, non-increasing.
    pub fn spiked(&self) -> &[f64] {
        &self.spiked
    }

    pub fn spikes(&self) -> &SpikeSet {
        &self.spikes
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    /// Base spectrum as a sorted [`PopulationSpectrum`].
    pub fn base_spectrum(&self) -> PopulationSpectrum {
        PopulationSpectrum::new(self.base.clone()).expect("validated at construction")
    }

    fn apply(&self, requests: &[SpikeSpec]) -> Result<Self> {
        let dim = self.dim();
        if requests.len() > MAX_SPIKES.min(dim) {
            return Err(Error::DimensionMismatch(format!(
                "{} spikes requested for a spectrum of dimension {dim} (maximum {})",
                requests.len(),
                MAX_SPIKES.min(dim)
            )));
        }
        let mut d_at = vec![None; dim];
        for req in requests {
            if !(req.d > 0.0) {
                return Err(Error::NegativePerturbation(req.d));
            }
            if req.index == 0 || req.index > dim {
                return Err(Error::DimensionMismatch(format!(
                    "spike index {} outside 1..={dim}",
                    req.index
                )));
            }
            if d_at[req.index - 1].replace(req.d).is_some() {
                return Err(Error::InvalidArgument(format!("spike index {} given twice", req.index)));
            }
        }
        let mut slots: Vec<(usize, f64, f64, Option<f64>)> = self
            .base
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let d = d_at[i];
                (i, b, b * (1.0 + d.unwrap_or(0.0)), d)
            })
            .collect();
        // stable sort keeps the original position as the tie-breaker
        slots.sort_by(|x, y| y.2.total_cmp(&x.2));
        let mut entries = Vec::new();
        for (pos, slot) in slots.iter().enumerate() {
            if let Some(d) = slot.3 {
                entries.push(Spike {
                    index: pos + 1,
                    base_index: slot.0 + 1,
                    base: slot.1,
                    d,
                    spiked: slot.2,
                });
            }
        }
        Ok(Self {
            base: slots.iter().map(|s| s.1).collect(),
            spiked: slots.iter().map(|s| s.2).collect(),
            spikes: SpikeSet { entries },
            basis: self.basis.clone(),
        })
    }
}

/// The spiked separable covariance model `A~^{1/2} X B~^{1/2}` with
/// `X` of size `p x n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableModel {
    a: SideSpectrum,
    b: SideSpectrum,
}

impl SeparableModel {
    /// Unspiked model with population spectra `A` (dimension `p`) and `B`
    /// (dimension `n`).
    pub fn new(spec_a: &PopulationSpectrum, spec_b: &PopulationSpectrum) -> Self {
        Self {
            a: SideSpectrum::unspiked(spec_a),
            b: SideSpectrum::unspiked(spec_b),
        }
    }

    /// `A = I_p`, `B = I_n`.
    pub fn null(p: usize, n: usize) -> Self {
        Self::new(&PopulationSpectrum::identity(p), &PopulationSpectrum::identity(n))
    }

    pub fn with_bases(mut self, basis_a: Basis, basis_b: Basis) -> Result<Self> {
        for (basis, dim) in [(&basis_a, self.p()), (&basis_b, self.n())] {
            if let Basis::Explicit { dim: d, columns } = basis {
                if *d != dim || columns.len() != dim * dim {
                    return Err(Error::DimensionMismatch(format!(
                        "explicit basis of dimension {d} for a spectrum of dimension {dim}"
                    )));
                }
            }
        }
        self.a.basis = basis_a;
        self.b.basis = basis_b;
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.a.dim()
    }

    pub fn n(&self) -> usize {
        self.b.dim()
    }

    /// Aspect ratio `d_n = p / n`.
    pub fn ratio(&self) -> f64 {
        self.p() as f64 / self.n() as f64
    }

    pub fn a(&self) -> &SideSpectrum {
        &self.a
    }

    pub fn b(&self) -> &SideSpectrum {
        &self.b
    }

    pub fn has_spikes(&self) -> bool {
        !self.a.spikes.is_empty() || !self.b.spikes.is_empty()
    }

    /// The same model with every spike removed (positions are kept, so
    /// population directions still line up with the spiked model).
    pub fn unspiked(&self) -> Self {
        let strip = |s: &SideSpectrum| SideSpectrum {
            base: s.base.clone(),
            spiked: s.base.clone(),
            spikes: SpikeSet::default(),
            basis: s.basis.clone(),
        };
        Self {
            a: strip(&self.a),
            b: strip(&self.b),
        }
    }
}

/// Perturbs the first `d_a.len()` eigenvalues of `A` and the first
/// `d_b.len()` eigenvalues of `B`: `sigma~_i = sigma_i (1 + d_i)`.
pub fn make_spiked(base: &SeparableModel, d_a: &[f64], d_b: &[f64]) -> Result<SeparableModel> {
    let specs = |ds: &[f64]| -> Vec<SpikeSpec> {
        ds.iter()
            .enumerate()
            .map(|(i, &d)| SpikeSpec { index: i + 1, d })
            .collect()
    };
    with_spikes(base, &specs(d_a), &specs(d_b))
}

/// Perturbs eigenvalues at arbitrary 1-based positions of the base spectra.
pub fn with_spikes(base: &SeparableModel, spikes_a: &[SpikeSpec], spikes_b: &[SpikeSpec]) -> Result<SeparableModel> {
    if base.has_spikes() {
        return Err(Error::InvalidArgument("base model already carries spikes".into()));
    }
    Ok(SeparableModel {
        a: base.a.apply(spikes_a)?,
        b: base.b.apply(spikes_b)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Violation {
    AspectRatio { ratio: f64 },
    NormA { max: f64 },
    NormB { max: f64 },
    ConcentrationA { mass: f64 },
    ConcentrationB { mass: f64 },
    SpikedNormA { max: f64 },
    SpikedNormB { max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tau: f64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the aspect-ratio window, operator-norm bounds and non-concentration
/// at zero for a regularity constant `tau`.
pub fn validate(model: &SeparableModel, tau: f64) -> ValidationReport {
    let mut violations = Vec::new();
    let ratio = model.ratio();
    if ratio < tau || ratio > 1.0 / tau {
        violations.push(Violation::AspectRatio { ratio });
    }
    let spec_a = model.a.base_spectrum();
    let spec_b = model.b.base_spectrum();
    if spec_a.max() > 1.0 / tau {
        violations.push(Violation::NormA { max: spec_a.max() });
    }
    if spec_b.max() > 1.0 / tau {
        violations.push(Violation::NormB { max: spec_b.max() });
    }
    let mass_a = spec_a.mass_below(tau);
    if mass_a > 1.0 - tau {
        violations.push(Violation::ConcentrationA { mass: mass_a });
    }
    let mass_b = spec_b.mass_below(tau);
    if mass_b > 1.0 - tau {
        violations.push(Violation::ConcentrationB { mass: mass_b });
    }
    if model.a.spiked[0] > 1.0 / tau {
        violations.push(Violation::SpikedNormA { max: model.a.spiked[0] });
    }
    if model.b.spiked[0] > 1.0 / tau {
        violations.push(Violation::SpikedNormB { max: model.b.spiked[0] });
    }
    ValidationReport { tau, violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spike_gives_one_plus_d() {
        let m = make_spiked(&SeparableModel::null(10, 10), &[3.0], &[]).unwrap();
        assert_eq!(m.a().spiked()[0], 4.0);
        assert!(m.a().spiked()[1..].iter().all(|&v| v == 1.0));
        assert_eq!(m.a().spikes().entries()[0].index, 1);
    }

    #[test]
    fn spike_on_non_flat_base() {
        let mut vals = vec![1.0; 9];
        vals.insert(0, 2.0);
        let base = SeparableModel::new(
            &PopulationSpectrum::new(vals).unwrap(),
            &PopulationSpectrum::identity(10),
        );
        let m = make_spiked(&base, &[1.0], &[]).unwrap();
        assert_eq!(m.a().spiked()[0], 4.0);
    }

    #[test]
    fn negative_perturbation_rejected() {
        let err = make_spiked(&SeparableModel::null(5, 5), &[-0.5], &[]).unwrap_err();
        assert_eq!(err, Error::NegativePerturbation(-0.5));
    }

    #[test]
    fn too_many_spikes_rejected() {
        let err = make_spiked(&SeparableModel::null(2, 5), &[1.0, 1.0, 1.0], &[]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn reorders_spiked_positions() {
        // spike the third position hard enough to overtake the first two
        let base = SeparableModel::new(
            &PopulationSpectrum::new(vec![3.0, 2.0, 1.0, 1.0]).unwrap(),
            &PopulationSpectrum::identity(4),
        );
        let m = with_spikes(&base, &[SpikeSpec { index: 3, d: 4.0 }], &[]).unwrap();
        assert_eq!(m.a().spiked(), &[5.0, 3.0, 2.0, 1.0]);
        assert_eq!(m.a().base(), &[1.0, 3.0, 2.0, 1.0]);
        let s = m.a().spikes().entries()[0];
        assert_eq!((s.index, s.base_index), (1, 3));
    }

    #[test]
    fn degenerate_spikes_tie_break_by_position() {
        let m = make_spiked(&SeparableModel::null(6, 6), &[2.0, 2.0], &[]).unwrap();
        let e = m.a().spikes().entries();
        assert_eq!((e[0].index, e[0].base_index), (1, 1));
        assert_eq!((e[1].index, e[1].base_index), (2, 2));
    }

    #[test]
    fn validation_cases() {
        assert!(validate(&SeparableModel::null(50, 50), 0.1).passed());

        let mut vals = vec![0.01; 95];
        vals.extend(vec![1.0; 5]);
        let spec_a = PopulationSpectrum::new(vals).unwrap();
        let rep = validate(&SeparableModel::new(&spec_a, &PopulationSpectrum::identity(100)), 0.1);
        assert!(rep
            .violations
            .iter()
            .any(|v| matches!(v, Violation::ConcentrationA { .. })));

        let rep = validate(&SeparableModel::null(200, 10), 0.1);
        assert!(rep
            .violations
            .iter()
            .any(|v| matches!(v, Violation::AspectRatio { .. })));
    }

    #[test]
    fn esd_examples() {
        let e = esd(&PopulationSpectrum::new(vec![1.0, 1.0, 1.0]).unwrap());
        assert_eq!(e.atoms(), &[(1.0, 1.0)]);
        let e = esd(&PopulationSpectrum::new(vec![1.0, 2.0]).unwrap());
        assert_eq!(e.atoms(), &[(2.0, 0.5), (1.0, 0.5)]);
        let e = esd(&PopulationSpectrum::new(vec![3.0, 2.0, 1.0, 0.0]).unwrap());
        assert_eq!(e.atoms().len(), 4);
        assert_eq!(e.atoms()[3], (0.0, 0.25));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn esd_mass_is_one(vals in proptest::collection::vec(0.0f64..10.0, 1..200)) {
                let e = esd(&PopulationSpectrum::new(vals).unwrap());
                prop_assert!((e.total_mass() - 1.0).abs() <= 1e-12);
            }

            #[test]
            fn tiny_spikes_leave_spectrum_unchanged(
                vals in proptest::collection::vec(0.1f64..5.0, 4..40),
                r in 1usize..4,
            ) {
                let spec = PopulationSpectrum::new(vals).unwrap();
                let base = SeparableModel::new(&spec, &PopulationSpectrum::identity(8));
                let m = make_spiked(&base, &vec![1e-12; r], &[]).unwrap();
                let mut sorted_base = m.a().base().to_vec();
                sorted_base.sort_by(|a, b| b.total_cmp(a));
                for (s, b) in m.a().spiked().iter().zip(&sorted_base) {
                    prop_assert!((s - b).abs() <= 1e-11);
                }
            }

            #[test]
            fn reordering_preserves_multiset(
                vals in proptest::collection::vec(0.1f64..5.0, 4..40),
                ds in proptest::collection::vec(0.01f64..4.0, 1..4),
            ) {
                let spec = PopulationSpectrum::new(vals).unwrap();
                let base = SeparableModel::new(&spec, &PopulationSpectrum::identity(8));
                let m = make_spiked(&base, &ds, &[]).unwrap();
                let mut expected: Vec<f64> = spec.values().to_vec();
                for (i, d) in ds.iter().enumerate() {
                    expected[i] *= 1.0 + d;
                }
                expected.sort_by(|a, b| b.total_cmp(a));
                prop_assert_eq!(m.a().spiked(), expected.as_slice());
                prop_assert!(m.a().spiked().windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }
}
