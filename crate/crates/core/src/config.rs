//! Model configuration documents (TOML).
//!
//! ```toml
//! p = 150
//! n = 200
//! specA = "identity"                      # or a list, or { blocks = [[2.0, 50], [1.0, 100]] }
//! specB = [2.0, 1.0, 1.0]
//! spikesA = [{ index = 1, d = 4.0 }]
//! spikesB = []
//! basisA = "identity"                     # or { haar = { seed = 3 } }
//! entry_law = { kind = "student_t", dof = 6.0 }
//! truncation = "default"                  # "none", "default" or a level phi_n
//! seed = 7
//! ```

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::{Error, Result};
use crate::sampling::{EntryLaw, EntrySpec};
use crate::spectra::{with_spikes, Basis, PopulationSpectrum, SeparableModel, SpikeSpec};

/// Population spectrum as written in a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecInput {
    /// Only `"identity"` is recognised.
    Preset(String),
    Values(Vec<f64>),
    Blocks {
        blocks: Vec<(f64, usize)>,
    },
}

impl Default for SpecInput {
    fn default() -> Self {
        SpecInput::Preset("identity".into())
    }
}

impl SpecInput {
    fn build(&self, dim: usize, key: &str) -> Result<PopulationSpectrum> {
        let spec = match self {
            SpecInput::Preset(name) if name == "identity" => PopulationSpectrum::identity(dim),
            SpecInput::Preset(name) => return Err(Error::Config(format!("{key}: unknown preset \"{name}\""))),
            SpecInput::Values(v) => PopulationSpectrum::new(v.clone())?,
            SpecInput::Blocks { blocks } => PopulationSpectrum::from_blocks(blocks)?,
        };
        if spec.dim() != dim {
            return Err(Error::Config(format!(
                "{key} has {} eigenvalues, expected {dim}",
                spec.dim()
            )));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruncationInput {
    Level(f64),
    /// `"none"` or `"default"`.
    Mode(String),
}

impl Default for TruncationInput {
    fn default() -> Self {
        TruncationInput::Mode("default".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub p: usize,
    pub n: usize,
    #[serde(rename = "specA", default)]
    pub spec_a: SpecInput,
    #[serde(rename = "specB", default)]
    pub spec_b: SpecInput,
    #[serde(rename = "spikesA", default)]
    pub spikes_a: Vec<SpikeSpec>,
    #[serde(rename = "spikesB", default)]
    pub spikes_b: Vec<SpikeSpec>,
    #[serde(rename = "basisA", default)]
    pub basis_a: Basis,
    #[serde(rename = "basisB", default)]
    pub basis_b: Basis,
    #[serde(default)]
    pub entry_law: EntryLaw,
    #[serde(default)]
    pub truncation: TruncationInput,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ModelConfig {
    /// `A = I_p`, `B = I_n`, Gaussian entries.
    pub fn null(p: usize, n: usize) -> Self {
        Self {
            p,
            n,
            spec_a: SpecInput::default(),
            spec_b: SpecInput::default(),
            spikes_a: Vec::new(),
            spikes_b: Vec::new(),
            basis_a: Basis::Identity,
            basis_b: Basis::Identity,
            entry_law: EntryLaw::Gaussian,
            truncation: TruncationInput::default(),
            seed: None,
        }
    }

    /// Identity bases with spikes `A~ = diag(sigma_a.., 1, ..)` and
    /// `B~ = diag(sigma_b.., 1, ..)`.
    pub fn identity_spiked(p: usize, n: usize, sigma_a: &[f64], sigma_b: &[f64]) -> Self {
        let spikes = |s: &[f64]| {
            s.iter()
                .enumerate()
                .map(|(i, &x)| SpikeSpec {
                    index: i + 1,
                    d: x - 1.0,
                })
                .collect()
        };
        Self {
            spikes_a: spikes(sigma_a),
            spikes_b: spikes(sigma_b),
            ..Self::null(p, n)
        }
    }

    pub fn model(&self) -> Result<SeparableModel> {
        if self.p == 0 || self.n == 0 {
            return Err(Error::Config("p and n must be positive".into()));
        }
        let a = self.spec_a.build(self.p, "specA")?;
        let b = self.spec_b.build(self.n, "specB")?;
        let base = SeparableModel::new(&a, &b).with_bases(self.basis_a.clone(), self.basis_b.clone())?;
        with_spikes(&base, &self.spikes_a, &self.spikes_b)
    }

    pub fn entries(&self) -> Result<EntrySpec> {
        self.entry_law.validate()?;
        Ok(match &self.truncation {
            TruncationInput::Level(phi) => EntrySpec {
                law: self.entry_law,
                truncation: Some(*phi),
            },
            TruncationInput::Mode(m) if m == "none" => EntrySpec {
                law: self.entry_law,
                truncation: None,
            },
            TruncationInput::Mode(m) if m == "default" => EntrySpec::with_default_truncation(self.entry_law, self.n),
            TruncationInput::Mode(m) => return Err(Error::Config(format!("truncation: unknown mode \"{m}\""))),
        })
    }

    /// `phi_n` of the configured entries.
    pub fn phi(&self) -> Result<f64> {
        Ok(self.entries()?.truncation.unwrap_or_else(|| self.entry_law.phi(self.n)))
    }
}

/// Parses `key=value` overrides; the value is read as a TOML value and
/// falls back to a plain string.
pub fn parse_override(text: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override \"{text}\" is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!("override \"{text}\" has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()));
    Ok((path, value))
}

/// Sets a dotted key in a TOML table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for key in parents {
        let entry = cur
            .entry(key.clone())
            .or_insert_with(|| Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path crosses non-table key \"{key}\"")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Parses a TOML document, applies overrides and deserialises it.
pub fn load<T: for<'de> Deserialize<'de>>(text: &str, overrides: &[String]) -> Result<T> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        let (path, value) = parse_override(o)?;
        apply_override(&mut table, &path, value)?;
    }
    T::deserialize(Value::Table(table)).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_builds() {
        let text = r#"
            p = 6
            n = 8
            specA = { blocks = [[2.0, 3], [1.0, 3]] }
            spikesB = [{ index = 1, d = 4.0 }]
            entry_law = { kind = "student_t", dof = 8.0 }
            seed = 3
        "#;
        let cfg: ModelConfig = load(text, &[]).unwrap();
        let m = cfg.model().unwrap();
        assert_eq!(m.a().spiked()[0], 2.0);
        assert_eq!(m.b().spiked()[0], 5.0);
        assert_eq!(cfg.seed, Some(3));
        assert!(cfg.entries().unwrap().truncation.is_some());
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = load::<ModelConfig>("p = 3\nn = 4\nspikes_a = []\n", &[]).unwrap_err();
        assert!(err.to_string().contains("spikes_a"), "{err}");
    }

    #[test]
    fn override_supersedes() {
        let cfg: ModelConfig = load("p = 3\nn = 4\n", &["p=300".into(), "entry_law.kind=uniform".into()]).unwrap();
        assert_eq!(cfg.p, 300);
        assert_eq!(cfg.entry_law, EntryLaw::Uniform);
    }

    #[test]
    fn wrong_dimension_rejected() {
        let cfg: ModelConfig = load("p = 3\nn = 4\nspecA = [1.0, 2.0]\n", &[]).unwrap();
        assert!(matches!(cfg.model(), Err(Error::Config(_))));
    }
}
