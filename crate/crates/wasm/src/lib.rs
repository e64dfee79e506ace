//! Browser bindings for the demo page in `www/`.
//!
//! Each export returns a JSON string; the plain Rust functions behind them
//! are public so they can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use sepspike::config::ModelConfig;
use sepspike::dequiv::{default_grid, density, find_edge, Law, SolverOptions};
use sepspike::sampling::{DrawOptions, Sampler};
use sepspike::spectra::PopulationSpectrum;
use sepspike::spike_theory::{gaussian_phi, overlap_prediction, predict_outliers};

/// Parses `"identity"` or blocks `"value:count,value:count"`.
pub fn parse_spectrum(text: &str, dim: usize) -> sepspike::Result<PopulationSpectrum> {
    let text = text.trim();
    if text.is_empty() || text == "identity" {
        return Ok(PopulationSpectrum::identity(dim));
    }
    let mut blocks = Vec::new();
    let mut used = 0;
    for part in text.split(',') {
        let (v, c) = part.split_once(':').unwrap_or((part, ""));
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| sepspike::Error::InvalidArgument(format!("bad value \"{v}\"")))?;
        let count = if c.trim() == "*" || c.trim().is_empty() {
            dim.saturating_sub(used)
        } else {
            c.trim()
                .parse()
                .map_err(|_| sepspike::Error::InvalidArgument(format!("bad count \"{c}\"")))?
        };
        used += count;
        blocks.push((value, count));
    }
    let spec = PopulationSpectrum::from_blocks(&blocks)?;
    if spec.dim() != dim {
        return Err(sepspike::Error::DimensionMismatch(format!(
            "spectrum has {} entries, expected {dim}",
            spec.dim()
        )));
    }
    Ok(spec)
}

#[derive(Debug, Serialize)]
pub struct DensityOut {
    pub lambda_plus: f64,
    pub grid: Vec<f64>,
    pub rho: Vec<f64>,
    pub zero_atom: f64,
}

/// Limiting density of the separable model with the given base spectra.
pub fn density_curve(p: usize, n: usize, spec_a: &str, spec_b: &str, steps: usize) -> sepspike::Result<DensityOut> {
    let law = Law::new(&parse_spectrum(spec_a, p)?, &parse_spectrum(spec_b, n)?);
    let edge = find_edge(&law, 1e-12)?;
    let grid = default_grid(&law, &edge, steps.clamp(20, 2000));
    let curve = density(&law, &grid, 1e-4, &SolverOptions::default())?;
    Ok(DensityOut {
        lambda_plus: edge.lambda_plus,
        grid: curve.grid,
        rho: curve
            .rho
            .into_iter()
            .map(|r| if r.is_finite() { r } else { 0.0 })
            .collect(),
        zero_atom: curve.zero_atom,
    })
}

#[derive(Debug, Serialize)]
pub struct BbpOut {
    pub lambda_plus: f64,
    pub threshold: f64,
    pub sigma: Vec<f64>,
    /// Outlier location; `lambda_+` below the threshold.
    pub theta: Vec<f64>,
    /// Squared overlap of the spike direction with its sample vector; zero
    /// below the threshold.
    pub overlap: Vec<f64>,
}

/// Outlier location and overlap of a single A-spike as `sigma` sweeps
/// `(1, sigma_max]`, with identity base spectra.
pub fn bbp_curve(p: usize, n: usize, sigma_max: f64, steps: usize) -> sepspike::Result<BbpOut> {
    let steps = steps.clamp(2, 1000);
    let mut out = BbpOut {
        lambda_plus: 0.0,
        threshold: 0.0,
        sigma: Vec::with_capacity(steps),
        theta: Vec::with_capacity(steps),
        overlap: Vec::with_capacity(steps),
    };
    for k in 1..=steps {
        let sigma = 1.0 + (sigma_max - 1.0) * k as f64 / steps as f64;
        let model = ModelConfig::identity_spiked(p, n, &[sigma], &[]).model()?;
        let edge = find_edge(&Law::from_model(&model), 1e-12)?;
        let pred = predict_outliers(&model, &edge, gaussian_phi(n))?;
        let o = pred.outliers[0];
        out.lambda_plus = pred.lambda_plus;
        out.threshold = pred.threshold_a;
        out.sigma.push(sigma);
        out.theta.push(o.theta);
        let z = if o.supercritical {
            overlap_prediction(&model, &edge, &pred, &[o.label])?.entries[0].z_value
        } else {
            0.0
        };
        out.overlap.push(z);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct SimulationOut {
    pub eigenvalues: Vec<f64>,
    pub lambda_plus: f64,
    pub theta: f64,
    pub supercritical: bool,
    pub density: DensityOut,
}

/// One simulated spectrum with a single A-spike `sigma`, next to the
/// limiting density and the predicted outlier.
pub fn simulate_spectrum(p: usize, n: usize, sigma: f64, seed: u64) -> sepspike::Result<SimulationOut> {
    if p * n > 400 * 400 {
        return Err(sepspike::Error::InvalidArgument(
            "the demo is limited to p * n <= 160000".into(),
        ));
    }
    let model = ModelConfig::identity_spiked(p, n, &[sigma], &[]).model()?;
    let draw = Sampler::new(&model, DrawOptions::default())?.draw(seed, 0)?;
    let edge = find_edge(&Law::from_model(&model), 1e-12)?;
    let pred = predict_outliers(&model, &edge, gaussian_phi(n))?;
    Ok(SimulationOut {
        eigenvalues: draw.eigenvalues,
        lambda_plus: pred.lambda_plus,
        theta: pred.outliers[0].theta,
        supercritical: pred.outliers[0].supercritical,
        density: density_curve(p, n, "identity", "identity", 300)?,
    })
}

fn to_js<T: Serialize>(r: sepspike::Result<T>) -> Result<String, JsValue> {
    let v = r.map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = densityCurve)]
pub fn density_curve_js(p: usize, n: usize, spec_a: &str, spec_b: &str, steps: usize) -> Result<String, JsValue> {
    to_js(density_curve(p, n, spec_a, spec_b, steps))
}

#[wasm_bindgen(js_name = bbpCurve)]
pub fn bbp_curve_js(p: usize, n: usize, sigma_max: f64, steps: usize) -> Result<String, JsValue> {
    to_js(bbp_curve(p, n, sigma_max, steps))
}

#[wasm_bindgen(js_name = simulateSpectrum)]
pub fn simulate_spectrum_js(p: usize, n: usize, sigma: f64, seed: u32) -> Result<String, JsValue> {
    to_js(simulate_spectrum(p, n, sigma, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_blocks_with_remainder() {
        let s = parse_spectrum("3:10,1:*", 50).unwrap();
        assert_eq!(s.dim(), 50);
        assert_eq!(s.max(), 3.0);
        assert!(parse_spectrum("2:10", 50).is_err());
    }

    #[test]
    fn mp_density_has_unit_mass() {
        let d = density_curve(200, 200, "identity", "identity", 400).unwrap();
        assert!((d.lambda_plus - 4.0).abs() < 1e-8);
        let mass: f64 = d
            .grid
            .windows(2)
            .zip(d.rho.windows(2))
            .map(|(x, r)| 0.5 * (x[1] - x[0]) * (r[0] + r[1]))
            .sum();
        assert!((mass - 1.0).abs() < 0.02, "{mass}");
    }

    #[test]
    fn bbp_transition_at_threshold() {
        let b = bbp_curve(300, 300, 4.0, 30).unwrap();
        assert!((b.threshold - 2.0).abs() < 1e-6);
        for ((&s, &t), &z) in b.sigma.iter().zip(&b.theta).zip(&b.overlap) {
            if s <= 2.0 {
                assert_eq!(z, 0.0);
            } else if s >= 2.5 {
                assert!((t - s * (1.0 + 1.0 / (s - 1.0))).abs() < 1e-6);
                assert!(z > 0.0 && z < 1.0);
            }
        }
    }

    #[test]
    fn simulated_outlier_near_prediction() {
        let runs: Vec<_> = (0..20)
            .map(|seed| simulate_spectrum(200, 200, 4.0, seed).unwrap())
            .collect();
        assert!(runs[0].supercritical);
        let mean = runs.iter().map(|s| s.eigenvalues[0]).sum::<f64>() / 20.0;
        assert!((mean - runs[0].theta).abs() < 0.25, "{mean} vs {}", runs[0].theta);
        assert!(simulate_spectrum(1000, 1000, 4.0, 1).is_err());
    }
}
