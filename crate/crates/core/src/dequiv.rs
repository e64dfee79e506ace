//! Deterministic equivalents of the separable sample covariance model.
//!
//! With `pi_A`, `pi_B` the spectral distributions of the base population
//! matrices and `d = p / n`, the pair `(m1, m2)` solves
//!
//! ```text
//! m1 = -(d / z) * int t / (1 + t m2) dpi_A(t)
//! m2 = -(1 / z) * int x / (1 + x m1) dpi_B(x)
//! ```
//!
//! and `mc = -(1/z) int 1 / (1 + t m2) dpi_A(t)` is the Stieltjes transform of
//! the limiting spectral distribution of `Q1 = Y Y^T`.
//!
//! On the real axis the system collapses to one equation per side:
//! `f(z, m) = -m + c_out int s / (s H(m) - z) dpi_out(s)` with
//! `H(m) = c_in int t / (1 + t m) dpi_in(t)`. For the A side (`m = m2`) the
//! outer measure is `pi_B` (`c_out = 1`) and the inner one `pi_A`
//! (`c_in = d`); the B side swaps the roles and the coefficients.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{esd, PopulationSpectrum, SeparableModel};

type C64 = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Accept real `z > lambda_+` and return the real branch.
    pub real_branch: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            real_branch: false,
        }
    }
}

/// Which of the two inverse functions is meant: `A` is `g2c` (argument in
/// the `m2` window), `B` is `g1c` (argument in the `m1` window).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// Limiting law of a (base) separable model, stored as atomic measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Law {
    atoms_a: Vec<(f64, f64)>,
    atoms_b: Vec<(f64, f64)>,
    p: usize,
    n: usize,
    max_a: f64,
    max_b: f64,
    rank_a: usize,
    rank_b: usize,
}

struct Parts<'a> {
    inner: &'a [(f64, f64)],
    c_in: f64,
    max_in: f64,
    outer: &'a [(f64, f64)],
    c_out: f64,
    max_out: f64,
}

struct RealEval {
    f: f64,
    fz: f64,
    fm: f64,
    fmm: f64,
}

impl<'a> Parts<'a> {
    fn h(&self, m: f64) -> f64 {
        self.c_in * self.inner.iter().map(|&(t, w)| w * t / (1.0 + t * m)).sum::<f64>()
    }

    fn h_derivs(&self, m: f64) -> (f64, f64, f64) {
        let (mut h0, mut h1, mut h2) = (0.0, 0.0, 0.0);
        for &(t, w) in self.inner {
            let q = t / (1.0 + t * m);
            h0 += w * q;
            h1 -= w * q * q;
            h2 += 2.0 * w * q * q * q;
        }
        (self.c_in * h0, self.c_in * h1, self.c_in * h2)
    }

    /// `f` and `df/dz` at fixed `H`.
    fn f_z(&self, z: f64, m: f64, h: f64) -> (f64, f64) {
        let (mut s1, mut sz) = (0.0, 0.0);
        for &(s, w) in self.outer {
            let u = s * h - z;
            s1 += w * s / u;
            sz += w * s / (u * u);
        }
        (-m + self.c_out * s1, self.c_out * sz)
    }

    fn eval(&self, z: f64, m: f64) -> RealEval {
        let (h, h1, h2) = self.h_derivs(m);
        let (mut s1, mut sz, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
        for &(s, w) in self.outer {
            let u = s * h - z;
            let q = s / u;
            s1 += w * q;
            sz += w * q / u;
            s2 += w * q * q;
            s3 += w * q * q * q;
        }
        let c = self.c_out;
        RealEval {
            f: -m + c * s1,
            fz: c * sz,
            fm: -1.0 - c * h1 * s2,
            fmm: -c * h2 * s2 + 2.0 * c * h1 * h1 * s3,
        }
    }

    fn mean_outer(&self) -> f64 {
        self.outer.iter().map(|&(s, w)| w * s).sum()
    }

    /// The unique root `z > H(m) max sigma_out` of `f(z, m) = 0`, for
    /// `m` in `(-1 / max sigma_in, 0)`.
    fn z_of_m(&self, m: f64) -> Result<f64> {
        let h = self.h(m);
        let lo = h * self.max_out;
        let hi = lo + 1.01 * self.c_out * self.mean_outer() / m.abs() + 1e-12 * (1.0 + lo);
        solve_increasing(|z| self.f_z(z, m, h), lo, hi, hi, 500).ok_or(Error::NoConvergence {
            iterations: 500,
            residual: f64::NAN,
        })
    }
}

/// Safeguarded Newton iteration for an increasing function with a root in
/// `(lo, hi)`; `fdf` returns the value and the derivative.
pub(crate) fn solve_increasing(
    mut fdf: impl FnMut(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    start: f64,
    max_iter: usize,
) -> Option<f64> {
    let mut x = start.clamp(lo, hi);
    for _ in 0..max_iter {
        let (fx, dfx) = fdf(x);
        if fx == 0.0 {
            return Some(x);
        }
        if !fx.is_finite() {
            return None;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - fx / dfx;
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let scale = x.abs().max(next.abs()).max(1e-300);
        if (next - x).abs() <= 4.0 * f64::EPSILON * scale || hi - lo <= 4.0 * f64::EPSILON * scale {
            return Some(next);
        }
        x = next;
    }
    None
}

impl Law {
    pub fn new(spec_a: &PopulationSpectrum, spec_b: &PopulationSpectrum) -> Self {
        Self {
            atoms_a: esd(spec_a).atoms().to_vec(),
            atoms_b: esd(spec_b).atoms().to_vec(),
            p: spec_a.dim(),
            n: spec_b.dim(),
            max_a: spec_a.max(),
            max_b: spec_b.max(),
            rank_a: spec_a.rank(),
            rank_b: spec_b.rank(),
        }
    }

    /// Law of the unspiked part of `model`.
    pub fn from_model(model: &SeparableModel) -> Self {
        Self::new(&model.a().base_spectrum(), &model.b().base_spectrum())
    }

    /// `A = I_p`, `B = I_n`.
    pub fn null(p: usize, n: usize) -> Self {
        Self::new(&PopulationSpectrum::identity(p), &PopulationSpectrum::identity(n))
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ratio(&self) -> f64 {
        self.p as f64 / self.n as f64
    }

    pub fn max_a(&self) -> f64 {
        self.max_a
    }

    pub fn max_b(&self) -> f64 {
        self.max_b
    }

    /// Mass of the limiting spectral distribution of `Q1` at zero.
    pub fn zero_atom(&self) -> f64 {
        1.0 - self.rank_a.min(self.rank_b) as f64 / self.p as f64
    }

    /// Number of eigenvalues of `Q1` that are not structurally zero.
    pub fn bulk_rank(&self) -> usize {
        self.rank_a.min(self.rank_b)
    }

    fn parts(&self, side: Side) -> Parts<'_> {
        match side {
            Side::A => Parts {
                inner: &self.atoms_a,
                c_in: self.ratio(),
                max_in: self.max_a,
                outer: &self.atoms_b,
                c_out: 1.0,
                max_out: self.max_b,
            },
            Side::B => Parts {
                inner: &self.atoms_b,
                c_in: 1.0,
                max_in: self.max_b,
                outer: &self.atoms_a,
                c_out: self.ratio(),
                max_out: self.max_a,
            },
        }
    }

    fn scale(&self) -> f64 {
        self.max_a * self.max_b * (1.0 + self.ratio())
    }

    fn m1_of(&self, z: C64, m2: C64) -> C64 {
        let s: C64 = self.atoms_a.iter().map(|&(t, w)| w * t / (1.0 + t * m2)).sum();
        -s * self.ratio() / z
    }

    fn mc_of(&self, z: C64, m2: C64) -> C64 {
        let s: C64 = self.atoms_a.iter().map(|&(t, w)| w / (1.0 + t * m2)).sum();
        -s / z
    }

    /// Largest violation of the two fixed-point equations.
    pub fn residual(&self, z: C64, m1: C64, m2: C64) -> f64 {
        let r1 = (m1 - self.m1_of(z, m2)).norm();
        let s: C64 = self.atoms_b.iter().map(|&(x, w)| w * x / (1.0 + x * m1)).sum();
        let r2 = (m2 + s / z).norm();
        r1.max(r2)
    }

    /// Reduced equation in `m2` and its derivative.
    fn reduced(&self, z: C64, m2: C64) -> (C64, C64) {
        let d = self.ratio();
        let (mut h, mut h1) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for &(t, w) in &self.atoms_a {
            let q = t / (1.0 + t * m2);
            h += w * q;
            h1 -= w * q * q;
        }
        h *= d;
        h1 *= d;
        let (mut s1, mut s2) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for &(x, w) in &self.atoms_b {
            let q = x / (z - x * h);
            s1 += w * q;
            s2 += w * q * q;
        }
        (m2 + s1, 1.0 + h1 * s2)
    }

    fn finish(&self, z: C64, m2: C64, iterations: usize) -> LawSolution {
        let m1 = self.m1_of(z, m2);
        LawSolution {
            z,
            m1,
            m2,
            mc: self.mc_of(z, m2),
            residual: self.residual(z, m1, m2),
            iterations,
        }
    }

    fn is_physical(sol: &LawSolution, tol: f64) -> bool {
        sol.residual <= tol && sol.m1.im > 0.0 && sol.m2.im > 0.0 && sol.mc.im > 0.0
    }

    /// Newton iteration on the reduced equation, kept in the upper half plane.
    fn newton(&self, z: C64, mut m2: C64, opts: &SolverOptions, budget: usize) -> (LawSolution, usize) {
        let mut iters = 0;
        let (mut f, mut df) = self.reduced(z, m2);
        while iters < budget {
            iters += 1;
            let fnorm = f.norm();
            if fnorm <= 1e-3 * opts.tol {
                break;
            }
            let step = f / df;
            if !step.is_finite() {
                break;
            }
            let mut lambda = 1.0;
            let mut accepted = false;
            while lambda > 1e-8 {
                let cand = m2 - step * lambda;
                if cand.im > 0.0 {
                    let (fc, dfc) = self.reduced(z, cand);
                    if fc.norm() < fnorm {
                        m2 = cand;
                        f = fc;
                        df = dfc;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted || (step * lambda).norm() <= 1e-15 * m2.norm().max(1.0) {
                break;
            }
        }
        (self.finish(z, m2, iters), iters)
    }

    fn fixed_point(&self, z: C64, iters: usize, stop: f64) -> (C64, C64, usize) {
        let mut m1 = C64::new(0.0, 1.0);
        let mut m2 = C64::new(0.0, 1.0);
        for k in 0..iters {
            let n1 = self.m1_of(z, m2);
            let s: C64 = self.atoms_b.iter().map(|&(x, w)| w * x / (1.0 + x * m1)).sum();
            let n2 = -s / z;
            let change = (n1 - m1).norm().max((n2 - m2).norm());
            m1 = 0.5 * m1 + 0.5 * n1;
            m2 = 0.5 * m2 + 0.5 * n2;
            if change < stop {
                return (m1, m2, k + 1);
            }
        }
        (m1, m2, iters)
    }

    fn solve_complex(&self, z: C64, opts: &SolverOptions) -> Result<LawSolution> {
        let fp_iters = opts.max_iter.min(300);
        let (_, m2, used) = self.fixed_point(z, fp_iters, 1e-3);
        let (sol, n_iters) = self.newton(z, m2, opts, 100);
        if Self::is_physical(&sol, opts.tol) {
            return Ok(LawSolution {
                iterations: used + n_iters,
                ..sol
            });
        }
        self.continuation(z, opts, used + n_iters)
    }

    /// Follows the solution from a large imaginary part down to `z`.
    fn continuation(&self, z: C64, opts: &SolverOptions, spent: usize) -> Result<LawSolution> {
        let target = z.im;
        let mut eta = target.max(2.0 * (1.0 + z.re.abs() + self.scale()));
        let start = C64::new(z.re, eta);
        let (_, m2, mut total) = self.fixed_point(start, opts.max_iter.min(2000), 1e-12);
        total += spent;
        let (mut sol, it) = self.newton(start, m2, opts, 100);
        total += it;
        if !Self::is_physical(&sol, opts.tol) {
            return Err(Error::NoConvergence {
                iterations: total,
                residual: sol.residual,
            });
        }
        let mut ratio: f64 = 0.5;
        while eta > target {
            if total >= opts.max_iter {
                break;
            }
            let next_eta = (eta * ratio).max(target);
            let zn = C64::new(z.re, next_eta);
            let (cand, it) = self.newton(zn, sol.m2, opts, 50);
            total += it;
            if Self::is_physical(&cand, opts.tol) {
                sol = cand;
                eta = next_eta;
                ratio = (ratio * ratio).max(0.25);
            } else {
                ratio = ratio.sqrt();
                if ratio > 0.999 {
                    break;
                }
            }
        }
        if eta > target {
            return Err(Error::NoConvergence {
                iterations: total,
                residual: sol.residual,
            });
        }
        sol.iterations = total;
        Ok(sol)
    }
}

/// Solution of the self-consistent system at one spectral point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawSolution {
    pub z: C64,
    pub m1: C64,
    pub m2: C64,
    pub mc: C64,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves the system at `z`. For `Im z > 0` a damped fixed point followed by
/// Newton polish is tried first, with continuation in `Im z` as fallback.
/// Real `z` above the edge requires `opts.real_branch`.
pub fn solve_at(law: &Law, z: C64, opts: &SolverOptions) -> Result<LawSolution> {
    if !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::InvalidPoint(format!("non-finite z = {z}")));
    }
    if z.im < 0.0 {
        return Err(Error::InvalidPoint(format!("Im z = {} < 0", z.im)));
    }
    if z.im == 0.0 {
        if !opts.real_branch {
            return Err(Error::InvalidPoint("real z requires the real-branch option".into()));
        }
        let edge = find_edge(law, opts.tol)?;
        return solve_real(law, z.re, &edge);
    }
    law.solve_complex(z, opts)
}

/// Real-branch solution at `x > lambda_+`.
pub fn solve_real(law: &Law, x: f64, edge: &EdgeData) -> Result<LawSolution> {
    let m2 = m2c_inverse_real(law, x, edge)?;
    Ok(law.finish(C64::new(x, 0.0), C64::new(m2, 0.0), 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeData {
    pub lambda_plus: f64,
    pub m1_at_edge: f64,
    pub m2_at_edge: f64,
    /// `z''(m2)` at the edge.
    pub curvature: f64,
    /// Window for `m2`: `(-1 / max sigma_a, 0)`.
    pub admissible_window: (f64, f64),
    /// `1 + m1c(lambda_+) max sigma_b`.
    pub margin_b: f64,
    /// `1 + m2c(lambda_+) max sigma_a`.
    pub margin_a: f64,
    /// `|f|` and `|df/dm|` at the returned edge.
    pub residual: f64,
}

impl EdgeData {
    /// Lower end of the argument window of `g2c` (side A) or `g1c` (side B).
    pub fn window_start(&self, side: Side) -> f64 {
        match side {
            Side::A => self.m2_at_edge,
            Side::B => self.m1_at_edge,
        }
    }
}

fn scan_grid() -> Vec<f64> {
    let mut s: Vec<f64> = (1..=396).map(|k| k as f64 / 400.0).collect();
    s.extend((1..=120).map(|j| 1.0 - 10f64.powf(-2.0 - 6.0 * j as f64 / 120.0)));
    s
}

/// Rightmost edge of the limiting spectrum.
///
/// `z(m)` is increasing near `m = 0-`; the edge is the first critical point
/// met when moving left, located by a sign scan of `z'(m)` followed by
/// bisection.
pub fn find_edge(law: &Law, tol: f64) -> Result<EdgeData> {
    find_edge_on(law, Side::A, tol)
}

fn find_edge_on(law: &Law, side: Side, tol: f64) -> Result<EdgeData> {
    let parts = law.parts(side);
    if parts.max_in <= 0.0 || parts.max_out <= 0.0 {
        return Err(Error::EdgeNotFound("population spectrum is identically zero".into()));
    }
    let lo = -1.0 / parts.max_in;
    let slope = |s: f64| -> Result<f64> {
        let m = lo * s;
        let z = parts.z_of_m(m)?;
        let e = parts.eval(z, m);
        Ok(-e.fm / e.fz)
    };
    let grid = scan_grid();
    let mut prev = grid[0];
    if slope(prev)? <= 0.0 {
        return Err(Error::EdgeNotFound("z(m) not increasing next to m = 0".into()));
    }
    let mut bracket = None;
    for &s in &grid[1..] {
        if slope(s)? <= 0.0 {
            bracket = Some((prev, s));
            break;
        }
        prev = s;
    }
    let (mut a, mut b) =
        bracket.ok_or_else(|| Error::EdgeNotFound("minimiser of z(m) sits on the window boundary".into()))?;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if slope(mid)? > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let s_edge = 0.5 * (a + b);
    let m = lo * s_edge;
    let z = parts.z_of_m(m)?;
    let e = parts.eval(z, m);
    let companion = -parts.h(m) / z;
    let residual = e.f.abs().max(e.fm.abs());
    if residual > tol.max(1e-9) {
        return Err(Error::NoConvergence {
            iterations: 200,
            residual,
        });
    }
    let (m2, m1) = match side {
        Side::A => (m, companion),
        Side::B => (companion, m),
    };
    Ok(EdgeData {
        lambda_plus: z,
        m1_at_edge: m1,
        m2_at_edge: m2,
        curvature: -e.fmm / e.fz,
        admissible_window: (-1.0 / law.max_a, 0.0),
        margin_a: 1.0 + m2 * law.max_a,
        margin_b: 1.0 + m1 * law.max_b,
        residual,
    })
}

/// Value of `g2c` / `g1c` with its derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GValue {
    pub argument: f64,
    pub value: f64,
    pub derivative: f64,
    /// The other Stieltjes component at the solved point.
    pub companion: f64,
}

/// `g(arg)` on either side: the real `z` at which the real-branch solution
/// has the given component.
pub fn g(law: &Law, side: Side, arg: f64, edge: &EdgeData) -> Result<GValue> {
    let lo = edge.window_start(side);
    if !(arg > lo && arg < 0.0) {
        return Err(Error::OutOfWindow {
            value: arg,
            lo,
            hi: 0.0,
        });
    }
    let parts = law.parts(side);
    let z = parts.z_of_m(arg)?;
    let e = parts.eval(z, arg);
    Ok(GValue {
        argument: arg,
        value: z,
        derivative: -e.fm / e.fz,
        companion: -parts.h(arg) / z,
    })
}

pub fn g2c(law: &Law, zeta: f64, edge: &EdgeData) -> Result<GValue> {
    g(law, Side::A, zeta, edge)
}

pub fn g1c(law: &Law, xi: f64, edge: &EdgeData) -> Result<GValue> {
    g(law, Side::B, xi, edge)
}

/// Inverse of `g` on its window: the real-branch component at `x > lambda_+`.
pub fn m_inverse_real(law: &Law, side: Side, x: f64, edge: &EdgeData) -> Result<f64> {
    if !(x > edge.lambda_plus) {
        return Err(Error::BelowEdge {
            x,
            edge: edge.lambda_plus,
        });
    }
    let lo = edge.window_start(side);
    let mut hi = 0.5 * lo;
    let mut guard = 0;
    loop {
        let v = g(law, side, hi, edge)?;
        if v.value > x {
            break;
        }
        hi *= 0.5;
        guard += 1;
        if guard > 1100 {
            return Err(Error::NoConvergence {
                iterations: guard,
                residual: f64::NAN,
            });
        }
    }
    let mut failure = None;
    let root = solve_increasing(
        |m| match g(law, side, m, edge) {
            Ok(v) => (v.value - x, v.derivative),
            Err(e) => {
                failure = Some(e);
                (f64::NAN, f64::NAN)
            }
        },
        lo,
        hi,
        hi,
        400,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    root.ok_or(Error::NoConvergence {
        iterations: 400,
        residual: f64::NAN,
    })
}

pub fn m2c_inverse_real(law: &Law, x: f64, edge: &EdgeData) -> Result<f64> {
    m_inverse_real(law, Side::A, x, edge)
}

pub fn m1c_inverse_real(law: &Law, x: f64, edge: &EdgeData) -> Result<f64> {
    m_inverse_real(law, Side::B, x, edge)
}

/// Limiting density evaluated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    /// `Im mc / pi`; `NaN` where the solver failed.
    pub rho: Vec<f64>,
    pub m1: Vec<C64>,
    pub m2: Vec<C64>,
    pub eta_used: f64,
    /// Grid indices at which no solution was found.
    pub failed: Vec<usize>,
    /// Mass of the atom at zero (not part of `rho`).
    pub zero_atom: f64,
}

impl DensityCurve {
    /// Trapezoid integral of `rho` over the grid, skipping failed points.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.rho.windows(2))
            .filter(|(_, r)| r[0].is_finite() && r[1].is_finite())
            .map(|(x, r)| 0.5 * (x[1] - x[0]) * (r[0] + r[1]))
            .sum()
    }

    /// Maximal runs of grid points where `rho > threshold`.
    pub fn support_intervals(&self, threshold: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut start: Option<f64> = None;
        let mut last = 0.0;
        for (&x, &r) in self.grid.iter().zip(&self.rho) {
            if r > threshold {
                start.get_or_insert(x);
                last = x;
            } else if let Some(s) = start.take() {
                out.push((s, last));
            }
        }
        if let Some(s) = start {
            out.push((s, last));
        }
        out
    }
}

/// Grid on `(0, 1.05 lambda_+]`, quadratically refined near zero. When the
/// law has an atom at zero the grid starts at `0.01 lambda_+` so that the
/// smoothed atom is not counted as bulk mass.
pub fn default_grid(law: &Law, edge: &EdgeData, steps: usize) -> Vec<f64> {
    let top = 1.05 * edge.lambda_plus;
    let u0 = if law.zero_atom() > 0.0 { 0.1 } else { 0.0 };
    (1..=steps)
        .map(|k| {
            let u = u0 + (1.0 - u0) * k as f64 / steps as f64;
            top * u * u
        })
        .collect()
}

/// Density `Im mc(E + i eta) / pi` at each grid point.
pub fn density(law: &Law, grid: &[f64], eta: f64, opts: &SolverOptions) -> Result<DensityCurve> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("grid must be strictly ascending".into()));
    }
    let mut curve = DensityCurve {
        grid: grid.to_vec(),
        rho: Vec::with_capacity(grid.len()),
        m1: Vec::with_capacity(grid.len()),
        m2: Vec::with_capacity(grid.len()),
        eta_used: eta,
        failed: Vec::new(),
        zero_atom: law.zero_atom(),
    };
    let mut warm: Option<C64> = None;
    for (k, &e) in grid.iter().enumerate() {
        match solve_warm(law, C64::new(e, eta), warm, opts) {
            Ok(sol) => {
                warm = Some(sol.m2);
                curve.rho.push(sol.mc.im / std::f64::consts::PI);
                curve.m1.push(sol.m1);
                curve.m2.push(sol.m2);
            }
            Err(_) => {
                warm = None;
                curve.failed.push(k);
                curve.rho.push(f64::NAN);
                curve.m1.push(C64::new(f64::NAN, f64::NAN));
                curve.m2.push(C64::new(f64::NAN, f64::NAN));
            }
        }
    }
    Ok(curve)
}

/// Like [`solve_at`] but first tries Newton from a nearby solution.
pub fn solve_warm(law: &Law, z: C64, warm: Option<C64>, opts: &SolverOptions) -> Result<LawSolution> {
    if let Some(m2) = warm {
        if z.im > 0.0 && m2.im > 0.0 {
            let (sol, _) = law.newton(z, m2, opts, 60);
            if Law::is_physical(&sol, opts.tol) {
                return Ok(sol);
            }
        }
    }
    solve_at(law, z, opts)
}

/// Tabulated distribution function of the limiting bulk, integrated down
/// from the edge, for classical eigenvalue locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalLocator {
    lambda_plus: f64,
    p: usize,
    max_index: usize,
    /// Descending abscissae starting at `lambda_+`.
    xs: Vec<f64>,
    /// `int_{x_k}^{lambda_+} rho`.
    mass_above: Vec<f64>,
}

impl ClassicalLocator {
    pub const DEFAULT_RESOLUTION: usize = 4000;
    pub const DEFAULT_ETA: f64 = 1e-7;

    pub fn new(law: &Law, edge: &EdgeData) -> Result<Self> {
        Self::with_resolution(law, edge, Self::DEFAULT_RESOLUTION, Self::DEFAULT_ETA)
    }

    pub fn with_resolution(law: &Law, edge: &EdgeData, points: usize, eta: f64) -> Result<Self> {
        let lp = edge.lambda_plus;
        let top = lp.sqrt();
        let opts = SolverOptions::default();
        // x = lambda_+ - t^2 removes the square-root singularity at the edge
        let ts: Vec<f64> = (0..points).map(|k| top * k as f64 / points as f64).collect();
        let mut integrand = Vec::with_capacity(points);
        let mut warm = None;
        for &t in &ts {
            let sol = solve_warm(law, C64::new(lp - t * t, eta), warm, &opts)?;
            warm = Some(sol.m2);
            integrand.push(sol.mc.im / std::f64::consts::PI * 2.0 * t);
        }
        let mut xs = Vec::with_capacity(points + 1);
        let mut mass_above = Vec::with_capacity(points + 1);
        let mut acc = 0.0;
        xs.push(lp);
        mass_above.push(0.0);
        for k in 1..points {
            acc += 0.5 * (ts[k] - ts[k - 1]) * (integrand[k] + integrand[k - 1]);
            xs.push(lp - ts[k] * ts[k]);
            mass_above.push(acc);
        }
        // the last cell may hold an integrable singularity at zero, so the
        // remaining bulk mass is assigned to it directly
        let bulk = 1.0 - law.zero_atom();
        xs.push(0.0);
        mass_above.push(bulk.max(acc));
        Ok(Self {
            lambda_plus: lp,
            p: law.p(),
            max_index: law.bulk_rank().min(law.n()),
            xs,
            mass_above,
        })
    }

    /// Location with `mass` of the limiting law above it.
    pub fn quantile(&self, mass: f64) -> f64 {
        if mass <= 0.0 {
            return self.lambda_plus;
        }
        let k = self.mass_above.partition_point(|&m| m < mass);
        if k >= self.xs.len() {
            return 0.0;
        }
        let (m0, m1) = (self.mass_above[k - 1], self.mass_above[k]);
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        if m1 == m0 {
            return x1;
        }
        x0 + (x1 - x0) * (mass - m0) / (m1 - m0)
    }

    /// Classical location of the `j`-th largest eigenvalue (1-based), using
    /// the midpoint convention `(j - 1/2) / p`.
    pub fn gamma(&self, j: usize) -> Result<f64> {
        if j == 0 || j > self.max_index {
            return Err(Error::QuantileOutOfRange {
                index: j,
                max: self.max_index,
            });
        }
        Ok(self.quantile((j as f64 - 0.5) / self.p as f64))
    }

    pub fn lambda_plus(&self) -> f64 {
        self.lambda_plus
    }
}

pub fn classical_locations(law: &Law, indices: &[usize], edge: &EdgeData) -> Result<Vec<f64>> {
    let loc = ClassicalLocator::new(law, edge)?;
    indices.iter().map(|&j| loc.gamma(j)).collect()
}

/// Diagonals of the deterministic resolvent limits in the population
/// eigenbases, listed in model order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiDiagonals {
    pub pi1: Vec<C64>,
    pub pi2: Vec<C64>,
}

/// `Pi1(sigma) = -1 / (z (1 + m2 sigma))` over the base eigenvalues of `A`,
/// `Pi2(sigma) = -1 / (z (1 + m1 sigma))` over those of `B`.
pub fn pi_matrices(model: &SeparableModel, sol: &LawSolution) -> Result<PiDiagonals> {
    let diag = |sigmas: &[f64], m: C64| -> Result<Vec<C64>> {
        sigmas
            .iter()
            .map(|&s| {
                let den = 1.0 + m * s;
                if den.norm() < 1e-12 {
                    Err(Error::SingularDenominator(den.norm()))
                } else {
                    Ok(-1.0 / (sol.z * den))
                }
            })
            .collect()
    };
    Ok(PiDiagonals {
        pi1: diag(model.a().base(), sol.m2)?,
        pi2: diag(model.b().base(), sol.m1)?,
    })
}

/// The three trace identities linking `Pi` to `(mc, m1, m2)`; returns the
/// largest deviation. The first uses the `1/p` normalisation of `mc`.
pub fn pi_identity_error(model: &SeparableModel, sol: &LawSolution, pi: &PiDiagonals) -> f64 {
    let p = model.p() as f64;
    let n = model.n() as f64;
    let t1: C64 = pi.pi1.iter().sum::<C64>() / p;
    let t2: C64 = pi.pi1.iter().zip(model.a().base()).map(|(v, &s)| v * s).sum::<C64>() / n;
    let t3: C64 = pi.pi2.iter().zip(model.b().base()).map(|(v, &s)| v * s).sum::<C64>() / n;
    (t1 - sol.mc).norm().max((t2 - sol.m1).norm()).max((t3 - sol.m2).norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mp_m2(x: f64, d: f64) -> f64 {
        let lp = (1.0 + d.sqrt()).powi(2);
        let lm = (1.0 - d.sqrt()).powi(2);
        (d - 1.0 - x + ((x - lp) * (x - lm)).sqrt()) / (2.0 * x)
    }

    #[test]
    fn mp_edge_and_windows() {
        for d in [0.25, 0.5, 1.0, 2.0] {
            let n = 400;
            let p = (d * n as f64) as usize;
            let law = Law::null(p, n);
            let edge = find_edge(&law, 1e-10).unwrap();
            assert!((edge.lambda_plus - (1.0 + d.sqrt()).powi(2)).abs() < 1e-10);
            assert!((edge.m2_at_edge + 1.0 / (1.0 + d.sqrt())).abs() < 1e-9);
            assert!((edge.m1_at_edge + 1.0 / (1.0 + (1.0 / d).sqrt())).abs() < 1e-9);
            assert!(edge.curvature > 0.0);
        }
    }

    #[test]
    fn b_side_scan_agrees() {
        let law = Law::new(
            &PopulationSpectrum::from_blocks(&[(2.0, 50), (1.0, 100)]).unwrap(),
            &PopulationSpectrum::from_blocks(&[(3.0, 40), (0.5, 160)]).unwrap(),
        );
        let ea = find_edge_on(&law, Side::A, 1e-10).unwrap();
        let eb = find_edge_on(&law, Side::B, 1e-10).unwrap();
        assert!((ea.lambda_plus - eb.lambda_plus).abs() < 1e-9);
        assert!((ea.m1_at_edge - eb.m1_at_edge).abs() < 1e-7);
        assert!((ea.m2_at_edge - eb.m2_at_edge).abs() < 1e-7);
    }

    #[test]
    fn real_branch_examples() {
        let law = Law::null(100, 100);
        let edge = find_edge(&law, 1e-10).unwrap();
        let m = m2c_inverse_real(&law, 5.0, &edge).unwrap();
        assert!((m - (-5.0 + 5f64.sqrt()) / 10.0).abs() < 1e-12);
        let m = m2c_inverse_real(&law, 4.5, &edge).unwrap();
        assert!((m + 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(
            m2c_inverse_real(&law, 4.0, &edge),
            Err(Error::BelowEdge { .. })
        ));
        let opts = SolverOptions {
            real_branch: true,
            ..Default::default()
        };
        let sol = solve_at(&law, C64::new(5.0, 0.0), &opts).unwrap();
        assert!((sol.m2.re - mp_m2(5.0, 1.0)).abs() < 1e-12);
        assert!(sol.residual < 1e-10);
    }

    #[test]
    fn g2c_values() {
        let law = Law::null(100, 100);
        let edge = find_edge(&law, 1e-10).unwrap();
        let v = g2c(&law, -1.0 / 3.0, &edge).unwrap();
        assert!((v.value - 4.5).abs() < 1e-12);
        let v = g2c(&law, -0.276_393_202_250_021, &edge).unwrap();
        assert!((v.value - 5.0).abs() < 1e-9);
        let v = g2c(&law, edge.m2_at_edge + 1e-6, &edge).unwrap();
        assert!((v.value - 4.0).abs() < 1e-6);
        assert!(v.derivative.abs() < 1e-4);
        assert!(matches!(g2c(&law, -0.7, &edge), Err(Error::OutOfWindow { .. })));
    }

    #[test]
    fn complex_examples() {
        let law = Law::null(200, 200);
        let opts = SolverOptions::default();
        let sol = solve_at(&law, C64::new(0.0, 1.0), &opts).unwrap();
        assert!((sol.m1 - sol.m2).norm() <= 1e-10);
        assert!(sol.residual <= 1e-10);
        let sol = solve_at(&law, C64::new(2.0, 1e-3), &opts).unwrap();
        assert!((sol.m2.im - 0.5).abs() < 0.01);
        assert!(matches!(
            solve_at(&law, C64::new(1.0, -1.0), &opts),
            Err(Error::InvalidPoint(_))
        ));
    }

    #[test]
    fn density_mp() {
        let law = Law::null(300, 300);
        let grid: Vec<f64> = (1..400).map(|k| 4.0 * k as f64 / 400.0).collect();
        let curve = density(&law, &grid, 1e-4, &SolverOptions::default()).unwrap();
        assert!(curve.failed.is_empty());
        for (&x, &r) in curve.grid.iter().zip(&curve.rho) {
            if x > 0.1 && x < 3.9 {
                let exact = ((4.0 - x) * x).sqrt() / (2.0 * std::f64::consts::PI * x);
                assert!((r - exact).abs() < 1e-2, "x = {x}: {r} vs {exact}");
            }
        }
        let outside = density(&law, &[8.0], 1e-4, &SolverOptions::default()).unwrap();
        assert!(outside.rho[0] < 1e-3);
    }

    #[test]
    fn density_rank_deficient() {
        let law = Law::null(400, 200);
        let edge = find_edge(&law, 1e-10).unwrap();
        let curve = density(&law, &default_grid(&law, &edge, 2000), 1e-4, &SolverOptions::default()).unwrap();
        assert!((curve.zero_atom - 0.5).abs() < 1e-15);
        assert!((curve.integral() - 0.5).abs() < 2e-2, "{}", curve.integral());
        let full = Law::null(300, 300);
        let edge = find_edge(&full, 1e-10).unwrap();
        let curve = density(
            &full,
            &default_grid(&full, &edge, 2000),
            1e-4,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((curve.integral() + curve.zero_atom - 1.0).abs() < 2e-2);
    }

    #[test]
    fn pi_identities() {
        let model = SeparableModel::new(
            &PopulationSpectrum::from_blocks(&[(2.0, 30), (1.0, 70)]).unwrap(),
            &PopulationSpectrum::from_blocks(&[(1.5, 50), (0.5, 150)]).unwrap(),
        );
        let law = Law::from_model(&model);
        let edge = find_edge(&law, 1e-10).unwrap();
        let opts = SolverOptions {
            real_branch: true,
            ..Default::default()
        };
        for z in [C64::new(edge.lambda_plus + 1.0, 0.0), C64::new(1.0, 0.3)] {
            let sol = solve_at(&law, z, &opts).unwrap();
            let pi = pi_matrices(&model, &sol).unwrap();
            assert!(pi_identity_error(&model, &sol, &pi) <= 1e-9);
        }
        let null = SeparableModel::null(50, 50);
        let sol = solve_at(&Law::from_model(&null), C64::new(5.0, 0.0), &opts).unwrap();
        let pi = pi_matrices(&null, &sol).unwrap();
        assert!((pi.pi1[0].re + 1.0 / (5.0 * (1.0 - 0.276_393_202_250_021))).abs() < 1e-9);
        assert!((pi.pi1[0].re - sol.m2.re).abs() < 1e-9);
    }

    #[test]
    fn classical_location_basics() {
        let law = Law::null(200, 200);
        let edge = find_edge(&law, 1e-10).unwrap();
        let loc = ClassicalLocator::new(&law, &edge).unwrap();
        let g1 = loc.gamma(1).unwrap();
        assert!(g1 < 4.0 && 4.0 - g1 < 5.0 * 200f64.powf(-2.0 / 3.0));
        let g: Vec<f64> = (1..=200).map(|j| loc.gamma(j).unwrap()).collect();
        assert!(g.windows(2).all(|w| w[0] >= w[1]));
        assert!(matches!(loc.gamma(201), Err(Error::QuantileOutOfRange { .. })));
    }
}
