//! Dense decompositions used by the sampler.

use faer::{ColRef, Mat, MatRef, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Singular triplets of `Y`, largest first.
#[derive(Debug, Clone)]
pub struct Triplets {
    /// Squared singular values (eigenvalues of `Y Y^T`).
    pub eigenvalues: Vec<f64>,
    /// `p x k` left singular vectors.
    pub left: Mat<f64>,
    /// `n x k` right singular vectors.
    pub right: Mat<f64>,
}

fn fail(what: &str) -> Error {
    Error::DecompositionFailure(what.into())
}

/// Full thin SVD; returns `min(p, n)` triplets.
pub fn thin_svd(y: MatRef<'_, f64>) -> Result<Triplets> {
    let svd = y.thin_svd().map_err(|_| fail("svd did not converge"))?;
    let s = svd.S().column_vector();
    let k = s.nrows();
    Ok(Triplets {
        eigenvalues: (0..k).map(|i| s[i] * s[i]).collect(),
        left: svd.U().to_owned(),
        right: svd.V().to_owned(),
    })
}

/// Nonzero spectrum of `Y Y^T` (length `min(p, n)`, descending) from the
/// smaller Gram matrix.
pub fn gram_eigenvalues(y: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let gram = if y.nrows() <= y.ncols() {
        y * y.transpose()
    } else {
        y.transpose() * y
    };
    let mut vals = gram
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| fail("symmetric eigensolver did not converge"))?;
    vals.reverse();
    for v in &mut vals {
        *v = v.max(0.0);
    }
    Ok(vals)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
pub fn symmetric_eigen(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| fail("symmetric eigensolver did not converge"))?;
    let s = evd.S().column_vector();
    let k = s.nrows();
    let u = evd.U();
    let vals = (0..k).rev().map(|i| s[i]).collect();
    let vecs = Mat::from_fn(u.nrows(), k, |r, c| u[(r, k - 1 - c)]);
    Ok((vals, vecs))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // independent accumulators let the compiler vectorise the reduction
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `Y Y^T v`.
fn gram_apply(y: MatRef<'_, f64>, v: &[f64], out: &mut [f64]) {
    let t = y.transpose() * ColRef::from_slice(v);
    let w = y * &t;
    for (o, i) in out.iter_mut().zip(0..) {
        *o = w[i];
    }
}

/// Top `k` singular triplets by Lanczos on `Y Y^T` with full
/// reorthogonalisation. The Krylov dimension grows until every requested
/// Ritz pair has relative residual below `1e-10`, or below `1e-7` when
/// only the values are used (their error is quadratic in the residual).
pub fn lanczos_top(y: MatRef<'_, f64>, k: usize, vectors: bool) -> Result<Triplets> {
    let (p, n) = (y.nrows(), y.ncols());
    let full = p.min(n);
    if k == 0 || k > full {
        return Err(Error::InvalidArgument(format!("cannot extract {k} of {full} triplets")));
    }
    if p <= 2 * k + 40 {
        let mut t = thin_svd(y)?;
        truncate(&mut t, k);
        return Ok(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut start: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
    let s = norm(&start);
    start.iter_mut().for_each(|x| *x /= s);

    let mut dim = (2 * k + 20).max(30).min(p);
    let mut basis: Vec<Vec<f64>> = vec![start];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let tol = if vectors { 1e-10 } else { 1e-7 };
    let mut w = vec![0.0; p];
    loop {
        while alpha.len() < dim {
            let j = alpha.len();
            gram_apply(y, &basis[j], &mut w);
            let a = dot(&w, &basis[j]);
            alpha.push(a);
            // two passes of classical Gram-Schmidt against the whole basis
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(&w, q);
                    w.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
                }
            }
            let b = norm(&w);
            if b <= 1e-13 * a.abs().max(1.0) || basis.len() == p {
                dim = alpha.len();
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
        let m = alpha.len();
        let t = Mat::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i == j + 1 {
                beta[j]
            } else if j == i + 1 {
                beta[i]
            } else {
                0.0
            }
        });
        let (theta, s) = symmetric_eigen(t.as_ref())?;
        let kk = k.min(m);
        let b_last = beta.get(m - 1).copied().unwrap_or(0.0);
        let scale = theta[0].abs().max(1e-300);
        let converged = (0..kk).all(|i| (b_last * s[(m - 1, i)]).abs() <= tol * scale);
        if (converged && kk == k) || m >= p || dim >= p {
            let mut left = Mat::<f64>::zeros(p, kk);
            for c in 0..kk {
                for (j, q) in basis.iter().take(m).enumerate() {
                    let coef = s[(j, c)];
                    for i in 0..p {
                        left[(i, c)] += coef * q[i];
                    }
                }
            }
            let mut right = Mat::<f64>::zeros(n, kk);
            let mut eigenvalues = Vec::with_capacity(kk);
            for c in 0..kk {
                let ev = theta[c].max(0.0);
                eigenvalues.push(ev);
                let sv = ev.sqrt();
                let mut nrm = 0.0;
                for j in 0..n {
                    let col = y.col(j);
                    let mut acc = 0.0;
                    for i in 0..p {
                        acc += col[i] * left[(i, c)];
                    }
                    right[(j, c)] = acc;
                    nrm += acc * acc;
                }
                let nrm = if sv > 0.0 { nrm.sqrt() } else { 1.0 };
                for j in 0..n {
                    right[(j, c)] /= nrm;
                }
            }
            return Ok(Triplets {
                eigenvalues,
                left,
                right,
            });
        }
        dim = (dim + dim / 2).min(p);
    }
}

fn truncate(t: &mut Triplets, k: usize) {
    t.eigenvalues.truncate(k);
    t.left = t.left.as_ref().subcols(0, k).to_owned();
    t.right = t.right.as_ref().subcols(0, k).to_owned();
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal absorbed into `Q`.
pub fn haar_orthogonal(dim: usize, seed: u64) -> Mat<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Mat<f64> = Mat::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.compute_Q();
    let r = qr.R();
    for c in 0..dim {
        if r[(c, c)] < 0.0 {
            for i in 0..dim {
                q[(i, c)] = -q[(i, c)];
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(p: usize, n: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(p, n, |_, _| {
            let x: f64 = StandardNormal.sample(&mut rng);
            x / (n as f64).sqrt()
        })
    }

    #[test]
    fn gram_matches_svd() {
        for (p, n) in [(30, 50), (50, 30)] {
            let y = random(p, n, 1);
            let a = gram_eigenvalues(y.as_ref()).unwrap();
            let b = thin_svd(y.as_ref()).unwrap().eigenvalues;
            assert_eq!(a.len(), 30);
            for (x, z) in a.iter().zip(&b) {
                assert!((x - z).abs() <= 1e-10 * b[0]);
            }
        }
    }

    #[test]
    fn lanczos_matches_svd() {
        let mut y = random(200, 260, 7);
        y[(0, 0)] += 3.0;
        let full = thin_svd(y.as_ref()).unwrap();
        let top = lanczos_top(y.as_ref(), 5, true).unwrap();
        for c in 0..5 {
            assert!((full.eigenvalues[c] - top.eigenvalues[c]).abs() < 1e-9);
            let d: f64 = (0..200).map(|i| full.left[(i, c)] * top.left[(i, c)]).sum();
            assert!((d.abs() - 1.0).abs() < 1e-6, "{c}: {d}");
            let e: f64 = (0..260).map(|i| full.right[(i, c)] * top.right[(i, c)]).sum();
            assert!((e.abs() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn haar_is_orthogonal() {
        let q = haar_orthogonal(20, 3);
        let g = q.transpose() * &q;
        for i in 0..20 {
            for j in 0..20 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - e).abs() < 1e-12);
            }
        }
    }
}
