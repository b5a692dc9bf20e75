//! Thin dense linear-algebra layer over `faer`.
//!
//! Everything in this crate works with small dense matrices (a few hundred
//! rows at most), so the helpers here favour clarity over blocking.

use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::ComputeEigenvectors;
use faer::linalg::solvers::Solve;
use faer::{Mat, Par};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub fn max_abs(a: &Mat<f64>) -> f64 {
    let mut out = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            out = out.max(a[(i, j)].abs());
        }
    }
    out
}

pub fn mat_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum())
        .collect()
}

pub fn mat_vec_c(a: &Mat<f64>, x: &[C64]) -> Vec<C64> {
    assert_eq!(a.ncols(), x.len());
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| x[j] * a[(i, j)]).sum())
        .collect()
}

pub fn transpose(a: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)])
}

pub fn matmul(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    assert_eq!(a.ncols(), b.nrows());
    a * b
}

/// Unconjugated bilinear form `xᵀ A y`.
pub fn bilinear(x: &[C64], a: &Mat<f64>, y: &[C64]) -> C64 {
    let ay = mat_vec_c(a, y);
    x.iter().zip(&ay).map(|(u, v)| u * v).sum()
}

pub fn norm2_c(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn norm_max(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Solves `A x = b` by fully pivoted LU, rejecting numerically singular `A`.
pub fn solve(a: &Mat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.len());
    if n == 0 {
        return Ok(Vec::new());
    }
    let lu = a.full_piv_lu();
    let u = lu.U();
    let mut big = 0.0f64;
    let mut small = f64::INFINITY;
    for i in 0..n {
        big = big.max(u[(i, i)].abs());
        small = small.min(u[(i, i)].abs());
    }
    if !(small > 1e-13 * big) {
        return Err(Error::Singular(format!(
            "pivot ratio {:.3e} below threshold",
            small / big
        )));
    }
    let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
    let x = lu.solve(&rhs);
    let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite solution".into()));
    }
    Ok(out)
}

/// Complex counterpart of [`solve`], used for eigenpair refinement.
pub fn solve_c(a: &Mat<C64>, b: &[C64]) -> Result<Vec<C64>> {
    let n = a.nrows();
    assert_eq!(n, b.len());
    let lu = a.full_piv_lu();
    let u = lu.U();
    let mut big = 0.0f64;
    let mut small = f64::INFINITY;
    for i in 0..n {
        big = big.max(u[(i, i)].norm());
        small = small.min(u[(i, i)].norm());
    }
    if !(small > 1e-15 * big) {
        return Err(Error::Singular("complex system is singular".into()));
    }
    let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
    let x = lu.solve(&rhs);
    Ok((0..n).map(|i| x[(i, 0)]).collect())
}

/// Pseudo-inverse solution `A† b`, treating singular values below
/// `rel_tol · σ_max` as zero.
pub fn pinv_solve(a: &Mat<f64>, b: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
    let svd = a
        .svd()
        .map_err(|e| Error::Linalg(format!("svd: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let k = s.dim();
    let smax = (0..k).fold(0.0f64, |acc, i| acc.max(s[i].abs()));
    let mut out = vec![0.0; a.ncols()];
    for i in 0..k {
        let si = s[i];
        if si.abs() <= rel_tol * smax {
            continue;
        }
        let coef: f64 = (0..a.nrows()).map(|r| u[(r, i)] * b[r]).sum::<f64>() / si;
        for (c, o) in out.iter_mut().enumerate() {
            *o += coef * v[(c, i)];
        }
    }
    Ok(out)
}

/// Right singular vector of the smallest singular value of a square complex
/// matrix: the best approximate null vector.
pub fn null_vector_c(a: &Mat<C64>) -> Result<Vec<C64>> {
    let svd = a
        .svd()
        .map_err(|e| Error::Linalg(format!("svd: {e:?}")))?;
    let (s, v) = (svd.S(), svd.V());
    let k = s.dim();
    let mut best = 0;
    for i in 1..k {
        if s[i].re < s[best].re {
            best = i;
        }
    }
    Ok((0..a.ncols()).map(|r| v[(r, best)]).collect())
}

pub fn rank(a: &Mat<f64>, rel_tol: f64) -> Result<usize> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(0);
    }
    let s = a
        .singular_values()
        .map_err(|e| Error::Linalg(format!("svd: {e:?}")))?;
    let smax = s.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok(s.iter().filter(|v| v.abs() > rel_tol * smax).count())
}

pub fn eigenvalues(a: &Mat<f64>) -> Result<Vec<C64>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    a.eigenvalues()
        .map_err(|e| Error::Linalg(format!("eigen: {e:?}")))
}

pub fn symmetric_eigenvalues(a: &Mat<f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::Linalg(format!("symmetric eigen: {e:?}")))
}

/// One generalized eigentriple of a real pencil `J v = λ E v`, as produced by
/// the QZ algorithm: `λ = alpha / beta`.
#[derive(Clone, Debug)]
pub struct GenEig {
    pub alpha: C64,
    pub beta: f64,
    pub vector: Vec<C64>,
}

/// Real QZ for the pencil `(J, E)`.
///
/// The convenience wrapper in faer 0.24 under-sizes its workspace, so the
/// low-level routine is called directly. Complex pairs are returned as
/// conjugates of the first member; callers should re-derive `λ` from the
/// vector because the second `alpha` of a pair is not reliable upstream.
pub fn generalized_eigen(j: &Mat<f64>, e: &Mat<f64>) -> Result<Vec<GenEig>> {
    let n = j.nrows();
    assert!(j.ncols() == n && e.nrows() == n && e.ncols() == n);
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a = j.clone();
    let mut b = e.clone();
    let mut s_re = Diag::<f64>::zeros(n);
    let mut s_im = Diag::<f64>::zeros(n);
    let mut beta = Diag::<f64>::zeros(n);
    let mut u = Mat::<f64>::zeros(n, n);
    let req = faer::linalg::gevd::gevd_scratch::<f64>(
        n,
        ComputeEigenvectors::No,
        ComputeEigenvectors::Yes,
        Par::Seq,
        Default::default(),
    )
    .and(faer::linalg::temp_mat_scratch::<f64>(n, 2))
    .and(faer::linalg::temp_mat_scratch::<f64>(n, 2));
    let mut mem = MemBuffer::new(req);
    faer::linalg::gevd::gevd_real(
        a.as_mut(),
        b.as_mut(),
        s_re.as_mut(),
        s_im.as_mut(),
        beta.as_mut(),
        None,
        Some(u.as_mut()),
        Par::Seq,
        MemStack::new(&mut mem),
        Default::default(),
    )
    .map_err(|e| Error::Linalg(format!("qz: {e:?}")))?;

    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if s_im[i] != 0.0 && i + 1 < n {
            let alpha = C64::new(s_re[i], s_im[i]);
            let v: Vec<C64> = (0..n).map(|r| C64::new(u[(r, i)], u[(r, i + 1)])).collect();
            let vc: Vec<C64> = v.iter().map(|z| z.conj()).collect();
            out.push(GenEig {
                alpha,
                beta: beta[i],
                vector: v,
            });
            out.push(GenEig {
                alpha: alpha.conj(),
                beta: beta[i],
                vector: vc,
            });
            i += 2;
        } else {
            out.push(GenEig {
                alpha: C64::new(s_re[i], 0.0),
                beta: beta[i],
                vector: (0..n).map(|r| C64::new(u[(r, i)], 0.0)).collect(),
            });
            i += 1;
        }
    }
    Ok(out)
}
