//! Quadratic eigenproblem `(λ²M + λD + L)x = 0` via the descriptor pencil.
//!
//! Pencil state order is `(δ_g, ω_g, δ_load, V_load)`. Generator angles and
//! speeds are dynamic; load angles are first-order dynamic when the bus has
//! frequency-dependent load (`d_i > 0`) and algebraic otherwise; load
//! voltages are always algebraic.

use std::fmt;

use faer::Mat;

use crate::error::{Error, Result};
use crate::laplacian::LaplacianBundle;
use crate::linalg::{self, C64};
use crate::network::Network;

const INFINITE_TOL: f64 = 1e-12;
const ZERO_MODE_TOL: f64 = 1e-6;
const UNIFORM_TOL: f64 = 1e-3;
const RESONANCE_TOL: f64 = 1e-8;
pub const PARTICIPATION: f64 = 0.05;

/// Diagonals of `M` and `D` over the state `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicMatrices {
    pub m: Vec<f64>,
    pub d: Vec<f64>,
    /// Number of generators; rows `0..m` are generator angles.
    pub n_gen: usize,
    /// Trailing load-voltage rows.
    pub n_voltage: usize,
}

impl DynamicMatrices {
    pub fn new(net: &Network) -> DynamicMatrices {
        let dim = net.state_dim();
        let w0 = net.omega0();
        let mut m = vec![0.0; dim];
        let mut d = vec![0.0; dim];
        for (i, bus) in net.buses().iter().enumerate() {
            m[i] = 2.0 * bus.inertia_h / w0;
            d[i] = bus.damping_d / w0;
        }
        DynamicMatrices {
            m,
            d,
            n_gen: net.m(),
            n_voltage: net.n_vars_v(),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn m_mat(&self) -> Mat<f64> {
        Mat::from_fn(self.dim(), self.dim(), |i, j| if i == j { self.m[i] } else { 0.0 })
    }

    pub fn d_mat(&self) -> Mat<f64> {
        Mat::from_fn(self.dim(), self.dim(), |i, j| if i == j { self.d[i] } else { 0.0 })
    }

    /// `Q(λ) = λ²M + λD + L`.
    pub fn qep_matrix(&self, lambda: C64, l: &Mat<f64>) -> Mat<C64> {
        Mat::from_fn(self.dim(), self.dim(), |i, j| {
            let mut v = C64::from(l[(i, j)]);
            if i == j {
                v += lambda * lambda * self.m[i] + lambda * self.d[i];
            }
            v
        })
    }

    pub fn qep_residual(&self, lambda: C64, x: &[C64], l: &Mat<f64>) -> Vec<C64> {
        let lx = linalg::mat_vec_c(l, x);
        (0..self.dim())
            .map(|i| lx[i] + (lambda * lambda * self.m[i] + lambda * self.d[i]) * x[i])
            .collect()
    }

    fn is_dynamic(&self, i: usize) -> bool {
        i < self.n_gen || self.d[i] > 0.0
    }

    fn pencil_col(&self, i: usize) -> usize {
        if i < self.n_gen {
            i
        } else {
            i + self.n_gen
        }
    }
}

/// Grouping of generators by phase in one mode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwingProfile {
    /// 1-based generator numbers; the group holding the lowest number comes first.
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
    pub idle: Vec<usize>,
}

impl fmt::Display for SwingProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |g: &[usize]| g.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        if self.group_b.is_empty() {
            write!(f, "{}", join(&self.group_a))
        } else {
            write!(f, "{} <-> {}", join(&self.group_a), join(&self.group_b))
        }
    }
}

pub fn swing_profile(x: &[C64], n_gen: usize) -> SwingProfile {
    let gen = &x[..n_gen];
    let (imax, big) = gen
        .iter()
        .enumerate()
        .map(|(i, z)| (i, z.norm()))
        .fold((0, 0.0), |acc, (i, a)| if a > acc.1 { (i, a) } else { acc });
    let mut p = SwingProfile {
        group_a: vec![],
        group_b: vec![],
        idle: vec![],
    };
    if big == 0.0 {
        p.idle = (1..=n_gen).collect();
        return p;
    }
    let rot = gen[imax].conj() / big;
    for (i, z) in gen.iter().enumerate() {
        let r = z * rot;
        if z.norm() < PARTICIPATION * big {
            p.idle.push(i + 1);
        } else if r.re >= 0.0 {
            p.group_a.push(i + 1);
        } else {
            p.group_b.push(i + 1);
        }
    }
    // Canonical order: the group holding the lowest-numbered machine first.
    if p.group_b.first() < p.group_a.first() && !p.group_b.is_empty() {
        std::mem::swap(&mut p.group_a, &mut p.group_b);
    }
    p
}

/// Frequency in Hz and damping ratio in percent.
pub fn mode_summary(lambda: C64) -> (f64, f64) {
    let (s, w) = (lambda.re, lambda.im);
    let zeta = if s == 0.0 { 0.0 } else { -s / s.hypot(w) };
    (w / (2.0 * std::f64::consts::PI), 100.0 * zeta)
}

#[derive(Clone, Debug)]
pub struct Mode {
    pub lambda: C64,
    pub x: Vec<C64>,
    /// `x′ = Hx`: angle-difference rows then log-voltage rows.
    pub x_line: Vec<C64>,
    pub alpha: C64,
    pub freq_hz: f64,
    /// `ζ = −σ/|λ|` as a fraction.
    pub damping_ratio: f64,
    pub swing_profile: SwingProfile,
    pub electromechanical: bool,
    /// Another eigenvalue lies within the resonance gap.
    pub resonance_warning: bool,
}

impl Mode {
    pub fn is_oscillatory(&self) -> bool {
        self.lambda.im > 0.0
    }
}

/// Descriptor pencil `(E, J)` with `E v̇ = J v`.
pub fn extended_jacobian(dm: &DynamicMatrices, l: &Mat<f64>) -> (Mat<f64>, Mat<f64>) {
    let (n, g) = (dm.dim(), dm.n_gen);
    let size = n + g;
    let mut e = Mat::zeros(size, size);
    let mut j = Mat::zeros(size, size);
    for i in 0..g {
        e[(i, i)] = 1.0;
        j[(i, g + i)] = 1.0;
        let row = g + i;
        e[(row, row)] = 1.0;
        j[(row, row)] = -dm.d[i] / dm.m[i];
        for c in 0..n {
            j[(row, dm.pencil_col(c))] = -l[(i, c)] / dm.m[i];
        }
    }
    for i in g..n {
        let row = dm.pencil_col(i);
        if dm.is_dynamic(i) {
            e[(row, row)] = dm.d[i];
        }
        for c in 0..n {
            j[(row, dm.pencil_col(c))] = -l[(i, c)];
        }
    }
    (e, j)
}

/// Pencil eigenvector for a QEP pair: `(x_g, λx_g, x_rest)`.
pub fn pencil_vector(dm: &DynamicMatrices, lambda: C64, x: &[C64]) -> Vec<C64> {
    let g = dm.n_gen;
    let mut v = Vec::with_capacity(x.len() + g);
    v.extend_from_slice(&x[..g]);
    v.extend(x[..g].iter().map(|z| z * lambda));
    v.extend_from_slice(&x[g..]);
    v
}

/// Schur complement onto the dynamic states, `E_d⁻¹(J₁₁ − J₁₂ J₂₂⁻¹ J₂₁)`.
pub fn reduced_jacobian(dm: &DynamicMatrices, l: &Mat<f64>) -> Result<Mat<f64>> {
    let (e, j) = extended_jacobian(dm, l);
    let size = e.nrows();
    let dynamic: Vec<usize> = (0..size).filter(|&i| e[(i, i)] != 0.0).collect();
    let algebraic: Vec<usize> = (0..size).filter(|&i| e[(i, i)] == 0.0).collect();
    let sub = |rows: &[usize], cols: &[usize]| {
        Mat::from_fn(rows.len(), cols.len(), |r, c| j[(rows[r], cols[c])])
    };
    let mut red = sub(&dynamic, &dynamic);
    if !algebraic.is_empty() {
        let j22 = sub(&algebraic, &algebraic);
        let j21 = sub(&algebraic, &dynamic);
        let j12 = sub(&dynamic, &algebraic);
        for c in 0..dynamic.len() {
            let col: Vec<f64> = (0..algebraic.len()).map(|r| j21[(r, c)]).collect();
            let y = linalg::solve(&j22, &col).map_err(|e| Error::Reduction(e.to_string()))?;
            for r in 0..dynamic.len() {
                let corr: f64 = (0..algebraic.len()).map(|k| j12[(r, k)] * y[k]).sum();
                red[(r, c)] -= corr;
            }
        }
    }
    for (r, &i) in dynamic.iter().enumerate() {
        let s = e[(i, i)];
        for c in 0..dynamic.len() {
            red[(r, c)] /= s;
        }
    }
    Ok(red)
}

/// `α = 2λ xᵀMx + xᵀDx` (unconjugated).
pub fn alpha(lambda: C64, x: &[C64], dm: &DynamicMatrices) -> C64 {
    x.iter()
        .enumerate()
        .map(|(i, z)| (lambda * 2.0 * dm.m[i] + dm.d[i]) * z * z)
        .sum()
}

/// Rejects `α` too small for the sensitivity quotient to mean anything.
pub fn check_alpha(lambda: C64, x: &[C64], dm: &DynamicMatrices) -> Result<C64> {
    let a = alpha(lambda, x, dm);
    let nx2 = x.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let mmax = linalg::norm_max(&dm.m);
    let dmax = linalg::norm_max(&dm.d);
    let scale = (lambda.norm() * mmax + dmax) * nx2;
    if a.norm() < 1e-12 * scale || a.norm() == 0.0 {
        return Err(Error::Degenerate(format!("|α| = {:.3e} relative to scale {scale:.3e}", a.norm())));
    }
    Ok(a)
}

/// Roots of `m(x)λ² + d(x)λ + l(x) = 0` with conjugated quadratic forms.
pub fn lambda_from_vector(x: &[C64], dm: &DynamicMatrices, l: &Mat<f64>) -> Result<Vec<C64>> {
    let mx: f64 = x.iter().zip(&dm.m).map(|(z, m)| m * z.norm_sqr()).sum();
    let dx: f64 = x.iter().zip(&dm.d).map(|(z, d)| d * z.norm_sqr()).sum();
    let lx = linalg::mat_vec_c(l, x);
    let lq: f64 = x.iter().zip(&lx).map(|(a, b)| (a.conj() * b).re).sum();
    if mx == 0.0 && dx == 0.0 {
        return Err(Error::Domain("m(x) = d(x) = 0: λ is undefined".into()));
    }
    if mx == 0.0 {
        return Ok(vec![C64::from(-lq / dx)]);
    }
    let disc = C64::from(dx * dx - 4.0 * mx * lq).sqrt();
    Ok(vec![(-dx + disc) / (2.0 * mx), (-dx - disc) / (2.0 * mx)])
}

/// Divides `x` by its largest generator-angle component (or largest
/// component overall if the generators are idle).
pub fn normalize(x: &mut [C64], n_gen: usize) {
    let pick = |range: &[C64]| {
        range
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, z)| if z.norm() > acc.1 { (i, z.norm()) } else { acc })
    };
    let (ig, gmax) = pick(&x[..n_gen]);
    let (ia, amax) = pick(x);
    let pivot = if gmax > 1e-8 * amax { x[ig] } else { x[ia] };
    if pivot.norm() == 0.0 {
        return;
    }
    for z in x.iter_mut() {
        *z /= pivot;
    }
}

/// Newton on `Q(λ)x = 0` with the bordering `cᴴx = 1`.
fn refine(dm: &DynamicMatrices, l: &Mat<f64>, lambda: C64, x: &[C64]) -> (C64, Vec<C64>) {
    let n = dm.dim();
    let nx = linalg::norm2_c(x);
    let c: Vec<C64> = x.iter().map(|z| z / (nx * nx)).collect();
    let (mut lam, mut v) = (lambda, x.to_vec());
    let scale = linalg::max_abs(l).max(1.0);
    let res_norm = |lam: C64, v: &[C64]| linalg::norm2_c(&dm.qep_residual(lam, v, l)) / linalg::norm2_c(v);
    let mut best = res_norm(lam, &v);
    for _ in 0..6 {
        if best < 1e-15 * scale {
            break;
        }
        let q = dm.qep_matrix(lam, l);
        let dq: Vec<C64> = (0..n).map(|i| (lam * 2.0 * dm.m[i] + dm.d[i]) * v[i]).collect();
        let k = Mat::from_fn(n + 1, n + 1, |r, s| match (r < n, s < n) {
            (true, true) => q[(r, s)],
            (true, false) => dq[r],
            (false, true) => c[s].conj(),
            (false, false) => C64::from(0.0),
        });
        let qv = dm.qep_residual(lam, &v, l);
        let mut rhs: Vec<C64> = qv.iter().map(|z| -z).collect();
        let cv: C64 = c.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        rhs.push(C64::from(1.0) - cv);
        let Ok(step) = linalg::solve_c(&k, &rhs) else { break };
        let nv: Vec<C64> = v.iter().zip(&step).map(|(a, b)| a + b).collect();
        let nl = lam + step[n];
        let r = res_norm(nl, &nv);
        if !(r < best) {
            break;
        }
        lam = nl;
        v = nv;
        best = r;
    }
    (lam, v)
}

/// Finite spectrum of the pencil, deduplicated to one member per conjugate
/// pair, with infinite eigenvalues and the uniform-angle zero mode removed.
/// Returns `(λ, x)` sorted by `(ω, σ)`.
pub fn solve_qep(dm: &DynamicMatrices, l: &Mat<f64>) -> Result<Vec<(C64, Vec<C64>, bool)>> {
    let n = dm.dim();
    let (e, j) = extended_jacobian(dm, l);
    let eigs = linalg::generalized_eigen(&j, &e)?;

    let mut found: Vec<(C64, Vec<C64>)> = Vec::new();
    for g in &eigs {
        if g.beta.abs() <= INFINITE_TOL * g.alpha.norm().hypot(g.beta) {
            continue;
        }
        let mut vector = g.vector.clone();
        if vector.iter().any(|z| !z.is_finite()) {
            // faer yields NaN vectors on exactly defective eigenvalues.
            let lam = g.alpha / g.beta;
            let shifted = Mat::from_fn(j.nrows(), j.ncols(), |r, c| C64::from(j[(r, c)]) - lam * e[(r, c)]);
            vector = linalg::null_vector_c(&shifted)?;
        }
        let ev = linalg::mat_vec_c(&e, &vector);
        let evn = linalg::norm2_c(&ev);
        if evn <= INFINITE_TOL * linalg::norm2_c(&vector) {
            continue;
        }
        // Rayleigh quotient; see the note on `generalized_eigen`.
        let jv = linalg::mat_vec_c(&j, &vector);
        let lam = ev.iter().zip(&jv).map(|(a, b)| a.conj() * b).sum::<C64>() / (evn * evn);
        if g.alpha.im < 0.0 {
            continue; // the partner with ω > 0 carries the same information
        }
        let lam = if g.alpha.im == 0.0 { C64::from(lam.re) } else { lam };
        if !lam.is_finite() {
            return Err(Error::Linalg(format!("non-finite eigenvalue {lam}")));
        }
        let x: Vec<C64> = (0..n).map(|i| vector[dm.pencil_col(i)]).collect();
        found.push((lam, x));
    }

    let scale = found.iter().map(|(l, _)| l.norm()).fold(0.0, f64::max);
    let mut out = Vec::new();
    for (lam, mut x) in found {
        if lam.norm() < ZERO_MODE_TOL * scale && uniform_angles(&x, dm) {
            continue;
        }
        let (lam, mut xr) = if lam.norm() < ZERO_MODE_TOL * scale {
            (lam, x.clone())
        } else {
            refine(dm, l, lam, &x)
        };
        if lam.im.abs() < 1e-12 * scale.max(1.0) && xr.iter().all(|z| z.im.abs() <= 1e-12 * z.norm().max(1e-300)) {
            xr.iter_mut().for_each(|z| z.im = 0.0);
        }
        x = xr;
        normalize(&mut x, dm.n_gen);
        let lam = if lam.im < 0.0 { lam.conj() } else { lam };
        out.push((lam, x));
    }
    out.sort_by(|a, b| {
        a.0.im.total_cmp(&b.0.im).then(a.0.re.total_cmp(&b.0.re))
    });
    let lams: Vec<C64> = out.iter().map(|(l, _)| *l).collect();
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(i, (l, x))| {
            let close = lams
                .iter()
                .enumerate()
                .any(|(k, o)| k != i && (o - l).norm() < RESONANCE_TOL * scale.max(1.0));
            (l, x, close)
        })
        .collect())
}

fn uniform_angles(x: &[C64], dm: &DynamicMatrices) -> bool {
    let n_bus = dm.dim() - dm.n_voltage;
    let angles = &x[..n_bus];
    let big = angles.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let vmax = x[n_bus..].iter().map(|z| z.norm()).fold(0.0, f64::max);
    if big == 0.0 {
        return false;
    }
    let spread = angles.iter().map(|z| (z - angles[0]).norm()).fold(0.0, f64::max);
    spread < UNIFORM_TOL * big && vmax < UNIFORM_TOL * big
}

/// Full modal analysis at an equilibrium.
pub fn modes(net: &Network, bundle: &LaplacianBundle) -> Result<Vec<Mode>> {
    let dm = DynamicMatrices::new(net);
    let raw = solve_qep(&dm, &bundle.l)?;
    Ok(raw
        .into_iter()
        .map(|(lambda, x, resonance_warning)| build_mode(&dm, &bundle.h, lambda, x, resonance_warning))
        .collect())
}

pub fn build_mode(dm: &DynamicMatrices, h: &Mat<f64>, lambda: C64, x: Vec<C64>, resonance_warning: bool) -> Mode {
    let x_line = linalg::mat_vec_c(h, &x);
    let (freq_hz, zeta_pct) = mode_summary(lambda);
    let xmax = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let gmax = x[..dm.n_gen].iter().map(|z| z.norm()).fold(0.0, f64::max);
    Mode {
        alpha: alpha(lambda, &x, dm),
        freq_hz,
        damping_ratio: zeta_pct / 100.0,
        swing_profile: swing_profile(&x, dm.n_gen),
        electromechanical: lambda.im > 0.0 && gmax > PARTICIPATION * xmax,
        resonance_warning,
        lambda,
        x_line,
        x,
    }
}
