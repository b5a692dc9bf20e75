//! Energy-function Hessian `L`, the line-coordinate Jacobian `H`, and the
//! diagonal blocks of the Hessian in line coordinates.
//!
//! State order is `z = (δ_1..δ_n, V_{m+1}..V_n)`; the constant-voltage
//! model drops the voltage part.

use faer::Mat;

use crate::network::Network;
use crate::powerflow::OperatingPoint;

/// Per-line quantities in line coordinates `θ = Aᵀδ`, `ν = |A|ᵀ ln V`.
#[derive(Clone, Debug, PartialEq)]
pub struct LineState {
    pub theta: Vec<f64>,
    pub nu: Vec<f64>,
    /// `b e^ν sin θ`: real power flowing from the sending end.
    pub p: Vec<f64>,
    /// `−b e^ν cos θ`.
    pub q: Vec<f64>,
}

pub fn line_states_at(net: &Network, delta: &[f64], v: &[f64]) -> LineState {
    let l = net.n_lines();
    let mut s = LineState {
        theta: Vec::with_capacity(l),
        nu: Vec::with_capacity(l),
        p: Vec::with_capacity(l),
        q: Vec::with_capacity(l),
    };
    for line in net.lines() {
        let th = delta[line.from] - delta[line.to];
        let nu = v[line.from].ln() + v[line.to].ln();
        let mag = line.b * nu.exp();
        s.theta.push(th);
        s.nu.push(nu);
        s.p.push(mag * th.sin());
        s.q.push(-mag * th.cos());
    }
    s
}

/// Analytic Hessian of the energy function at an arbitrary state.
pub fn hessian_at(net: &Network, delta: &[f64], v: &[f64]) -> Mat<f64> {
    let dim = net.state_dim();
    let mut h = Mat::<f64>::zeros(dim, dim);
    for line in net.lines() {
        let (i, j) = (line.from, line.to);
        let th = delta[i] - delta[j];
        let (s, c) = th.sin_cos();
        let cc = line.b * v[i] * v[j] * c;
        h[(i, i)] += cc;
        h[(j, j)] += cc;
        h[(i, j)] -= cc;
        h[(j, i)] -= cc;
        let vi = net.v_index(i);
        let vj = net.v_index(j);
        if let Some(a) = vi {
            let t = line.b * v[j] * s;
            h[(i, a)] += t;
            h[(a, i)] += t;
            h[(j, a)] -= t;
            h[(a, j)] -= t;
        }
        if let Some(a) = vj {
            let t = line.b * v[i] * s;
            h[(i, a)] += t;
            h[(a, i)] += t;
            h[(j, a)] -= t;
            h[(a, j)] -= t;
        }
        if let (Some(a), Some(bb)) = (vi, vj) {
            h[(a, bb)] -= line.b * c;
            h[(bb, a)] -= line.b * c;
        }
    }
    let b_ii = net.b_ii();
    for (i, bus) in net.buses().iter().enumerate() {
        if let Some(a) = net.v_index(i) {
            h[(a, a)] += -b_ii[i] + bus.q() / (v[i] * v[i]);
        }
    }
    h
}

/// `H = ∂(θ, ν)/∂z`: `Aᵀ` in the angle columns, `|A_ik|/V_i` in the
/// load-voltage columns.
pub fn coord_jacobian(net: &Network, op: &OperatingPoint) -> Mat<f64> {
    let l = net.n_lines();
    let mut h = Mat::zeros(2 * l, net.state_dim());
    for (k, line) in net.lines().iter().enumerate() {
        h[(k, line.from)] = 1.0;
        h[(k, line.to)] = -1.0;
        for e in [line.from, line.to] {
            if let Some(a) = net.v_index(e) {
                h[(l + k, a)] = 1.0 / op.v[e];
            }
        }
    }
    h
}

#[derive(Clone, Debug)]
pub struct LaplacianBundle {
    pub l: Mat<f64>,
    pub h: Mat<f64>,
    pub lp_theta_theta: Vec<f64>,
    pub lp_theta_nu: Vec<f64>,
    pub lp_nu_nu: Vec<f64>,
    /// Diagonal of the bus part, one entry per load-voltage variable.
    pub l_bus_diag: Vec<f64>,
}

impl LaplacianBundle {
    /// `Hᵀ L′_line H` assembled from the three diagonal blocks.
    pub fn line_part(&self) -> Mat<f64> {
        let l = self.lp_theta_theta.len();
        let dim = self.h.ncols();
        let mut out = Mat::zeros(dim, dim);
        for k in 0..l {
            let (t, n) = (k, l + k);
            let blocks = [
                (t, t, self.lp_theta_theta[k]),
                (t, n, self.lp_theta_nu[k]),
                (n, t, self.lp_theta_nu[k]),
                (n, n, self.lp_nu_nu[k]),
            ];
            for (r1, r2, w) in blocks {
                for a in 0..dim {
                    let ha = self.h[(r1, a)];
                    if ha == 0.0 {
                        continue;
                    }
                    for b in 0..dim {
                        out[(a, b)] += ha * w * self.h[(r2, b)];
                    }
                }
            }
        }
        out
    }

    /// `‖L − (Hᵀ L′ H + L_bus)‖_max / ‖L‖_max`.
    pub fn factorization_residual(&self) -> f64 {
        let mut rebuilt = self.line_part();
        let dim = rebuilt.nrows();
        let off = dim - self.l_bus_diag.len();
        for (i, d) in self.l_bus_diag.iter().enumerate() {
            rebuilt[(off + i, off + i)] += d;
        }
        let diff = &self.l - &rebuilt;
        crate::linalg::max_abs(&diff) / crate::linalg::max_abs(&self.l)
    }
}

pub fn hessian(net: &Network, op: &OperatingPoint) -> LaplacianBundle {
    let ls = line_states_at(net, &op.delta, &op.v);
    let (_, abs_a) = net.incidence();
    let b_ii = net.b_ii();
    // Exact bus part: the −Σ|A_ik| q_k/V_i² term is the curvature of
    // ν = ln V_i + ln V_j, which Hᵀ L′ H alone does not capture.
    let l_bus_diag = (net.m()..net.n())
        .filter(|&i| net.v_index(i).is_some())
        .map(|i| {
            let sq: f64 = (0..net.n_lines()).map(|k| abs_a[(i, k)] * ls.q[k]).sum();
            -b_ii[i] + (net.buses()[i].q() - sq) / (op.v[i] * op.v[i])
        })
        .collect();
    LaplacianBundle {
        l: hessian_at(net, &op.delta, &op.v),
        h: coord_jacobian(net, op),
        lp_theta_theta: ls.q.iter().map(|q| -q).collect(),
        lp_theta_nu: ls.p.clone(),
        lp_nu_nu: ls.q,
        l_bus_diag,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Bus, LineSpec, Model};
    use crate::powerflow::solve_power_flow;

    #[test]
    fn two_identical_generators_angle_block() {
        let net = Network::new(
            vec![Bus::generator("1", 1.0, 0.0, 1.0, 0.0), Bus::generator("2", 1.0, 0.0, 1.0, 0.0)],
            vec![LineSpec::new("a", "1", "2", 1.0)],
            1.0,
            Model::ConstV,
        )
        .unwrap();
        let op = solve_power_flow(&net, None).unwrap();
        let b = hessian(&net, &op);
        assert_eq!(b.l[(0, 0)], 1.0);
        assert_eq!(b.l[(0, 1)], -1.0);
        assert_eq!(b.l[(1, 1)], 1.0);
    }

    #[test]
    fn single_line_coordinate_jacobian() {
        let net = Network::parse("bus g G V=1 Pg=0 H=1\nbus l L Pl=0\nline a g l b=1\n").unwrap();
        let op = OperatingPoint {
            delta: vec![0.0, 0.0],
            v: vec![1.0, 2.0],
            residual_norm: 0.0,
        };
        let h = coord_jacobian(&net, &op);
        let want = [[1.0, -1.0, 0.0], [0.0, 0.0, 0.5]];
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(h[(r, c)], want[r][c]);
            }
        }
    }

    #[test]
    fn line_state_at_zero_angle() {
        let net = Network::parse("bus g G V=1 Pg=0 H=1\nbus l L Pl=0\nline a g l b=3\n").unwrap();
        let ls = line_states_at(&net, &[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(ls.p, vec![0.0]);
        assert_eq!(ls.q, vec![-3.0]);
    }

    #[test]
    fn uniform_angle_shift_is_in_the_nullspace() {
        let net = Network::parse(
            "bus g G V=1.02 Pg=0.4 H=1\nbus h G V=1 Pg=0.2 H=2\nbus l L Pl=0.6 Ql=0.1\nline a g l b=4\nline b h l b=5\n",
        )
        .unwrap();
        let op = solve_power_flow(&net, None).unwrap();
        let b = hessian(&net, &op);
        let ones: Vec<f64> = (0..net.state_dim()).map(|i| if i < net.n() { 1.0 } else { 0.0 }).collect();
        assert!(crate::linalg::norm_max(&crate::linalg::mat_vec(&b.l, &ones)) < 1e-12);
        assert!(crate::linalg::norm_max(&crate::linalg::mat_vec(&b.h, &ones)) < 1e-15);
        assert!(b.factorization_residual() < 1e-12);
    }
}
