//! Lossless AC power flow as the stationary point of the energy function.
//!
//! With balanced injections the real-power equations are linearly dependent,
//! so Newton fixes `δ_1 = 0` and drops the first angle equation. The Newton
//! Jacobian is the energy Hessian with that row and column removed.

use faer::Mat;

use crate::error::{Error, Result};
use crate::laplacian::{hessian_at, line_states_at, LineState};
use crate::linalg;
use crate::network::Network;

pub const MAX_ITERATIONS: usize = 50;
pub const TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct OperatingPoint {
    /// Angle per bus, `delta[0] = 0`.
    pub delta: Vec<f64>,
    /// Voltage magnitude per bus; generator entries are their set points.
    pub v: Vec<f64>,
    pub residual_norm: f64,
}

impl OperatingPoint {
    pub fn flat(net: &Network) -> OperatingPoint {
        OperatingPoint {
            delta: vec![0.0; net.n()],
            v: net.buses().iter().map(|b| b.v).collect(),
            residual_norm: f64::INFINITY,
        }
    }

    pub fn v_load<'a>(&'a self, net: &Network) -> &'a [f64] {
        &self.v[net.m()..]
    }
}

/// `∂R/∂z`: negated real-power mismatch on angle rows, reactive mismatch
/// (divided by `V_i`) on load-voltage rows.
pub fn gradient(net: &Network, delta: &[f64], v: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; net.state_dim()];
    let b_ii = net.b_ii();
    for (i, bus) in net.buses().iter().enumerate() {
        g[i] -= bus.p();
        if let Some(a) = net.v_index(i) {
            g[a] -= b_ii[i] * v[i] + bus.q() / v[i];
        }
    }
    for line in net.lines() {
        let (i, j) = (line.from, line.to);
        let (s, c) = (delta[i] - delta[j]).sin_cos();
        let f = line.b * v[i] * v[j] * s;
        g[i] += f;
        g[j] -= f;
        if let Some(a) = net.v_index(i) {
            g[a] -= line.b * v[j] * c;
        }
        if let Some(a) = net.v_index(j) {
            g[a] -= line.b * v[i] * c;
        }
    }
    g
}

/// Energy function `R(δ, V)` in bus coordinates.
pub fn potential_energy(net: &Network, delta: &[f64], v: &[f64]) -> Result<f64> {
    check_positive(v)?;
    let b_ii = net.b_ii();
    let mut r = 0.0;
    for line in net.lines() {
        r -= line.b * v[line.from] * v[line.to] * (delta[line.from] - delta[line.to]).cos();
    }
    Ok(r + bus_energy(net, delta, v, &b_ii))
}

/// Same scalar with the line part written in line coordinates, `Σ q_k`.
pub fn potential_energy_line_form(net: &Network, delta: &[f64], v: &[f64]) -> Result<f64> {
    check_positive(v)?;
    let ls = line_states_at(net, delta, v);
    Ok(ls.q.iter().sum::<f64>() + bus_energy(net, delta, v, &net.b_ii()))
}

fn bus_energy(net: &Network, delta: &[f64], v: &[f64], b_ii: &[f64]) -> f64 {
    net.buses()
        .iter()
        .enumerate()
        .map(|(i, bus)| -(bus.p() * delta[i] + 0.5 * b_ii[i] * v[i] * v[i] + bus.q() * v[i].ln()))
        .sum()
}

fn check_positive(v: &[f64]) -> Result<()> {
    match v.iter().position(|&x| !(x > 0.0)) {
        Some(i) => Err(Error::Domain(format!(
            "voltage magnitude at bus index {} is {} (ln V undefined)",
            i + 1,
            v[i]
        ))),
        None => Ok(()),
    }
}

pub fn line_states(net: &Network, op: &OperatingPoint) -> LineState {
    line_states_at(net, &op.delta, &op.v)
}

/// Newton solve of `∇R = 0`, from a flat start unless `initial` is given.
pub fn solve_power_flow(net: &Network, initial: Option<&OperatingPoint>) -> Result<OperatingPoint> {
    let mut delta;
    let mut v: Vec<f64> = net.buses().iter().map(|b| b.v).collect();
    match initial {
        Some(op) if op.delta.len() == net.n() && op.v.len() == net.n() => {
            delta = op.delta.iter().map(|d| d - op.delta[0]).collect();
            for i in net.m()..net.n() {
                if net.v_index(i).is_some() {
                    v[i] = op.v[i];
                }
            }
        }
        _ => delta = vec![0.0; net.n()],
    }

    let dim = net.state_dim();
    let residual = |d: &[f64], vv: &[f64]| linalg::norm_max(&gradient(net, d, vv));
    let mut norm = residual(&delta, &v);
    let mut converged_at = None;
    let mut polish = 0;

    for it in 0..MAX_ITERATIONS {
        if norm < TOLERANCE {
            converged_at.get_or_insert(it);
            // A few extra steps buy accuracy for finite-difference oracles.
            if polish >= 3 {
                break;
            }
            polish += 1;
        }
        let g = gradient(net, &delta, &v);
        let h = hessian_at(net, &delta, &v);
        let jac = Mat::from_fn(dim - 1, dim - 1, |r, c| h[(r + 1, c + 1)]);
        let rhs: Vec<f64> = g[1..].iter().map(|x| -x).collect();
        let step = match linalg::solve(&jac, &rhs) {
            Ok(s) => s,
            Err(_) if converged_at.is_some() => break,
            Err(e) => return Err(e),
        };

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let (nd, nv) = apply(net, &delta, &v, &step, t);
            if nv.iter().all(|&x| x > 0.0) {
                let nn = residual(&nd, &nv);
                if nn < norm || (converged_at.is_none() && t < 1e-3 && nn.is_finite()) {
                    delta = nd;
                    v = nv;
                    norm = nn;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if converged_at.is_some() {
                break;
            }
            return Err(Error::Convergence {
                iterations: it + 1,
                residual: norm,
            });
        }
    }

    if norm >= TOLERANCE {
        return Err(Error::Convergence {
            iterations: MAX_ITERATIONS,
            residual: norm,
        });
    }
    Ok(OperatingPoint {
        delta,
        v,
        residual_norm: norm,
    })
}

fn apply(net: &Network, delta: &[f64], v: &[f64], step: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let mut nd = delta.to_vec();
    let mut nv = v.to_vec();
    for (r, s) in step.iter().enumerate() {
        let idx = r + 1;
        if idx < net.n() {
            nd[idx] += t * s;
        } else {
            nv[net.m() + idx - net.n()] += t * s;
        }
    }
    (nd, nv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_injection_flat_solution_is_exact() {
        let net = Network::parse(
            "bus 1 G V=1 Pg=0 H=1\nbus 2 G V=1 Pg=0 H=1\nbus 3 L Pl=0\nbus 4 L Pl=0\nline a 1 3 b=2\nline b 3 4 b=3\nline c 4 2 b=1\n",
        )
        .unwrap();
        let op = solve_power_flow(&net, None).unwrap();
        assert!(op.delta.iter().all(|&d| d == 0.0));
        assert!(op.v.iter().all(|&v| v == 1.0));
        assert_eq!(op.residual_norm, 0.0);
    }

    #[test]
    fn resolve_from_solution_is_immediate() {
        let net = Network::parse(
            "bus 1 G V=1.02 Pg=0.7 H=3\nbus 2 G V=1 Pg=0.3 H=3\nbus 3 L Pl=1 Ql=0.2\nline a 1 3 b=5\nline b 2 3 b=4\n",
        )
        .unwrap();
        let op = solve_power_flow(&net, None).unwrap();
        assert!(op.residual_norm < 1e-12);
        let again = solve_power_flow(&net, Some(&op)).unwrap();
        for (a, b) in op.delta.iter().zip(&again.delta) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn energy_paths_agree_and_reject_bad_voltage() {
        let net = Network::parse("bus 1 G V=1 Pg=0.2 H=1\nbus 2 L Pl=0.2 Ql=0.1\nline a 1 2 b=2\n").unwrap();
        let (d, v) = ([0.0, -0.1], [1.0, 0.95]);
        let a = potential_energy(&net, &d, &v).unwrap();
        let b = potential_energy_line_form(&net, &d, &v).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        assert!(matches!(potential_energy(&net, &d, &[1.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn infeasible_load_fails_to_converge() {
        let net = Network::parse("bus 1 G V=1 Pg=5 H=1\nbus 2 L Pl=5 Ql=0\nline a 1 2 b=1\n").unwrap();
        assert!(matches!(
            solve_power_flow(&net, None),
            Err(Error::Convergence { .. }) | Err(Error::Singular(_))
        ));
    }
}
