//! First-order eigenvalue sensitivity `dλ = −xᵀ dL x / α` expressed in line
//! coordinates, so that a perturbation enters only through `dθ` and `dVˡⁿ`.
//!
//! Writing `xˡⁿ_i = x_{V_i}/V_i`, the quadratic form `xᵀLx` depends on the
//! state through `p_k`, `q_k` and the bus term `Q_i/V_i²`. Differentiating
//! gives, per line and per load bus,
//!
//! ```text
//! θ_k:    [2 xˡⁿ_i xˡⁿ_j − (x′_θk)²] p_k − 2 x′_θk x′_νk q_k
//! Vˡⁿ_i:  Σ_k |A_ik| [−(x′_θk)² q_k + 2 x′_θk (x′_νk − xˡⁿ_i) p_k] − 2 (xˡⁿ_i)² Q_i
//! ```
//!
//! where the `xˡⁿ_i xˡⁿ_j` product is present only when both ends of line `k`
//! carry voltage variables. The bracket `x′_νk − xˡⁿ_i` is the other
//! endpoint's component, which vanishes on generator-adjacent lines.

use crate::error::{Error, Result};
use crate::laplacian::LineState;
use crate::linalg::C64;
use crate::modal::{check_alpha, DynamicMatrices, Mode};
use crate::network::Network;
use crate::powerflow::OperatingPoint;

/// `x′ = Hx`.
pub fn eigvec_line_coords(x: &[C64], h: &faer::Mat<f64>) -> Vec<C64> {
    crate::linalg::mat_vec_c(h, x)
}

#[derive(Clone, Debug)]
pub struct SensitivityReport {
    /// Coefficient of `dθ_k` in `xᵀ dL x`.
    pub theta_coeff: Vec<C64>,
    /// Coefficient of `dVˡⁿ_i` per load-voltage variable; empty in the
    /// constant-voltage model.
    pub vln_coeff: Vec<C64>,
    pub alpha: C64,
    pub lambda: C64,
}

impl SensitivityReport {
    /// `dλ = −(Σ θ-coeff·dθ + Σ Vˡⁿ-coeff·dVˡⁿ)/α`.
    pub fn dlambda(&self, dtheta: &[f64], dvln: &[f64]) -> C64 {
        assert_eq!(dtheta.len(), self.theta_coeff.len());
        assert_eq!(dvln.len(), self.vln_coeff.len());
        let num: C64 = self.theta_coeff.iter().zip(dtheta).map(|(c, d)| c * d).sum::<C64>()
            + self.vln_coeff.iter().zip(dvln).map(|(c, d)| c * d).sum::<C64>();
        -num / self.alpha
    }

    /// `xᵀ dL x` for the given line-coordinate perturbation.
    pub fn quadratic_form(&self, dtheta: &[f64], dvln: &[f64]) -> C64 {
        -self.dlambda(dtheta, dvln) * self.alpha
    }
}

pub fn sensitivity_coefficients(
    net: &Network,
    op: &OperatingPoint,
    ls: &LineState,
    dm: &DynamicMatrices,
    mode: &Mode,
) -> Result<SensitivityReport> {
    let alpha = check_alpha(mode.lambda, &mode.x, dm)?;
    let l = net.n_lines();
    let x = &mode.x;
    let xln = |bus: usize| net.v_index(bus).map(|a| x[a] / op.v[bus]);
    let (xt, xn) = mode.x_line.split_at(l);

    let mut theta_coeff = Vec::with_capacity(l);
    for (k, line) in net.lines().iter().enumerate() {
        let prod = match (xln(line.from), xln(line.to)) {
            (Some(a), Some(b)) => a * b * 2.0,
            _ => C64::from(0.0),
        };
        theta_coeff.push((prod - xt[k] * xt[k]) * ls.p[k] - xt[k] * xn[k] * ls.q[k] * 2.0);
    }

    let mut vln_coeff = vec![C64::from(0.0); net.n_vars_v()];
    let off = net.n();
    for (k, line) in net.lines().iter().enumerate() {
        for (end, other) in [(line.from, line.to), (line.to, line.from)] {
            let Some(a) = net.v_index(end) else { continue };
            let cq = -xt[k] * xt[k];
            let cp = match xln(other) {
                Some(o) => xt[k] * o * 2.0,
                None => C64::from(0.0),
            };
            vln_coeff[a - off] += cq * ls.q[k] + cp * ls.p[k];
        }
    }
    for (i, bus) in net.buses().iter().enumerate() {
        if let (Some(a), Some(z)) = (net.v_index(i), xln(i)) {
            vln_coeff[a - off] -= z * z * 2.0 * bus.q();
        }
    }
    Ok(SensitivityReport {
        theta_coeff,
        vln_coeff,
        alpha,
        lambda: mode.lambda,
    })
}

/// Constant-voltage coefficients: `dσ = a_r·dθ`, `dω = a_I·dθ`.
#[derive(Clone, Debug)]
pub struct ConstVCoefficients {
    pub a_r: Vec<f64>,
    pub a_i: Vec<f64>,
    pub alpha_r: f64,
    pub alpha_i: f64,
}

impl ConstVCoefficients {
    pub fn dsigma(&self, dtheta: &[f64]) -> f64 {
        self.a_r.iter().zip(dtheta).map(|(a, d)| a * d).sum()
    }

    pub fn domega(&self, dtheta: &[f64]) -> f64 {
        self.a_i.iter().zip(dtheta).map(|(a, d)| a * d).sum()
    }
}

fn require_const_v(net: &Network) -> Result<()> {
    if net.n_vars_v() != 0 {
        return Err(Error::Usage(
            "constant-voltage coefficients need a model without voltage states".into(),
        ));
    }
    Ok(())
}

/// `dλ = Σ_k (x′_θk)² p_k dθ_k / α`, split into real and imaginary parts.
pub fn const_v_coefficients(
    net: &Network,
    ls: &LineState,
    dm: &DynamicMatrices,
    mode: &Mode,
) -> Result<ConstVCoefficients> {
    require_const_v(net)?;
    let alpha = check_alpha(mode.lambda, &mode.x, dm)?;
    let (ar, ai) = (alpha.re, alpha.im);
    let den = alpha.norm_sqr();
    let mut out = ConstVCoefficients {
        a_r: Vec::with_capacity(net.n_lines()),
        a_i: Vec::with_capacity(net.n_lines()),
        alpha_r: ar,
        alpha_i: ai,
    };
    for k in 0..net.n_lines() {
        let c = mode.x_line[k] * mode.x_line[k] * ls.p[k];
        out.a_r.push((c.re * ar + c.im * ai) / den);
        out.a_i.push((c.im * ar - c.re * ai) / den);
    }
    Ok(out)
}

/// Undamped special case `a_k = (x′_θk)² p_k / (2ω xᵀMx)`, with
/// `dω = −a·dθ`. Only defined for purely imaginary modes.
pub fn undamped_coefficients(
    net: &Network,
    ls: &LineState,
    dm: &DynamicMatrices,
    mode: &Mode,
) -> Result<Vec<f64>> {
    require_const_v(net)?;
    if mode.lambda.re.abs() > 1e-10 * mode.lambda.norm() {
        return Err(Error::Usage(format!(
            "mode {:.6} is damped; use the general coefficients",
            mode.lambda
        )));
    }
    let w = mode.lambda.im;
    let xmx: f64 = mode.x.iter().zip(&dm.m).map(|(z, m)| m * z.re * z.re).sum();
    Ok((0..net.n_lines())
        .map(|k| {
            let t = mode.x_line[k].re;
            t * t * ls.p[k] / (2.0 * w * xmx)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplacian::hessian;
    use crate::modal::modes;
    use crate::powerflow::{line_states, solve_power_flow};

    const CHAIN: &str = "system model=const_v omega0=1\n\
        bus 1 G V=1 Pg=1 H=3\nbus 2 G V=1 Pg=0 H=3\nbus 3 G V=1 Pg=-1 H=3\n\
        line 1 1 2 b=5\nline 2 2 3 b=5\n";

    #[test]
    fn zero_perturbation_gives_zero() {
        let net = Network::parse(CHAIN).unwrap();
        let op = solve_power_flow(&net, None).unwrap();
        let b = hessian(&net, &op);
        let ms = modes(&net, &b).unwrap();
        let dm = DynamicMatrices::new(&net);
        let ls = line_states(&net, &op);
        let rep = sensitivity_coefficients(&net, &op, &ls, &dm, &ms[0]).unwrap();
        assert_eq!(rep.dlambda(&[0.0, 0.0], &[]), C64::from(0.0));
        assert!(rep.vln_coeff.is_empty());
        for (k, c) in rep.theta_coeff.iter().enumerate() {
            let t = ms[0].x_line[k];
            assert!((c + t * t * ls.p[k]).norm() < 1e-14);
        }
    }

    #[test]
    fn undamped_coefficients_match_general_split() {
        let net = Network::parse(CHAIN).unwrap();
        let op = solve_power_flow(&net, None).unwrap();
        let b = hessian(&net, &op);
        let dm = DynamicMatrices::new(&net);
        let ls = line_states(&net, &op);
        for mode in modes(&net, &b).unwrap() {
            let a = undamped_coefficients(&net, &ls, &dm, &mode).unwrap();
            let g = const_v_coefficients(&net, &ls, &dm, &mode).unwrap();
            for k in 0..a.len() {
                assert!(a[k] >= 0.0);
                assert!(g.a_r[k].abs() < 1e-12);
                assert!((g.a_i[k] + a[k]).abs() < 1e-12 * a[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn voltage_model_rejects_const_v_coefficients() {
        let net = Network::parse(
            "bus 1 G V=1 Pg=0.5 H=3 D=1\nbus 2 G V=1 Pg=0.5 H=3 D=1\nbus 3 L Pl=1 Ql=0.1\nline a 1 3 b=5\nline b 2 3 b=4\n",
        )
        .unwrap();
        let op = solve_power_flow(&net, None).unwrap();
        let b = hessian(&net, &op);
        let dm = DynamicMatrices::new(&net);
        let ls = line_states(&net, &op);
        let mode = &modes(&net, &b).unwrap()[0];
        assert!(matches!(const_v_coefficients(&net, &ls, &dm, mode), Err(Error::Usage(_))));
    }
}
