//! Redispatch → linearized load flow → line coordinates → `dλ`.

use rayon::prelude::*;

use crate::analysis::Analysis;
use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::network::Network;
use crate::powerflow::OperatingPoint;

const BALANCE_TOL: f64 = 1e-12;
const RANGE_TOL: f64 = 1e-9;
const PINV_CUTOFF: f64 = 1e-10;
/// Minimum correlation gap between the best and second-best candidate.
pub const MATCH_GAP: f64 = 0.1;

/// Balanced change of generation, one entry per bus (zero on loads).
#[derive(Clone, Debug, PartialEq)]
pub struct RedispatchPlan {
    pub dp: Vec<f64>,
    pub description: String,
}

impl RedispatchPlan {
    /// From per-generator changes.
    pub fn new(net: &Network, dp_gen: &[f64], description: impl Into<String>) -> Result<Self> {
        if dp_gen.len() != net.m() {
            return Err(Error::Validation(format!(
                "redispatch has {} entries for {} generators",
                dp_gen.len(),
                net.m()
            )));
        }
        let sum: f64 = dp_gen.iter().sum();
        let big = linalg::norm_max(dp_gen).max(1.0);
        if sum.abs() > BALANCE_TOL * big {
            return Err(Error::Validation(format!("redispatch is unbalanced (Σ dP = {sum:.3e})")));
        }
        let mut dp = vec![0.0; net.n()];
        dp[..net.m()].copy_from_slice(dp_gen);
        Ok(RedispatchPlan {
            dp,
            description: description.into(),
        })
    }

    /// Unit shift from generator `down` to generator `up` (0-based).
    pub fn pair(net: &Network, up: usize, down: usize) -> Result<Self> {
        if up >= net.m() || down >= net.m() || up == down {
            return Err(Error::Usage(format!(
                "invalid generator pair {}:{} ({} generators)",
                up + 1,
                down + 1,
                net.m()
            )));
        }
        let mut g = vec![0.0; net.m()];
        g[up] = 1.0;
        g[down] = -1.0;
        let desc = format!("{}->{}", net.generator_label(up), net.generator_label(down));
        Self::new(net, &g, desc)
    }

    pub fn scaled(&self, r: f64) -> Vec<f64> {
        self.dp.iter().map(|d| d * r).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.dp.iter().all(|&d| d == 0.0)
    }
}

/// `dz = L†(dP, 0)`, returned as per-bus `dδ` and per-bus `dV` (zero on
/// generators and in the constant-voltage model).
pub fn flow_response(net: &Network, l: &faer::Mat<f64>, dp: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = net.n();
    let sum: f64 = dp.iter().sum();
    if sum.abs() > BALANCE_TOL * linalg::norm_max(dp).max(1.0) || dp[net.m()..].iter().any(|&d| d != 0.0) {
        return Err(Error::Validation("redispatch must be balanced and on generators only".into()));
    }
    let mut rhs = vec![0.0; net.state_dim()];
    rhs[..n].copy_from_slice(dp);
    let dz = linalg::pinv_solve(l, &rhs, PINV_CUTOFF)?;
    let back = linalg::mat_vec(l, &dz);
    let residual = back.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if residual > RANGE_TOL * linalg::norm_max(&rhs).max(1.0) {
        return Err(Error::Range { residual });
    }
    let mut dv = vec![0.0; n];
    for (i, d) in dv.iter_mut().enumerate() {
        if let Some(a) = net.v_index(i) {
            *d = dz[a];
        }
    }
    Ok((dz[..n].to_vec(), dv))
}

/// `dθ = Aᵀdδ`, `dVˡⁿ_i = dV_i/V_i` on load-voltage variables.
pub fn deltas_in_line_coords(
    net: &Network,
    op: &OperatingPoint,
    ddelta: &[f64],
    dv: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let dtheta = net.lines().iter().map(|l| ddelta[l.from] - ddelta[l.to]).collect();
    let dvln = (0..net.n())
        .filter(|&i| net.v_index(i).is_some())
        .map(|i| dv[i] / op.v[i])
        .collect();
    (dtheta, dvln)
}

/// `dλ/dr` for a unit step along `dp`.
pub fn dlambda_for(an: &Analysis, mode: usize, dp: &[f64]) -> Result<C64> {
    let report = an.report(mode)?;
    let (dd, dv) = flow_response(&an.net, &an.bundle.l, dp)?;
    let (dt, dvln) = deltas_in_line_coords(&an.net, &an.op, &dd, &dv);
    Ok(report.dlambda(&dt, &dvln))
}

/// Index of the mode in `fresh` that continues `an.modes[mode]`.
pub fn match_mode(an: &Analysis, mode: usize, fresh: &Analysis) -> Result<usize> {
    let old = an.mode(mode)?;
    let corr = |x: &[C64]| {
        let dot: C64 = old.x.iter().zip(x).map(|(a, b)| a.conj() * b).sum();
        dot.norm() / (linalg::norm2_c(&old.x) * linalg::norm2_c(x))
    };
    let mut scored: Vec<(usize, f64)> = fresh
        .modes
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_oscillatory() == old.is_oscillatory())
        .map(|(i, m)| (i, corr(&m.x)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    match scored.as_slice() {
        [] => Err(Error::Matching("no candidate modes after redispatch".into())),
        [(i, _)] => Ok(*i),
        [(i, c0), (_, c1), ..] if c0 - c1 >= MATCH_GAP => Ok(*i),
        [(_, c0), (_, c1), ..] => Err(Error::Matching(format!(
            "ambiguous correlation {c0:.4} vs {c1:.4}"
        ))),
    }
}

/// Re-solves power flow and eigenproblem after shifting generation by `dp`
/// and returns the tracked eigenvalue.
pub fn exact_lambda(an: &Analysis, mode: usize, dp: &[f64]) -> Result<C64> {
    let net = an.net.with_generation_shift(dp);
    let fresh = Analysis::from_initial(net, Some(&an.op)).map_err(|e| match e {
        Error::Convergence { .. } | Error::Singular(_) => Error::OracleUnavailable(e.to_string()),
        other => other,
    })?;
    let idx = match_mode(an, mode, &fresh)?;
    Ok(fresh.modes[idx].lambda)
}

#[derive(Debug)]
pub struct ModePrediction {
    pub r: f64,
    pub lambda_approx: C64,
    pub lambda_exact: Result<C64>,
}

impl ModePrediction {
    pub fn error(&self) -> Option<f64> {
        self.lambda_exact.as_ref().ok().map(|e| (e - self.lambda_approx).norm())
    }
}

pub fn predict_mode(an: &Analysis, mode: usize, plan: &RedispatchPlan, r: f64) -> Result<ModePrediction> {
    let dl = dlambda_for(an, mode, &plan.dp)?;
    Ok(predict_with(an, mode, plan, r, dl))
}

fn predict_with(an: &Analysis, mode: usize, plan: &RedispatchPlan, r: f64, dl: C64) -> ModePrediction {
    let base = an.modes[mode].lambda;
    let lambda_exact = if r == 0.0 { Ok(base) } else { exact_lambda(an, mode, &plan.scaled(r)) };
    ModePrediction {
        r,
        lambda_approx: base + dl * r,
        lambda_exact,
    }
}

/// One prediction per `r`, evaluated in parallel; order follows `r_values`.
pub fn sweep(an: &Analysis, mode: usize, plan: &RedispatchPlan, r_values: &[f64]) -> Result<Vec<ModePrediction>> {
    let dl = dlambda_for(an, mode, &plan.dp)?;
    Ok(r_values.par_iter().map(|&r| predict_with(an, mode, plan, r, dl)).collect())
}

pub const SWEEP_CSV_HEADER: &str = "r,sigma_exact,omega_exact,sigma_approx,omega_approx,zeta_exact,zeta_approx";

#[derive(Clone, Debug)]
pub struct PairRanking {
    /// 0-based generator raising output.
    pub up: usize,
    pub down: usize,
    pub dlambda: C64,
    pub dzeta: f64,
}

impl PairRanking {
    pub fn dsigma(&self) -> f64 {
        self.dlambda.re
    }

    pub fn domega(&self) -> f64 {
        self.dlambda.im
    }
}

/// `dζ/dr` from `ζ = −σ/|λ|`.
pub fn dzeta(lambda: C64, dl: C64) -> f64 {
    let (s, w) = (lambda.re, lambda.im);
    let r3 = lambda.norm().powi(3);
    (-w * w / r3) * dl.re + (s * w / r3) * dl.im
}

/// Every ordered generator pair, best damping-ratio improvement first.
pub fn rank_pairs(an: &Analysis, mode: usize) -> Result<Vec<PairRanking>> {
    let m = an.net.m();
    let report = an.report(mode)?;
    let lambda = an.modes[mode].lambda;
    let mut unit = Vec::with_capacity(m);
    for g in 0..m {
        // dλ is linear in dP; project each generator's unit injection onto
        // the balanced subspace by pairing it with generator 0.
        if g == 0 {
            unit.push(C64::from(0.0));
            continue;
        }
        let plan = RedispatchPlan::pair(&an.net, g, 0)?;
        let (dd, dv) = flow_response(&an.net, &an.bundle.l, &plan.dp)?;
        let (dt, dvln) = deltas_in_line_coords(&an.net, &an.op, &dd, &dv);
        unit.push(report.dlambda(&dt, &dvln));
    }
    let mut out = Vec::new();
    for up in 0..m {
        for down in 0..m {
            if up == down {
                continue;
            }
            let dl = unit[up] - unit[down];
            out.push(PairRanking {
                up,
                down,
                dlambda: dl,
                dzeta: dzeta(lambda, dl),
            });
        }
    }
    out.sort_by(|a, b| b.dzeta.total_cmp(&a.dzeta).then((a.up, a.down).cmp(&(b.up, b.down))));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Analysis {
        let net = Network::parse(
            "bus 1 G V=1.02 Pg=0.5 H=3 D=1\nbus 2 G V=1 Pg=0.3 H=4 D=1.5\nbus 3 G V=1.01 Pg=0.2 H=5 D=1\n\
             bus 4 L Pl=0.6 Ql=0.1\nbus 5 L Pl=0.4 Ql=0.05\n\
             line a 1 4 b=6\nline b 2 4 b=5\nline c 4 5 b=8\nline d 3 5 b=4\n",
        )
        .unwrap();
        Analysis::new(net).unwrap()
    }

    #[test]
    fn zero_plan_gives_zero_response() {
        let an = sample();
        let (dd, dv) = flow_response(&an.net, &an.bundle.l, &vec![0.0; an.net.n()]).unwrap();
        assert!(dd.iter().chain(&dv).all(|&x| x == 0.0));
    }

    #[test]
    fn unbalanced_plans_are_rejected() {
        let an = sample();
        assert!(RedispatchPlan::new(&an.net, &[1.0, 0.0, 0.0], "x").is_err());
        let mut dp = vec![0.0; an.net.n()];
        dp[0] = 1.0;
        assert!(matches!(flow_response(&an.net, &an.bundle.l, &dp), Err(Error::Validation(_))));
    }

    #[test]
    fn uniform_shift_leaves_line_coordinates_unchanged() {
        let an = sample();
        let (dt, dvln) = deltas_in_line_coords(&an.net, &an.op, &[0.3; 5], &[0.0; 5]);
        assert!(dt.iter().chain(&dvln).all(|&x| x == 0.0));
    }

    #[test]
    fn ranking_is_antisymmetric_and_sorted() {
        let an = sample();
        let mode = an.em_mode(1).unwrap();
        let ranks = rank_pairs(&an, mode).unwrap();
        assert_eq!(ranks.len(), 6);
        assert!(ranks.windows(2).all(|w| w[0].dzeta >= w[1].dzeta));
        for r in &ranks {
            let rev = ranks.iter().find(|o| o.up == r.down && o.down == r.up).unwrap();
            assert!((r.dlambda + rev.dlambda).norm() <= 1e-12 * r.dlambda.norm().max(1.0));
            let direct = dlambda_for(&an, mode, &RedispatchPlan::pair(&an.net, r.up, r.down).unwrap().dp).unwrap();
            assert!((direct - r.dlambda).norm() <= 1e-10 * direct.norm().max(1.0));
        }
    }

    #[test]
    fn zero_step_prediction_is_identity() {
        let an = sample();
        let mode = an.em_mode(1).unwrap();
        let plan = RedispatchPlan::pair(&an.net, 0, 2).unwrap();
        let p = predict_mode(&an, mode, &plan, 0.0).unwrap();
        assert_eq!(p.lambda_approx, an.modes[mode].lambda);
        assert_eq!(p.error(), Some(0.0));
    }
}
