//! Brute-force oracles: central differences of re-solved eigenvalues and of
//! the energy function, and a seeded generator of random test networks.

use faer::Mat;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::Analysis;
use crate::dispatch::{exact_lambda, RedispatchPlan};
use crate::error::{Error, Result};
use crate::laplacian::hessian_at;
use crate::linalg::C64;
use crate::network::{Bus, LineSpec, Model, Network, DEFAULT_OMEGA0};
use crate::powerflow::{gradient, line_states, potential_energy, solve_power_flow};

/// `(λ(+h) − λ(−h)) / 2h` along `plan`, with mode tracking by eigenvector.
pub fn finite_difference_sensitivity(an: &Analysis, mode: usize, plan: &RedispatchPlan, step: f64) -> Result<C64> {
    if plan.is_zero() {
        return Err(Error::Usage("finite-difference oracle needs a nonzero redispatch".into()));
    }
    if !(step > 0.0) {
        return Err(Error::Usage("finite-difference step must be positive".into()));
    }
    let plus = exact_lambda(an, mode, &plan.scaled(step))?;
    let minus = exact_lambda(an, mode, &plan.scaled(-step))?;
    Ok((plus - minus) / (2.0 * step))
}

/// Richardson-extrapolated slope from steps `h` and `h/2`.
pub fn richardson_sensitivity(an: &Analysis, mode: usize, plan: &RedispatchPlan, step: f64) -> Result<C64> {
    let coarse = finite_difference_sensitivity(an, mode, plan, step)?;
    let fine = finite_difference_sensitivity(an, mode, plan, step / 2.0)?;
    Ok((fine * 4.0 - coarse) / 3.0)
}

fn split_state(net: &Network, delta: &[f64], v: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d = delta.to_vec();
    let mut vv = v.to_vec();
    d.copy_from_slice(&z[..net.n()]);
    for i in 0..net.n() {
        if let Some(a) = net.v_index(i) {
            vv[i] = z[a];
        }
    }
    (d, vv)
}

fn pack_state(net: &Network, delta: &[f64], v: &[f64]) -> Vec<f64> {
    let mut z = delta.to_vec();
    z.extend((0..net.n()).filter(|&i| net.v_index(i).is_some()).map(|i| v[i]));
    z
}

/// Central-difference gradient of the energy function.
pub fn fd_gradient(net: &Network, delta: &[f64], v: &[f64], h: f64) -> Result<Vec<f64>> {
    let z = pack_state(net, delta, v);
    let mut out = Vec::with_capacity(z.len());
    for a in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[a] += h;
        zm[a] -= h;
        let (dp, vp) = split_state(net, delta, v, &zp);
        let (dm, vm) = split_state(net, delta, v, &zm);
        out.push((potential_energy(net, &dp, &vp)? - potential_energy(net, &dm, &vm)?) / (2.0 * h));
    }
    Ok(out)
}

/// Central-difference Jacobian of the analytic gradient.
pub fn fd_hessian(net: &Network, delta: &[f64], v: &[f64], h: f64) -> Mat<f64> {
    let z = pack_state(net, delta, v);
    let dim = z.len();
    let mut out = Mat::zeros(dim, dim);
    for c in 0..dim {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[c] += h;
        zm[c] -= h;
        let (dp, vp) = split_state(net, delta, v, &zp);
        let (dm, vm) = split_state(net, delta, v, &zm);
        let gp = gradient(net, &dp, &vp);
        let gm = gradient(net, &dm, &vm);
        for r in 0..dim {
            out[(r, c)] = (gp[r] - gm[r]) / (2.0 * h);
        }
    }
    out
}

/// `xᵀ (L(z + ε dz) − L(z − ε dz)) x / 2ε`, the directional derivative of
/// the Hessian quadratic form.
pub fn fd_hessian_form(net: &Network, delta: &[f64], v: &[f64], x: &[C64], dz: &[f64], eps: f64) -> C64 {
    let z = pack_state(net, delta, v);
    let form = |sign: f64| {
        let zs: Vec<f64> = z.iter().zip(dz).map(|(a, b)| a + sign * eps * b).collect();
        let (d, vv) = split_state(net, delta, v, &zs);
        crate::linalg::bilinear(x, &hessian_at(net, &d, &vv), x)
    };
    (form(1.0) - form(-1.0)) / (2.0 * eps)
}

/// Seeded random test network: a random tree over the load buses, each
/// generator attached to a load, and up to two extra non-generator-pair
/// edges. Loads are scaled down until every line angle is below 0.5 rad.
pub fn random_network(seed: u64) -> Network {
    random_network_with(seed, Model::Voltage)
}

pub fn random_network_with(seed: u64, model: Model) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=8usize);
    let m = rng.gen_range(2..n);
    let n_load = n - m;

    let gen_labels: Vec<String> = (1..=m).map(|i| format!("G{i}")).collect();
    let load_labels: Vec<String> = (1..=n_load).map(|i| format!("L{i}")).collect();
    let mut edges: Vec<(String, String)> = Vec::new();
    for i in 1..n_load {
        let j = rng.gen_range(0..i);
        edges.push((load_labels[j].clone(), load_labels[i].clone()));
    }
    for g in &gen_labels {
        let j = rng.gen_range(0..n_load);
        edges.push((g.clone(), load_labels[j].clone()));
    }
    let all: Vec<&String> = gen_labels.iter().chain(&load_labels).collect();
    let extra = rng.gen_range(0..=2);
    let mut tries = 0;
    let mut added = 0;
    while added < extra && tries < 50 {
        tries += 1;
        let a = *all.choose(&mut rng).unwrap();
        let b = *all.choose(&mut rng).unwrap();
        let gen_pair = a.starts_with('G') && b.starts_with('G');
        let dup = edges.iter().any(|(x, y)| (x == a && y == b) || (x == b && y == a));
        if a == b || gen_pair || dup {
            continue;
        }
        edges.push((a.clone(), b.clone()));
        added += 1;
    }
    let susceptances: Vec<f64> = edges.iter().map(|_| rng.gen_range(1.0..10.0)).collect();

    let mut pl: Vec<f64> = (0..n_load).map(|_| rng.gen_range(0.05..0.3)).collect();
    let ql: Vec<f64> = (0..n_load).map(|_| rng.gen_range(0.0..0.1)).collect();
    let load_d: Vec<f64> = (0..n_load)
        .map(|_| if rng.gen_bool(0.3) { rng.gen_range(0.5..2.0) } else { 0.0 })
        .collect();
    let weights: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..1.0)).collect();
    let gens: Vec<(f64, f64, f64)> = (0..m)
        .map(|_| (rng.gen_range(0.98..1.05), rng.gen_range(2.0..8.0), rng.gen_range(0.5..2.0)))
        .collect();

    loop {
        let total: f64 = pl.iter().sum();
        let wsum: f64 = weights.iter().sum();
        let mut pg: Vec<f64> = weights.iter().map(|w| total * w / wsum).collect();
        // Make the balance exact in floating point.
        let drift = total - pg.iter().sum::<f64>();
        pg[0] += drift;
        let mut buses = Vec::with_capacity(n);
        for (i, label) in gen_labels.iter().enumerate() {
            let (v, h, d) = gens[i];
            buses.push(Bus::generator(label, v, pg[i], h, d));
        }
        for (i, label) in load_labels.iter().enumerate() {
            buses.push(Bus::load(label, pl[i], ql[i], load_d[i]));
        }
        let lines = edges
            .iter()
            .zip(&susceptances)
            .enumerate()
            .map(|(k, ((a, b), &bk))| LineSpec::new(&(k + 1).to_string(), a, b, bk))
            .collect();
        let net = Network::new(buses, lines, DEFAULT_OMEGA0, model).expect("random network is valid");
        if let Ok(op) = solve_power_flow(&net, None) {
            let ls = line_states(&net, &op);
            if ls.theta.iter().all(|t| t.abs() < 0.5) {
                return net;
            }
        }
        pl.iter_mut().for_each(|p| *p *= 0.5);
    }
}

/// Random balanced redispatch with unit max-norm.
pub fn random_plan(net: &Network, rng: &mut impl Rng) -> RedispatchPlan {
    let m = net.m();
    let mut g: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mean = g.iter().sum::<f64>() / m as f64;
    g.iter_mut().for_each(|x| *x -= mean);
    let big = crate::linalg::norm_max(&g).max(1e-3);
    g.iter_mut().for_each(|x| *x /= big);
    let drift: f64 = g.iter().sum();
    g[0] -= drift;
    RedispatchPlan::new(net, &g, "random").expect("balanced by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::dlambda_for;

    #[test]
    fn random_networks_are_reproducible() {
        assert_eq!(random_network(7), random_network(7));
        for seed in 0..20 {
            let net = random_network(seed);
            assert!((3..=8).contains(&net.n()));
            assert!(net.m() >= 2 && net.n() > net.m());
        }
    }

    #[test]
    fn zero_plan_is_rejected() {
        let an = Analysis::new(random_network(1)).unwrap();
        let plan = RedispatchPlan::new(&an.net, &vec![0.0; an.net.m()], "none").unwrap();
        assert!(matches!(
            finite_difference_sensitivity(&an, 0, &plan, 1e-5),
            Err(Error::Usage(_))
        ));
    }

    // Two identical machines on one line: the oracle must agree with the
    // closed-form slope and with itself under step halving.
    #[test]
    fn toy_oracle_agrees_with_formula() {
        let net = Network::parse(
            "system model=const_v\nbus 1 G V=1 Pg=0.2 H=3 D=1\nbus 2 G V=1 Pg=-0.2 H=3 D=1\nline a 1 2 b=2\n",
        )
        .unwrap();
        let an = Analysis::new(net).unwrap();
        let plan = RedispatchPlan::pair(&an.net, 0, 1).unwrap();
        let fd = finite_difference_sensitivity(&an, 0, &plan, 1e-4).unwrap();
        let half = finite_difference_sensitivity(&an, 0, &plan, 5e-5).unwrap();
        let formula = dlambda_for(&an, 0, &plan.dp).unwrap();
        assert!((fd - formula).norm() < 1e-8 * formula.norm().max(1.0));
        assert!((fd - half).norm() < 1e-8);
    }
}
