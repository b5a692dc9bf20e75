use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use oscdamp::cases::fixture_grid;
use oscdamp::dispatch::{
    deltas_in_line_coords, dlambda_for, dzeta, exact_lambda, flow_response, predict_mode, rank_pairs, sweep, RedispatchPlan,
};
use oscdamp::linalg::{mat_vec, solve, C64};
use oscdamp::oracle::{random_network, random_plan, richardson_sensitivity};
use oscdamp::{Analysis, Error, Network};

fn fixture(name: &str) -> Analysis {
    Analysis::new(Network::parse(fixture_grid(name).unwrap()).unwrap()).unwrap()
}

/// Least-squares `err ≈ C r²` through the origin; returns `(C, R²)`.
fn quadratic_fit(r: &[f64], err: &[f64]) -> (f64, f64) {
    let c = r.iter().zip(err).map(|(r, e)| r * r * e).sum::<f64>() / r.iter().map(|r| r.powi(4)).sum::<f64>();
    let mean = err.iter().sum::<f64>() / err.len() as f64;
    let ss_res: f64 = r.iter().zip(err).map(|(r, e)| (e - c * r * r).powi(2)).sum();
    let ss_tot: f64 = err.iter().map(|e| (e - mean).powi(2)).sum();
    (c, 1.0 - ss_res / ss_tot)
}

#[test]
fn plans_must_be_balanced() {
    let net = random_network(2);
    let mut g = vec![0.0; net.m()];
    g[0] = 1.0;
    assert!(matches!(RedispatchPlan::new(&net, &g, "x"), Err(Error::Validation(_))));
    assert!(matches!(RedispatchPlan::new(&net, &[1.0], "x"), Err(Error::Validation(_))));
    assert!(matches!(RedispatchPlan::pair(&net, 0, 0), Err(Error::Usage(_))));
    assert!(matches!(RedispatchPlan::pair(&net, 0, net.m()), Err(Error::Usage(_))));
    let an = Analysis::new(net).unwrap();
    let mut bad = vec![0.0; an.net.n()];
    bad[an.net.n() - 1] = 1.0;
    bad[0] = -1.0;
    assert!(matches!(flow_response(&an.net, &an.bundle.l, &bad), Err(Error::Validation(_))));
}

#[test]
fn pair_plan_labels() {
    let an = fixture("six_bus");
    let plan = RedispatchPlan::pair(&an.net, 0, 2).unwrap();
    assert_eq!(plan.description, "1->3");
    assert_eq!(plan.dp, [1.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
    assert_eq!(plan.scaled(0.5)[0], 0.5);
}

#[test]
fn sensitivity_is_linear_in_the_plan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..15 {
        let an = Analysis::new(random_network(seed)).unwrap();
        let (a, b) = (random_plan(&an.net, &mut rng), random_plan(&an.net, &mut rng));
        let sum: Vec<f64> = a.dp.iter().zip(&b.dp).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        for i in 0..an.modes.len() {
            let (la, lb) = (dlambda_for(&an, i, &a.dp).unwrap(), dlambda_for(&an, i, &b.dp).unwrap());
            let ls = dlambda_for(&an, i, &sum).unwrap();
            assert!((ls - (la * 2.0 - lb * 0.5)).norm() < 1e-10 * (la.norm() + lb.norm()).max(1e-12));
        }
    }
}

#[test]
fn reversing_a_pair_flips_the_sign() {
    let an = fixture("ten_bus");
    for &i in &an.electromechanical() {
        for (u, d) in [(0, 2), (1, 3), (0, 1)] {
            let f = dlambda_for(&an, i, &RedispatchPlan::pair(&an.net, u, d).unwrap().dp).unwrap();
            let b = dlambda_for(&an, i, &RedispatchPlan::pair(&an.net, d, u).unwrap().dp).unwrap();
            assert!((f + b).norm() < 1e-12 * f.norm());
        }
    }
}

#[test]
fn formula_agrees_with_extrapolated_oracle() {
    let an = fixture("six_bus");
    for &i in &an.electromechanical() {
        let plan = RedispatchPlan::pair(&an.net, 0, 2).unwrap();
        let f = dlambda_for(&an, i, &plan.dp).unwrap();
        let o = richardson_sensitivity(&an, i, &plan, 1e-3).unwrap();
        assert!((f - o).norm() < 1e-8 * f.norm().max(1.0), "{f} vs {o}");
    }
}

#[test]
fn remainder_is_second_order() {
    let r: Vec<f64> = (0..9).map(|k| 10f64.powf(-4.0 + 2.0 * k as f64 / 8.0)).collect();
    for name in ["three_bus_s9", "six_bus", "ten_bus"] {
        let an = fixture(name);
        let mode = an.em_mode(1).unwrap();
        let plan = RedispatchPlan::pair(&an.net, 0, an.net.m() - 1).unwrap();
        let preds = sweep(&an, mode, &plan, &r).unwrap();
        let err: Vec<f64> = preds.iter().map(|p| p.error().unwrap()).collect();
        let (c, r2) = quadratic_fit(&r, &err);
        assert!(r2 > 0.99, "{name}: C = {c:e}, R² = {r2}");
        assert!(c > 0.0);
    }
}

#[test]
fn sweep_matches_single_predictions() {
    let an = fixture("six_bus");
    let mode = an.em_mode(2).unwrap();
    let plan = RedispatchPlan::pair(&an.net, 0, 2).unwrap();
    let rs = [0.0, 0.003, -0.009, 0.05];
    let all = sweep(&an, mode, &plan, &rs).unwrap();
    assert_eq!(all.iter().map(|p| p.r).collect::<Vec<_>>(), rs);
    assert_eq!(all[0].lambda_exact.as_ref().unwrap(), &an.modes[mode].lambda);
    for p in &all {
        let one = predict_mode(&an, mode, &plan, p.r).unwrap();
        assert_eq!(one.lambda_approx, p.lambda_approx);
        assert_eq!(one.lambda_exact.unwrap(), *p.lambda_exact.as_ref().unwrap());
    }
}

#[test]
fn exact_tracking_follows_the_mode() {
    let an = fixture("ten_bus");
    for &i in &an.electromechanical() {
        let plan = RedispatchPlan::pair(&an.net, 0, 2).unwrap();
        let l = exact_lambda(&an, i, &plan.scaled(1e-3)).unwrap();
        assert!((l - an.modes[i].lambda).norm() < 1e-2);
    }
}

#[test]
fn unreachable_operating_point_is_an_oracle_error() {
    let an = fixture("three_bus_s9");
    let plan = RedispatchPlan::pair(&an.net, 0, 2).unwrap();
    // Five units more through b = 5 lines has no solution.
    match exact_lambda(&an, 0, &plan.scaled(5.0)) {
        Err(Error::OracleUnavailable(_)) => {}
        other => panic!("expected oracle error, got {other:?}"),
    }
}

#[test]
fn pair_ranking_is_consistent() {
    let an = fixture("six_bus");
    let mode = an.em_mode(2).unwrap();
    let ranks = rank_pairs(&an, mode).unwrap();
    assert_eq!(ranks.len(), 6);
    for w in ranks.windows(2) {
        assert!(w[0].dzeta >= w[1].dzeta);
    }
    let lambda = an.modes[mode].lambda;
    for p in &ranks {
        let plan = RedispatchPlan::pair(&an.net, p.up, p.down).unwrap();
        let dl = dlambda_for(&an, mode, &plan.dp).unwrap();
        assert!((dl - p.dlambda).norm() < 1e-12 * dl.norm());
        assert!((dzeta(lambda, dl) - p.dzeta).abs() < 1e-15);
        let rev = ranks.iter().find(|q| q.up == p.down && q.down == p.up).unwrap();
        assert!((rev.dzeta + p.dzeta).abs() < 1e-15);
    }
}

#[test]
fn damping_ratio_derivative_matches_difference() {
    let lambda = C64::new(-0.17, 10.1);
    let dl = C64::new(0.3, -0.8);
    let zeta = |l: C64| -l.re / l.norm();
    let h = 1e-6;
    let fd = (zeta(lambda + dl * h) - zeta(lambda - dl * h)) / (2.0 * h);
    assert!((fd - dzeta(lambda, dl)).abs() < 1e-9);
}

fn full_dz(net: &Network, dd: &[f64], dv: &[f64]) -> Vec<f64> {
    let mut z = dd.to_vec();
    z.extend((0..net.n()).filter(|&i| net.v_index(i).is_some()).map(|i| dv[i]));
    z
}

#[test]
fn zero_redispatch_moves_nothing() {
    let an = fixture("six_bus");
    let (dd, dv) = flow_response(&an.net, &an.bundle.l, &vec![0.0; an.net.n()]).unwrap();
    assert!(dd.iter().chain(&dv).all(|&x| x == 0.0));
}

#[test]
fn flow_response_solves_the_singular_system() {
    for seed in 0..10 {
        let an = Analysis::new(random_network(seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = random_plan(&an.net, &mut rng);
        let (dd, dv) = flow_response(&an.net, &an.bundle.l, &plan.dp).unwrap();
        let dz = full_dz(&an.net, &dd, &dv);
        let back = mat_vec(&an.bundle.l, &dz);
        for (a, i) in back.iter().zip(0..) {
            let rhs = if i < an.net.n() { plan.dp[i] } else { 0.0 };
            assert!((a - rhs).abs() < 1e-10, "seed {seed} row {i}: {a} vs {rhs}");
        }
    }
}

// Grounding bus 1 removes the rotational null space; the pseudo-inverse
// answer must differ from that solve by a uniform angle shift only.
#[test]
fn flow_response_matches_pinned_reference() {
    for name in ["six_bus", "ten_bus", "three_bus_s9"] {
        let an = fixture(name);
        let plan = RedispatchPlan::pair(&an.net, 1, 0).unwrap();
        let (dd, dv) = flow_response(&an.net, &an.bundle.l, &plan.dp).unwrap();
        let dz = full_dz(&an.net, &dd, &dv);

        let l = &an.bundle.l;
        let dim = l.nrows();
        let reduced = Mat::from_fn(dim - 1, dim - 1, |r, c| l[(r + 1, c + 1)]);
        let mut rhs = vec![0.0; dim - 1];
        rhs[..an.net.n() - 1].copy_from_slice(&plan.dp[1..]);
        let pinned = solve(&reduced, &rhs).unwrap();

        let shift = dz[0];
        for a in 1..dim {
            let moved = if a < an.net.n() { dz[a] - shift } else { dz[a] };
            assert!((moved - pinned[a - 1]).abs() < 1e-10, "{name} state {a}: {moved} vs {}", pinned[a - 1]);
        }
    }
}

#[test]
fn line_angles_ignore_uniform_shift() {
    let an = fixture("ten_bus");
    let plan = RedispatchPlan::pair(&an.net, 2, 0).unwrap();
    let (dd, dv) = flow_response(&an.net, &an.bundle.l, &plan.dp).unwrap();
    let shifted: Vec<f64> = dd.iter().map(|d| d + 0.37).collect();
    let (t0, n0) = deltas_in_line_coords(&an.net, &an.op, &dd, &dv);
    let (t1, n1) = deltas_in_line_coords(&an.net, &an.op, &shifted, &dv);
    assert_eq!(n0, n1);
    for (a, b) in t0.iter().zip(&t1) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn top_ranked_pair_improves_damping_on_resolve() {
    for name in ["six_bus", "ten_bus"] {
        let an = fixture(name);
        for &mode in &an.electromechanical() {
            let best = &rank_pairs(&an, mode).unwrap()[0];
            assert!(best.dzeta > 0.0);
            let plan = RedispatchPlan::pair(&an.net, best.up, best.down).unwrap();
            let r = 1e-3;
            let before = an.modes[mode].lambda;
            let after = exact_lambda(&an, mode, &plan.scaled(r)).unwrap();
            let zeta = |l: C64| -l.re / l.norm();
            let change = zeta(after) - zeta(before);
            assert!(change > 0.0, "{name} mode {mode}: ζ change {change:e}");
            assert!((change / r - best.dzeta).abs() < 0.05 * best.dzeta, "{name} mode {mode}");
        }
    }
}
