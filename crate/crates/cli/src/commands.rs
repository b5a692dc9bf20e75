use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use faer::Mat;
use num_complex::Complex64 as C64;

use oscdamp::cases::{fixture_names, reproduce_case};
use oscdamp::dispatch::{dlambda_for, dzeta, rank_pairs, sweep, RedispatchPlan, SWEEP_CSV_HEADER};
use oscdamp::modal::{extended_jacobian, mode_summary};
use oscdamp::network::{BusKind, Model};
use oscdamp::numfmt::{complex, num};
use oscdamp::oracle::{finite_difference_sensitivity, random_network};
use oscdamp::sensitivity::const_v_coefficients;
use oscdamp::{Analysis, Network};

use crate::table::{write_csv, Table};
use crate::{CliError, Command, GridArgs, ModeSelector};

type Res<T = ()> = Result<T, CliError>;

/// Agreement demanded between formula and central-difference oracle.
const ORACLE_TOL: f64 = 1e-6;
const ORACLE_STEP: f64 = 1e-5;

pub fn run(cmd: Command) -> Res {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cmd {
        Command::Pf { grid, csv, dump_matrices } => {
            let an = analyse(&grid)?;
            if let Some(dir) = &dump_matrices {
                dump(&an, dir)?;
            }
            pf(&an, csv.as_deref(), &mut out)
        }
        Command::Modes { grid, csv, dump_matrices } => {
            let an = analyse(&grid)?;
            if let Some(dir) = &dump_matrices {
                dump(&an, dir)?;
            }
            modes(&an, csv.as_deref(), &mut out)
        }
        Command::Sens { grid, select, pair, csv } => {
            let an = analyse(&grid)?;
            let mode = select_mode(&an, &select)?;
            let plan = pair.as_deref().map(|p| parse_pair(&an.net, p)).transpose()?;
            sens(&an, mode, plan.as_ref(), csv.as_deref(), &mut out)
        }
        Command::Sweep { grid, select, pair, r, csv } => {
            let an = analyse(&grid)?;
            let mode = select_mode(&an, &select)?;
            let plan = parse_pair(&an.net, &pair)?;
            let r = parse_r_list(&r)?;
            sweep_cmd(&an, mode, &plan, &r, csv.as_deref(), &mut out)
        }
        Command::Rank { grid, select, csv } => {
            let an = analyse(&grid)?;
            let mode = select_mode(&an, &select)?;
            rank(&an, mode, csv.as_deref(), &mut out)
        }
        Command::Verify { seed } => verify(seed, &mut out),
    }
}

fn analyse(args: &GridArgs) -> Res<Analysis> {
    let text = fs::read_to_string(&args.grid)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.grid.display())))?;
    let net = Network::parse(&text)?;
    let an = Analysis::new(net)?;
    if args.const_v && an.net.model() != Model::ConstV {
        let frozen = an.net.frozen_voltage(&an.op.v);
        return Ok(Analysis::new(frozen)?);
    }
    Ok(an)
}

fn select_mode(an: &Analysis, sel: &ModeSelector) -> Res<usize> {
    match (sel.mode, sel.mode_hz) {
        (Some(0), _) => Err(CliError::Usage("mode numbers start at 1".into())),
        (Some(k), _) => {
            an.mode(k - 1)?;
            Ok(k - 1)
        }
        (None, Some((lo, hi))) => Ok(an.mode_in_band(lo, hi)?),
        (None, None) => Err(CliError::Usage("select a mode with --mode or --mode-hz".into())),
    }
}

fn parse_pair(net: &Network, s: &str) -> Res<RedispatchPlan> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| CliError::Usage(format!("pair `{s}` is not GA:GB")))?;
    let gen = |label: &str| {
        net.bus_index(label)
            .filter(|&i| i < net.m())
            .ok_or_else(|| CliError::Usage(format!("`{label}` is not a generator")))
    };
    Ok(RedispatchPlan::pair(net, gen(a)?, gen(b)?)?)
}

/// `a,b,c` or `start:stop:step` (inclusive of `stop` up to rounding).
fn parse_r_list(s: &str) -> Res<Vec<f64>> {
    let bad = |t: &str| CliError::Usage(format!("bad r value `{t}`"));
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|_| bad(t));
    let parts: Vec<&str> = s.split(':').collect();
    let values = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (parse(start)?, parse(stop)?, parse(step)?);
            if !(step > 0.0) || stop < start {
                return Err(CliError::Usage(format!("empty range `{s}`")));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            // Snap rounding residue so a range through zero really hits 0.
            (0..=n)
                .map(|i| start + i as f64 * step)
                .map(|r| if r.abs() < 1e-9 * step { 0.0 } else { r })
                .collect()
        }
        [_] => s.split(',').map(parse).collect::<Res<Vec<f64>>>()?,
        _ => return Err(bad(s)),
    };
    if values.is_empty() || values.iter().any(|r| !r.is_finite()) {
        return Err(bad(s));
    }
    Ok(values)
}

fn line_ends(net: &Network, k: usize) -> (String, String) {
    let l = &net.lines()[k];
    (net.buses()[l.from].label.clone(), net.buses()[l.to].label.clone())
}

fn emit(out: &mut impl Write, table: &Table) -> Res {
    table.print(out)?;
    Ok(())
}

fn pf(an: &Analysis, csv: Option<&Path>, out: &mut impl Write) -> Res {
    let net = &an.net;
    writeln!(
        out,
        "equilibrium: {} buses, {} lines, model {}, residual {}",
        net.n(),
        net.n_lines(),
        net.model(),
        num(an.op.residual_norm)
    )?;
    let header = ["bus", "kind", "delta_rad", "v"];
    let rows: Vec<Vec<String>> = net
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let kind = if b.kind == BusKind::Generator { "G" } else { "L" };
            vec![b.label.clone(), kind.into(), num(an.op.delta[i]), num(an.op.v[i])]
        })
        .collect();
    let mut t = Table::new(&header);
    rows.iter().for_each(|r| t.push(r.clone()));
    emit(out, &t)?;
    writeln!(out)?;

    let lheader = ["line", "from", "to", "theta_rad", "nu", "p", "q"];
    let ls = &an.lines;
    let lrows: Vec<Vec<String>> = (0..net.n_lines())
        .map(|k| {
            let (f, to) = line_ends(net, k);
            vec![
                net.lines()[k].label.clone(),
                f,
                to,
                num(ls.theta[k]),
                num(ls.nu[k]),
                num(ls.p[k]),
                num(ls.q[k]),
            ]
        })
        .collect();
    let mut lt = Table::new(&lheader);
    lrows.iter().for_each(|r| lt.push(r.clone()));
    emit(out, &lt)?;

    if let Some(path) = csv {
        write_csv(path, &header, &rows).map_err(CliError::Usage)?;
        write_csv(&lines_path(path), &lheader, &lrows).map_err(CliError::Usage)?;
    }
    Ok(())
}

fn lines_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.lines.csv"))
}

fn modes(an: &Analysis, csv: Option<&Path>, out: &mut impl Write) -> Res {
    writeln!(out, "{} finite modes, {} electromechanical", an.modes.len(), an.electromechanical().len())?;
    let header = ["mode", "sigma", "omega", "freq_hz", "zeta_pct", "em", "profile"];
    let rows: Vec<Vec<String>> = an
        .modes
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let (f, z) = mode_summary(m.lambda);
            let mut em = if m.electromechanical { "yes" } else { "no" }.to_string();
            if m.resonance_warning {
                em.push('*');
            }
            vec![
                (i + 1).to_string(),
                num(m.lambda.re),
                num(m.lambda.im),
                num(f),
                num(z),
                em,
                m.swing_profile.to_string(),
            ]
        })
        .collect();
    let mut t = Table::new(&header);
    rows.iter().for_each(|r| t.push(r.clone()));
    emit(out, &t)?;
    if an.modes.iter().any(|m| m.resonance_warning) {
        writeln!(out, "* another eigenvalue lies close to this one")?;
    }
    if let Some(path) = csv {
        write_csv(path, &header, &rows).map_err(CliError::Usage)?;
    }
    Ok(())
}

fn sens(an: &Analysis, mode: usize, plan: Option<&RedispatchPlan>, csv: Option<&Path>, out: &mut impl Write) -> Res {
    let net = &an.net;
    let report = an.report(mode)?;
    let m = an.mode(mode)?;
    writeln!(out, "mode {}: lambda = {}, alpha = {}", mode + 1, complex(m.lambda), complex(report.alpha))?;
    let scale = |c: C64| num((c / report.alpha).norm());
    let cv = (net.model() == Model::ConstV)
        .then(|| const_v_coefficients(net, &an.lines, &an.dm, m))
        .transpose()?;

    let mut header = vec!["line", "from", "to", "coeff_re", "coeff_im", "abs_over_alpha"];
    if cv.is_some() {
        header.extend(["a_r", "a_i"]);
    }
    let mut t = Table::new(&header);
    let mut csv_rows = Vec::new();
    for (k, c) in report.theta_coeff.iter().enumerate() {
        let (f, to) = line_ends(net, k);
        let label = net.lines()[k].label.clone();
        let mut row = vec![label.clone(), f, to, num(c.re), num(c.im), scale(*c)];
        let (mut ar, mut ai) = (String::new(), String::new());
        if let Some(cv) = &cv {
            ar = num(cv.a_r[k]);
            ai = num(cv.a_i[k]);
            row.extend([ar.clone(), ai.clone()]);
        }
        t.push(row);
        csv_rows.push(vec!["line".into(), label, num(c.re), num(c.im), scale(*c), ar, ai]);
    }
    emit(out, &t)?;

    if !report.vln_coeff.is_empty() {
        writeln!(out)?;
        let mut bt = Table::new(&["bus", "coeff_re", "coeff_im", "abs_over_alpha"]);
        for (i, c) in report.vln_coeff.iter().enumerate() {
            let label = net.buses()[net.m() + i].label.clone();
            bt.push(vec![label.clone(), num(c.re), num(c.im), scale(*c)]);
            csv_rows.push(vec!["bus".into(), label, num(c.re), num(c.im), scale(*c), String::new(), String::new()]);
        }
        emit(out, &bt)?;
    }

    if let Some(plan) = plan {
        let dl = dlambda_for(an, mode, &plan.dp)?;
        writeln!(out)?;
        writeln!(
            out,
            "redispatch {}: dlambda/dr = {}, dzeta/dr = {} %",
            plan.description,
            complex(dl),
            num(100.0 * dzeta(m.lambda, dl))
        )?;
    }
    if let Some(path) = csv {
        let header = ["kind", "label", "coeff_re", "coeff_im", "abs_over_alpha", "a_r", "a_i"];
        write_csv(path, &header, &csv_rows).map_err(CliError::Usage)?;
    }
    Ok(())
}

fn sweep_cmd(an: &Analysis, mode: usize, plan: &RedispatchPlan, r: &[f64], csv: Option<&Path>, out: &mut impl Write) -> Res {
    let preds = sweep(an, mode, plan, r)?;
    writeln!(out, "mode {} under redispatch {}", mode + 1, plan.description)?;
    let mut t = Table::new(&["r", "sigma_exact", "omega_exact", "sigma_approx", "omega_approx", "zeta_exact", "zeta_approx", "error"]);
    let mut rows = Vec::new();
    let mut unavailable = 0;
    for p in &preds {
        let (_, za) = mode_summary(p.lambda_approx);
        let exact = match &p.lambda_exact {
            Ok(l) => {
                let (_, ze) = mode_summary(*l);
                [num(l.re), num(l.im), num(ze)]
            }
            Err(_) => {
                unavailable += 1;
                [String::new(), String::new(), String::new()]
            }
        };
        let row = vec![
            num(p.r),
            exact[0].clone(),
            exact[1].clone(),
            num(p.lambda_approx.re),
            num(p.lambda_approx.im),
            exact[2].clone(),
            num(za),
        ];
        let mut shown: Vec<String> = row.iter().map(|c| if c.is_empty() { "n/a".into() } else { c.clone() }).collect();
        shown.push(p.error().map(num).unwrap_or_else(|| "n/a".into()));
        t.push(shown);
        rows.push(row);
    }
    emit(out, &t)?;
    if unavailable > 0 {
        writeln!(out, "{unavailable} exact value(s) unavailable (no equilibrium or mode lost)")?;
    }
    if let Some(path) = csv {
        let header: Vec<&str> = SWEEP_CSV_HEADER.split(',').collect();
        write_csv(path, &header, &rows).map_err(CliError::Usage)?;
    }
    Ok(())
}

fn rank(an: &Analysis, mode: usize, csv: Option<&Path>, out: &mut impl Write) -> Res {
    let ranked = rank_pairs(an, mode)?;
    writeln!(out, "mode {}: lambda = {}", mode + 1, complex(an.modes[mode].lambda))?;
    let header = ["rank", "up", "down", "dzeta_dr_pct", "dsigma_dr", "domega_dr"];
    let rows: Vec<Vec<String>> = ranked
        .iter()
        .enumerate()
        .map(|(i, p)| {
            vec![
                (i + 1).to_string(),
                an.net.generator_label(p.up).to_string(),
                an.net.generator_label(p.down).to_string(),
                num(100.0 * p.dzeta),
                num(p.dsigma()),
                num(p.domega()),
            ]
        })
        .collect();
    let mut t = Table::new(&header);
    rows.iter().for_each(|r| t.push(r.clone()));
    emit(out, &t)?;
    if let Some(path) = csv {
        write_csv(path, &header, &rows).map_err(CliError::Usage)?;
    }
    Ok(())
}

fn verify(seed: Option<u64>, out: &mut impl Write) -> Res {
    let mut failed = false;
    for name in fixture_names() {
        let report = reproduce_case(name)?;
        write!(out, "{report}")?;
        writeln!(out, "  -> {}, {} warning(s)\n", if report.failed() { "FAILED" } else { "ok" }, report.warnings())?;
        failed |= report.failed();
    }
    if let Some(seed) = seed {
        failed |= !oracle_check(seed, out)?;
    }
    if failed {
        return Err(CliError::VerificationFailed);
    }
    Ok(())
}

/// Formula against the central-difference oracle for every mode of a random
/// network and every shift towards generator 1.
fn oracle_check(seed: u64, out: &mut impl Write) -> Res<bool> {
    let an = Analysis::new(random_network(seed))?;
    writeln!(out, "random network seed {seed}: {} buses, {} generators", an.net.n(), an.net.m())?;
    let mut ok = true;
    for g in 1..an.net.m() {
        let plan = RedispatchPlan::pair(&an.net, g, 0)?;
        for i in 0..an.modes.len() {
            let f = dlambda_for(&an, i, &plan.dp)?;
            let o = finite_difference_sensitivity(&an, i, &plan, ORACLE_STEP)?;
            let err = (f - o).norm() / f.norm().max(1.0);
            let pass = err < ORACLE_TOL;
            ok &= pass;
            writeln!(
                out,
                "  {} {} mode {}: formula {} oracle {} rel.err {}",
                if pass { "ok  " } else { "FAIL" },
                plan.description,
                i + 1,
                complex(f),
                complex(o),
                num(err)
            )?;
        }
    }
    Ok(ok)
}

fn dump(an: &Analysis, dir: &Path) -> Res {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    let (e, j) = extended_jacobian(&an.dm, &an.bundle.l);
    let diag = |v: &[f64]| Mat::from_fn(v.len(), v.len(), |r, c| if r == c { v[r] } else { 0.0 });
    let mats = [
        ("L", an.bundle.l.clone()),
        ("H", an.bundle.h.clone()),
        ("M", diag(&an.dm.m)),
        ("D", diag(&an.dm.d)),
        ("E", e),
        ("J", j),
    ];
    for (name, m) in mats {
        let path = dir.join(format!("{name}.csv"));
        let file = fs::File::create(&path).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        for r in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:e}", m[(r, c)])).collect();
            w.write_record(&row).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}
