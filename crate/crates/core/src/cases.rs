//! Shipped fixtures and their expected-value manifests.
//!
//! Each fixture is a grid file plus a TOML manifest listing quantities to
//! recompute. A fixture whose network data had to be reconstructed is
//! `contingent`: its mismatches are warnings. Individual expectations may
//! override the fixture status, e.g. a check that does not depend on the
//! reconstructed data.

use std::fmt;

use serde::Deserialize;

use crate::analysis::Analysis;
use crate::dispatch::{dlambda_for, predict_mode, rank_pairs, RedispatchPlan};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::network::{BusKind, Network};
use crate::numfmt::num;
use crate::oracle::finite_difference_sensitivity;
use crate::powerflow::{potential_energy, potential_energy_line_form};
use crate::sensitivity::const_v_coefficients;

struct Embedded {
    name: &'static str,
    grid: &'static str,
    manifest: &'static str,
}

const FIXTURES: &[Embedded] = &[
    Embedded {
        name: "three_bus_s7",
        grid: include_str!("../../../data/three_bus_s7.grid"),
        manifest: include_str!("../../../data/three_bus_s7.expected.toml"),
    },
    Embedded {
        name: "three_bus_s9",
        grid: include_str!("../../../data/three_bus_s9.grid"),
        manifest: include_str!("../../../data/three_bus_s9.expected.toml"),
    },
    Embedded {
        name: "six_bus",
        grid: include_str!("../../../data/six_bus.grid"),
        manifest: include_str!("../../../data/six_bus.expected.toml"),
    },
    Embedded {
        name: "ten_bus",
        grid: include_str!("../../../data/ten_bus.grid"),
        manifest: include_str!("../../../data/ten_bus.expected.toml"),
    },
];

pub fn fixture_names() -> Vec<&'static str> {
    FIXTURES.iter().map(|f| f.name).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Verified,
    Contingent,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Verified => "verified",
            Status::Contingent => "contingent",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compare {
    /// `|computed − value| ≤ tolerance`.
    #[default]
    Within,
    /// `computed < value + tolerance`.
    Below,
    /// `computed > value − tolerance`.
    Above,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub quantity: String,
    /// 1-based electromechanical mode number (ascending frequency).
    pub mode: Option<usize>,
    /// `"up:down"` generator labels.
    pub pair: Option<String>,
    pub other: Option<String>,
    pub r: Option<f64>,
    pub line: Option<String>,
    pub bus: Option<String>,
    pub row: Option<usize>,
    pub col: Option<usize>,
    pub value: Option<f64>,
    pub text: Option<String>,
    pub tolerance: f64,
    #[serde(default)]
    pub compare: Compare,
    pub provenance: String,
    pub status: Option<Status>,
}

impl Expectation {
    fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(m) = self.mode {
            parts.push(format!("mode={m}"));
        }
        for (k, v) in [("pair", &self.pair), ("vs", &self.other), ("line", &self.line), ("bus", &self.bus)] {
            if let Some(v) = v {
                parts.push(format!("{k}={v}"));
            }
        }
        if let Some(r) = self.r {
            parts.push(format!("r={r}"));
        }
        if let (Some(r), Some(c)) = (self.row, self.col) {
            parts.push(format!("at={r},{c}"));
        }
        if parts.is_empty() {
            self.quantity.clone()
        } else {
            format!("{}[{}]", self.quantity, parts.join(" "))
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    fixture: String,
    status: Status,
    #[serde(default)]
    note: String,
    expect: Vec<Expectation>,
}

#[derive(Clone, Debug)]
pub struct CaseFixture {
    pub name: String,
    pub network: Network,
    pub status: Status,
    pub note: String,
    pub expected: Vec<Expectation>,
}

pub fn load_fixture(name: &str) -> Result<CaseFixture> {
    let f = FIXTURES
        .iter()
        .find(|f| f.name == name)
        .ok_or_else(|| Error::UnknownFixture(name.to_string()))?;
    let network = Network::parse(f.grid)?;
    let manifest: Manifest = toml::from_str(f.manifest)
        .map_err(|e| Error::Validation(format!("manifest for {name}: {e}")))?;
    if manifest.fixture != name {
        return Err(Error::Validation(format!("manifest names `{}`, expected `{name}`", manifest.fixture)));
    }
    Ok(CaseFixture {
        name: name.to_string(),
        network,
        status: manifest.status,
        note: manifest.note,
        expected: manifest.expect,
    })
}

/// Grid text of a shipped fixture.
pub fn fixture_grid(name: &str) -> Result<&'static str> {
    FIXTURES
        .iter()
        .find(|f| f.name == name)
        .map(|f| f.grid)
        .ok_or_else(|| Error::UnknownFixture(name.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Computed {
    Num(f64),
    Text(String),
}

impl fmt::Display for Computed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Computed::Num(x) => f.write_str(&num(*x)),
            Computed::Text(s) => write!(f, "\"{s}\""),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Row {
    pub expectation: Expectation,
    pub computed: std::result::Result<Computed, String>,
    pub status: Status,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct CaseReport {
    pub name: String,
    pub status: Status,
    pub note: String,
    pub rows: Vec<Row>,
}

impl CaseReport {
    /// True when a verified-status expectation failed.
    pub fn failed(&self) -> bool {
        self.rows.iter().any(|r| r.status == Status::Verified && !r.pass)
    }

    pub fn warnings(&self) -> usize {
        self.rows.iter().filter(|r| r.status == Status::Contingent && !r.pass).count()
    }
}

impl fmt::Display for CaseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "fixture {} ({})", self.name, self.status)?;
        if !self.note.is_empty() {
            writeln!(f, "  note: {}", self.note)?;
        }
        for r in &self.rows {
            let tag = match (r.pass, r.status) {
                (true, _) => "ok  ",
                (false, Status::Verified) => "FAIL",
                (false, Status::Contingent) => "warn",
            };
            let e = &r.expectation;
            let expected = match (&e.text, e.value) {
                (Some(t), _) => format!("\"{t}\""),
                (None, Some(v)) => {
                    let op = match e.compare {
                        Compare::Within => "",
                        Compare::Below => "< ",
                        Compare::Above => "> ",
                    };
                    format!("{op}{}", num(v))
                }
                (None, None) => "?".into(),
            };
            let computed = match &r.computed {
                Ok(c) => c.to_string(),
                Err(msg) => format!("error: {msg}"),
            };
            writeln!(
                f,
                "  {tag} {:<40} computed {:<14} expected {:<14} tol {:<10} {} [{}]",
                e.label(),
                computed,
                expected,
                num(e.tolerance),
                e.provenance,
                r.status
            )?;
        }
        let fails = self.rows.iter().filter(|r| r.status == Status::Verified && !r.pass).count();
        writeln!(f, "  {} checks, {} failed, {} warnings", self.rows.len(), fails, self.warnings())
    }
}

fn judge(e: &Expectation, c: &Computed) -> bool {
    match (c, &e.text, e.value) {
        (Computed::Text(s), Some(t), _) => s == t,
        (Computed::Num(x), None, Some(v)) => match e.compare {
            Compare::Within => (x - v).abs() <= e.tolerance,
            Compare::Below => *x < v + e.tolerance,
            Compare::Above => *x > v - e.tolerance,
        },
        _ => false,
    }
}

struct Evaluator<'a> {
    an: &'a Analysis,
}

impl Evaluator<'_> {
    fn need<T: Clone>(v: &Option<T>, what: &str) -> Result<T> {
        v.clone().ok_or_else(|| Error::Validation(format!("expectation needs `{what}`")))
    }

    fn mode(&self, e: &Expectation) -> Result<usize> {
        self.an.em_mode(Self::need(&e.mode, "mode")?)
    }

    fn generator(&self, label: &str) -> Result<usize> {
        self.an
            .net
            .bus_index(label)
            .filter(|&i| self.an.net.buses()[i].kind == BusKind::Generator)
            .ok_or_else(|| Error::Validation(format!("`{label}` is not a generator")))
    }

    fn pair(&self, spec: &str) -> Result<RedispatchPlan> {
        let (a, b) = spec
            .split_once(':')
            .ok_or_else(|| Error::Validation(format!("pair `{spec}` must be up:down")))?;
        RedispatchPlan::pair(&self.an.net, self.generator(a)?, self.generator(b)?)
    }

    fn line(&self, e: &Expectation) -> Result<usize> {
        let label = Self::need(&e.line, "line")?;
        self.an
            .net
            .line_index(&label)
            .ok_or_else(|| Error::Validation(format!("unknown line `{label}`")))
    }

    fn bus(&self, e: &Expectation) -> Result<usize> {
        let label = Self::need(&e.bus, "bus")?;
        self.an
            .net
            .bus_index(&label)
            .ok_or_else(|| Error::Validation(format!("unknown bus `{label}`")))
    }

    fn dlambda(&self, e: &Expectation) -> Result<C64> {
        let plan = self.pair(&Self::need(&e.pair, "pair")?)?;
        dlambda_for(self.an, self.mode(e)?, &plan.dp)
    }

    fn const_v(&self, e: &Expectation) -> Result<(Vec<f64>, Vec<f64>)> {
        let mode = self.an.mode(self.mode(e)?)?;
        let c = const_v_coefficients(&self.an.net, &self.an.lines, &self.an.dm, mode)?;
        Ok((c.a_r, c.a_i))
    }

    fn rank_of(values: &[f64], k: usize) -> f64 {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
        (idx.iter().position(|&i| i == k).unwrap() + 1) as f64
    }

    fn pair_position(&self, e: &Expectation, spec: &str) -> Result<usize> {
        let plan = self.pair(spec)?;
        let up = plan.dp.iter().position(|&d| d > 0.0).unwrap();
        let down = plan.dp.iter().position(|&d| d < 0.0).unwrap();
        rank_pairs(self.an, self.mode(e)?)?
            .iter()
            .position(|p| p.up == up && p.down == down)
            .map(|p| p + 1)
            .ok_or_else(|| Error::Validation(format!("pair `{spec}` not ranked")))
    }

    fn eval(&self, e: &Expectation) -> Result<Computed> {
        let an = self.an;
        let n = |x: f64| Ok(Computed::Num(x));
        match e.quantity.as_str() {
            "pf_residual" => n(an.op.residual_norm),
            "factorization_residual" => n(an.bundle.factorization_residual()),
            "energy_gap" => {
                let a = potential_energy(&an.net, &an.op.delta, &an.op.v)?;
                let b = potential_energy_line_form(&an.net, &an.op.delta, &an.op.v)?;
                n((a - b).abs() / a.abs().max(1.0))
            }
            "em_count" => n(an.electromechanical().len() as f64),
            "mode_re" => n(an.modes[self.mode(e)?].lambda.re),
            "mode_im" => n(an.modes[self.mode(e)?].lambda.im),
            "mode_freq_hz" => n(an.modes[self.mode(e)?].freq_hz),
            "mode_zeta_pct" => n(100.0 * an.modes[self.mode(e)?].damping_ratio),
            "mode_profile" => Ok(Computed::Text(an.modes[self.mode(e)?].swing_profile.to_string())),
            "line_p" => n(an.lines.p[self.line(e)?]),
            "line_theta" => n(an.lines.theta[self.line(e)?]),
            "incidence" => {
                let (a, _) = an.net.incidence();
                n(a[(self.bus(e)?, self.line(e)?)])
            }
            "h_entry" | "h_entry_v" => {
                let (r, c) = (Self::need(&e.row, "row")?, Self::need(&e.col, "col")?);
                let h = &an.bundle.h;
                if r == 0 || c == 0 || r > h.nrows() || c > h.ncols() {
                    return Err(Error::Validation(format!("H has no entry ({r},{c})")));
                }
                let mut x = h[(r - 1, c - 1)];
                if e.quantity == "h_entry_v" {
                    let bus = (0..an.net.n())
                        .find(|&i| an.net.v_index(i) == Some(c - 1))
                        .ok_or_else(|| Error::Validation(format!("column {c} is not a voltage")))?;
                    x *= an.op.v[bus];
                }
                n(x)
            }
            "dsigma" => n(self.dlambda(e)?.re),
            "domega" => n(self.dlambda(e)?.im),
            "approx_re" | "approx_im" | "exact_re" | "exact_im" => {
                let plan = self.pair(&Self::need(&e.pair, "pair")?)?;
                let p = predict_mode(an, self.mode(e)?, &plan, Self::need(&e.r, "r")?)?;
                let z = if e.quantity.starts_with("approx") {
                    p.lambda_approx
                } else {
                    p.lambda_exact?
                };
                n(if e.quantity.ends_with("re") { z.re } else { z.im })
            }
            "a_r" => n(self.const_v(e)?.0[self.line(e)?]),
            "a_i" => n(self.const_v(e)?.1[self.line(e)?]),
            "a_r_rank" => n(Self::rank_of(&self.const_v(e)?.0, self.line(e)?)),
            "a_i_rank" => n(Self::rank_of(&self.const_v(e)?.1, self.line(e)?)),
            "pair_rank" => n(self.pair_position(e, &Self::need(&e.pair, "pair")?)? as f64),
            "pair_above" => {
                let a = self.pair_position(e, &Self::need(&e.pair, "pair")?)?;
                let b = self.pair_position(e, &Self::need(&e.other, "other")?)?;
                n(if a < b { 1.0 } else { 0.0 })
            }
            "oracle_gap" => {
                let plan = self.pair(&Self::need(&e.pair, "pair")?)?;
                let mode = self.mode(e)?;
                let f = dlambda_for(an, mode, &plan.dp)?;
                let o = finite_difference_sensitivity(an, mode, &plan, 1e-5)?;
                n((f - o).norm() / f.norm().max(1.0))
            }
            other => Err(Error::Validation(format!("unknown quantity `{other}`"))),
        }
    }
}

/// Recomputes every expectation of a shipped fixture.
pub fn reproduce_case(name: &str) -> Result<CaseReport> {
    let fx = load_fixture(name)?;
    let an = Analysis::new(fx.network.clone())?;
    let ev = Evaluator { an: &an };
    let rows = fx
        .expected
        .iter()
        .map(|e| {
            let computed = ev.eval(e).map_err(|err| err.to_string());
            let pass = computed.as_ref().map(|c| judge(e, c)).unwrap_or(false);
            Row {
                expectation: e.clone(),
                computed,
                status: e.status.unwrap_or(fx.status),
                pass,
            }
        })
        .collect();
    Ok(CaseReport {
        name: fx.name,
        status: fx.status,
        note: fx.note,
        rows,
    })
}
