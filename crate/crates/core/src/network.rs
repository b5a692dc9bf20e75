//! Static grid description and the line-oriented grid file format.
//!
//! ```text
//! system omega0=376.99 model=voltage
//! bus G1 G V=1.0 Pg=0.8 H=3.0 D=2.0
//! bus B4 L Pl=1.0 Ql=0.2 D=2.0
//! line 1 G1 B4 x=0.45
//! ```
//!
//! Buses are re-indexed on load so that generators come first; internal
//! indices are 0-based, displayed indices 1-based.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use faer::Mat;

use crate::error::{Error, Result};

pub const DEFAULT_OMEGA0: f64 = 2.0 * PI * 60.0;
const BALANCE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BusKind {
    Generator,
    Load,
}

/// Which state variables the energy function carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Model {
    /// Angles on every bus plus voltage magnitudes on load buses.
    #[default]
    Voltage,
    /// Angles only; every voltage magnitude is frozen.
    ConstV,
}

impl FromStr for Model {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "voltage" => Ok(Model::Voltage),
            "const_v" => Ok(Model::ConstV),
            other => Err(format!("unknown model `{other}` (expected voltage|const_v)")),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Voltage => "voltage",
            Model::ConstV => "const_v",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub label: String,
    pub kind: BusKind,
    /// Set point on generators; on loads the frozen magnitude used by the
    /// constant-voltage model and the power-flow initial guess otherwise.
    pub v: f64,
    pub p_gen: f64,
    pub p_load: f64,
    pub q_load: f64,
    /// Inertia constant in seconds; always zero on loads.
    pub inertia_h: f64,
    /// Damping in seconds (divided by ω0 to get the dynamic coefficient).
    pub damping_d: f64,
}

impl Bus {
    pub fn generator(label: &str, v: f64, p_gen: f64, h: f64, d: f64) -> Bus {
        Bus {
            label: label.to_string(),
            kind: BusKind::Generator,
            v,
            p_gen,
            p_load: 0.0,
            q_load: 0.0,
            inertia_h: h,
            damping_d: d,
        }
    }

    pub fn load(label: &str, p_load: f64, q_load: f64, d: f64) -> Bus {
        Bus {
            label: label.to_string(),
            kind: BusKind::Load,
            v: 1.0,
            p_gen: 0.0,
            p_load,
            q_load,
            inertia_h: 0.0,
            damping_d: d,
        }
    }

    pub fn is_generator(&self) -> bool {
        self.kind == BusKind::Generator
    }

    /// Net real injection `P = Pg − Pl`.
    pub fn p(&self) -> f64 {
        self.p_gen - self.p_load
    }

    /// Net reactive injection `Q = −Ql`.
    pub fn q(&self) -> f64 {
        -self.q_load
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub label: String,
    pub from: usize,
    pub to: usize,
    /// Susceptance magnitude, strictly positive.
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    omega0: f64,
    model: Model,
    n_gen: usize,
}

/// A line given by bus labels, before re-indexing.
#[derive(Clone, Debug)]
pub struct LineSpec {
    pub label: String,
    pub from: String,
    pub to: String,
    pub b: f64,
}

impl LineSpec {
    pub fn new(label: &str, from: &str, to: &str, b: f64) -> LineSpec {
        LineSpec {
            label: label.into(),
            from: from.into(),
            to: to.into(),
            b,
        }
    }
}

impl Network {
    /// Builds and validates a network. Buses may come in any order; they are
    /// stably re-ordered generators-first.
    pub fn new(buses: Vec<Bus>, lines: Vec<LineSpec>, omega0: f64, model: Model) -> Result<Network> {
        let mut ordered: Vec<Bus> = buses.iter().filter(|b| b.is_generator()).cloned().collect();
        let n_gen = ordered.len();
        ordered.extend(buses.iter().filter(|b| !b.is_generator()).cloned());

        let mut index = HashMap::new();
        for (i, b) in ordered.iter().enumerate() {
            if index.insert(b.label.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate bus label `{}`", b.label)));
            }
        }
        let mut seen = HashMap::new();
        let mut resolved = Vec::with_capacity(lines.len());
        for l in lines {
            if seen.insert(l.label.clone(), ()).is_some() {
                return Err(Error::Validation(format!("duplicate line label `{}`", l.label)));
            }
            let lookup = |name: &str| {
                index.get(name).copied().ok_or_else(|| {
                    Error::Validation(format!("line `{}` references unknown bus `{name}`", l.label))
                })
            };
            resolved.push(Line {
                from: lookup(&l.from)?,
                to: lookup(&l.to)?,
                label: l.label,
                b: l.b,
            });
        }
        let net = Network {
            buses: ordered,
            lines: resolved,
            omega0,
            model,
            n_gen,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return bad(format!("omega0 must be positive, got {}", self.omega0));
        }
        if self.buses.len() < 2 {
            return bad("a network needs at least two buses".into());
        }
        if self.n_gen == 0 {
            return bad("a network needs at least one generator".into());
        }
        for b in &self.buses {
            let finite = [b.v, b.p_gen, b.p_load, b.q_load, b.inertia_h, b.damping_d]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return bad(format!("bus `{}` has a non-finite field", b.label));
            }
            if !(b.v > 0.0) {
                return bad(format!("bus `{}`: voltage magnitude must be positive", b.label));
            }
            if b.damping_d < 0.0 {
                return bad(format!("bus `{}`: damping must be nonnegative", b.label));
            }
            match b.kind {
                BusKind::Generator if !(b.inertia_h > 0.0) => {
                    return bad(format!("generator `{}`: H must be positive", b.label));
                }
                BusKind::Load if b.inertia_h != 0.0 => {
                    return bad(format!("load `{}`: H must be zero", b.label));
                }
                _ => {}
            }
        }
        for l in &self.lines {
            if !(l.b > 0.0 && l.b.is_finite()) {
                return bad(format!("line `{}`: susceptance must be positive", l.label));
            }
            if l.from == l.to {
                return bad(format!("line `{}` is a self-loop", l.label));
            }
            if self.model == Model::Voltage && l.from < self.n_gen && l.to < self.n_gen {
                return bad(format!(
                    "line `{}` joins two generator buses ({} and {}); only allowed with model=const_v",
                    l.label, self.buses[l.from].label, self.buses[l.to].label
                ));
            }
        }
        if !self.is_connected() {
            return bad("network graph is not connected".into());
        }
        let imbalance: f64 = self.buses.iter().map(Bus::p).sum();
        if imbalance.abs() > BALANCE_TOL {
            return bad(format!(
                "real power is unbalanced: generation − load = {imbalance:.6e}"
            ));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            adj[l.from].push(l.to);
            adj[l.to].push(l.from);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn parse(text: &str) -> Result<Network> {
        parse_grid(text)
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn model(&self) -> Model {
        self.model
    }

    /// Number of buses.
    pub fn n(&self) -> usize {
        self.buses.len()
    }

    /// Number of generator buses.
    pub fn m(&self) -> usize {
        self.n_gen
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    /// Number of load-voltage state variables.
    pub fn n_vars_v(&self) -> usize {
        match self.model {
            Model::Voltage => self.n() - self.m(),
            Model::ConstV => 0,
        }
    }

    /// Dimension of the state `z`: `2n − m` for the voltage model, `n` otherwise.
    pub fn state_dim(&self) -> usize {
        self.n() + self.n_vars_v()
    }

    /// State index of load bus `i`'s voltage, if it is a state variable.
    pub fn v_index(&self, bus: usize) -> Option<usize> {
        (self.model == Model::Voltage && bus >= self.m()).then(|| self.n() + bus - self.m())
    }

    pub fn bus_index(&self, label: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.label == label)
    }

    pub fn line_index(&self, label: &str) -> Option<usize> {
        self.lines.iter().position(|l| l.label == label)
    }

    /// Diagonal of the signed bus susceptance matrix: `b_ii = −Σ b_k` over
    /// incident lines.
    pub fn b_ii(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for l in &self.lines {
            out[l.from] -= l.b;
            out[l.to] -= l.b;
        }
        out
    }

    /// Signed incidence `A` (+1 sending, −1 receiving) and its magnitude `|A|`.
    pub fn incidence(&self) -> (Mat<f64>, Mat<f64>) {
        let (n, l) = (self.n(), self.n_lines());
        let mut a = Mat::zeros(n, l);
        let mut abs_a = Mat::zeros(n, l);
        for (k, line) in self.lines.iter().enumerate() {
            a[(line.from, k)] = 1.0;
            a[(line.to, k)] = -1.0;
            abs_a[(line.from, k)] = 1.0;
            abs_a[(line.to, k)] = 1.0;
        }
        (a, abs_a)
    }

    /// Adds `dp[i]` to the generation of each bus (used for redispatch).
    pub fn with_generation_shift(&self, dp: &[f64]) -> Network {
        assert_eq!(dp.len(), self.n());
        let mut out = self.clone();
        for (b, d) in out.buses.iter_mut().zip(dp) {
            b.p_gen += d;
        }
        out
    }

    /// Same network with every damping constant set to zero.
    pub fn undamped(&self) -> Network {
        let mut out = self.clone();
        for b in &mut out.buses {
            b.damping_d = 0.0;
        }
        out
    }

    /// Constant-voltage variant with load magnitudes frozen at `v` (one entry
    /// per bus; generator entries are ignored).
    pub fn frozen_voltage(&self, v: &[f64]) -> Network {
        assert_eq!(v.len(), self.n());
        let mut out = self.clone();
        out.model = Model::ConstV;
        for (b, &vi) in out.buses.iter_mut().zip(v).skip(self.m()) {
            b.v = vi;
        }
        out
    }

    /// Human-readable label of generator `g` (0-based generator index).
    pub fn generator_label(&self, g: usize) -> &str {
        &self.buses[g].label
    }

    /// Serializes back to the grid format. Buses come out in internal order.
    pub fn to_grid_string(&self) -> String {
        let mut s = format!("system omega0={} model={}\n", self.omega0, self.model);
        for b in &self.buses {
            match b.kind {
                BusKind::Generator => s.push_str(&format!(
                    "bus {} G V={} Pg={} H={} D={}\n",
                    b.label, b.v, b.p_gen, b.inertia_h, b.damping_d
                )),
                BusKind::Load => s.push_str(&format!(
                    "bus {} L Pl={} Ql={} D={} V={}\n",
                    b.label, b.p_load, b.q_load, b.damping_d, b.v
                )),
            }
        }
        for l in &self.lines {
            s.push_str(&format!(
                "line {} {} {} b={}\n",
                l.label, self.buses[l.from].label, self.buses[l.to].label, l.b
            ));
        }
        s
    }
}

struct Fields<'a> {
    line: usize,
    map: HashMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn new(line: usize, tokens: &[&'a str], allowed: &[&str]) -> Result<Self> {
        let mut map = HashMap::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse(line, format!("expected key=value, found `{tok}`")))?;
            if !allowed.contains(&k) {
                return Err(Error::parse(line, format!("unknown field `{k}`")));
            }
            if map.insert(k, v).is_some() {
                return Err(Error::parse(line, format!("field `{k}` given twice")));
            }
        }
        Ok(Fields { line, map })
    }

    fn opt(&self, key: &str) -> Result<Option<f64>> {
        self.map
            .get(key)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(self.line, format!("`{key}={v}` is not a number")))
            })
            .transpose()
    }

    fn req(&self, key: &str) -> Result<f64> {
        self.opt(key)?
            .ok_or_else(|| Error::parse(self.line, format!("missing field `{key}`")))
    }
}

fn parse_grid(text: &str) -> Result<Network> {
    let mut omega0 = DEFAULT_OMEGA0;
    let mut model = Model::Voltage;
    let mut saw_system = false;
    let mut buses = Vec::new();
    let mut lines = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let body = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = body.split_whitespace().collect();
        let Some((&head, rest)) = tokens.split_first() else {
            continue;
        };
        match head {
            "system" => {
                if saw_system {
                    return Err(Error::parse(lineno, "duplicate system record"));
                }
                saw_system = true;
                let f = Fields::new(lineno, rest, &["omega0", "model"])?;
                if let Some(w) = f.opt("omega0")? {
                    omega0 = w;
                }
                if let Some(m) = f.map.get("model") {
                    model = m.parse().map_err(|e| Error::parse(lineno, e))?;
                }
            }
            "bus" => {
                let [label, kind, fields @ ..] = rest else {
                    return Err(Error::parse(lineno, "bus record needs a label and a kind"));
                };
                let bus = match *kind {
                    "G" => {
                        let f = Fields::new(lineno, fields, &["V", "Pg", "H", "D"])?;
                        Bus::generator(
                            label,
                            f.req("V")?,
                            f.req("Pg")?,
                            f.req("H")?,
                            f.opt("D")?.unwrap_or(0.0),
                        )
                    }
                    "L" => {
                        let f = Fields::new(lineno, fields, &["Pl", "Ql", "D", "V"])?;
                        let mut b = Bus::load(
                            label,
                            f.req("Pl")?,
                            f.opt("Ql")?.unwrap_or(0.0),
                            f.opt("D")?.unwrap_or(0.0),
                        );
                        b.v = f.opt("V")?.unwrap_or(1.0);
                        b
                    }
                    other => {
                        return Err(Error::parse(
                            lineno,
                            format!("bus kind must be G or L, found `{other}`"),
                        ))
                    }
                };
                buses.push(bus);
            }
            "line" => {
                let [label, from, to, fields @ ..] = rest else {
                    return Err(Error::parse(lineno, "line record needs a label and two bus labels"));
                };
                let f = Fields::new(lineno, fields, &["b", "x"])?;
                let b = match (f.opt("b")?, f.opt("x")?) {
                    (Some(b), None) => b,
                    (None, Some(x)) if x != 0.0 => 1.0 / x,
                    (None, Some(_)) => return Err(Error::parse(lineno, "x must be nonzero")),
                    (Some(_), Some(_)) => {
                        return Err(Error::parse(lineno, "b= and x= are mutually exclusive"))
                    }
                    (None, None) => return Err(Error::parse(lineno, "line needs b= or x=")),
                };
                lines.push(LineSpec::new(label, from, to, b));
            }
            other => return Err(Error::parse(lineno, format!("unknown record `{other}`"))),
        }
    }
    Network::new(buses, lines, omega0, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "bus A G V=1 Pg=0 H=1\nbus B L Pl=0 Ql=0\nline 1 A B b=1.0\n";

    #[test]
    fn minimal_two_bus() {
        let net = Network::parse(TWO_BUS).unwrap();
        assert_eq!((net.n(), net.m(), net.n_lines()), (2, 1, 1));
        assert_eq!(net.state_dim(), 3);
        assert_eq!(net.omega0(), DEFAULT_OMEGA0);
    }

    #[test]
    fn generators_are_reindexed_first() {
        let text = "bus L1 L Pl=1 Ql=0\nbus G1 G V=1 Pg=1 H=2\nline a L1 G1 x=0.5\n";
        let net = Network::parse(text).unwrap();
        assert_eq!(net.buses()[0].label, "G1");
        assert_eq!(net.lines()[0].from, 1);
        assert_eq!(net.lines()[0].b, 2.0);
    }

    #[test]
    fn load_sign_convention() {
        let net = Network::parse("bus A G V=1 Pg=1 H=1\nbus B L Pl=1 Ql=0.3\nline 1 A B b=1\n").unwrap();
        assert_eq!(net.buses()[1].p(), -1.0);
        assert_eq!(net.buses()[1].q(), -0.3);
        assert_eq!(net.b_ii(), vec![-1.0, -1.0]);
    }

    #[test]
    fn chain_incidence() {
        let text = "bus 1 G V=1 Pg=0 H=1\nbus 2 L Pl=0\nbus 3 L Pl=0\nline a 1 2 b=1\nline b 2 3 b=1\n";
        let (a, abs_a) = Network::parse(text).unwrap().incidence();
        let want = [[1.0, 0.0], [-1.0, 1.0], [0.0, -1.0]];
        for i in 0..3 {
            for k in 0..2 {
                assert_eq!(a[(i, k)], want[i][k]);
                assert_eq!(abs_a[(i, k)], want[i][k].abs());
            }
        }
    }

    #[test]
    fn rejects_generator_generator_line() {
        let text = "bus 1 G V=1 Pg=0 H=1\nbus 2 G V=1 Pg=0 H=1\nline a 1 2 b=1\n";
        assert!(matches!(Network::parse(text), Err(Error::Validation(_))));
        let cv = format!("system model=const_v\n{text}");
        assert!(Network::parse(&cv).is_ok());
    }

    #[test]
    fn rejects_disconnected_and_unbalanced() {
        let disc = "bus 1 G V=1 Pg=0 H=1\nbus 2 L Pl=0\nbus 3 L Pl=0\nline a 1 2 b=1\n";
        assert!(matches!(Network::parse(disc), Err(Error::Validation(m)) if m.contains("connected")));
        let unbal = "bus 1 G V=1 Pg=1 H=1\nbus 2 L Pl=0.5\nline a 1 2 b=1\n";
        assert!(matches!(Network::parse(unbal), Err(Error::Validation(m)) if m.contains("unbalanced")));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("bus 1 G V=1 Pg=0\n", 1),
            ("# c\nbus 1 G V=1 Pg=0 H=x\n", 2),
            ("bus 1 Q V=1\n", 1),
            ("bus 1 G V=1 Pg=0 H=1\nbus 2 L Pl=0\nline a 1 2 b=1 x=1\n", 3),
            ("bogus\n", 1),
        ];
        for (text, want) in cases {
            match Network::parse(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn grid_string_round_trips() {
        let text = "system omega0=314.159 model=voltage\nbus 1 G V=1.02 Pg=0.5 H=3 D=1\nbus 2 L Pl=0.5 Ql=0.1 D=0.5 V=0.98\nline a 1 2 x=0.25\n";
        let net = Network::parse(text).unwrap();
        assert_eq!(Network::parse(&net.to_grid_string()).unwrap(), net);
    }
}
