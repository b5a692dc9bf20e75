//! Everything computed once per equilibrium: power flow, Hessian, modes.

use crate::error::{Error, Result};
use crate::laplacian::{hessian, LaplacianBundle, LineState};
use crate::modal::{self, DynamicMatrices, Mode};
use crate::network::Network;
use crate::powerflow::{line_states, solve_power_flow, OperatingPoint};
use crate::sensitivity::{sensitivity_coefficients, SensitivityReport};

#[derive(Clone, Debug)]
pub struct Analysis {
    pub net: Network,
    pub op: OperatingPoint,
    pub bundle: LaplacianBundle,
    pub dm: DynamicMatrices,
    pub lines: LineState,
    /// Sorted by `(ω, σ)`; one entry per conjugate pair.
    pub modes: Vec<Mode>,
}

impl Analysis {
    pub fn new(net: Network) -> Result<Analysis> {
        Self::from_initial(net, None)
    }

    pub fn from_initial(net: Network, initial: Option<&OperatingPoint>) -> Result<Analysis> {
        let op = solve_power_flow(&net, initial)?;
        Self::at(net, op)
    }

    /// Builds the analysis at a known equilibrium.
    pub fn at(net: Network, op: OperatingPoint) -> Result<Analysis> {
        let bundle = hessian(&net, &op);
        let dm = DynamicMatrices::new(&net);
        let modes = modal::modes(&net, &bundle)?;
        let lines = line_states(&net, &op);
        Ok(Analysis {
            net,
            op,
            bundle,
            dm,
            lines,
            modes,
        })
    }

    pub fn report(&self, mode: usize) -> Result<SensitivityReport> {
        sensitivity_coefficients(&self.net, &self.op, &self.lines, &self.dm, self.mode(mode)?)
    }

    pub fn mode(&self, idx: usize) -> Result<&Mode> {
        self.modes.get(idx).ok_or_else(|| {
            Error::Usage(format!("mode index {} out of range ({} modes)", idx + 1, self.modes.len()))
        })
    }

    /// Indices of electromechanical modes, in `ω` order.
    pub fn electromechanical(&self) -> Vec<usize> {
        (0..self.modes.len()).filter(|&i| self.modes[i].electromechanical).collect()
    }

    /// The `k`-th (1-based) electromechanical mode.
    pub fn em_mode(&self, k: usize) -> Result<usize> {
        let em = self.electromechanical();
        k.checked_sub(1)
            .and_then(|i| em.get(i).copied())
            .ok_or_else(|| Error::Usage(format!("no electromechanical mode #{k} ({} available)", em.len())))
    }

    /// Unique electromechanical mode with frequency in `[lo, hi]` Hz.
    pub fn mode_in_band(&self, lo: f64, hi: f64) -> Result<usize> {
        let hits: Vec<usize> = self
            .electromechanical()
            .into_iter()
            .filter(|&i| (lo..=hi).contains(&self.modes[i].freq_hz))
            .collect();
        match hits.as_slice() {
            [one] => Ok(*one),
            [] => Err(Error::Usage(format!("no electromechanical mode in {lo}..{hi} Hz"))),
            many => Err(Error::Usage(format!(
                "{} electromechanical modes in {lo}..{hi} Hz; narrow the window",
                many.len()
            ))),
        }
    }
}
