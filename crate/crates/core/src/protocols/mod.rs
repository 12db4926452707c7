//! The two concentration protocols: parameters, VBS schedules, the exact
//! sequential engine, closed-form probabilities, the path-enumeration oracle
//! and Monte Carlo sampling.

pub(crate) mod engine;
pub mod formulas;
pub mod montecarlo;
pub mod oracle;
pub(crate) mod report;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{ModeRef, OccupationPattern, StateVector};

pub use engine::{
    merge_branch_outputs, run, run_ecp1, run_ecp2, trace, ArmRound, ArmTrace, Engine, MergePorts, ProtocolSpec,
    RunConfig, SuccessOutput, Trace,
};
pub use montecarlo::McEstimate;
pub use oracle::oracle_enumerate;
pub use report::{Comparison, EngineKind, ProtocolReport, ResidualReport, RoundReport};

const NORM_TOL: f64 = 1e-12;

/// Spatial-entanglement amplitudes: `α|1,0⟩ + β|0,1⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntanglementParams {
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl EntanglementParams {
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let n = alpha.norm_sqr() + beta.norm_sqr();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::Parameter(format!("|alpha|^2 + |beta|^2 = {n}, expected 1")));
        }
        Ok(EntanglementParams { alpha, beta })
    }

    /// Real non-negative amplitudes from `|α|²`.
    pub fn from_alpha_sq(alpha_sq: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha_sq) {
            return Err(Error::Parameter(format!("alpha_sq {alpha_sq} outside [0, 1]")));
        }
        Self::new(
            Complex64::new(alpha_sq.sqrt(), 0.0),
            Complex64::new((1.0 - alpha_sq).sqrt(), 0.0),
        )
    }

    pub fn alpha_sq(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    pub fn beta_sq(&self) -> f64 {
        self.beta.norm_sqr()
    }

    /// `(β, α)`: the same state with the two spatial modes exchanged.
    pub fn swapped(&self) -> Self {
        EntanglementParams {
            alpha: self.beta,
            beta: self.alpha,
        }
    }

    pub(crate) fn require_entangled(&self) -> Result<()> {
        if self.alpha.norm() == 0.0 || self.beta.norm() == 0.0 {
            return Err(Error::Parameter("concentration needs alpha and beta both nonzero".into()));
        }
        Ok(())
    }
}

/// Polarization qubit `γ|H⟩ + δ|V⟩` carried by the shared photon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationParams {
    pub gamma: Complex64,
    pub delta: Complex64,
}

impl PolarizationParams {
    pub fn new(gamma: Complex64, delta: Complex64) -> Result<Self> {
        let n = gamma.norm_sqr() + delta.norm_sqr();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::Parameter(format!("|gamma|^2 + |delta|^2 = {n}, expected 1")));
        }
        Ok(PolarizationParams { gamma, delta })
    }

    pub fn from_gamma_sq(gamma_sq: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma_sq) {
            return Err(Error::Parameter(format!("gamma_sq {gamma_sq} outside [0, 1]")));
        }
        Self::new(
            Complex64::new(gamma_sq.sqrt(), 0.0),
            Complex64::new((1.0 - gamma_sq).sqrt(), 0.0),
        )
    }

    pub fn horizontal() -> Self {
        PolarizationParams {
            gamma: Complex64::new(1.0, 0.0),
            delta: Complex64::new(0.0, 0.0),
        }
    }

    pub fn gamma_sq(&self) -> f64 {
        self.gamma.norm_sqr()
    }

    pub fn delta_sq(&self) -> f64 {
        self.delta.norm_sqr()
    }
}

/// How the two PBS arms are accounted for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    /// Each arm receives its own unnormalized PBS component (with Alice's
    /// terms in both) and the arm probabilities are summed.
    PaperBranch,
    /// One pure state through both arms with both auxiliary photons; success
    /// needs a herald in every arm.
    JointCoherent,
}

impl Accounting {
    pub fn as_str(self) -> &'static str {
        match self {
            Accounting::PaperBranch => "paper_branch",
            Accounting::JointCoherent => "joint_coherent",
        }
    }

    /// Default detector-efficiency exponent for a success herald.
    pub fn default_clicks(self) -> u32 {
        match self {
            Accounting::PaperBranch => 1,
            Accounting::JointCoherent => 2,
        }
    }
}

/// VBS transmissions per round for the V arm (`t'_k`) and the H arm (`t''_k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbsSchedule {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

impl VbsSchedule {
    pub fn new(upper: Vec<f64>, lower: Vec<f64>) -> Result<Self> {
        for t in upper.iter().chain(&lower) {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::Parameter(format!("schedule entry {t} outside [0, 1]")));
            }
        }
        Ok(VbsSchedule { upper, lower })
    }

    pub fn constant(t_upper: f64, t_lower: f64, rounds: usize) -> Result<Self> {
        Self::new(vec![t_upper; rounds], vec![t_lower; rounds])
    }

    pub fn len(&self) -> usize {
        self.upper.len().min(self.lower.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `t_k = 1 / (1 + (|β|/|α|)^(2^k))` for `k = 1..=max_rounds`, evaluated
/// from the log ratio so large `k` neither underflows nor overflows.
pub fn vbs_schedule(e: &EntanglementParams, max_rounds: usize) -> Result<VbsSchedule> {
    if max_rounds == 0 {
        return Err(Error::Configuration("max_rounds must be at least 1".into()));
    }
    let (a, b) = (e.alpha.norm(), e.beta.norm());
    if a == 0.0 || b == 0.0 {
        return Err(Error::ScheduleUndefined("alpha or beta has modulus zero".into()));
    }
    let log_ratio = (b / a).ln();
    let entries: Vec<f64> = (1..=max_rounds)
        .map(|k| {
            if k == 1 {
                return e.alpha_sq();
            }
            let x = (k as f64 * std::f64::consts::LN_2).exp() * log_ratio;
            // logistic(-x), split by sign to stay finite
            if x >= 0.0 {
                let z = (-x).exp();
                z / (1.0 + z)
            } else {
                1.0 / (1.0 + x.exp())
            }
        })
        .collect();
    VbsSchedule::new(entries.clone(), entries)
}

/// `αγ|a1 H⟩ + αδ|a1 V⟩ + βγ|b1 H⟩ + βδ|b1 V⟩`.
pub fn prepare_initial(e: &EntanglementParams, p: &PolarizationParams) -> StateVector {
    StateVector::from_terms([
        (OccupationPattern::single(ModeRef::h("a1")), e.alpha * p.gamma),
        (OccupationPattern::single(ModeRef::v("a1")), e.alpha * p.delta),
        (OccupationPattern::single(ModeRef::h("b1")), e.beta * p.gamma),
        (OccupationPattern::single(ModeRef::v("b1")), e.beta * p.delta),
    ])
}

/// `(|a1⟩ + |b10⟩)(γ|H⟩ + δ|V⟩)/√2`.
pub fn concentrated_target(p: &PolarizationParams, modes: &[&str]) -> StateVector {
    let r = Complex64::new(1.0 / (modes.len() as f64).sqrt(), 0.0);
    StateVector::from_terms(modes.iter().flat_map(|m| {
        [
            (OccupationPattern::single(ModeRef::h(*m)), p.gamma * r),
            (OccupationPattern::single(ModeRef::v(*m)), p.delta * r),
        ]
    }))
}
