//! Heralding: photon-number-resolving detection and the ideal cross-Kerr
//! QND measurement.
//!
//! The QND probe is not simulated. Its homodyne readout can only tell how far
//! the probe phase moved, not in which direction, so the measurement is the
//! projection onto classes of `|n_a - n_b|`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{project_occupation, OccupationPattern, Projection, StateVector};
use crate::optics::apply_phase_flip;

/// How detector efficiency enters a success probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    /// Multiply each heralded success by `eta_p^m`.
    AnalyticFactor(u32),
    /// Each photon reaching a heralding detector is lost with probability
    /// `1 - eta_p`. Sampled in Monte Carlo; the exact engine uses the
    /// expectation, `eta_p^clicks`.
    BernoulliLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub eta_p: f64,
    pub mode: DetectorMode,
}

impl DetectorModel {
    pub fn ideal() -> Self {
        Self::analytic(1.0, 1)
    }

    pub fn analytic(eta_p: f64, m: u32) -> Self {
        DetectorModel {
            eta_p,
            mode: DetectorMode::AnalyticFactor(m),
        }
    }

    pub fn bernoulli(eta_p: f64) -> Self {
        DetectorModel {
            eta_p,
            mode: DetectorMode::BernoulliLoss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta_p) {
            return Err(Error::Parameter(format!("eta_p {} outside [0, 1]", self.eta_p)));
        }
        if let DetectorMode::AnalyticFactor(0) = self.mode {
            return Err(Error::Parameter("analytic detector factor needs m >= 1".into()));
        }
        Ok(())
    }

    /// Number of detector clicks whose efficiency is charged to a success
    /// that required `clicks` clicks.
    pub fn exponent(&self, clicks: u32) -> u32 {
        match self.mode {
            DetectorMode::AnalyticFactor(m) => m,
            DetectorMode::BernoulliLoss => clicks,
        }
    }

    pub fn success_factor(&self, clicks: u32) -> f64 {
        self.eta_p.powi(self.exponent(clicks) as i32)
    }
}

/// A named set of detectors that must register exactly one photon in total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorGroup {
    pub name: String,
    pub modes: Vec<String>,
}

impl DetectorGroup {
    pub fn new(name: impl Into<String>, modes: &[&str]) -> Self {
        DetectorGroup {
            name: name.into(),
            modes: modes.iter().map(|m| m.to_string()).collect(),
        }
    }
}

/// Feed-forward correction: flip `mode` when detector `when` clicks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipRule {
    pub when: String,
    pub mode: String,
}

impl FlipRule {
    pub fn new(when: &str, mode: &str) -> Self {
        FlipRule {
            when: when.into(),
            mode: mode.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeraldOutcome {
    /// Probability including the detector-model factor (success outcomes only).
    pub probability: f64,
    /// Squared norm of the pre-collapse component.
    pub raw_probability: f64,
    pub clicks: BTreeMap<String, u32>,
    /// Renormalized state of the undetected modes, before correction.
    pub residual: StateVector,
    /// Modes to phase-flip, in rule order.
    pub correction: Vec<String>,
    pub success: bool,
}

impl HeraldOutcome {
    pub fn corrected(&self) -> StateVector {
        self.correction
            .iter()
            .fold(self.residual.clone(), |s, m| apply_phase_flip(&s, m))
    }

    /// Corrected residual scaled so that its squared norm is `raw_probability`.
    pub fn weighted(&self) -> StateVector {
        self.corrected()
            .scaled(Complex64::new(self.raw_probability.sqrt(), 0.0))
    }

    pub fn label(&self) -> String {
        self.clicks
            .iter()
            .map(|(d, n)| format!("{d}={n}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Keeps terms with `|count(mode_a) - count(mode_b)| == class`; photons are
/// not destroyed.
pub fn qnd_select(s: &StateVector, mode_a: &str, mode_b: &str, class: u32) -> Projection {
    project_occupation(s, |p| qnd_class(p, mode_a, mode_b) == class)
}

pub fn qnd_class(p: &OccupationPattern, mode_a: &str, mode_b: &str) -> u32 {
    p.spatial_count(mode_a).abs_diff(p.spatial_count(mode_b))
}

fn group_succeeded(group: &DetectorGroup, clicks: &BTreeMap<String, u32>) -> bool {
    let counts: Vec<u32> = group.modes.iter().map(|m| clicks[m]).collect();
    counts.iter().sum::<u32>() == 1
}

/// Enumerates every click pattern over the detectors of `groups`.
///
/// Outcomes are ordered by click pattern. A pattern succeeds when each group
/// saw exactly one photon; success outcomes carry the flips whose trigger
/// detector clicked and are charged the detector-model factor.
pub fn herald(
    s: &StateVector,
    groups: &[DetectorGroup],
    flips: &[FlipRule],
    model: &DetectorModel,
) -> Vec<HeraldOutcome> {
    let detectors: Vec<&str> = groups.iter().flat_map(|g| g.modes.iter().map(String::as_str)).collect();
    let mut by_pattern: BTreeMap<Vec<u32>, ()> = BTreeMap::new();
    for (p, _) in s.terms() {
        by_pattern.insert(detectors.iter().map(|d| p.spatial_count(d)).collect(), ());
    }

    by_pattern
        .into_keys()
        .map(|counts| {
            let projection = project_occupation(s, |p| {
                detectors.iter().zip(&counts).all(|(d, n)| p.spatial_count(d) == *n)
            });
            let clicks: BTreeMap<String, u32> =
                detectors.iter().zip(&counts).map(|(d, n)| (d.to_string(), *n)).collect();
            let success = groups.iter().all(|g| group_succeeded(g, &clicks));
            let correction = if success {
                flips
                    .iter()
                    .filter(|f| clicks.get(&f.when).copied().unwrap_or(0) == 1)
                    .map(|f| f.mode.clone())
                    .collect()
            } else {
                Vec::new()
            };
            let factor = if success {
                model.success_factor(groups.len() as u32)
            } else {
                1.0
            };
            HeraldOutcome {
                probability: projection.probability * factor,
                raw_probability: projection.probability,
                residual: projection.collapsed.trace_out_spatial(&detectors),
                clicks,
                correction,
                success,
            }
        })
        .collect()
}
