use std::collections::BTreeMap;

use serde::Serialize;

use super::engine::Trace;
use super::montecarlo::McEstimate;
use super::{formulas, Accounting, EntanglementParams, PolarizationParams, VbsSchedule};
use crate::error::Result;
use crate::fock::StateVector;
use crate::measurement::{DetectorMode, DetectorModel};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub paper_value: f64,
    pub simulated_value: f64,
    pub delta: f64,
}

impl Comparison {
    pub fn new(paper_value: f64, simulated_value: f64) -> Self {
        Comparison {
            paper_value,
            simulated_value,
            delta: simulated_value - paper_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub arm: String,
    /// Occupation pattern → `[re, im]`.
    pub amplitudes: BTreeMap<String, [f64; 2]>,
}

impl ResidualReport {
    fn new(arm: &str, s: &StateVector) -> Self {
        ResidualReport {
            arm: arm.into(),
            amplitudes: s.terms().map(|(p, a)| (p.to_string(), [a.re, a.im])).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub k: usize,
    pub t: Option<f64>,
    pub p_success: f64,
    pub p_fail_recyclable: f64,
    pub heralded_fidelity: Option<f64>,
    pub residuals: Vec<ResidualReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineKind {
    Exact,
    MonteCarlo(McEstimate),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectorReport {
    pub mode: DetectorMode,
    pub success_exponent: Vec<u32>,
}

/// Serialized field order is part of the output contract.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolReport {
    pub protocol: String,
    pub accounting: Accounting,
    pub alpha_sq: Option<f64>,
    pub gamma_sq: Option<f64>,
    pub eta_p: f64,
    pub schedule: VbsSchedule,
    pub rounds: Vec<RoundReport>,
    pub p_total: f64,
    pub engine: &'static str,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub stderr: Option<f64>,
    pub paper_comparison: BTreeMap<String, Comparison>,
    pub detector: DetectorReport,
}

impl ProtocolReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `paper_comparison` entries whose delta exceeds `tol`.
    pub fn discrepancies(&self, tol: f64) -> impl Iterator<Item = (&String, &Comparison)> {
        self.paper_comparison.iter().filter(move |(_, c)| c.delta.abs() > tol)
    }
}

pub(crate) fn build_report(
    protocol: &str,
    e: Option<&EntanglementParams>,
    p: Option<&PolarizationParams>,
    schedule: &VbsSchedule,
    model: &DetectorModel,
    trace: &Trace,
    engine: EngineKind,
) -> Result<ProtocolReport> {
    let n = trace.rounds();
    let mut rounds = Vec::with_capacity(n);
    for k in 0..n {
        let (p_success, p_fail) = match &engine {
            EngineKind::Exact => (trace.success(k, model), trace.recycle(k)),
            EngineKind::MonteCarlo(mc) => (mc.round_success[k], mc.round_recycle[k]),
        };
        let t = trace
            .arms
            .iter()
            .find_map(|a| a.rounds.get(k).and_then(|r| r.t));
        let residuals = trace
            .arms
            .iter()
            .filter_map(|a| a.rounds.get(k).map(|r| (a, r)))
            .flat_map(|(a, r)| r.recycle_residuals.iter().map(|s| ResidualReport::new(&a.label, s)))
            .collect();
        rounds.push(RoundReport {
            k: k + 1,
            t,
            p_success,
            p_fail_recyclable: p_fail,
            heralded_fidelity: trace.heralded_fidelity(k)?,
            residuals,
        });
    }
    let p_total = rounds.iter().map(|r| r.p_success).sum();

    let paper_comparison = match e {
        Some(e) if !trace.unconditioned => comparisons(e, p, model, trace, &rounds),
        _ => BTreeMap::new(),
    };
    let (engine_name, seed, trials, stderr) = match &engine {
        EngineKind::Exact => ("exact", None, None, None),
        EngineKind::MonteCarlo(mc) => ("monte_carlo", Some(mc.seed), Some(mc.trials), Some(mc.stderr)),
    };

    Ok(ProtocolReport {
        protocol: protocol.into(),
        accounting: trace.accounting,
        alpha_sq: e.map(EntanglementParams::alpha_sq),
        gamma_sq: p.map(PolarizationParams::gamma_sq),
        eta_p: model.eta_p,
        schedule: schedule.clone(),
        rounds,
        p_total,
        engine: engine_name,
        seed,
        trials,
        stderr,
        paper_comparison,
        detector: DetectorReport {
            mode: model.mode,
            success_exponent: trace.arms.iter().map(|a| model.exponent(a.clicks)).collect(),
        },
    })
}

fn comparisons(
    e: &EntanglementParams,
    p: Option<&PolarizationParams>,
    model: &DetectorModel,
    trace: &Trace,
    rounds: &[RoundReport],
) -> BTreeMap<String, Comparison> {
    let mut out = BTreeMap::new();
    let mut put = |name: &str, claimed: f64, sim: f64| {
        out.insert(name.to_string(), Comparison::new(claimed, sim));
    };
    let first = |arm: usize| {
        trace
            .arms
            .get(arm)
            .and_then(|a| a.rounds.first().map(|r| r.success_probability() * model.success_factor(a.clicks)))
            .unwrap_or(0.0)
    };
    let p1 = rounds.first().map_or(0.0, |r| r.p_success);
    let raw1 = trace.raw_success(0);
    let eta1 = model.success_factor(1);

    match (p, trace.accounting) {
        (Some(pol), Accounting::PaperBranch) => {
            put("branch_plus", formulas::branch_plus(e, pol) * eta1, first(0));
            put("branch_minus", formulas::branch_minus(e, pol) * eta1, first(1));
            put("claimed_total", formulas::claimed_total(e), raw1);
            put("efficiency_total", formulas::claimed_total(e) * eta1, p1);
            let first_round = trace.arms.first().and_then(|a| a.rounds.first());
            if let Some((kept, t)) = first_round.and_then(|r| r.qnd_kept.zip(r.t)) {
                put("qnd_selection_round1", formulas::qnd_selection(e, pol, t), kept);
            }
        }
        (Some(_), Accounting::JointCoherent) => {
            let eta = model.success_factor(trace.arms[0].clicks);
            put("claimed_total", formulas::claimed_total(e), raw1);
            put("joint_hand_prediction", formulas::joint_hand_prediction(e) * eta, p1);
        }
        (None, _) => {}
    }

    let recycling = trace.arms.iter().any(|a| a.rounds.iter().any(|r| r.qnd_kept.is_some()));
    if recycling || p.is_none() {
        let table = formulas::series(e, model.eta_p, rounds.len());
        for (k, (claimed, r)) in table.p.iter().zip(rounds).enumerate() {
            put(&format!("series_p{}", k + 1), *claimed, r.p_success);
        }
        put("series_total", table.total(), rounds.iter().map(|r| r.p_success).sum());
    }
    out
}
