//! Sequential exact engine.
//!
//! A run is recorded as a [`Trace`]: per arm, per round, the heralded
//! successes (with their corrected outputs) and the recyclable mass. Reports
//! and Monte Carlo sampling are both derived from the trace, so the circuit
//! executor only has to reproduce the trace to reproduce the report.

use num_complex::Complex64;

use super::report::{build_report, EngineKind, ProtocolReport};
use super::{
    concentrated_target, montecarlo, prepare_initial, Accounting, EntanglementParams, PolarizationParams,
    VbsSchedule,
};
use crate::error::{Error, Result};
use crate::fock::{fidelity, tensor, ModeRef, PolLabel, StateVector};
use crate::measurement::{herald, qnd_class, DetectorGroup, DetectorModel, FlipRule};
use crate::optics::{apply_bs, apply_pbs, apply_pbs_merge, apply_vbs};

/// Two corrected residuals closer than this are treated as the same branch.
const SAME_BRANCH_FIDELITY: f64 = 1.0 - 1e-12;

/// The final PBS: H from `in_h` and V from `in_v` leave through `output`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergePorts {
    pub in_h: String,
    pub in_v: String,
    pub output: String,
}

#[derive(Debug, Clone)]
pub struct SuccessOutput {
    pub label: String,
    pub raw_probability: f64,
    /// Corrected, renormalized residual before the final merge.
    pub output: StateVector,
}

#[derive(Debug, Clone, Default)]
pub struct ArmRound {
    /// Transmission of the first VBS in the round, when it has one.
    pub t: Option<f64>,
    /// Squared norm entering the round.
    pub mass: f64,
    /// Mass kept by the QND selection, when the round has one.
    pub qnd_kept: Option<f64>,
    pub successes: Vec<SuccessOutput>,
    pub recycle_probability: f64,
    /// Distinct corrected recycle residuals, renormalized.
    pub recycle_residuals: Vec<StateVector>,
}

impl ArmRound {
    pub fn success_probability(&self) -> f64 {
        self.successes.iter().map(|s| s.raw_probability).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ArmTrace {
    pub label: String,
    pub mass: f64,
    /// Click groups a success herald needs.
    pub clicks: u32,
    pub rounds: Vec<ArmRound>,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub accounting: Accounting,
    pub arms: Vec<ArmTrace>,
    pub merge: Option<MergePorts>,
    pub target: StateVector,
    /// No heralding at all: the output is compared with itself.
    pub unconditioned: bool,
}

impl Trace {
    pub fn rounds(&self) -> usize {
        self.arms.iter().map(|a| a.rounds.len()).max().unwrap_or(0)
    }

    /// Raw (efficiency-free) success probability of round `k` (0-based).
    pub fn raw_success(&self, k: usize) -> f64 {
        self.arms
            .iter()
            .filter_map(|a| a.rounds.get(k))
            .map(ArmRound::success_probability)
            .sum()
    }

    pub fn success(&self, k: usize, model: &DetectorModel) -> f64 {
        self.arms
            .iter()
            .filter_map(|a| a.rounds.get(k).map(|r| r.success_probability() * model.success_factor(a.clicks)))
            .sum()
    }

    pub fn recycle(&self, k: usize) -> f64 {
        self.arms
            .iter()
            .filter_map(|a| a.rounds.get(k))
            .map(|r| r.recycle_probability)
            .sum()
    }

    fn finalize(&self, s: &StateVector) -> Result<StateVector> {
        match &self.merge {
            Some(m) => apply_pbs_merge(s, &m.in_h, &m.in_v, &m.output),
            None => Ok(s.clone()),
        }
    }

    /// Worst fidelity with the target over the heralded outputs of round `k`.
    pub fn heralded_fidelity(&self, k: usize) -> Result<Option<f64>> {
        if self.unconditioned {
            return Ok(self.arms.iter().any(|a| a.rounds.get(k).is_some_and(|r| !r.successes.is_empty())).then_some(1.0));
        }
        let mut worst: Option<f64> = None;
        let mut consider = |f: f64| worst = Some(worst.map_or(f, |w: f64| w.min(f)));

        let paired = self.accounting == Accounting::PaperBranch && self.arms.len() == 2 && self.merge.is_some();
        if paired {
            let merge = self.merge.as_ref().unwrap();
            let (upper, lower) = (&self.arms[0], &self.arms[1]);
            let empty = Vec::new();
            let ups = upper.rounds.get(k).map_or(&empty, |r| &r.successes);
            let lows = lower.rounds.get(k).map_or(&empty, |r| &r.successes);
            if ups.is_empty() || lows.is_empty() {
                for s in ups.iter().chain(lows) {
                    consider(fidelity(&self.finalize(&s.output)?, &self.target)?);
                }
            } else {
                for u in ups {
                    for l in lows {
                        let merged = merge_branch_outputs(&u.output, &l.output, merge)?;
                        consider(fidelity(&self.finalize(&merged)?, &self.target)?);
                    }
                }
            }
        } else {
            for arm in &self.arms {
                if let Some(r) = arm.rounds.get(k) {
                    for s in &r.successes {
                        consider(fidelity(&self.finalize(&s.output)?, &self.target)?);
                    }
                }
            }
        }
        Ok(worst)
    }
}

/// Combines the heralded outputs of the two PBS arms the way the branch
/// accounting does: Alice's component (no photon at either merge input) is
/// taken once, and each arm's Bob component is added relative to that arm's
/// own Alice component.
pub fn merge_branch_outputs(upper: &StateVector, lower: &StateVector, ports: &MergePorts) -> Result<StateVector> {
    let at_bob = |p: &crate::fock::OccupationPattern| {
        p.spatial_count(&ports.in_h) + p.spatial_count(&ports.in_v) > 0
    };
    let (alice_u, bob_u) = (upper.filter(|p| !at_bob(p)), upper.filter(at_bob));
    let (alice_l, bob_l) = (lower.filter(|p| !at_bob(p)), lower.filter(at_bob));
    let reference = if alice_u.norm_sqr() > 0.0 { &alice_u } else { &alice_l };
    let reference = reference.normalized()?;
    let mut merged = reference.clone();
    for (alice, bob) in [(&alice_u, &bob_u), (&alice_l, &bob_l)] {
        let c = reference.inner(alice);
        if c.norm() == 0.0 {
            return Err(Error::DegenerateState("arm output has no component at Alice".into()));
        }
        merged = merged.add(&bob.scaled(Complex64::new(1.0, 0.0) / c));
    }
    merged.normalized()
}

/// Port assignment of one PBS arm.
#[derive(Debug, Clone)]
pub(crate) struct ArmLayout {
    pub aux: &'static str,
    pub aux_pol: PolLabel,
    pub reflect: &'static str,
    pub transmit: &'static str,
    pub signal: &'static str,
    pub detectors: [&'static str; 2],
    pub group: &'static str,
    pub recycle_detectors: [&'static str; 2],
    pub recycle_group: &'static str,
}

pub(crate) const UPPER: ArmLayout = ArmLayout {
    aux: "b4",
    aux_pol: PolLabel::V,
    reflect: "b5",
    transmit: "b6",
    signal: "b2",
    detectors: ["d1", "d2"],
    group: "D12",
    recycle_detectors: ["d3", "d4"],
    recycle_group: "D34",
};

pub(crate) const LOWER_ECP1: ArmLayout = ArmLayout {
    aux: "b7",
    aux_pol: PolLabel::H,
    reflect: "b8",
    transmit: "b9",
    signal: "b3",
    detectors: ["d3", "d4"],
    group: "D34",
    recycle_detectors: ["d7", "d8"],
    recycle_group: "D78",
};

pub(crate) const LOWER_ECP2: ArmLayout = ArmLayout {
    detectors: ["d5", "d6"],
    group: "D56",
    ..LOWER_ECP1
};

pub(crate) fn merge_ports() -> MergePorts {
    MergePorts {
        in_h: "b9".into(),
        in_v: "b6".into(),
        output: "b10".into(),
    }
}

/// What one round of a set of jointly simulated arms produced.
#[derive(Debug, Default)]
pub(crate) struct RoundResult {
    pub qnd_kept: Option<f64>,
    pub successes: Vec<SuccessOutput>,
    pub recycle_probability: f64,
    /// Unnormalized next-round inputs, one per distinct residual.
    pub next: Vec<StateVector>,
}

/// Folds heralded recycle outcomes into distinct next-round branches. Each
/// branch is the corrected residual scaled to the total mass of the outcomes
/// that produced it.
pub(crate) fn collect_branches(outcomes: impl IntoIterator<Item = (f64, StateVector)>) -> Result<Vec<StateVector>> {
    let mut groups: Vec<(StateVector, f64)> = Vec::new();
    for (mass, state) in outcomes {
        let mut placed = false;
        for (rep, total) in groups.iter_mut() {
            if fidelity(rep, &state)? >= SAME_BRANCH_FIDELITY {
                *total += mass;
                placed = true;
                break;
            }
        }
        if !placed {
            groups.push((state, mass));
        }
    }
    Ok(groups
        .into_iter()
        .map(|(s, m)| s.scaled(Complex64::new(m.sqrt(), 0.0)))
        .collect())
}

pub(crate) fn push_successes(
    out: &mut RoundResult,
    s: &StateVector,
    groups: &[DetectorGroup],
    flips: &[FlipRule],
) {
    for o in herald(s, groups, flips, &DetectorModel::ideal()) {
        if o.success {
            out.successes.push(SuccessOutput {
                label: o.label(),
                raw_probability: o.raw_probability,
                output: o.corrected(),
            });
        }
    }
}

pub(crate) fn recycle_outcomes(
    s: &StateVector,
    groups: &[DetectorGroup],
    flips: &[FlipRule],
) -> (f64, Vec<(f64, StateVector)>) {
    let mut total = 0.0;
    let mut kept = Vec::new();
    for o in herald(s, groups, flips, &DetectorModel::ideal()) {
        if o.success {
            total += o.raw_probability;
            kept.push((o.raw_probability, o.corrected()));
        }
    }
    (total, kept)
}

fn native_round(
    branches: &[StateVector],
    layouts: &[&ArmLayout],
    ts: &[f64],
    with_qnd: bool,
) -> Result<RoundResult> {
    let mut out = RoundResult::default();
    let mut recycled = Vec::new();
    let groups: Vec<_> = layouts.iter().map(|l| DetectorGroup::new(l.group, &l.detectors)).collect();
    let flips: Vec<_> = layouts.iter().map(|l| FlipRule::new(l.detectors[1], l.transmit)).collect();
    let recycle_groups: Vec<_> = layouts
        .iter()
        .map(|l| DetectorGroup::new(l.recycle_group, &l.recycle_detectors))
        .collect();
    let recycle_flips: Vec<_> = layouts
        .iter()
        .map(|l| FlipRule::new(l.recycle_detectors[1], l.signal))
        .collect();

    for branch in branches {
        let mut s = branch.clone();
        for (l, t) in layouts.iter().zip(ts) {
            s = tensor(&s, &StateVector::single_photon(ModeRef::new(l.aux, l.aux_pol)))?;
            s = apply_vbs(&s, l.aux, l.reflect, l.transmit, *t)?;
        }

        let mut kept = s.clone();
        let mut recycle = s;
        if with_qnd {
            for l in layouts {
                kept = kept.filter(|p| qnd_class(p, l.signal, l.reflect) == 1);
                recycle = recycle.filter(|p| qnd_class(p, l.signal, l.reflect) == 0);
            }
            *out.qnd_kept.get_or_insert(0.0) += kept.norm_sqr();
        }

        for l in layouts {
            kept = apply_bs(&kept, l.signal, l.reflect, l.detectors[0], l.detectors[1])?;
        }
        push_successes(&mut out, &kept, &groups, &flips);

        if with_qnd {
            for l in layouts {
                recycle = apply_bs(&recycle, l.reflect, l.transmit, l.recycle_detectors[0], l.recycle_detectors[1])?;
            }
            let (mass, outcomes) = recycle_outcomes(&recycle, &recycle_groups, &recycle_flips);
            out.recycle_probability += mass;
            recycled.extend(outcomes);
        }
    }
    out.next = collect_branches(recycled)?;
    Ok(out)
}

pub(crate) fn rounds_to_trace(
    label: &str,
    input: StateVector,
    clicks: u32,
    schedules: &[&[f64]],
    rounds: usize,
    mut step: impl FnMut(&[StateVector], usize) -> Result<RoundResult>,
) -> Result<ArmTrace> {
    let mass = input.norm_sqr();
    let mut branches = vec![input];
    let mut out = Vec::with_capacity(rounds);
    for k in 0..rounds {
        let mass_in: f64 = branches.iter().map(StateVector::norm_sqr).sum();
        let r = step(&branches, k)?;
        let residuals = r
            .next
            .iter()
            .map(StateVector::normalized)
            .collect::<Result<Vec<_>>>()?;
        out.push(ArmRound {
            t: schedules.first().and_then(|s| s.get(k)).copied(),
            mass: mass_in,
            qnd_kept: r.qnd_kept,
            successes: r.successes,
            recycle_probability: r.recycle_probability,
            recycle_residuals: residuals,
        });
        branches = r.next;
    }
    Ok(ArmTrace {
        label: label.into(),
        mass,
        clicks,
        rounds: out,
    })
}

/// Which protocol to run.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolSpec {
    /// Linear optics only; one round with fixed VBS transmissions.
    Ecp1 { t1: f64, t2: f64 },
    /// QND-assisted, recycling the even-class outcome for up to `rounds` rounds.
    Ecp2 { schedule: VbsSchedule, rounds: usize },
}

impl ProtocolSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolSpec::Ecp1 { .. } => "ecp1",
            ProtocolSpec::Ecp2 { .. } => "ecp2",
        }
    }

    pub fn rounds(&self) -> usize {
        match self {
            ProtocolSpec::Ecp1 { .. } => 1,
            ProtocolSpec::Ecp2 { rounds, .. } => *rounds,
        }
    }

    pub fn schedule(&self) -> Result<VbsSchedule> {
        match self {
            ProtocolSpec::Ecp1 { t1, t2 } => VbsSchedule::new(vec![*t1], vec![*t2]),
            ProtocolSpec::Ecp2 { schedule, rounds } => {
                if schedule.len() < *rounds {
                    return Err(Error::Configuration(format!(
                        "schedule has {} entries but {rounds} rounds were requested",
                        schedule.len()
                    )));
                }
                Ok(VbsSchedule {
                    upper: schedule.upper[..*rounds].to_vec(),
                    lower: schedule.lower[..*rounds].to_vec(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Exact,
    MonteCarlo { trials: u64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub protocol: ProtocolSpec,
    pub accounting: Accounting,
    pub model: DetectorModel,
    pub engine: Engine,
}

/// Simulates the protocol exactly and records the per-round trace.
///
/// `p = None` runs the polarization-free reference: a horizontally polarized
/// photon through the H arm alone.
pub fn trace(
    e: &EntanglementParams,
    p: Option<&PolarizationParams>,
    protocol: &ProtocolSpec,
    accounting: Accounting,
) -> Result<Trace> {
    let schedule = protocol.schedule()?;
    let rounds = protocol.rounds();
    let with_qnd = matches!(protocol, ProtocolSpec::Ecp2 { .. });
    let lower = if with_qnd { &LOWER_ECP2 } else { &LOWER_ECP1 };

    let pol = p.copied().unwrap_or_else(PolarizationParams::horizontal);
    let split = apply_pbs(&prepare_initial(e, &pol), "b1", "b3", "b2")?;
    let target = concentrated_target(&pol, &["a1", "b10"]);

    let arms = match (p, accounting) {
        (None, Accounting::JointCoherent) => {
            return Err(Error::Configuration(
                "the polarization-free reference is defined for branch accounting only".into(),
            ))
        }
        (None, Accounting::PaperBranch) => {
            let arm = split.filter(|q| q.spatial_count("b2") == 0);
            vec![rounds_to_trace("stripped", arm, 1, &[&schedule.lower], rounds, |b, k| {
                native_round(b, &[lower], &[schedule.lower[k]], with_qnd)
            })?]
        }
        (Some(_), Accounting::PaperBranch) => {
            let upper_in = split.filter(|q| q.spatial_count("b3") == 0);
            let lower_in = split.filter(|q| q.spatial_count("b2") == 0);
            vec![
                rounds_to_trace("upper", upper_in, 1, &[&schedule.upper], rounds, |b, k| {
                    native_round(b, &[&UPPER], &[schedule.upper[k]], with_qnd)
                })?,
                rounds_to_trace("lower", lower_in, 1, &[&schedule.lower], rounds, |b, k| {
                    native_round(b, &[lower], &[schedule.lower[k]], with_qnd)
                })?,
            ]
        }
        (Some(_), Accounting::JointCoherent) => {
            vec![rounds_to_trace(
                "joint",
                split,
                2,
                &[&schedule.upper, &schedule.lower],
                rounds,
                |b, k| native_round(b, &[&UPPER, lower], &[schedule.upper[k], schedule.lower[k]], with_qnd),
            )?]
        }
    };

    Ok(Trace {
        accounting,
        arms,
        merge: Some(merge_ports()),
        target,
        unconditioned: false,
    })
}

pub(crate) fn validate_run(e: &EntanglementParams, protocol: &ProtocolSpec, model: &DetectorModel) -> Result<()> {
    model.validate()?;
    if let ProtocolSpec::Ecp1 { t1, t2 } = protocol {
        for t in [t1, t2] {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::Parameter(format!("VBS transmission {t} outside [0, 1]")));
            }
        }
    }
    if protocol.rounds() == 0 {
        return Err(Error::Configuration("at least one round is required".into()));
    }
    e.require_entangled()
}

/// Runs a protocol with the configured engine and assembles its report.
pub fn run(e: &EntanglementParams, p: Option<&PolarizationParams>, config: &RunConfig) -> Result<ProtocolReport> {
    validate_run(e, &config.protocol, &config.model)?;
    let tr = trace(e, p, &config.protocol, config.accounting)?;
    let engine = match config.engine {
        Engine::Exact => EngineKind::Exact,
        Engine::MonteCarlo { trials, seed } => {
            EngineKind::MonteCarlo(montecarlo::sample_trace(&tr, &config.model, trials, seed)?)
        }
    };
    build_report(
        config.protocol.name(),
        Some(e),
        p,
        &config.protocol.schedule()?,
        &config.model,
        &tr,
        engine,
    )
}

pub fn run_ecp1(
    e: &EntanglementParams,
    p: Option<&PolarizationParams>,
    t1: f64,
    t2: f64,
    accounting: Accounting,
    model: DetectorModel,
) -> Result<ProtocolReport> {
    run(
        e,
        p,
        &RunConfig {
            protocol: ProtocolSpec::Ecp1 { t1, t2 },
            accounting,
            model,
            engine: Engine::Exact,
        },
    )
}

pub fn run_ecp2(
    e: &EntanglementParams,
    p: Option<&PolarizationParams>,
    schedule: &VbsSchedule,
    max_rounds: usize,
    accounting: Accounting,
    model: DetectorModel,
) -> Result<ProtocolReport> {
    run(
        e,
        p,
        &RunConfig {
            protocol: ProtocolSpec::Ecp2 {
                schedule: schedule.clone(),
                rounds: max_rounds,
            },
            accounting,
            model,
            engine: Engine::Exact,
        },
    )
}
