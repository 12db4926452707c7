//! Path-sum ground truth.
//!
//! Photons are tracked as labelled particles. Every element sends each
//! photon down each of its possible output paths, multiplying amplitudes
//! along the way; histories that end with the same multiset of positions and
//! the same click record are summed. Fock amplitudes appear only when a
//! probability or an overlap is taken (`√Π n!` per monomial). Nothing here
//! goes through the mode-transform machinery of the sequential engine, and
//! the circuit topology is written out independently.

use std::collections::BTreeMap;

use num_complex::Complex64;

use super::engine::ProtocolSpec;
use super::{Accounting, EntanglementParams, PolarizationParams};
use crate::error::{Error, Result};
use crate::fock::PolLabel;

const MAX_PHOTONS: usize = 3;

pub type Position = (String, PolLabel);
pub type Clicks = BTreeMap<String, u32>;

/// One step of a path-sum computation.
#[derive(Debug, Clone)]
pub enum Stage {
    /// A new photon in a superposition of positions.
    AddPhoton(Vec<(Position, Complex64)>),
    /// Single-photon routing table; positions not listed are untouched.
    Linear(Vec<(Position, Vec<(Position, Complex64)>)>),
    /// Keeps histories with no photon in this spatial mode.
    Absent(String),
    /// Keeps histories with `|n_a − n_b| == class`.
    Qnd { a: String, b: String, class: u32 },
    /// Counts and removes the photons in these spatial modes.
    Detect(Vec<String>),
    /// Negates histories with an odd photon number in `mode` when `when`
    /// registered exactly one photon.
    FlipIf { when: String, mode: String },
}

/// Histories keyed by sorted photon positions and click record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathSum {
    histories: BTreeMap<(Vec<Position>, Clicks), Complex64>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// `Π n!` over the distinct positions of a sorted monomial.
fn multiplicity(positions: &[Position]) -> f64 {
    let mut product = 1.0;
    let mut i = 0;
    while i < positions.len() {
        let mut j = i;
        while j < positions.len() && positions[j] == positions[i] {
            j += 1;
        }
        product *= factorial(j - i);
        i = j;
    }
    product
}

impl PathSum {
    pub fn vacuum() -> Self {
        let mut histories = BTreeMap::new();
        histories.insert((Vec::new(), Clicks::new()), Complex64::new(1.0, 0.0));
        PathSum { histories }
    }

    fn insert(&mut self, positions: Vec<Position>, clicks: Clicks, amp: Complex64) {
        *self.histories.entry((positions, clicks)).or_default() += amp;
    }

    pub fn max_photons(&self) -> usize {
        self.histories.keys().map(|(p, _)| p.len()).max().unwrap_or(0)
    }

    pub fn apply(&self, stage: &Stage) -> Result<PathSum> {
        let mut out = PathSum::default();
        for ((positions, clicks), amp) in &self.histories {
            match stage {
                Stage::AddPhoton(paths) => {
                    for (pos, a) in paths {
                        let mut next = positions.clone();
                        next.push(pos.clone());
                        next.sort();
                        out.insert(next, clicks.clone(), amp * a);
                    }
                }
                Stage::Linear(table) => {
                    let mut partial: Vec<(Vec<Position>, Complex64)> = vec![(Vec::new(), *amp)];
                    for pos in positions {
                        let routes = table.iter().find(|(from, _)| from == pos).map(|(_, r)| r);
                        partial = match routes {
                            None => partial
                                .into_iter()
                                .map(|(mut path, a)| {
                                    path.push(pos.clone());
                                    (path, a)
                                })
                                .collect(),
                            Some(routes) => partial
                                .into_iter()
                                .flat_map(|(path, a)| {
                                    routes.iter().map(move |(to, r)| {
                                        let mut p = path.clone();
                                        p.push(to.clone());
                                        (p, a * r)
                                    })
                                })
                                .collect(),
                        };
                    }
                    for (mut path, a) in partial {
                        path.sort();
                        out.insert(path, clicks.clone(), a);
                    }
                }
                Stage::Absent(mode) => {
                    if positions.iter().all(|(m, _)| m != mode) {
                        out.insert(positions.clone(), clicks.clone(), *amp);
                    }
                }
                Stage::Qnd { a, b, class } => {
                    let na = positions.iter().filter(|(m, _)| m == a).count() as i64;
                    let nb = positions.iter().filter(|(m, _)| m == b).count() as i64;
                    if (na - nb).unsigned_abs() == *class as u64 {
                        out.insert(positions.clone(), clicks.clone(), *amp);
                    }
                }
                Stage::Detect(detectors) => {
                    let (hit, kept): (Vec<Position>, Vec<Position>) =
                        positions.iter().cloned().partition(|(m, _)| detectors.contains(m));
                    let mut record = clicks.clone();
                    for d in detectors {
                        record.insert(d.clone(), hit.iter().filter(|(m, _)| m == d).count() as u32);
                    }
                    out.insert(kept, record, amp * multiplicity(&hit).sqrt());
                }
                Stage::FlipIf { when, mode } => {
                    let odd = positions.iter().filter(|(m, _)| m == mode).count() % 2 == 1;
                    let sign = if clicks.get(when) == Some(&1) && odd { -1.0 } else { 1.0 };
                    out.insert(positions.clone(), clicks.clone(), amp * sign);
                }
            }
        }
        out.histories.retain(|_, a| a.norm_sqr() > 0.0);
        if out.max_photons() > MAX_PHOTONS {
            return Err(Error::UnsupportedInstance(format!(
                "path enumeration is limited to {MAX_PHOTONS} photons"
            )));
        }
        Ok(out)
    }

    pub fn run(&self, stages: &[Stage]) -> Result<PathSum> {
        stages.iter().try_fold(self.clone(), |s, st| s.apply(st))
    }

    /// Probability of every click record present.
    pub fn click_probabilities(&self) -> BTreeMap<Clicks, f64> {
        let mut out = BTreeMap::new();
        for ((positions, clicks), amp) in &self.histories {
            *out.entry(clicks.clone()).or_insert(0.0) += amp.norm_sqr() * multiplicity(positions);
        }
        out
    }

    pub fn keep(&self, pred: impl Fn(&Clicks) -> bool) -> PathSum {
        PathSum {
            histories: self
                .histories
                .iter()
                .filter(|((_, c), _)| pred(c))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.click_probabilities().values().sum()
    }

    /// Fock amplitudes of the undetected photons for one click record.
    pub fn output(&self, clicks: &Clicks) -> Amplitudes {
        let mut out = Amplitudes::new();
        for ((positions, c), amp) in &self.histories {
            if c == clicks {
                *out.entry(positions.clone()).or_default() += amp * multiplicity(positions).sqrt();
            }
        }
        out
    }
}

/// Fock amplitudes keyed by sorted photon positions.
pub type Amplitudes = BTreeMap<Vec<Position>, Complex64>;

fn overlap(a: &Amplitudes, b: &Amplitudes) -> Complex64 {
    a.iter()
        .filter_map(|(k, x)| b.get(k).map(|y| x.conj() * y))
        .sum()
}

fn norm_sqr(a: &Amplitudes) -> f64 {
    a.values().map(Complex64::norm_sqr).sum()
}

/// `|⟨a|b⟩|² / (⟨a|a⟩⟨b|b⟩)`.
pub fn state_fidelity(a: &Amplitudes, b: &Amplitudes) -> Result<f64> {
    let (na, nb) = (norm_sqr(a), norm_sqr(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateState("fidelity with a zero state".into()));
    }
    Ok(overlap(a, b).norm_sqr() / (na * nb))
}

fn pos(mode: &str, pol: PolLabel) -> Position {
    (mode.to_string(), pol)
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

const POLS: [PolLabel; 2] = [PolLabel::H, PolLabel::V];

fn beam_splitter(in1: &str, in2: &str, out1: &str, out2: &str) -> Stage {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut table = Vec::new();
    for p in POLS {
        table.push((pos(in1, p), vec![(pos(out1, p), c(r)), (pos(out2, p), c(-r))]));
        table.push((pos(in2, p), vec![(pos(out1, p), c(r)), (pos(out2, p), c(r))]));
    }
    Stage::Linear(table)
}

fn variable_splitter(input: &str, reflect: &str, transmit: &str, t: f64) -> Stage {
    let table = POLS
        .iter()
        .map(|&p| {
            (
                pos(input, p),
                vec![(pos(reflect, p), c((1.0 - t).sqrt())), (pos(transmit, p), c(t.sqrt()))],
            )
        })
        .collect();
    Stage::Linear(table)
}

struct Arm {
    aux: Position,
    reflect: &'static str,
    transmit: &'static str,
    signal: &'static str,
    success: [&'static str; 2],
    recycle: [&'static str; 2],
}

fn arms(ecp2: bool) -> (Arm, Arm) {
    (
        Arm {
            aux: pos("b4", PolLabel::V),
            reflect: "b5",
            transmit: "b6",
            signal: "b2",
            success: ["d1", "d2"],
            recycle: ["d3", "d4"],
        },
        Arm {
            aux: pos("b7", PolLabel::H),
            reflect: "b8",
            transmit: "b9",
            signal: "b3",
            success: if ecp2 { ["d5", "d6"] } else { ["d3", "d4"] },
            recycle: ["d7", "d8"],
        },
    )
}

fn tagged(k: usize, d: &str) -> String {
    format!("r{k}:{d}")
}

fn all_groups_single(clicks: &Clicks, k: usize, groups: &[[&str; 2]]) -> bool {
    groups.iter().all(|g| {
        g.iter().map(|d| clicks.get(&tagged(k, d)).copied().unwrap_or(0)).sum::<u32>() == 1
    })
}

/// Heralded outputs of one success click record.
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub clicks: Clicks,
    pub probability: f64,
    /// Unnormalized Fock amplitudes of the undetected photons.
    pub output: Amplitudes,
}

#[derive(Debug, Clone, Default)]
pub struct OracleRound {
    pub success_probability: f64,
    pub recycle_probability: f64,
    pub qnd_kept: Option<f64>,
    pub outcomes: Vec<OracleOutcome>,
    /// Recycled state entering the next round, one entry per click record.
    pub residuals: Vec<Amplitudes>,
}

#[derive(Debug, Clone)]
pub struct OracleArm {
    pub label: String,
    pub rounds: Vec<OracleRound>,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub arms: Vec<OracleArm>,
    /// Worst heralded-output fidelity with the target, per round.
    pub heralded_fidelity: Vec<Option<f64>>,
}

impl OracleResult {
    /// Efficiency-free success probability of round `k` (0-based).
    pub fn success(&self, k: usize) -> f64 {
        self.arms
            .iter()
            .filter_map(|a| a.rounds.get(k))
            .map(|r| r.success_probability)
            .sum()
    }

    pub fn recycle(&self, k: usize) -> f64 {
        self.arms
            .iter()
            .filter_map(|a| a.rounds.get(k))
            .map(|r| r.recycle_probability)
            .sum()
    }
}

fn run_arm(label: &str, input: PathSum, arms: &[&Arm], ts: &[&[f64]], rounds: usize, ecp2: bool) -> Result<OracleArm> {
    let mut live = input;
    let mut out = Vec::new();
    for k in 0..rounds {
        let mut s = live.clone();
        for (arm, sched) in arms.iter().zip(ts) {
            s = s.apply(&Stage::AddPhoton(vec![(arm.aux.clone(), c(1.0))]))?;
            s = s.apply(&variable_splitter(&arm.aux.0, arm.reflect, arm.transmit, sched[k]))?;
        }
        let mut round = OracleRound::default();

        let mut kept = s.clone();
        if ecp2 {
            for arm in arms {
                kept = kept.apply(&Stage::Qnd {
                    a: arm.signal.into(),
                    b: arm.reflect.into(),
                    class: 1,
                })?;
            }
            round.qnd_kept = Some(kept.norm_sqr());
        }
        for arm in arms {
            kept = kept.apply(&beam_splitter(
                arm.signal,
                arm.reflect,
                &tagged(k, arm.success[0]),
                &tagged(k, arm.success[1]),
            ))?;
        }
        let detectors: Vec<String> = arms
            .iter()
            .flat_map(|a| a.success.iter().map(|d| tagged(k, d)))
            .collect();
        kept = kept.apply(&Stage::Detect(detectors))?;
        for arm in arms {
            kept = kept.apply(&Stage::FlipIf {
                when: tagged(k, arm.success[1]),
                mode: arm.transmit.into(),
            })?;
        }
        let success_groups: Vec<[&str; 2]> = arms.iter().map(|a| a.success).collect();
        for (clicks, p) in kept.click_probabilities() {
            if all_groups_single(&clicks, k, &success_groups) {
                round.success_probability += p;
                round.outcomes.push(OracleOutcome {
                    output: kept.output(&clicks),
                    clicks,
                    probability: p,
                });
            }
        }

        if ecp2 {
            let mut recycle = s;
            for arm in arms {
                recycle = recycle.apply(&Stage::Qnd {
                    a: arm.signal.into(),
                    b: arm.reflect.into(),
                    class: 0,
                })?;
            }
            for arm in arms {
                recycle = recycle.apply(&beam_splitter(
                    arm.reflect,
                    arm.transmit,
                    &tagged(k, arm.recycle[0]),
                    &tagged(k, arm.recycle[1]),
                ))?;
            }
            let detectors: Vec<String> = arms
                .iter()
                .flat_map(|a| a.recycle.iter().map(|d| tagged(k, d)))
                .collect();
            recycle = recycle.apply(&Stage::Detect(detectors))?;
            for arm in arms {
                recycle = recycle.apply(&Stage::FlipIf {
                    when: tagged(k, arm.recycle[1]),
                    mode: arm.signal.into(),
                })?;
            }
            let recycle_groups: Vec<[&str; 2]> = arms.iter().map(|a| a.recycle).collect();
            live = recycle.keep(|cl| all_groups_single(cl, k, &recycle_groups));
            round.recycle_probability = live.norm_sqr();
            round.residuals = live.click_probabilities().keys().map(|cl| live.output(cl)).collect();
        } else {
            live = PathSum::default();
        }
        out.push(round);
    }
    Ok(OracleArm {
        label: label.into(),
        rounds: out,
    })
}

fn merge_ports(a: &Amplitudes) -> Result<Amplitudes> {
    let mut out = Amplitudes::new();
    for (positions, amp) in a {
        let mut moved = Vec::with_capacity(positions.len());
        for (m, p) in positions {
            let m = match (m.as_str(), p) {
                ("b9", PolLabel::H) | ("b6", PolLabel::V) => "b10".to_string(),
                ("b9", _) | ("b6", _) => {
                    return Err(Error::PortContract(format!("{m} carries the wrong polarization")))
                }
                _ => m.clone(),
            };
            moved.push((m, *p));
        }
        moved.sort();
        *out.entry(moved).or_default() += amp;
    }
    Ok(out)
}

fn at_bob(positions: &[Position]) -> bool {
    positions.iter().any(|(m, _)| m == "b6" || m == "b9")
}

fn scale(a: &Amplitudes, f: Complex64) -> Amplitudes {
    a.iter().map(|(k, v)| (k.clone(), v * f)).collect()
}

/// The two arms' outputs combined around a shared Alice component.
fn combine(upper: &Amplitudes, lower: &Amplitudes) -> Result<Amplitudes> {
    let split = |a: &Amplitudes| -> (Amplitudes, Amplitudes) {
        a.iter().map(|(k, v)| (k.clone(), *v)).partition(|(k, _)| !at_bob(k))
    };
    let (au, bu) = split(upper);
    let (al, bl) = split(lower);
    let reference = if norm_sqr(&au) > 0.0 { &au } else { &al };
    let reference = scale(reference, c(1.0 / norm_sqr(reference).sqrt()));
    let mut merged = reference.clone();
    for (alice, bob) in [(&au, &bu), (&al, &bl)] {
        let w = overlap(&reference, alice);
        if w.norm() == 0.0 {
            return Err(Error::DegenerateState("arm output has no Alice component".into()));
        }
        for (k, v) in scale(bob, c(1.0) / w) {
            *merged.entry(k).or_default() += v;
        }
    }
    Ok(merged)
}

fn target(p: &PolarizationParams) -> Amplitudes {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut t = Amplitudes::new();
    for m in ["a1", "b10"] {
        t.insert(vec![pos(m, PolLabel::H)], p.gamma * r);
        t.insert(vec![pos(m, PolLabel::V)], p.delta * r);
    }
    t.retain(|_, a| a.norm_sqr() > 0.0);
    t
}

fn worst(values: impl IntoIterator<Item = Result<f64>>) -> Result<Option<f64>> {
    let mut w: Option<f64> = None;
    for v in values {
        let v = v?;
        w = Some(w.map_or(v, |x| x.min(v)));
    }
    Ok(w)
}

/// Enumerates the protocol's photon paths and reports, per round, the
/// success probability by click record and the heralded-output fidelity.
///
/// `p = None` runs the horizontally polarized single-arm reference.
pub fn oracle_enumerate(
    e: &EntanglementParams,
    p: Option<&PolarizationParams>,
    protocol: &ProtocolSpec,
    accounting: Accounting,
) -> Result<OracleResult> {
    let ecp2 = matches!(protocol, ProtocolSpec::Ecp2 { .. });
    let schedule = protocol.schedule()?;
    let rounds = protocol.rounds();
    let pol = p.copied().unwrap_or_else(PolarizationParams::horizontal);

    let photon = Stage::AddPhoton(
        [
            (pos("a1", PolLabel::H), e.alpha * pol.gamma),
            (pos("a1", PolLabel::V), e.alpha * pol.delta),
            (pos("b1", PolLabel::H), e.beta * pol.gamma),
            (pos("b1", PolLabel::V), e.beta * pol.delta),
        ]
        .into_iter()
        .filter(|(_, a)| a.norm_sqr() > 0.0)
        .collect(),
    );
    let pbs = Stage::Linear(vec![
        (pos("b1", PolLabel::H), vec![(pos("b3", PolLabel::H), c(1.0))]),
        (pos("b1", PolLabel::V), vec![(pos("b2", PolLabel::V), c(1.0))]),
    ]);
    let split = PathSum::vacuum().run(&[photon, pbs])?;
    let (upper, lower) = arms(ecp2);

    let result_arms = match (p, accounting) {
        (None, Accounting::JointCoherent) => {
            return Err(Error::Configuration(
                "the polarization-free reference is defined for branch accounting only".into(),
            ))
        }
        (None, Accounting::PaperBranch) => {
            let input = split.apply(&Stage::Absent("b2".into()))?;
            vec![run_arm("stripped", input, &[&lower], &[&schedule.lower], rounds, ecp2)?]
        }
        (Some(_), Accounting::PaperBranch) => vec![
            run_arm(
                "upper",
                split.apply(&Stage::Absent("b3".into()))?,
                &[&upper],
                &[&schedule.upper],
                rounds,
                ecp2,
            )?,
            run_arm(
                "lower",
                split.apply(&Stage::Absent("b2".into()))?,
                &[&lower],
                &[&schedule.lower],
                rounds,
                ecp2,
            )?,
        ],
        (Some(_), Accounting::JointCoherent) => vec![run_arm(
            "joint",
            split,
            &[&upper, &lower],
            &[&schedule.upper, &schedule.lower],
            rounds,
            ecp2,
        )?],
    };

    let goal = target(&pol);
    let mut heralded_fidelity = Vec::with_capacity(rounds);
    for k in 0..rounds {
        let outcomes: Vec<&[OracleOutcome]> = result_arms.iter().map(|a| a.rounds[k].outcomes.as_slice()).collect();
        let paired = p.is_some() && accounting == Accounting::PaperBranch && outcomes.iter().all(|o| !o.is_empty());
        let f = if paired {
            let mut values = Vec::new();
            for u in outcomes[0] {
                for l in outcomes[1] {
                    values.push(combine(&u.output, &l.output).and_then(|m| state_fidelity(&merge_ports(&m)?, &goal)));
                }
            }
            worst(values)?
        } else {
            worst(
                outcomes
                    .iter()
                    .flat_map(|o| o.iter())
                    .map(|o| merge_ports(&o.output).and_then(|m| state_fidelity(&m, &goal))),
            )?
        };
        heralded_fidelity.push(f);
    }

    Ok(OracleResult {
        arms: result_arms,
        heralded_fidelity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hong_ou_mandel_bunching() {
        let s = PathSum::vacuum()
            .run(&[
                Stage::AddPhoton(vec![(pos("x", PolLabel::H), c(1.0))]),
                Stage::AddPhoton(vec![(pos("y", PolLabel::H), c(1.0))]),
                beam_splitter("x", "y", "u", "w"),
                Stage::Detect(vec!["u".into(), "w".into()]),
            ])
            .unwrap();
        let probs = s.click_probabilities();
        let coincidence: f64 = probs
            .iter()
            .filter(|(cl, _)| cl["u"] == 1 && cl["w"] == 1)
            .map(|(_, p)| p)
            .sum();
        assert!(coincidence.abs() < 1e-15);
        assert!((probs.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vacuum_only_silent_pattern() {
        let s = PathSum::vacuum()
            .run(&[
                beam_splitter("x", "y", "u", "w"),
                Stage::Detect(vec!["u".into(), "w".into()]),
            ])
            .unwrap();
        let probs = s.click_probabilities();
        assert_eq!(probs.len(), 1);
        let (cl, p) = probs.iter().next().unwrap();
        assert!(cl.values().all(|&n| n == 0));
        assert!((p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn photon_budget_enforced() {
        let add = Stage::AddPhoton(vec![(pos("x", PolLabel::H), c(1.0))]);
        let r = PathSum::vacuum().run(&[add.clone(), add.clone(), add.clone(), add]);
        assert!(matches!(r, Err(Error::UnsupportedInstance(_))));
    }

    #[test]
    fn upper_branch_example() {
        let e = EntanglementParams::from_alpha_sq(0.6).unwrap();
        let p = PolarizationParams::from_gamma_sq(0.5).unwrap();
        let r = oracle_enumerate(&e, Some(&p), &ProtocolSpec::Ecp1 { t1: 0.6, t2: 0.6 }, Accounting::PaperBranch)
            .unwrap();
        assert!((r.arms[0].rounds[0].success_probability - 0.36).abs() < 1e-12);
        assert!((r.heralded_fidelity[0].unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_input_never_heralds() {
        let e = EntanglementParams::from_alpha_sq(1.0).unwrap();
        let p = PolarizationParams::from_gamma_sq(0.5).unwrap();
        let r = oracle_enumerate(&e, Some(&p), &ProtocolSpec::Ecp1 { t1: 1.0, t2: 1.0 }, Accounting::PaperBranch)
            .unwrap();
        assert_eq!(r.success(0), 0.0);
    }
}
