use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;

use super::{CircuitDoc, Statement};
use crate::error::{Error, Result};
use crate::fock::{tensor, ModeRef, OccupationPattern, StateVector};
use crate::measurement::{qnd_class, DetectorGroup, DetectorModel, FlipRule};
use crate::optics::{apply_bs, apply_pbs, apply_vbs};
use crate::protocols::engine::{
    collect_branches, push_successes, recycle_outcomes, rounds_to_trace, ArmTrace, Engine, MergePorts,
    RoundResult, SuccessOutput, Trace,
};
use crate::protocols::report::{build_report, EngineKind, ProtocolReport};
use crate::protocols::{
    concentrated_target, montecarlo, vbs_schedule, Accounting, EntanglementParams, PolarizationParams, VbsSchedule,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOptions {
    pub accounting: Accounting,
    pub model: DetectorModel,
    pub engine: Engine,
    /// Rounds for circuits with a QND stage; others always run one round.
    pub rounds: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            accounting: Accounting::PaperBranch,
            model: DetectorModel::ideal(),
            engine: Engine::Exact,
            rounds: 1,
        }
    }
}

type Vars = BTreeMap<String, f64>;

struct Step<'a> {
    statement: &'a Statement,
    line: usize,
}

/// Union-find over spatial mode names.
#[derive(Default)]
struct Components {
    parent: BTreeMap<String, String>,
}

impl Components {
    fn find(&mut self, m: &str) -> String {
        let p = self.parent.entry(m.to_string()).or_insert_with(|| m.to_string()).clone();
        if p == m {
            return p;
        }
        let root = self.find(&p);
        self.parent.insert(m.to_string(), root.clone());
        root
    }

    fn union(&mut self, a: &str, b: &str) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent.insert(ra, rb);
        }
    }
}

fn bind(doc: &CircuitDoc, bindings: &Vars) -> Result<(Vars, Option<EntanglementParams>, Option<PolarizationParams>)> {
    let qnd = doc.has_qnd();
    let declared = |name: &str| doc.params.iter().any(|p| p == name);
    let mut vars = Vars::new();
    for p in &doc.params {
        let scheduled = qnd && (p == "t1" || p == "t2");
        match bindings.get(p) {
            Some(v) if !scheduled => {
                vars.insert(p.clone(), *v);
            }
            None if !scheduled && p != "gamma_sq" => {
                return Err(Error::Binding(format!("parameter `{p}` is not bound")));
            }
            _ => {}
        }
    }
    let e = match vars.get("alpha_sq") {
        Some(&a) => {
            let e = EntanglementParams::from_alpha_sq(a)?;
            vars.insert("alpha".into(), a.sqrt());
            vars.insert("beta".into(), (1.0 - a).sqrt());
            Some(e)
        }
        None => None,
    };
    let p = match vars.get("gamma_sq") {
        Some(&g) => {
            let p = PolarizationParams::from_gamma_sq(g)?;
            vars.insert("gamma".into(), g.sqrt());
            vars.insert("delta".into(), (1.0 - g).sqrt());
            Some(p)
        }
        None => {
            if declared("gamma_sq") {
                vars.insert("gamma".into(), 1.0);
                vars.insert("delta".into(), 0.0);
            }
            None
        }
    };
    Ok((vars, e, p))
}

fn eval_t(step: &Step, t: &super::Expr, vars: &Vars) -> Result<f64> {
    let v = t.eval(vars)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Parameter(format!(
            "line {}: transmission {v} outside [0, 1]",
            step.line
        )));
    }
    Ok(v)
}

/// Runs one round of `steps` on each branch.
fn round(steps: &[Step], branches: &[StateVector], vars: &Vars, unconditioned: bool) -> Result<RoundResult> {
    let mut out = RoundResult::default();
    let mut recycled = Vec::new();
    for branch in branches {
        let mut main = branch.clone();
        let mut recycle: Option<StateVector> = None;
        let mut kept_norm = None;
        let (mut groups, mut flips) = (Vec::new(), Vec::new());
        let (mut recycle_groups, mut recycle_flips) = (Vec::new(), Vec::new());

        for step in steps {
            match step.statement {
                Statement::Source { mode, pol, .. } => {
                    main = tensor(&main, &StateVector::single_photon(ModeRef::new(mode.clone(), *pol)))?;
                }
                Statement::Vbs {
                    input,
                    reflect,
                    transmit,
                    t,
                } => {
                    main = apply_vbs(&main, input, reflect, transmit, eval_t(step, t, vars)?)?;
                }
                Statement::Qnd { a, b, select } => {
                    let base = recycle.take().unwrap_or_else(|| main.clone());
                    main = main.filter(|p| qnd_class(p, a, b) == *select);
                    recycle = Some(base.filter(|p| qnd_class(p, a, b) == 0));
                    kept_norm = Some(main.norm_sqr());
                }
                Statement::Bs {
                    in1,
                    in2,
                    out1,
                    out2,
                    recycle: on_recycle,
                } => {
                    if *on_recycle {
                        let r = recycle.as_ref().expect("validated: recycle after qnd");
                        recycle = Some(apply_bs(r, in1, in2, out1, out2)?);
                    } else {
                        main = apply_bs(&main, in1, in2, out1, out2)?;
                    }
                }
                Statement::Detect {
                    group,
                    modes,
                    recycle: on_recycle,
                    ..
                } => {
                    let refs: Vec<&str> = modes.iter().map(String::as_str).collect();
                    let g = DetectorGroup::new(group.clone(), &refs);
                    if *on_recycle {
                        recycle_groups.push(g);
                    } else {
                        groups.push(g);
                    }
                }
                Statement::Flip {
                    mode,
                    when,
                    recycle: on_recycle,
                } => {
                    let f = FlipRule::new(when, mode);
                    if *on_recycle {
                        recycle_flips.push(f);
                    } else {
                        flips.push(f);
                    }
                }
                other => {
                    return Err(Error::Configuration(format!(
                        "line {}: `{}` cannot appear inside a round",
                        step.line,
                        other.to_string().split(' ').next().unwrap_or("")
                    )))
                }
            }
        }

        if let Some(n) = kept_norm {
            *out.qnd_kept.get_or_insert(0.0) += n;
        }
        if unconditioned {
            out.successes.push(SuccessOutput {
                label: String::new(),
                raw_probability: main.norm_sqr(),
                output: main.normalized()?,
            });
        } else if !groups.is_empty() {
            push_successes(&mut out, &main, &groups, &flips);
        }
        if let (Some(r), false) = (recycle, recycle_groups.is_empty()) {
            let (mass, outcomes) = recycle_outcomes(&r, &recycle_groups, &recycle_flips);
            out.recycle_probability += mass;
            recycled.extend(outcomes);
        }
    }
    out.next = collect_branches(recycled)?;
    Ok(out)
}

/// Lowers `doc` to the simulation calls, statement by statement, and
/// assembles the report exactly as the native runners do.
///
/// `gamma_sq` may be left unbound: the signal photon is then horizontally
/// polarized and, under branch accounting, only the H arm runs. With a `qnd`
/// stage, `t1` and `t2` are taken from the schedule for each round.
pub fn execute(doc: &CircuitDoc, bindings: &Vars, opts: &ExecOptions) -> Result<ProtocolReport> {
    let (vars, e, p) = bind(doc, bindings)?;
    let has_detect = !doc.detector_modes().is_empty();
    let unconditioned = !has_detect;

    let mut model = opts.model;
    let etas: BTreeSet<u64> = doc
        .statements
        .iter()
        .filter_map(|s| match s {
            Statement::Detect { eta: Some(x), .. } => Some(x.to_bits()),
            _ => None,
        })
        .collect();
    match etas.len() {
        0 => {}
        1 => model.eta_p = f64::from_bits(*etas.iter().next().unwrap()),
        _ => return Err(Error::Configuration("detector groups declare different efficiencies".into())),
    }
    model.validate()?;
    if has_detect {
        if let Some(e) = &e {
            e.require_entangled()?;
        }
    }

    let rounds = if doc.has_qnd() { opts.rounds } else { 1 };
    if rounds == 0 {
        return Err(Error::Configuration("at least one round is required".into()));
    }
    let schedule = if doc.has_qnd() {
        let e = e
            .as_ref()
            .ok_or_else(|| Error::Binding("a circuit with a qnd stage needs alpha_sq".into()))?;
        vbs_schedule(e, rounds)?
    } else {
        let pick = |name: &str| vars.get(name).map(|t| vec![*t]).unwrap_or_default();
        VbsSchedule::new(pick("t1"), pick("t2"))?
    };
    let round_vars = |k: usize| -> Vars {
        let mut v = vars.clone();
        if doc.has_qnd() {
            v.insert("t1".into(), schedule.upper[k]);
            v.insert("t2".into(), schedule.lower[k]);
        }
        v
    };

    // Setup: the signal photon and the PBS that splits it.
    let mut occupied: BTreeSet<&str> = BTreeSet::new();
    let mut pending: Vec<(OccupationPattern, Complex64)> = Vec::new();
    let mut state: Option<StateVector> = None;
    let mut split: Option<(&str, &str)> = None;
    let mut merge: Option<MergePorts> = None;
    let mut body = Vec::new();
    let mut in_setup = true;
    let flush = |state: &mut Option<StateVector>, pending: &mut Vec<(OccupationPattern, Complex64)>| -> Result<()> {
        if !pending.is_empty() {
            let photon = StateVector::from_terms(pending.drain(..));
            *state = Some(match state.take() {
                None => photon,
                Some(s) => tensor(&s, &photon)?,
            });
        }
        Ok(())
    };

    for (statement, &line) in doc.statements.iter().zip(&doc.lines) {
        match statement {
            Statement::Mode(_) | Statement::Output(_) => continue,
            Statement::Source { mode, pol, amp: Some(amp) } => {
                if !in_setup {
                    return Err(Error::Configuration(format!(
                        "line {line}: signal sources must precede the other elements"
                    )));
                }
                let a = amp.eval(&vars)?;
                pending.push((OccupationPattern::single(ModeRef::new(mode.clone(), *pol)), Complex64::new(a, 0.0)));
                occupied.insert(mode);
            }
            Statement::Pbs { input, out_h, out_v } => {
                if occupied.contains(input.as_str()) {
                    if !in_setup || split.is_some() {
                        return Err(Error::Configuration(format!(
                            "line {line}: only one splitting PBS, directly after the signal sources, is supported"
                        )));
                    }
                    flush(&mut state, &mut pending)?;
                    let s = state.take().unwrap_or_else(StateVector::vacuum);
                    state = Some(apply_pbs(&s, input, out_h, out_v)?);
                    split = Some((out_h, out_v));
                    occupied.extend([out_h.as_str(), out_v.as_str()]);
                } else {
                    if merge.is_some() {
                        return Err(Error::Configuration(format!("line {line}: more than one merging PBS")));
                    }
                    merge = Some(MergePorts {
                        in_h: out_h.clone(),
                        in_v: out_v.clone(),
                        output: input.clone(),
                    });
                }
            }
            other => {
                in_setup = false;
                for m in other.modes() {
                    occupied.insert(m);
                }
                body.push(Step { statement: other, line });
            }
        }
    }
    flush(&mut state, &mut pending)?;
    let initial = state.unwrap_or_else(StateVector::vacuum);

    let clicks_of = |steps: &[Step]| {
        steps
            .iter()
            .filter(|s| matches!(s.statement, Statement::Detect { recycle: false, .. }))
            .count() as u32
    };
    let stripped = p.is_none() && doc.params.iter().any(|x| x == "gamma_sq");
    let run_arm = |label: &str, input: StateVector, steps: &[Step], schedules: &[&[f64]]| -> Result<ArmTrace> {
        rounds_to_trace(label, input, clicks_of(steps), schedules, rounds, |b, k| {
            round(steps, b, &round_vars(k), unconditioned)
        })
    };

    let arms = match (split, opts.accounting) {
        (Some(_), Accounting::JointCoherent) if stripped => {
            return Err(Error::Configuration(
                "the polarization-free reference is defined for branch accounting only".into(),
            ))
        }
        (Some((out_h, out_v)), Accounting::PaperBranch) => {
            let mut comps = Components::default();
            for step in &body {
                let modes = step.statement.modes();
                for m in &modes[1..] {
                    comps.union(modes[0], m);
                }
            }
            let (v_root, h_root) = (comps.find(out_v), comps.find(out_h));
            if v_root == h_root {
                return Err(Error::Configuration("the two PBS arms are connected".into()));
            }
            let (mut upper, mut lower) = (Vec::new(), Vec::new());
            for step in body {
                let root = comps.find(step.statement.modes()[0]);
                if root == v_root {
                    upper.push(step);
                } else if root == h_root {
                    lower.push(step);
                } else {
                    return Err(Error::Configuration(format!(
                        "line {}: statement is attached to neither PBS arm",
                        step.line
                    )));
                }
            }
            let lower_in = initial.filter(|q| q.spatial_count(out_v) == 0);
            if stripped {
                vec![run_arm("stripped", lower_in, &lower, &[&schedule.lower])?]
            } else {
                let upper_in = initial.filter(|q| q.spatial_count(out_h) == 0);
                vec![
                    run_arm("upper", upper_in, &upper, &[&schedule.upper])?,
                    run_arm("lower", lower_in, &lower, &[&schedule.lower])?,
                ]
            }
        }
        (Some(_), Accounting::JointCoherent) => {
            vec![run_arm("joint", initial, &body, &[&schedule.upper, &schedule.lower])?]
        }
        (None, _) => vec![run_arm("circuit", initial, &body, &[&schedule.upper, &schedule.lower])?],
    };

    let target = if unconditioned {
        arms.first()
            .and_then(|a| a.rounds.first())
            .and_then(|r| r.successes.first())
            .map(|s| s.output.clone())
            .unwrap_or_else(StateVector::empty)
    } else {
        let pol = p.unwrap_or_else(PolarizationParams::horizontal);
        let outputs: Vec<&str> = doc.output().iter().map(String::as_str).collect();
        concentrated_target(&pol, &outputs)
    };
    let trace = Trace {
        accounting: opts.accounting,
        arms,
        merge: if unconditioned { None } else { merge },
        target,
        unconditioned,
    };

    let engine = match opts.engine {
        Engine::Exact => EngineKind::Exact,
        Engine::MonteCarlo { trials, seed } => {
            EngineKind::MonteCarlo(montecarlo::sample_trace(&trace, &model, trials, seed)?)
        }
    };
    build_report(&doc.name, e.as_ref(), p.as_ref(), &schedule, &model, &trace, engine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;

    #[test]
    fn sources_only_circuit_is_unconditioned() {
        let doc = parse(
            "circuit plain\nparam alpha_sq\nmode a\nmode b\n\
             source a pol=H amp=alpha\nsource b pol=H amp=beta\noutput a,b\n",
        )
        .unwrap();
        let binds: Vars = [("alpha_sq".to_string(), 0.3)].into_iter().collect();
        let r = execute(&doc, &binds, &ExecOptions::default()).unwrap();
        assert!((r.p_total - 1.0).abs() < 1e-12);
        assert_eq!(r.rounds[0].heralded_fidelity, Some(1.0));
    }

    #[test]
    fn unbound_parameter_is_binding_error() {
        let doc = parse(super::super::ECP1_SOURCE).unwrap();
        let binds: Vars = [("alpha_sq".to_string(), 0.3)].into_iter().collect();
        assert!(matches!(
            execute(&doc, &binds, &ExecOptions::default()),
            Err(Error::Binding(_))
        ));
    }
}
