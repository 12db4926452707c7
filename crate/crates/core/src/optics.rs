//! Polarizing beam splitter, 50:50 beam splitter, variable beam splitter and
//! the parity phase flip, each expressed as a mode substitution.
//!
//! Sign conventions:
//!
//! * 50:50 BS: `in1† -> (out1† - out2†)/√2`, `in2† -> (out1† + out2†)/√2`,
//!   independently for each polarization.
//! * VBS with transmission `t`: `in† -> √(1-t)·reflect† + √t·transmit†`,
//!   real non-negative coefficients.
//! * PBS: transmits H, reflects V.

use std::cell::Cell;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{apply_mode_transform, ModeRef, ModeRules, PolLabel, StateVector};

const POLS: [PolLabel; 2] = [PolLabel::H, PolLabel::V];

thread_local! {
    static FLIPPED_BS_SIGN: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with the 50:50 beam splitter sign convention mirrored on the
/// current thread. Fault-injection hook for the verification harness.
#[doc(hidden)]
pub fn with_flipped_bs_sign<R>(f: impl FnOnce() -> R) -> R {
    struct Reset(bool);
    impl Drop for Reset {
        fn drop(&mut self) {
            FLIPPED_BS_SIGN.with(|c| c.set(self.0));
        }
    }
    let _reset = Reset(FLIPPED_BS_SIGN.with(|c| c.replace(true)));
    f()
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn distinct(ports: &[&str]) -> Result<()> {
    for (i, a) in ports.iter().enumerate() {
        if ports[i + 1..].contains(a) {
            return Err(Error::PortContract(format!("port `{a}` bound twice")));
        }
    }
    Ok(())
}

/// Splits `input` by polarization: H to `out_h`, V to `out_v`.
pub fn apply_pbs(s: &StateVector, input: &str, out_h: &str, out_v: &str) -> Result<StateVector> {
    distinct(&[input, out_h, out_v])?;
    let mut rules = ModeRules::new();
    rules.insert(ModeRef::h(input), vec![(ModeRef::h(out_h), real(1.0))]);
    rules.insert(ModeRef::v(input), vec![(ModeRef::v(out_v), real(1.0))]);
    apply_mode_transform(s, &rules)
}

/// The PBS read in reverse: H from `in_h` and V from `in_v` leave through
/// `output`. Either input carrying the other polarization is an error.
pub fn apply_pbs_merge(s: &StateVector, in_h: &str, in_v: &str, output: &str) -> Result<StateVector> {
    distinct(&[in_h, in_v, output])?;
    for (pattern, _) in s.terms() {
        if pattern.count(&ModeRef::v(in_h)) > 0 {
            return Err(Error::PortContract(format!("H input `{in_h}` carries V amplitude")));
        }
        if pattern.count(&ModeRef::h(in_v)) > 0 {
            return Err(Error::PortContract(format!("V input `{in_v}` carries H amplitude")));
        }
    }
    let mut rules = ModeRules::new();
    rules.insert(ModeRef::h(in_h), vec![(ModeRef::h(output), real(1.0))]);
    rules.insert(ModeRef::v(in_v), vec![(ModeRef::v(output), real(1.0))]);
    apply_mode_transform(s, &rules)
}

/// Balanced beam splitter with the `in1 -> (out1 - out2)/√2` convention.
pub fn apply_bs(s: &StateVector, in1: &str, in2: &str, out1: &str, out2: &str) -> Result<StateVector> {
    distinct(&[in1, in2])?;
    distinct(&[out1, out2])?;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let sign = if FLIPPED_BS_SIGN.with(Cell::get) { -1.0 } else { 1.0 };
    let mut rules = ModeRules::new();
    for pol in POLS {
        rules.insert(
            ModeRef::new(in1, pol),
            vec![(ModeRef::new(out1, pol), real(r)), (ModeRef::new(out2, pol), real(-sign * r))],
        );
        rules.insert(
            ModeRef::new(in2, pol),
            vec![(ModeRef::new(out1, pol), real(sign * r)), (ModeRef::new(out2, pol), real(r))],
        );
    }
    apply_mode_transform(s, &rules)
}

/// Variable beam splitter: `in -> √(1-t)·reflect + √t·transmit`.
pub fn apply_vbs(s: &StateVector, input: &str, reflect: &str, transmit: &str, t: f64) -> Result<StateVector> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Parameter(format!("VBS transmission {t} outside [0, 1]")));
    }
    distinct(&[input, reflect, transmit])?;
    let mut rules = ModeRules::new();
    for pol in POLS {
        let mut image = Vec::with_capacity(2);
        if t < 1.0 {
            image.push((ModeRef::new(reflect, pol), real((1.0 - t).sqrt())));
        }
        if t > 0.0 {
            image.push((ModeRef::new(transmit, pol), real(t.sqrt())));
        }
        rules.insert(ModeRef::new(input, pol), image);
    }
    apply_mode_transform(s, &rules)
}

/// Negates every term with an odd photon count in `mode` (both polarizations).
pub fn apply_phase_flip(s: &StateVector, mode: &str) -> StateVector {
    s.map_amplitudes(|p, a| if p.spatial_count(mode) % 2 == 1 { -a } else { a })
}

/// An optical element bound to concrete ports.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementSpec {
    Pbs { input: String, out_h: String, out_v: String },
    PbsMerge { in_h: String, in_v: String, output: String },
    Bs5050 { in1: String, in2: String, out1: String, out2: String },
    Vbs { input: String, reflect: String, transmit: String, t: f64 },
    PhaseFlip { mode: String },
}

impl ElementSpec {
    pub fn apply(&self, s: &StateVector) -> Result<StateVector> {
        match self {
            ElementSpec::Pbs { input, out_h, out_v } => apply_pbs(s, input, out_h, out_v),
            ElementSpec::PbsMerge { in_h, in_v, output } => apply_pbs_merge(s, in_h, in_v, output),
            ElementSpec::Bs5050 { in1, in2, out1, out2 } => apply_bs(s, in1, in2, out1, out2),
            ElementSpec::Vbs { input, reflect, transmit, t } => apply_vbs(s, input, reflect, transmit, *t),
            ElementSpec::PhaseFlip { mode } => Ok(apply_phase_flip(s, mode)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{fidelity, tensor, OccupationPattern};

    fn pat(modes: &[(ModeRef, u32)]) -> OccupationPattern {
        OccupationPattern::from_counts(modes.iter().cloned())
    }

    fn close(a: Complex64, b: f64) -> bool {
        (a - real(b)).norm() < 1e-15
    }

    #[test]
    fn pbs_routes_by_polarization() {
        let h = apply_pbs(&StateVector::single_photon(ModeRef::h("b1")), "b1", "b3", "b2").unwrap();
        assert_eq!(h, StateVector::single_photon(ModeRef::h("b3")));
        let v = apply_pbs(&StateVector::single_photon(ModeRef::v("b1")), "b1", "b3", "b2").unwrap();
        assert_eq!(v, StateVector::single_photon(ModeRef::v("b2")));
    }

    #[test]
    fn pbs_merge_contract() {
        let ok = StateVector::single_photon(ModeRef::v("b6"));
        let merged = apply_pbs_merge(&ok, "b9", "b6", "b10").unwrap();
        assert_eq!(merged, StateVector::single_photon(ModeRef::v("b10")));
        let bad = StateVector::single_photon(ModeRef::h("b6"));
        assert!(matches!(apply_pbs_merge(&bad, "b9", "b6", "b10"), Err(Error::PortContract(_))));
    }

    #[test]
    fn pbs_split_then_merge_is_identity() {
        let s = StateVector::from_terms([
            (OccupationPattern::single(ModeRef::h("b1")), real(0.6)),
            (OccupationPattern::single(ModeRef::v("b1")), Complex64::new(0.0, 0.8)),
        ]);
        let split = apply_pbs(&s, "b1", "b3", "b2").unwrap();
        let back = apply_pbs_merge(&split, "b3", "b2", "b1").unwrap();
        assert!(fidelity(&s, &back).unwrap() > 1.0 - 1e-12);
        assert_eq!(back, s);
    }

    #[test]
    fn bs_convention() {
        let out = apply_bs(&StateVector::single_photon(ModeRef::v("b2")), "b2", "b5", "d1", "d2").unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(out.amplitude(&pat(&[(ModeRef::v("d1"), 1)])), r));
        assert!(close(out.amplitude(&pat(&[(ModeRef::v("d2"), 1)])), -r));
        let out = apply_bs(&StateVector::single_photon(ModeRef::v("b5")), "b2", "b5", "d1", "d2").unwrap();
        assert!(close(out.amplitude(&pat(&[(ModeRef::v("d2"), 1)])), r));
    }

    #[test]
    fn bs_bunching_same_polarization() {
        let s = tensor(
            &StateVector::single_photon(ModeRef::v("b2")),
            &StateVector::single_photon(ModeRef::v("b5")),
        )
        .unwrap();
        let out = apply_bs(&s, "b2", "b5", "d1", "d2").unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(out.len(), 2);
        assert!(close(out.amplitude(&pat(&[(ModeRef::v("d1"), 2)])), r));
        assert!(close(out.amplitude(&pat(&[(ModeRef::v("d2"), 2)])), -r));
    }

    #[test]
    fn bs_cross_polarized_photons_do_not_bunch() {
        // Expanding (d1H - d2H)(d1V + d2V)/2 by hand gives four terms of
        // magnitude 1/2 with signs (+, +, -, -) for (d1H d1V, d1H d2V, d2H d1V, d2H d2V).
        let s = tensor(
            &StateVector::single_photon(ModeRef::h("b3")),
            &StateVector::single_photon(ModeRef::v("b5")),
        )
        .unwrap();
        let out = apply_bs(&s, "b3", "b5", "d1", "d2").unwrap();
        assert_eq!(out.len(), 4);
        let expected = [
            (pat(&[(ModeRef::h("d1"), 1), (ModeRef::v("d1"), 1)]), 0.5),
            (pat(&[(ModeRef::h("d1"), 1), (ModeRef::v("d2"), 1)]), 0.5),
            (pat(&[(ModeRef::h("d2"), 1), (ModeRef::v("d1"), 1)]), -0.5),
            (pat(&[(ModeRef::h("d2"), 1), (ModeRef::v("d2"), 1)]), -0.5),
        ];
        for (p, a) in expected {
            assert!(close(out.amplitude(&p), a), "{p}: {}", out.amplitude(&p));
        }
    }

    #[test]
    fn bs_twice_matches_matrix_square() {
        // U = [[1, 1], [-1, 1]]/√2 in (out1, out2) x (in1, in2); U·U = [[0, 2], [-2, 0]]/2,
        // so in1 -> -out2 and in2 -> out1 after two passes with ports reused in order.
        let s = StateVector::from_terms([
            (OccupationPattern::single(ModeRef::h("x")), real(0.6)),
            (OccupationPattern::single(ModeRef::h("y")), real(0.8)),
        ]);
        let once = apply_bs(&s, "x", "y", "p", "q").unwrap();
        let twice = apply_bs(&once, "p", "q", "x", "y").unwrap();
        let expected = StateVector::from_terms([
            (OccupationPattern::single(ModeRef::h("y")), real(-0.6)),
            (OccupationPattern::single(ModeRef::h("x")), real(0.8)),
        ]);
        assert!(fidelity(&twice, &expected).unwrap() > 1.0 - 1e-12);
        assert!(twice.add(&expected.scaled(real(-1.0))).norm_sqr() < 1e-24);
    }

    #[test]
    fn bs_port_collision() {
        let s = StateVector::single_photon(ModeRef::v("b2"));
        assert!(matches!(apply_bs(&s, "b2", "b2", "d1", "d2"), Err(Error::PortContract(_))));
    }

    #[test]
    fn vbs_amplitudes() {
        let out = apply_vbs(&StateVector::single_photon(ModeRef::v("b4")), "b4", "b5", "b6", 0.6).unwrap();
        assert!(close(out.amplitude(&pat(&[(ModeRef::v("b5"), 1)])), 0.4f64.sqrt()));
        assert!(close(out.amplitude(&pat(&[(ModeRef::v("b6"), 1)])), 0.6f64.sqrt()));

        let full = apply_vbs(&StateVector::single_photon(ModeRef::v("b4")), "b4", "b5", "b6", 1.0).unwrap();
        assert_eq!(full, StateVector::single_photon(ModeRef::v("b6")));

        let half = apply_vbs(&StateVector::single_photon(ModeRef::h("b4")), "b4", "b5", "b6", 0.5).unwrap();
        for (_, a) in half.terms() {
            assert!(close(a, std::f64::consts::FRAC_1_SQRT_2));
        }
        assert!(matches!(
            apply_vbs(&StateVector::vacuum(), "b4", "b5", "b6", 1.5),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn vbs_complement_swaps_ports() {
        let s = StateVector::single_photon(ModeRef::v("b4"));
        let a = apply_vbs(&s, "b4", "b5", "b6", 0.3).unwrap();
        let b = apply_vbs(&s, "b4", "b6", "b5", 0.7).unwrap();
        assert!(fidelity(&a, &b).unwrap() > 1.0 - 1e-12);
        assert!(a.add(&b.scaled(real(-1.0))).norm_sqr() < 1e-30);
    }

    #[test]
    fn phase_flip_is_an_involution() {
        let s = StateVector::from_terms([
            (OccupationPattern::vacuum(), real(0.6)),
            (OccupationPattern::single(ModeRef::v("b6")), real(0.8)),
        ]);
        let flipped = apply_phase_flip(&s, "b6");
        assert!(close(flipped.amplitude(&OccupationPattern::vacuum()), 0.6));
        assert!(close(flipped.amplitude(&OccupationPattern::single(ModeRef::v("b6"))), -0.8));
        assert_eq!(apply_phase_flip(&flipped, "b6"), s);
    }

    #[test]
    fn fault_hook_mirrors_sign_and_resets() {
        let s = StateVector::single_photon(ModeRef::v("b2"));
        let faulty = with_flipped_bs_sign(|| apply_bs(&s, "b2", "b5", "d1", "d2").unwrap());
        assert!(close(faulty.amplitude(&pat(&[(ModeRef::v("d2"), 1)])), std::f64::consts::FRAC_1_SQRT_2));
        let normal = apply_bs(&s, "b2", "b5", "d1", "d2").unwrap();
        assert!(close(normal.amplitude(&pat(&[(ModeRef::v("d2"), 1)])), -std::f64::consts::FRAC_1_SQRT_2));
    }
}
