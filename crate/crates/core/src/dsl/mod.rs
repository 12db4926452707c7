//! `.ecp` circuit files: a line-oriented description of a mode graph and its
//! element sequence.
//!
//! ```text
//! circuit <name>
//! param <id>
//! mode <id>
//! source <id> pol=<H|V> [amp=<expr>]
//! pbs in=<id> outH=<id> outV=<id>
//! vbs in=<id> reflect=<id> transmit=<id> t=<expr>
//! bs in1=<id> in2=<id> out1=<id> out2=<id> [branch=recycle]
//! qnd a=<id> b=<id> select=<0|1>
//! flip mode=<id> when=<detector> [branch=recycle]
//! detect group=<name> modes=<id,...> require=exactly_one [eta=<float>] [branch=recycle]
//! output <id,...>
//! ```
//!
//! Sources with `amp=` together form the shared signal photon; sources
//! without it are independent photons. A `pbs` whose input already carries
//! photons splits; one whose outputs carry photons merges them into `in`.
//! After a `qnd`, statements marked `branch=recycle` act on the even-class
//! outcome and the rest on the selected class.

mod exec;
mod expr;
mod parse;

use std::fmt;

pub use exec::{execute, ExecOptions};
pub use expr::{BinOp, Expr};
pub use parse::parse;

use crate::fock::PolLabel;

pub const ECP1_SOURCE: &str = include_str!("../../circuits/ecp1.ecp");
pub const ECP2_SOURCE: &str = include_str!("../../circuits/ecp2.ecp");

/// Parameters that may be referenced without a `param` line, given the
/// parameter they derive from.
pub const DERIVED: [(&str, &str); 4] = [
    ("alpha", "alpha_sq"),
    ("beta", "alpha_sq"),
    ("gamma", "gamma_sq"),
    ("delta", "gamma_sq"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Mode(String),
    Source {
        mode: String,
        pol: PolLabel,
        amp: Option<Expr>,
    },
    Pbs {
        input: String,
        out_h: String,
        out_v: String,
    },
    Vbs {
        input: String,
        reflect: String,
        transmit: String,
        t: Expr,
    },
    Bs {
        in1: String,
        in2: String,
        out1: String,
        out2: String,
        recycle: bool,
    },
    Qnd {
        a: String,
        b: String,
        select: u32,
    },
    Flip {
        mode: String,
        when: String,
        recycle: bool,
    },
    Detect {
        group: String,
        modes: Vec<String>,
        eta: Option<f64>,
        recycle: bool,
    },
    Output(Vec<String>),
}

impl Statement {
    /// Spatial modes the statement touches.
    pub fn modes(&self) -> Vec<&str> {
        match self {
            Statement::Mode(m) => vec![m],
            Statement::Source { mode, .. } => vec![mode],
            Statement::Pbs { input, out_h, out_v } => vec![input, out_h, out_v],
            Statement::Vbs {
                input,
                reflect,
                transmit,
                ..
            } => vec![input, reflect, transmit],
            Statement::Bs {
                in1, in2, out1, out2, ..
            } => vec![in1, in2, out1, out2],
            Statement::Qnd { a, b, .. } => vec![a, b],
            Statement::Flip { mode, when, .. } => vec![mode, when],
            Statement::Detect { modes, .. } => modes.iter().map(String::as_str).collect(),
            Statement::Output(modes) => modes.iter().map(String::as_str).collect(),
        }
    }

    pub fn is_recycle(&self) -> bool {
        matches!(
            self,
            Statement::Bs { recycle: true, .. }
                | Statement::Flip { recycle: true, .. }
                | Statement::Detect { recycle: true, .. }
        )
    }
}

fn recycle_suffix(recycle: bool) -> &'static str {
    if recycle {
        " branch=recycle"
    } else {
        ""
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Mode(m) => write!(f, "mode {m}"),
            Statement::Source { mode, pol, amp } => {
                write!(f, "source {mode} pol={pol}")?;
                if let Some(a) = amp {
                    write!(f, " amp={a}")?;
                }
                Ok(())
            }
            Statement::Pbs { input, out_h, out_v } => write!(f, "pbs in={input} outH={out_h} outV={out_v}"),
            Statement::Vbs {
                input,
                reflect,
                transmit,
                t,
            } => write!(f, "vbs in={input} reflect={reflect} transmit={transmit} t={t}"),
            Statement::Bs {
                in1,
                in2,
                out1,
                out2,
                recycle,
            } => write!(
                f,
                "bs in1={in1} in2={in2} out1={out1} out2={out2}{}",
                recycle_suffix(*recycle)
            ),
            Statement::Qnd { a, b, select } => write!(f, "qnd a={a} b={b} select={select}"),
            Statement::Flip { mode, when, recycle } => {
                write!(f, "flip mode={mode} when={when}{}", recycle_suffix(*recycle))
            }
            Statement::Detect {
                group,
                modes,
                eta,
                recycle,
            } => {
                write!(f, "detect group={group} modes={} require=exactly_one", modes.join(","))?;
                if let Some(e) = eta {
                    write!(f, " eta={e}")?;
                }
                f.write_str(recycle_suffix(*recycle))
            }
            Statement::Output(modes) => write!(f, "output {}", modes.join(",")),
        }
    }
}

/// A parsed and validated circuit. Line numbers are kept for execution-time
/// diagnostics and ignored by equality.
#[derive(Debug, Clone)]
pub struct CircuitDoc {
    pub name: String,
    pub params: Vec<String>,
    pub statements: Vec<Statement>,
    pub lines: Vec<usize>,
}

impl PartialEq for CircuitDoc {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.params == other.params && self.statements == other.statements
    }
}

impl CircuitDoc {
    pub fn output(&self) -> &[String] {
        self.statements
            .iter()
            .find_map(|s| match s {
                Statement::Output(m) => Some(m.as_slice()),
                _ => None,
            })
            .unwrap_or(&[])
    }

    pub fn detector_modes(&self) -> Vec<&str> {
        self.statements
            .iter()
            .filter_map(|s| match s {
                Statement::Detect { modes, .. } => Some(modes.iter().map(String::as_str)),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn has_qnd(&self) -> bool {
        self.statements.iter().any(|s| matches!(s, Statement::Qnd { .. }))
    }
}

/// Canonical text: header, then one statement per line in document order.
pub fn serialize(doc: &CircuitDoc) -> String {
    let mut out = format!("circuit {}\n", doc.name);
    for p in &doc.params {
        out.push_str(&format!("param {p}\n"));
    }
    for s in &doc.statements {
        out.push_str(&s.to_string());
        out.push('\n');
    }
    out
}

pub fn builtin(name: &str) -> Option<&'static str> {
    match name {
        "ecp1" => Some(ECP1_SOURCE),
        "ecp2" => Some(ECP2_SOURCE),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_round_trip() {
        for src in [ECP1_SOURCE, ECP2_SOURCE] {
            let doc = parse(src).unwrap();
            let text = serialize(&doc);
            let again = parse(&text).unwrap();
            assert_eq!(doc, again);
            assert_eq!(serialize(&again), text);
        }
    }

    #[test]
    fn ecp1_shape() {
        let doc = parse(ECP1_SOURCE).unwrap();
        assert_eq!(doc.detector_modes().len(), 4);
        assert_eq!(doc.output(), ["a1", "b10"]);
        assert!(!doc.has_qnd());
        assert!(parse(ECP2_SOURCE).unwrap().has_qnd());
    }
}
