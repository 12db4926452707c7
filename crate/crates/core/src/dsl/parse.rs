use std::collections::{BTreeMap, BTreeSet};

use super::{CircuitDoc, Expr, Statement, DERIVED};
use crate::error::{Error, Result};
use crate::fock::PolLabel;

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let line = line.split('#').next().unwrap_or("");
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    for (col, (byte, ch)) in line.char_indices().enumerate() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some((byte, col + 1)),
            (true, Some((b, c))) => {
                out.push(Token {
                    text: &line[b..byte],
                    column: c,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some((b, c)) = start {
        out.push(Token { text: &line[b..], column: c });
    }
    out
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, Copy)]
struct Field<'a> {
    value: &'a str,
    column: usize,
}

struct Line<'a> {
    number: usize,
    keyword: Token<'a>,
    fields: BTreeMap<&'a str, Field<'a>>,
}

impl<'a> Line<'a> {
    fn error(&self, column: usize, msg: impl Into<String>) -> Error {
        Error::parse(self.number, column, msg)
    }

    fn required(&self, key: &str) -> Result<Field<'a>> {
        self.fields
            .get(key)
            .copied()
            .ok_or_else(|| self.error(self.keyword.column, format!("`{}` needs `{key}=`", self.keyword.text)))
    }

    fn optional(&self, key: &str) -> Option<Field<'a>> {
        self.fields.get(key).copied()
    }

    fn recycle(&self) -> Result<bool> {
        match self.optional("branch") {
            None => Ok(false),
            Some(f) if f.value == "recycle" => Ok(true),
            Some(f) => Err(self.error(f.column, format!("unknown branch `{}`", f.value))),
        }
    }
}

fn parse_fields<'a>(number: usize, tokens: &[Token<'a>], allowed: &[&str]) -> Result<BTreeMap<&'a str, Field<'a>>> {
    let mut out = BTreeMap::new();
    for t in tokens {
        let Some((key, value)) = t.text.split_once('=') else {
            return Err(Error::parse(number, t.column, format!("expected key=value, found `{}`", t.text)));
        };
        if !allowed.contains(&key) {
            return Err(Error::parse(number, t.column, format!("unknown field `{key}`")));
        }
        if value.is_empty() {
            return Err(Error::parse(number, t.column, format!("`{key}` has no value")));
        }
        let field = Field {
            value,
            column: t.column + key.chars().count() + 1,
        };
        if out.insert(key, field).is_some() {
            return Err(Error::parse(number, t.column, format!("duplicate field `{key}`")));
        }
    }
    Ok(out)
}

/// Which half of a round a statement belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Track {
    Selected,
    Recycle,
}

#[derive(Default)]
struct Checker {
    name: Option<String>,
    params: Vec<String>,
    modes: BTreeSet<String>,
    /// Modes currently carrying photons.
    occupied: BTreeSet<String>,
    source_producers: BTreeSet<(String, PolLabel)>,
    element_producers: BTreeSet<(String, Track)>,
    /// Modes a track may no longer touch: detected, or due a deferred flip.
    closed: BTreeMap<Track, BTreeMap<String, usize>>,
    groups: BTreeSet<String>,
    seen_qnd: bool,
    output: Option<(usize, Vec<String>)>,
    statements: Vec<Statement>,
    lines: Vec<usize>,
}

impl Checker {
    fn mode(&self, line: &Line, f: Field) -> Result<String> {
        if !self.modes.contains(f.value) {
            return Err(line.error(f.column, format!("undeclared mode `{}`", f.value)));
        }
        Ok(f.value.to_string())
    }

    fn expr(&self, line: &Line, f: Field) -> Result<Expr> {
        let e = Expr::parse(f.value, line.number, f.column)?;
        for v in e.variables() {
            let known = self.params.iter().any(|p| p == v)
                || DERIVED
                    .iter()
                    .any(|(name, base)| *name == v && self.params.iter().any(|p| p == base));
            if !known {
                return Err(line.error(f.column, format!("unknown parameter `{v}`")));
            }
        }
        Ok(e)
    }

    fn produce(&mut self, line: &Line, modes: &[&str], track: Track) -> Result<()> {
        for m in modes {
            let by_source = self.source_producers.iter().any(|(s, _)| s == m);
            if by_source || !self.element_producers.insert((m.to_string(), track)) {
                return Err(line.error(line.keyword.column, format!("duplicate producer for mode `{m}`")));
            }
            self.occupied.insert(m.to_string());
        }
        Ok(())
    }

    fn touch(&self, line: &Line, modes: &[&str], track: Track) -> Result<()> {
        if let Some(closed) = self.closed.get(&track) {
            for m in modes {
                if let Some(at) = closed.get(*m) {
                    return Err(line.error(
                        line.keyword.column,
                        format!("mode `{m}` is used after its detection or correction on line {at}"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn close(&mut self, modes: &[&str], track: Track, number: usize) {
        let closed = self.closed.entry(track).or_default();
        for m in modes {
            closed.entry(m.to_string()).or_insert(number);
        }
    }

    fn track(&self, line: &Line, recycle: bool) -> Result<Track> {
        if recycle && !self.seen_qnd {
            return Err(line.error(line.keyword.column, "branch=recycle before any qnd"));
        }
        Ok(if recycle { Track::Recycle } else { Track::Selected })
    }

    fn push(&mut self, line: &Line, s: Statement) {
        self.statements.push(s);
        self.lines.push(line.number);
    }

    fn statement(&mut self, number: usize, tokens: &[Token]) -> Result<()> {
        let keyword = tokens[0];
        let single = |what: &str| -> Result<Token> {
            match tokens {
                [_, arg] => Ok(*arg),
                _ => Err(Error::parse(number, keyword.column, format!("`{}` takes one {what}", keyword.text))),
            }
        };
        let ident = |t: Token| -> Result<String> {
            if is_identifier(t.text) {
                Ok(t.text.to_string())
            } else {
                Err(Error::parse(number, t.column, format!("`{}` is not an identifier", t.text)))
            }
        };
        let fields = |allowed: &[&str], skip: usize| -> Result<Line> {
            Ok(Line {
                number,
                keyword,
                fields: parse_fields(number, &tokens[skip..], allowed)?,
            })
        };

        match keyword.text {
            "circuit" => {
                let t = single("name")?;
                if self.name.is_some() {
                    return Err(Error::parse(number, keyword.column, "circuit name given twice"));
                }
                self.name = Some(ident(t)?);
            }
            "param" => {
                let p = ident(single("name")?)?;
                if self.params.contains(&p) {
                    return Err(Error::parse(number, keyword.column, format!("parameter `{p}` declared twice")));
                }
                self.params.push(p);
            }
            "mode" => {
                let m = ident(single("name")?)?;
                if !self.modes.insert(m.clone()) {
                    return Err(Error::parse(number, keyword.column, format!("mode `{m}` declared twice")));
                }
                self.statements.push(Statement::Mode(m));
                self.lines.push(number);
            }
            "source" => {
                let Some(target) = tokens.get(1).filter(|t| !t.text.contains('=')) else {
                    return Err(Error::parse(number, keyword.column, "`source` needs a mode"));
                };
                let line = fields(&["pol", "amp"], 2)?;
                let mode = self.mode(
                    &line,
                    Field {
                        value: target.text,
                        column: target.column,
                    },
                )?;
                let pf = line.required("pol")?;
                let pol: PolLabel = pf
                    .value
                    .parse()
                    .map_err(|_| line.error(pf.column, format!("polarization must be H or V, found `{}`", pf.value)))?;
                let amp = line.optional("amp").map(|f| self.expr(&line, f)).transpose()?;
                self.touch(&line, &[&mode], Track::Selected)?;
                if !self.source_producers.insert((mode.clone(), pol))
                    || self.element_producers.iter().any(|(m, _)| *m == mode)
                {
                    return Err(line.error(keyword.column, format!("duplicate producer for mode `{mode}`")));
                }
                self.occupied.insert(mode.clone());
                self.push(&line, Statement::Source { mode, pol, amp });
            }
            "pbs" => {
                let line = fields(&["in", "outH", "outV"], 1)?;
                let input = self.mode(&line, line.required("in")?)?;
                let out_h = self.mode(&line, line.required("outH")?)?;
                let out_v = self.mode(&line, line.required("outV")?)?;
                if self.occupied.contains(&input) {
                    self.touch(&line, &[&input, &out_h, &out_v], Track::Selected)?;
                    self.produce(&line, &[&out_h, &out_v], Track::Selected)?;
                } else if self.occupied.contains(&out_h) && self.occupied.contains(&out_v) {
                    self.produce(&line, &[&input], Track::Selected)?;
                } else {
                    return Err(line.error(keyword.column, "pbs has no photons at its input or at both outputs"));
                }
                self.push(&line, Statement::Pbs { input, out_h, out_v });
            }
            "vbs" => {
                let line = fields(&["in", "reflect", "transmit", "t"], 1)?;
                let input = self.mode(&line, line.required("in")?)?;
                let reflect = self.mode(&line, line.required("reflect")?)?;
                let transmit = self.mode(&line, line.required("transmit")?)?;
                let tf = line.required("t")?;
                let t = self.expr(&line, tf)?;
                if let Some(v) = t.constant() {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(line.error(tf.column, format!("transmission {v} outside [0, 1]")));
                    }
                }
                self.touch(&line, &[&input, &reflect, &transmit], Track::Selected)?;
                self.produce(&line, &[&reflect, &transmit], Track::Selected)?;
                self.push(
                    &line,
                    Statement::Vbs {
                        input,
                        reflect,
                        transmit,
                        t,
                    },
                );
            }
            "bs" => {
                let line = fields(&["in1", "in2", "out1", "out2", "branch"], 1)?;
                let in1 = self.mode(&line, line.required("in1")?)?;
                let in2 = self.mode(&line, line.required("in2")?)?;
                let out1 = self.mode(&line, line.required("out1")?)?;
                let out2 = self.mode(&line, line.required("out2")?)?;
                let recycle = line.recycle()?;
                let track = self.track(&line, recycle)?;
                self.touch(&line, &[&in1, &in2, &out1, &out2], track)?;
                self.produce(&line, &[&out1, &out2], track)?;
                self.push(
                    &line,
                    Statement::Bs {
                        in1,
                        in2,
                        out1,
                        out2,
                        recycle,
                    },
                );
            }
            "qnd" => {
                let line = fields(&["a", "b", "select"], 1)?;
                let a = self.mode(&line, line.required("a")?)?;
                let b = self.mode(&line, line.required("b")?)?;
                let sf = line.required("select")?;
                let select = match sf.value {
                    "0" => 0,
                    "1" => 1,
                    v => return Err(line.error(sf.column, format!("select must be 0 or 1, found `{v}`"))),
                };
                self.touch(&line, &[&a, &b], Track::Selected)?;
                self.seen_qnd = true;
                self.push(&line, Statement::Qnd { a, b, select });
            }
            "flip" => {
                let line = fields(&["mode", "when", "branch"], 1)?;
                let mode = self.mode(&line, line.required("mode")?)?;
                let when = self.mode(&line, line.required("when")?)?;
                let recycle = line.recycle()?;
                let track = self.track(&line, recycle)?;
                self.touch(&line, &[&mode], track)?;
                self.close(&[&mode], track, number);
                self.push(&line, Statement::Flip { mode, when, recycle });
            }
            "detect" => {
                let line = fields(&["group", "modes", "require", "eta", "branch"], 1)?;
                let gf = line.required("group")?;
                if !is_identifier(gf.value) {
                    return Err(line.error(gf.column, format!("`{}` is not an identifier", gf.value)));
                }
                if !self.groups.insert(gf.value.to_string()) {
                    return Err(line.error(gf.column, format!("detector group `{}` declared twice", gf.value)));
                }
                let mf = line.required("modes")?;
                let mut modes = Vec::new();
                let mut col = mf.column;
                for m in mf.value.split(',') {
                    modes.push(self.mode(&line, Field { value: m, column: col })?);
                    col += m.chars().count() + 1;
                }
                let rf = line.required("require")?;
                if rf.value != "exactly_one" {
                    return Err(line.error(rf.column, format!("unsupported requirement `{}`", rf.value)));
                }
                let eta = match line.optional("eta") {
                    None => None,
                    Some(f) => {
                        let v: f64 = f
                            .value
                            .parse()
                            .map_err(|_| line.error(f.column, format!("malformed efficiency `{}`", f.value)))?;
                        if !(0.0..=1.0).contains(&v) {
                            return Err(line.error(f.column, format!("efficiency {v} outside [0, 1]")));
                        }
                        Some(v)
                    }
                };
                let recycle = line.recycle()?;
                let track = self.track(&line, recycle)?;
                let refs: Vec<&str> = modes.iter().map(String::as_str).collect();
                self.touch(&line, &refs, track)?;
                self.close(&refs, track, number);
                self.push(
                    &line,
                    Statement::Detect {
                        group: gf.value.to_string(),
                        modes,
                        eta,
                        recycle,
                    },
                );
            }
            "output" => {
                let t = single("mode list")?;
                if self.output.is_some() {
                    return Err(Error::parse(number, keyword.column, "more than one output statement"));
                }
                let line = Line {
                    number,
                    keyword,
                    fields: BTreeMap::new(),
                };
                let mut modes = Vec::new();
                let mut col = t.column;
                for m in t.text.split(',') {
                    modes.push(self.mode(&line, Field { value: m, column: col })?);
                    col += m.chars().count() + 1;
                }
                self.output = Some((number, modes.clone()));
                self.push(&line, Statement::Output(modes));
            }
            other => {
                return Err(Error::parse(number, keyword.column, format!("unknown statement `{other}`")));
            }
        }
        Ok(())
    }
}

/// Parses and validates an `.ecp` document.
pub fn parse(text: &str) -> Result<CircuitDoc> {
    let mut c = Checker::default();
    let mut last = 0;
    for (i, raw) in text.lines().enumerate() {
        last = i + 1;
        let tokens = tokenize(raw);
        if !tokens.is_empty() {
            c.statement(i + 1, &tokens)?;
        }
    }
    let Some((out_line, outputs)) = c.output.clone() else {
        return Err(Error::parse(last.max(1), 1, "missing output"));
    };
    for s in &c.statements {
        if let Statement::Detect { modes, .. } = s {
            if let Some(m) = modes.iter().find(|m| outputs.contains(m)) {
                return Err(Error::parse(out_line, 1, format!("output mode `{m}` is also detected")));
            }
        }
    }
    Ok(CircuitDoc {
        name: c.name.unwrap_or_else(|| "circuit".into()),
        params: c.params,
        statements: c.statements,
        lines: c.lines,
    })
}
