//! Sparse few-photon Fock states over polarization-carrying spatial modes.
//!
//! A [`StateVector`] maps canonical [`OccupationPattern`]s to complex
//! amplitudes. Linear optics acts on it through [`apply_mode_transform`],
//! which substitutes creation operators and re-expands the resulting
//! polynomial with the bosonic `sqrt(n!)` bookkeeping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amplitudes below this magnitude are dropped after every operation.
pub const PRUNE_THRESHOLD: f64 = 1e-15;

/// Default comparison tolerance carried by a state.
pub const DEFAULT_TOLERANCE: f64 = 1e-12;

/// Default cap on total photon number per term.
pub const DEFAULT_PHOTON_CAP: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolLabel {
    H,
    V,
}

impl PolLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PolLabel::H => "H",
            PolLabel::V => "V",
        }
    }
}

impl fmt::Display for PolLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H" => Ok(PolLabel::H),
            "V" => Ok(PolLabel::V),
            other => Err(Error::Parameter(format!("unknown polarization `{other}`"))),
        }
    }
}

/// A spatial mode together with a polarization. Ordered by `(spatial, pol)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModeRef {
    pub spatial: String,
    pub pol: PolLabel,
}

impl ModeRef {
    pub fn new(spatial: impl Into<String>, pol: PolLabel) -> Self {
        ModeRef {
            spatial: spatial.into(),
            pol,
        }
    }

    pub fn h(spatial: impl Into<String>) -> Self {
        Self::new(spatial, PolLabel::H)
    }

    pub fn v(spatial: impl Into<String>) -> Self {
        Self::new(spatial, PolLabel::V)
    }
}

impl fmt::Display for ModeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.spatial, self.pol)
    }
}

/// Photon counts per mode. Zero counts are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OccupationPattern {
    counts: BTreeMap<ModeRef, u32>,
}

impl OccupationPattern {
    pub fn vacuum() -> Self {
        Self::default()
    }

    pub fn from_counts<I>(counts: I) -> Self
    where
        I: IntoIterator<Item = (ModeRef, u32)>,
    {
        let mut pattern = Self::default();
        for (mode, n) in counts {
            pattern.add(mode, n);
        }
        pattern
    }

    pub fn single(mode: ModeRef) -> Self {
        Self::from_counts([(mode, 1)])
    }

    pub(crate) fn add(&mut self, mode: ModeRef, n: u32) {
        if n > 0 {
            *self.counts.entry(mode).or_insert(0) += n;
        }
    }

    pub fn count(&self, mode: &ModeRef) -> u32 {
        self.counts.get(mode).copied().unwrap_or(0)
    }

    /// Photons in a spatial mode, summed over both polarizations.
    pub fn spatial_count(&self, spatial: &str) -> u32 {
        self.counts
            .iter()
            .filter(|(m, _)| m.spatial == spatial)
            .map(|(_, n)| *n)
            .sum()
    }

    pub fn total(&self) -> u32 {
        self.counts.values().sum()
    }

    pub fn is_vacuum(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ModeRef, u32)> {
        self.counts.iter().map(|(m, n)| (m, *n))
    }

    pub fn modes(&self) -> impl Iterator<Item = &ModeRef> {
        self.counts.keys()
    }

    /// The pattern with every mode whose spatial label is in `spatial` removed.
    pub fn without_spatial(&self, spatial: &[&str]) -> Self {
        OccupationPattern {
            counts: self
                .counts
                .iter()
                .filter(|(m, _)| !spatial.contains(&m.spatial.as_str()))
                .map(|(m, n)| (m.clone(), *n))
                .collect(),
        }
    }

    fn merged(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, n) in other.iter() {
            out.add(m.clone(), n);
        }
        out
    }
}

impl fmt::Display for OccupationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.counts.is_empty() {
            return f.write_str("vac");
        }
        for (i, (m, n)) in self.counts.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{m}:{n}")?;
        }
        Ok(())
    }
}

/// A (not necessarily normalized) superposition of occupation patterns.
///
/// Values are treated as immutable: every operation returns a new state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    terms: BTreeMap<OccupationPattern, Complex64>,
    tolerance: f64,
    photon_cap: u32,
}

impl Default for StateVector {
    fn default() -> Self {
        Self::empty()
    }
}

impl StateVector {
    /// The zero vector. Used as the marker for an impossible projection.
    pub fn empty() -> Self {
        StateVector {
            terms: BTreeMap::new(),
            tolerance: DEFAULT_TOLERANCE,
            photon_cap: DEFAULT_PHOTON_CAP,
        }
    }

    pub fn vacuum() -> Self {
        Self::empty().with_term(OccupationPattern::vacuum(), Complex64::new(1.0, 0.0))
    }

    /// A single photon in `mode` with amplitude one.
    pub fn single_photon(mode: ModeRef) -> Self {
        Self::empty().with_term(OccupationPattern::single(mode), Complex64::new(1.0, 0.0))
    }

    pub fn from_terms<I>(terms: I) -> Self
    where
        I: IntoIterator<Item = (OccupationPattern, Complex64)>,
    {
        let mut s = Self::empty();
        for (p, a) in terms {
            *s.terms.entry(p).or_insert(Complex64::new(0.0, 0.0)) += a;
        }
        s.prune();
        s
    }

    fn with_term(mut self, p: OccupationPattern, a: Complex64) -> Self {
        self.terms.insert(p, a);
        self
    }

    pub fn with_photon_cap(mut self, cap: u32) -> Self {
        self.photon_cap = cap;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn photon_cap(&self) -> u32 {
        self.photon_cap
    }

    fn like(&self, terms: BTreeMap<OccupationPattern, Complex64>) -> Self {
        let mut s = StateVector {
            terms,
            tolerance: self.tolerance,
            photon_cap: self.photon_cap,
        };
        s.prune();
        s
    }

    fn prune(&mut self) {
        self.terms.retain(|_, a| a.norm() >= PRUNE_THRESHOLD);
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&OccupationPattern, Complex64)> {
        self.terms.iter().map(|(p, a)| (p, *a))
    }

    pub fn amplitude(&self, p: &OccupationPattern) -> Complex64 {
        self.terms.get(p).copied().unwrap_or_default()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= self.tolerance
    }

    /// Every mode that carries a photon in at least one term.
    pub fn modes(&self) -> BTreeSet<ModeRef> {
        self.terms.keys().flat_map(|p| p.modes().cloned()).collect()
    }

    pub fn spatial_modes(&self) -> BTreeSet<String> {
        self.modes().into_iter().map(|m| m.spatial).collect()
    }

    pub fn max_photons(&self) -> u32 {
        self.terms.keys().map(|p| p.total()).max().unwrap_or(0)
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr();
        if n == 0.0 {
            return Err(Error::DegenerateState("cannot normalize the zero vector".into()));
        }
        Ok(self.scaled(Complex64::new(1.0 / n.sqrt(), 0.0)))
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        self.like(self.terms.iter().map(|(p, a)| (p.clone(), a * factor)).collect())
    }

    /// Unnormalized component whose patterns satisfy `pred`.
    pub fn filter<F>(&self, pred: F) -> Self
    where
        F: Fn(&OccupationPattern) -> bool,
    {
        self.like(
            self.terms
                .iter()
                .filter(|(p, _)| pred(p))
                .map(|(p, a)| (p.clone(), *a))
                .collect(),
        )
    }

    /// Multiplies each amplitude by `phase(pattern)`.
    pub fn map_amplitudes<F>(&self, phase: F) -> Self
    where
        F: Fn(&OccupationPattern, Complex64) -> Complex64,
    {
        self.like(self.terms.iter().map(|(p, a)| (p.clone(), phase(p, *a))).collect())
    }

    /// Drops the listed spatial modes from every pattern, summing amplitudes
    /// of patterns that become identical.
    pub(crate) fn trace_out_spatial(&self, spatial: &[&str]) -> Self {
        let mut terms: BTreeMap<OccupationPattern, Complex64> = BTreeMap::new();
        for (p, a) in &self.terms {
            *terms.entry(p.without_spatial(spatial)).or_default() += a;
        }
        self.like(terms)
    }

    pub fn add(&self, other: &StateVector) -> Self {
        let mut terms = self.terms.clone();
        for (p, a) in &other.terms {
            *terms.entry(p.clone()).or_default() += a;
        }
        self.like(terms)
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.terms
            .iter()
            .filter_map(|(p, a)| other.terms.get(p).map(|b| a.conj() * b))
            .sum()
    }

    /// One line per term: `<re> <im> <pattern>`, 17 significant digits.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (p, a) in &self.terms {
            out.push_str(&format!(
                "{:.16e} {:.16e} {}\n",
                a.re + 0.0,
                a.im + 0.0,
                p
            ));
        }
        out
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_text())
    }
}

/// Tensor product of states on disjoint modes.
pub fn tensor(a: &StateVector, b: &StateVector) -> Result<StateVector> {
    let left = a.modes();
    if let Some(m) = b.modes().iter().find(|m| left.contains(*m)) {
        return Err(Error::ModeCollision(m.to_string()));
    }
    let cap = a.photon_cap.min(b.photon_cap);
    let mut terms = BTreeMap::new();
    for (pa, xa) in &a.terms {
        for (pb, xb) in &b.terms {
            let p = pa.merged(pb);
            if p.total() > cap {
                return Err(Error::PhotonCap { found: p.total(), cap });
            }
            *terms.entry(p).or_insert(Complex64::new(0.0, 0.0)) += xa * xb;
        }
    }
    Ok(a.like(terms))
}

/// `|⟨a|b⟩|² / (‖a‖²‖b‖²)`.
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    let na = a.norm_sqr();
    let nb = b.norm_sqr();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateState("fidelity with a zero-norm state".into()));
    }
    Ok((a.inner(b).norm_sqr() / (na * nb)).clamp(0.0, 1.0))
}

/// Substitution rules for creation operators: each input mode maps to a
/// linear combination of output modes. Modes without a rule are untouched.
pub type ModeRules = BTreeMap<ModeRef, Vec<(ModeRef, Complex64)>>;

fn check_unitary(rules: &ModeRules, tol: f64) -> Result<()> {
    let inputs: Vec<_> = rules.iter().collect();
    for (i, (mi, ri)) in inputs.iter().enumerate() {
        for (mj, rj) in inputs.iter().skip(i) {
            let mut dot = Complex64::new(0.0, 0.0);
            for (out_i, ci) in ri.iter() {
                for (out_j, cj) in rj.iter() {
                    if out_i == out_j {
                        dot += ci * cj.conj();
                    }
                }
            }
            let expected = if mi == mj { 1.0 } else { 0.0 };
            if (dot - expected).norm() > tol {
                return Err(Error::UnitarityViolation(format!(
                    "overlap of images of {mi} and {mj} is {dot}, expected {expected}"
                )));
            }
        }
    }
    Ok(())
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Applies the linear substitution `a_in† -> Σ c · a_out†` to every term of
/// `s` and re-expands into normalized Fock kets.
pub fn apply_mode_transform(s: &StateVector, rules: &ModeRules) -> Result<StateVector> {
    check_unitary(rules, 1e-12)?;

    let outputs: BTreeSet<&ModeRef> = rules.values().flatten().map(|(m, _)| m).collect();
    for m in s.modes() {
        if !rules.contains_key(&m) && outputs.contains(&m) {
            return Err(Error::ModeCollision(format!(
                "{m} is occupied and is also the image of a transformed mode"
            )));
        }
    }

    let mut terms: BTreeMap<OccupationPattern, Complex64> = BTreeMap::new();
    for (pattern, amp) in &s.terms {
        let mut untouched = OccupationPattern::vacuum();
        let mut coef = *amp;
        // (output counts, coefficient) of the operator product expanded so far
        let mut partials: Vec<(OccupationPattern, Complex64)> = vec![(OccupationPattern::vacuum(), Complex64::new(1.0, 0.0))];
        for (mode, n) in pattern.iter() {
            match rules.get(mode) {
                None => untouched.add(mode.clone(), n),
                Some(image) => {
                    coef /= factorial(n).sqrt();
                    for _ in 0..n {
                        let mut next = Vec::with_capacity(partials.len() * image.len());
                        for (counts, c) in &partials {
                            for (out, k) in image {
                                let mut counts = counts.clone();
                                counts.add(out.clone(), 1);
                                next.push((counts, c * k));
                            }
                        }
                        partials = next;
                    }
                }
            }
        }
        for (produced, c) in partials {
            let bosonic: f64 = produced.iter().map(|(_, n)| factorial(n).sqrt()).product();
            let full = untouched.merged(&produced);
            if full.total() > s.photon_cap {
                return Err(Error::PhotonCap {
                    found: full.total(),
                    cap: s.photon_cap,
                });
            }
            *terms.entry(full).or_insert(Complex64::new(0.0, 0.0)) += coef * c * bosonic;
        }
    }
    Ok(s.like(terms))
}

/// Result of projecting onto a set of occupation patterns.
#[derive(Debug, Clone)]
pub struct Projection {
    /// Squared norm of the kept component.
    pub probability: f64,
    /// Kept component renormalized; empty when `probability` is zero.
    pub collapsed: StateVector,
}

/// Keeps the terms satisfying `pred`. For a normalized input the returned
/// probability is the Born probability of the predicate; for an
/// unnormalized input it is the absolute squared norm of the component.
pub fn project_occupation<F>(s: &StateVector, pred: F) -> Projection
where
    F: Fn(&OccupationPattern) -> bool,
{
    let kept = s.filter(pred);
    let probability = kept.norm_sqr();
    let collapsed = if probability > 0.0 {
        kept.scaled(Complex64::new(1.0 / probability.sqrt(), 0.0))
    } else {
        StateVector::empty()
    };
    Projection {
        probability,
        collapsed,
    }
}
