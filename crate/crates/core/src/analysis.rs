//! Total-probability sweeps over `|α|²` for several round counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measurement::DetectorModel;
use crate::protocols::{formulas, run, Accounting, Engine, EntanglementParams, ProtocolSpec, RunConfig};
use crate::vbs_schedule;

pub const CSV_HEADER: &str = "alpha,alpha_sq,eta,k,p_total_formula,p_total_sim,stderr";

/// `start:stop:step`, inclusive of `stop` up to rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|i| {
                let x = self.start + i as f64 * self.step;
                (x * 1e12).round() / 1e12
            })
            .collect()
    }
}

impl std::str::FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Parameter(format!("grid `{s}` is not start:stop:step"));
        let [a, b, c] = parts.as_slice() else {
            return Err(bad());
        };
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| bad());
        Ok(Grid {
            start: num(a)?,
            stop: num(b)?,
            step: num(c)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub grid: Grid,
    pub eta_p: f64,
    pub ks: Vec<usize>,
    pub engine: Engine,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let g = self.grid;
        let inside = g.step > 0.0 && g.start > 0.0 && g.start <= g.stop && g.stop < 1.0;
        if !inside {
            return Err(Error::Parameter("alpha_sq grid must be increasing and inside (0, 1)".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Parameter("k values must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eta_p) {
            return Err(Error::Parameter(format!("eta {} outside [0, 1]", self.eta_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub alpha_sq: f64,
    pub eta: f64,
    pub k: usize,
    pub p_total_formula: f64,
    pub p_total_sim: f64,
    pub stderr: f64,
}

impl SweepRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.alpha, self.alpha_sq, self.eta, self.k, self.p_total_formula, self.p_total_sim, self.stderr
        )
    }
}

/// Seed for row `index`, drawn from its own stream of the base seed.
fn row_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.gen()
}

/// One row per grid point and `k`, computed in parallel and returned in grid
/// order. The simulated column runs the polarization-free reference.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let jobs: Vec<(f64, usize)> = spec
        .grid
        .points()
        .into_iter()
        .flat_map(|a| spec.ks.iter().map(move |&k| (a, k)))
        .collect();
    jobs.par_iter()
        .enumerate()
        .map(|(i, &(alpha_sq, k))| {
            let e = EntanglementParams::from_alpha_sq(alpha_sq)?;
            let engine = match spec.engine {
                Engine::Exact => Engine::Exact,
                Engine::MonteCarlo { trials, seed } => Engine::MonteCarlo {
                    trials,
                    seed: row_seed(seed, i as u64),
                },
            };
            let report = run(
                &e,
                None,
                &RunConfig {
                    protocol: ProtocolSpec::Ecp2 {
                        schedule: vbs_schedule(&e, k)?,
                        rounds: k,
                    },
                    accounting: Accounting::PaperBranch,
                    model: DetectorModel::analytic(spec.eta_p, 1),
                    engine,
                },
            )?;
            Ok(SweepRow {
                alpha: alpha_sq.sqrt(),
                alpha_sq,
                eta: spec.eta_p,
                k,
                p_total_formula: formulas::series(&e, spec.eta_p, k).total(),
                p_total_sim: report.p_total,
                stderr: report.stderr.unwrap_or(0.0),
            })
        })
        .collect()
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}
