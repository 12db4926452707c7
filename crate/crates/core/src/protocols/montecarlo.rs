//! Trial-by-trial sampling of measurement outcomes.
//!
//! Each arm is a Markov chain over rounds: at round `k` a trial succeeds,
//! recycles or fails with the conditional probabilities taken from the exact
//! trace, and a success survives detection with the detector model's
//! probability. Trials run in fixed-size chunks, each with its own ChaCha
//! stream selected by chunk index, and chunk tallies are merged in index
//! order, so results do not depend on the thread schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::engine::Trace;
use crate::error::{Error, Result};
use crate::measurement::{DetectorMode, DetectorModel};

const CHUNK: u64 = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub trials: u64,
    pub seed: u64,
    pub round_success: Vec<f64>,
    pub round_recycle: Vec<f64>,
    pub p_total: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone)]
struct ArmChain {
    mass: f64,
    clicks: u32,
    /// Per round: (P(success | reached), P(recycle | reached)).
    steps: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    success: Vec<Vec<u64>>,
    recycle: Vec<Vec<u64>>,
}

impl Tally {
    fn new(arms: usize, rounds: usize) -> Self {
        Tally {
            success: vec![vec![0; rounds]; arms],
            recycle: vec![vec![0; rounds]; arms],
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.success.iter_mut().zip(other.success) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.recycle.iter_mut().zip(other.recycle) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self
    }
}

fn chains(trace: &Trace) -> Vec<ArmChain> {
    trace
        .arms
        .iter()
        .map(|arm| ArmChain {
            mass: arm.mass,
            clicks: arm.clicks,
            steps: arm
                .rounds
                .iter()
                .map(|r| {
                    if r.mass <= 0.0 {
                        (0.0, 0.0)
                    } else {
                        (r.success_probability() / r.mass, r.recycle_probability / r.mass)
                    }
                })
                .collect(),
        })
        .collect()
}

fn detected<R: Rng>(rng: &mut R, model: &DetectorModel, clicks: u32) -> bool {
    match model.mode {
        DetectorMode::AnalyticFactor(_) => rng.gen::<f64>() < model.success_factor(clicks),
        DetectorMode::BernoulliLoss => (0..clicks).all(|_| rng.gen::<f64>() < model.eta_p),
    }
}

fn run_chunk(chains: &[ArmChain], rounds: usize, model: &DetectorModel, seed: u64, index: u64, n: u64) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut tally = Tally::new(chains.len(), rounds);
    for _ in 0..n {
        for (a, chain) in chains.iter().enumerate() {
            for (k, &(succ, rec)) in chain.steps.iter().enumerate() {
                let u: f64 = rng.gen();
                if u < succ {
                    if detected(&mut rng, model, chain.clicks) {
                        tally.success[a][k] += 1;
                    }
                    break;
                } else if u < succ + rec {
                    tally.recycle[a][k] += 1;
                } else {
                    break;
                }
            }
        }
    }
    tally
}

/// Samples `trials` runs of every arm in `trace`.
///
/// Round estimates are mass-weighted arm frequencies; the standard error is
/// the binomial error of each arm's total success frequency, combined over
/// arms.
pub fn sample_trace(trace: &Trace, model: &DetectorModel, trials: u64, seed: u64) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::Configuration("Monte Carlo needs at least one trial".into()));
    }
    model.validate()?;
    let chains = chains(trace);
    let rounds = trace.rounds();
    let chunks = trials.div_ceil(CHUNK);
    let tally = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let n = CHUNK.min(trials - i * CHUNK);
            run_chunk(&chains, rounds, model, seed, i, n)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Tally::new(chains.len(), rounds), Tally::merge);

    let n = trials as f64;
    let mut round_success = vec![0.0; rounds];
    let mut round_recycle = vec![0.0; rounds];
    let mut variance = 0.0;
    for (a, chain) in chains.iter().enumerate() {
        let mut hits = 0u64;
        for k in 0..rounds {
            round_success[k] += chain.mass * tally.success[a][k] as f64 / n;
            round_recycle[k] += chain.mass * tally.recycle[a][k] as f64 / n;
            hits += tally.success[a][k];
        }
        let f = hits as f64 / n;
        variance += chain.mass * chain.mass * f * (1.0 - f) / n;
    }
    Ok(McEstimate {
        trials,
        seed,
        p_total: round_success.iter().sum(),
        round_success,
        round_recycle,
        stderr: variance.sqrt(),
    })
}
