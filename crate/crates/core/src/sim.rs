//! Monte Carlo simulation of the random-coding constructions behind the
//! achievability bounds.
//!
//! Trial `t` draws everything (codebook, source pair, encoder randomness)
//! from a ChaCha8 stream keyed by `(seed, t)`, so results do not depend on
//! thread scheduling.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source::{exceeds, logloss_cover_count, ProblemInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub trials: u64,
    pub excess_count: u64,
    pub estimate: f64,
    pub std_error: f64,
    pub seed: u64,
}

impl SimReport {
    pub fn from_counts(trials: u64, excess_count: u64, seed: u64) -> Self {
        let estimate = excess_count as f64 / trials as f64;
        Self {
            trials,
            excess_count,
            estimate,
            std_error: (estimate * (1.0 - estimate) / trials as f64).sqrt(),
            seed,
        }
    }
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn sampler(weights: &[f64], what: &str) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| Error::invalid(format!("{what}: {e}")))
}

/// Joint `(x, y)` sampler over the pruned source.
struct SourceSampler {
    index: WeightedIndex<f64>,
    ny: usize,
}

impl SourceSampler {
    fn new(instance: &ProblemInstance) -> Result<Self> {
        let flat: Vec<f64> = instance.source().p_xy().iter().flatten().copied().collect();
        Ok(Self {
            index: sampler(&flat, "source")?,
            ny: instance.y_len(),
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let k = self.index.sample(rng);
        (k / self.ny, k % self.ny)
    }
}

fn run_trials(trials: u64, seed: u64, trial: impl Fn(&mut ChaCha8Rng) -> bool + Sync) -> Result<SimReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let excess = (0..trials)
        .into_par_iter()
        .map(|t| u64::from(trial(&mut trial_rng(seed, t))))
        .sum();
    Ok(SimReport::from_counts(trials, excess, seed))
}

/// Codewords drawn i.i.d. from `Q` over `X̂ × Ŷ`; each source symbol takes
/// the codeword with the smallest `π` (lowest index on ties).
pub fn simulate_thm1_code(
    instance: &ProblemInstance,
    q: &[f64],
    trials: u64,
    seed: u64,
) -> Result<SimReport> {
    let pi = instance.pi_table()?;
    if q.len() != pi[0].len() {
        return Err(Error::invalid("Q does not match the reconstruction alphabets"));
    }
    let d1 = instance.d1_table()?;
    let d2 = instance.d2_table();
    let nb = instance.y_hat_len();
    let m = instance.codewords();
    let codes = sampler(q, "Q")?;
    let src = SourceSampler::new(instance)?;
    let (l1, l2) = (instance.d1_level(), instance.d2_level());
    run_trials(trials, seed, |rng| {
        let book: Vec<usize> = (0..m).map(|_| codes.sample(rng)).collect();
        let (x, y) = src.draw(rng);
        let mut best = book[0];
        for &c in &book[1..] {
            if pi[x][c] < pi[x][best] {
                best = c;
            }
        }
        exceeds(d1[x][best / nb], l1) || exceeds(d2[y][best % nb], l2)
    })
}

/// Codewords drawn i.i.d. from `P_Ŷ`; the encoder takes the first codeword
/// with `π'(x, c) ≤ ε'`, or the first codeword if none qualifies.
pub fn simulate_thm4_code(
    instance: &ProblemInstance,
    p_y_hat: &[f64],
    eps_prime: f64,
    trials: u64,
    seed: u64,
) -> Result<SimReport> {
    if instance.d1_level() != f64::INFINITY {
        return Err(Error::invalid("indirect construction needs D1 = inf"));
    }
    let excess = instance.indirect_excess_table();
    let d2 = instance.d2_table();
    let m = instance.codewords();
    let codes = sampler(p_y_hat, "P_Y_hat")?;
    let src = SourceSampler::new(instance)?;
    let l2 = instance.d2_level();
    run_trials(trials, seed, |rng| {
        let book: Vec<usize> = (0..m).map(|_| codes.sample(rng)).collect();
        let (x, y) = src.draw(rng);
        let c = book
            .iter()
            .copied()
            .find(|&c| excess[x][c] <= eps_prime)
            .unwrap_or(book[0]);
        exceeds(d2[y][c], l2)
    })
}

/// Log-loss construction with random binning: the encoder picks uniformly
/// among acceptable codewords, every symbol gets a uniform bin in
/// `0..⌊2^{D1}⌋`, and the decoder spreads its reconstruction uniformly over
/// the typical symbols that are alone in their (cell, bin). An empty set
/// falls back to the prior.
pub fn simulate_thm5_code(
    instance: &ProblemInstance,
    p_y_hat: &[f64],
    eps_prime: f64,
    gamma: f64,
    trials: u64,
    seed: u64,
) -> Result<SimReport> {
    if !instance.is_logloss() {
        return Err(Error::invalid("binning construction needs a log-loss direct distortion"));
    }
    if !(gamma >= 0.0) {
        return Err(Error::invalid("gamma must be >= 0"));
    }
    let excess = instance.indirect_excess_table();
    let d2 = instance.d2_table();
    let m = instance.codewords();
    let nx = instance.x_len();
    let codes = sampler(p_y_hat, "P_Y_hat")?;
    let src = SourceSampler::new(instance)?;
    let (l1, l2) = (instance.d1_level(), instance.d2_level());
    let bins = logloss_cover_count(l1);
    let iota = instance.info_density();
    let threshold = l1 + (m as f64).log2() - gamma;
    let typical: Vec<bool> = iota.iter().map(|i| *i <= threshold).collect();
    run_trials(trials, seed, |rng| {
        let book: Vec<usize> = (0..m).map(|_| codes.sample(rng)).collect();
        let (x0, y0) = src.draw(rng);
        let mut cell = vec![0usize; nx];
        let mut bin = vec![0usize; nx];
        let mut acceptable = Vec::with_capacity(m);
        for x in 0..nx {
            acceptable.clear();
            acceptable.extend((0..m).filter(|&i| excess[x][book[i]] <= eps_prime));
            cell[x] = if acceptable.is_empty() {
                rng.gen_range(0..m)
            } else {
                acceptable[rng.gen_range(0..acceptable.len())]
            };
            bin[x] = rng.gen_range(0..bins);
        }
        let i = cell[x0];
        // Typical symbols of cell i per bin.
        let mut per_bin = vec![0usize; bins];
        for x in 0..nx {
            if cell[x] == i && typical[x] {
                per_bin[bin[x]] += 1;
            }
        }
        let set_size = per_bin.iter().filter(|&&c| c == 1).count();
        let in_set = typical[x0] && per_bin[bin[x0]] == 1;
        let direct_fail = if in_set {
            exceeds((set_size as f64).log2(), l1)
        } else if set_size > 0 {
            true
        } else {
            exceeds(iota[x0], l1)
        };
        direct_fail || exceeds(d2[y0][book[i]], l2)
    })
}
