//! Monte-Carlo estimation of the abstraction whose states are the blocks of a
//! word partition.
//!
//! Every trajectory contributes one initial-block observation and one
//! transition: the block of `x₀` and the block of `x₁ = f(x₀)`. Trajectory `j`
//! is drawn from `derive_seed(master_seed, [j])`, so counts do not depend on how
//! the work is split across threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{derive_seed, DynamicalSystem, Simulator};
use crate::markov::LabeledMarkovChain;
use crate::symbolic::{BlockMatcher, Partition, TimedWord};
use crate::{Error, Label, Result};

const CHUNK: u64 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub n_samples: u64,
    pub master_seed: u64,
    /// A word seen at most this many times counts as unobserved.
    pub zero_threshold: u64,
}

impl EstimationConfig {
    pub fn new(n_samples: u64, master_seed: u64) -> Self {
        EstimationConfig {
            n_samples,
            master_seed,
            zero_threshold: 0,
        }
    }

    pub fn with_seed(self, master_seed: u64) -> Self {
        EstimationConfig {
            master_seed,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be positive".into()));
        }
        if self.zero_threshold >= self.n_samples {
            return Err(Error::InvalidConfig(format!(
                "zero_threshold {} must be below n_samples {}",
                self.zero_threshold, self.n_samples
            )));
        }
        Ok(())
    }
}

/// Block visit and transition counts for one batch of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    partition: Partition,
    pub n_samples: u64,
    /// Trajectories whose `x₀` lies in block `w`.
    pub initial: Vec<u64>,
    /// Row-major: `x₀` in block `w` and `x₁` in block `w'`.
    pub transitions: Vec<u64>,
    /// Trajectories starting in block `w` whose `x₁` lies in no block.
    pub unmatched_next: Vec<u64>,
    /// Trajectories whose `x₀` lies in no block.
    pub unmatched_initial: u64,
}

impl CountTable {
    fn empty(partition: &Partition) -> Self {
        let n = partition.len();
        CountTable {
            partition: partition.clone(),
            n_samples: 0,
            initial: vec![0; n],
            transitions: vec![0; n * n],
            unmatched_next: vec![0; n],
            unmatched_initial: 0,
        }
    }

    fn merge(mut self, other: CountTable) -> CountTable {
        self.n_samples += other.n_samples;
        self.unmatched_initial += other.unmatched_initial;
        for (a, b) in self.initial.iter_mut().zip(other.initial) {
            *a += b;
        }
        for (a, b) in self.transitions.iter_mut().zip(other.transitions) {
            *a += b;
        }
        for (a, b) in self.unmatched_next.iter_mut().zip(other.unmatched_next) {
            *a += b;
        }
        self
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn transition(&self, from: usize, to: usize) -> u64 {
        self.transitions[from * self.partition.len() + to]
    }

    /// Words seen at most `threshold` times at time 0.
    pub fn zero_words(&self, threshold: u64) -> Vec<TimedWord> {
        self.partition
            .words()
            .iter()
            .zip(&self.initial)
            .filter(|(_, &c)| c <= threshold)
            .map(|(w, _)| w.clone())
            .collect()
    }

    /// Removes the given words. Transitions into them are moved to
    /// `unmatched_next`, trajectories starting in them to `unmatched_initial`.
    pub fn without(&self, drop: &[TimedWord]) -> CountTable {
        let n = self.partition.len();
        let keep: Vec<usize> = (0..n)
            .filter(|&i| !drop.contains(&self.partition.words()[i]))
            .collect();
        let mut out = CountTable::empty(&self.partition.without(drop));
        out.n_samples = self.n_samples;
        out.unmatched_initial = self.unmatched_initial
            + (0..n)
                .filter(|i| !keep.contains(i))
                .map(|i| self.initial[i])
                .sum::<u64>();
        for (new_i, &i) in keep.iter().enumerate() {
            out.initial[new_i] = self.initial[i];
            out.unmatched_next[new_i] = self.unmatched_next[i];
            for j in 0..n {
                let c = self.transition(i, j);
                match keep.iter().position(|&k| k == j) {
                    Some(new_j) => out.transitions[new_i * keep.len() + new_j] += c,
                    None => out.unmatched_next[new_i] += c,
                }
            }
        }
        out
    }

    /// Frequency estimates: `μ̂_w` over trajectories that start in a block,
    /// `τ̂_{w,w'}` over witnessed transitions out of `w`.
    pub fn to_chain(&self) -> Result<LabeledMarkovChain> {
        let n = self.partition.len();
        let matched: u64 = self.initial.iter().sum();
        if n == 0 || matched == 0 {
            return Err(Error::InvalidChain(
                "no trajectory starts in a block".into(),
            ));
        }
        let mu = self
            .initial
            .iter()
            .map(|&c| c as f64 / matched as f64)
            .collect();
        let mut tau = Vec::with_capacity(n);
        for i in 0..n {
            let row = &self.transitions[i * n..(i + 1) * n];
            let total: u64 = row.iter().sum();
            if total == 0 {
                return Err(Error::NoTransitions(self.partition.words()[i].to_string()));
            }
            tau.push(row.iter().map(|&c| c as f64 / total as f64).collect());
        }
        let words = self.partition.words().to_vec();
        let labels: Vec<Label> = words.iter().map(TimedWord::anchor).collect();
        LabeledMarkovChain::validated(tau, mu, labels, self.partition.alphabet_size(), Some(words))
    }
}

/// Simulates `cfg.n_samples` trajectories and tallies blocks at times 0 and 1.
///
/// Only a trajectory lying in two blocks is an error; trajectories outside
/// every block are tallied as unmatched.
pub fn count_blocks(
    system: &dyn DynamicalSystem,
    partition: &Partition,
    cfg: &EstimationConfig,
) -> Result<CountTable> {
    if partition.alphabet_size() != system.alphabet_size() {
        return Err(Error::AlphabetMismatch(
            partition.alphabet_size(),
            system.alphabet_size(),
        ));
    }
    let (past, future) = partition.span();
    let matcher = BlockMatcher::new(partition);
    let n = partition.len();
    let chunks = cfg.n_samples.div_ceil(CHUNK);
    let start = -(past as i64);

    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut table = CountTable::empty(partition);
            let mut sim = Simulator::new(system.dimension());
            let mut labels = Vec::new();
            let hi = ((c + 1) * CHUNK).min(cfg.n_samples);
            for j in c * CHUNK..hi {
                sim.fill(
                    system,
                    derive_seed(cfg.master_seed, &[j]),
                    past,
                    future + 1,
                    &mut labels,
                )?;
                table.n_samples += 1;
                let here = match matcher.find(partition, &labels, past, start) {
                    Ok(i) => i,
                    Err(Error::NoMatch) => {
                        table.unmatched_initial += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                table.initial[here] += 1;
                match matcher.find(partition, &labels, past + 1, start) {
                    Ok(next) => table.transitions[here * n + next] += 1,
                    Err(Error::NoMatch) => table.unmatched_next[here] += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok(table)
        })
        .try_reduce(|| CountTable::empty(partition), |a, b| Ok(a.merge(b)))
}

/// The abstraction of `system` over `partition`.
///
/// Fails with [`Error::EmptyBlock`] when a word is unobserved, and with
/// [`Error::NoMatch`] when some sampled trajectory (at time 0 or 1) lies in no
/// block, since the frequencies would then not describe a partition.
pub fn estimate_abstraction(
    system: &dyn DynamicalSystem,
    partition: &Partition,
    cfg: &EstimationConfig,
) -> Result<LabeledMarkovChain> {
    cfg.validate()?;
    let table = count_blocks(system, partition, cfg)?;
    for (w, &c) in partition.words().iter().zip(&table.initial) {
        if c <= cfg.zero_threshold {
            return Err(Error::EmptyBlock {
                word: w.to_string(),
                count: c,
                threshold: cfg.zero_threshold,
            });
        }
    }
    if table.unmatched_initial > 0 || table.unmatched_next.iter().any(|&c| c > 0) {
        return Err(Error::NoMatch);
    }
    table.to_chain()
}

/// Candidate words seen at most `cfg.zero_threshold` times at time 0.
pub fn observed_zero_words(
    system: &dyn DynamicalSystem,
    candidates: &[TimedWord],
    cfg: &EstimationConfig,
) -> Result<Vec<TimedWord>> {
    let past = candidates.iter().map(TimedWord::past).max().unwrap_or(0);
    let future = candidates.iter().map(TimedWord::future).max().unwrap_or(0);
    let chunks = cfg.n_samples.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; candidates.len()];
            let mut sim = Simulator::new(system.dimension());
            let mut labels = Vec::new();
            for j in c * CHUNK..((c + 1) * CHUNK).min(cfg.n_samples) {
                sim.fill(
                    system,
                    derive_seed(cfg.master_seed, &[j]),
                    past,
                    future,
                    &mut labels,
                )?;
                for (count, w) in counts.iter_mut().zip(candidates) {
                    let start = past - w.past();
                    if labels[start..start + w.len()] == *w.letters() {
                        *count += 1;
                    }
                }
            }
            Ok::<_, Error>(counts)
        })
        .try_reduce(
            || vec![0u64; candidates.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    Ok(candidates
        .iter()
        .zip(counts)
        .filter(|(_, c)| *c <= cfg.zero_threshold)
        .map(|(w, _)| w.clone())
        .collect())
}

/// How sampled trajectories fall into the blocks of a word set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Coverage {
    pub matched: u64,
    pub no_match: u64,
    pub multi_match: u64,
}

/// Monte-Carlo check of the partition conditions for arbitrary (including
/// mixed past/future) word sets.
pub fn coverage(
    system: &dyn DynamicalSystem,
    partition: &Partition,
    cfg: &EstimationConfig,
) -> Result<Coverage> {
    let (past, future) = partition.span();
    let mut sim = Simulator::new(system.dimension());
    let mut labels = Vec::new();
    let mut out = Coverage::default();
    for j in 0..cfg.n_samples {
        sim.fill(
            system,
            derive_seed(cfg.master_seed, &[j]),
            past,
            future,
            &mut labels,
        )?;
        let trace = crate::dynamics::Trace {
            labels: labels.clone(),
            start_offset: -(past as i64),
        };
        match partition.match_block(&trace) {
            Ok(_) => out.matched += 1,
            Err(Error::NoMatch) => out.no_match += 1,
            Err(Error::MultiMatch(..)) => out.multi_match += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
