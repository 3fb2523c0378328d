//! Greedy partition refinement.
//!
//! Starting from one block per observed letter, each iteration tries to split
//! every block into its one-letter future extensions, estimates the resulting
//! abstraction, and keeps the split whose chain is farthest from the current
//! one under a [`ChainMetric`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ck::ck_approx;
use crate::dynamics::DynamicalSystem;
use crate::estimation::{count_blocks, CountTable, EstimationConfig};
use crate::markov::LabeledMarkovChain;
use crate::symbolic::{is_partition_consistent, Partition, TimedWord};
use crate::{Error, Label, Result};

/// A distance between labeled Markov chains.
///
/// Chains built from different partitions have unrelated state sets, so an
/// implementation may only look at the label-sequence distributions.
pub trait ChainMetric: Send + Sync {
    fn distance(&self, c1: &LabeledMarkovChain, c2: &LabeledMarkovChain) -> Result<f64>;
    fn name(&self) -> String;
}

/// The Cantor-Kantorovich metric at accuracy `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CkMetric {
    pub epsilon: f64,
}

impl Default for CkMetric {
    fn default() -> Self {
        CkMetric { epsilon: 1e-3 }
    }
}

impl ChainMetric for CkMetric {
    fn distance(&self, c1: &LabeledMarkovChain, c2: &LabeledMarkovChain) -> Result<f64> {
        Ok(ck_approx(c1, c2, self.epsilon)?.value)
    }

    fn name(&self) -> String {
        format!("ck(eps={})", self.epsilon)
    }
}

/// How a block is split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefineStrategy {
    /// `w ↦ {wa : a ∈ A}`.
    ForwardSplit,
    /// `w ↦ {aw : a ∈ A}`, one more step of past memory.
    PastExpansion,
    /// Compare against every refinement `n` splits ahead.
    Lookahead(usize),
}

/// Replaces future-only word `i` by its one-letter extensions, in letter
/// order, at the end of the word list.
pub fn split_block(partition: &Partition, i: usize) -> Result<Partition> {
    let w = partition.words().get(i).ok_or_else(|| {
        Error::InvalidConfig(format!("no block {i} in a set of {}", partition.len()))
    })?;
    if !w.is_future_only() {
        return Err(Error::PastWordUnsupported(w.to_string()));
    }
    let mut words: Vec<TimedWord> = partition
        .words()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, v)| v.clone())
        .collect();
    words.extend((0..partition.alphabet_size()).map(|a| w.extended(a as Label)));
    Partition::new(words, partition.alphabet_size())
}

/// One candidate split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub block: usize,
    pub word: TimedWord,
    pub distance: f64,
    /// Words of the split set seen at most `zero_threshold` times.
    pub dropped: Vec<TimedWord>,
    pub n_states: usize,
    /// Sampled trajectories starting outside every kept block.
    pub unmatched_initial: u64,
    /// Sampled transitions from a kept block to outside every kept block.
    pub unmatched_next: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub candidates: Vec<Candidate>,
    pub chosen: usize,
    pub n_states: usize,
}

/// A word removed because it was not observed, with the count behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedWord {
    pub word: TimedWord,
    /// `None` for letters removed before the first iteration.
    pub iteration: Option<usize>,
    pub count: u64,
    pub n_samples: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub metric: String,
    pub config: EstimationConfig,
    pub initial_partition: Partition,
    pub initial_states: usize,
    pub iterations: Vec<Iteration>,
    /// Every word dropped along the way, adopted splits only.
    pub dropped: Vec<DroppedWord>,
    pub partition: Partition,
    pub chain: LabeledMarkovChain,
}

impl RefineReport {
    pub fn dropped_words(&self) -> Vec<TimedWord> {
        self.dropped.iter().map(|d| d.word.clone()).collect()
    }

    /// State counts after each iteration, starting with the initial set.
    pub fn state_counts(&self) -> Vec<usize> {
        std::iter::once(self.initial_states)
            .chain(self.iterations.iter().map(|it| it.n_states))
            .collect()
    }
}

/// Partition, chain and sampling details of one estimated word set.
struct Estimate {
    partition: Partition,
    chain: LabeledMarkovChain,
    dropped: Vec<(TimedWord, u64)>,
    unmatched_initial: u64,
    unmatched_next: u64,
}

fn estimate_dropping(
    system: &dyn DynamicalSystem,
    partition: &Partition,
    cfg: &EstimationConfig,
) -> Result<Estimate> {
    let table = count_blocks(system, partition, cfg)?;
    let dropped: Vec<(TimedWord, u64)> = partition
        .words()
        .iter()
        .zip(&table.initial)
        .filter(|(_, &c)| c <= cfg.zero_threshold)
        .map(|(w, &c)| (w.clone(), c))
        .collect();
    let words: Vec<TimedWord> = dropped.iter().map(|(w, _)| w.clone()).collect();
    let table: CountTable = table.without(&words);
    if table.partition().is_empty() {
        return Err(Error::DegenerateAlphabet);
    }
    Ok(Estimate {
        chain: table.to_chain()?,
        partition: table.partition().clone(),
        dropped,
        unmatched_initial: table.unmatched_initial,
        unmatched_next: table.unmatched_next.iter().sum(),
    })
}

fn drop_reason(count: u64, n_samples: u64, threshold: u64) -> String {
    format!("seen {count} times in {n_samples} samples (threshold {threshold})")
}

/// Runs `iterations` greedy splits with the forward strategy.
pub fn refine(
    system: &dyn DynamicalSystem,
    metric: &dyn ChainMetric,
    iterations: usize,
    cfg: &EstimationConfig,
) -> Result<RefineReport> {
    refine_with(
        system,
        metric,
        iterations,
        cfg,
        RefineStrategy::ForwardSplit,
    )
}

pub fn refine_with(
    system: &dyn DynamicalSystem,
    metric: &dyn ChainMetric,
    iterations: usize,
    cfg: &EstimationConfig,
    strategy: RefineStrategy,
) -> Result<RefineReport> {
    match strategy {
        RefineStrategy::ForwardSplit => {}
        RefineStrategy::PastExpansion => return Err(Error::UnsupportedStrategy("past expansion")),
        RefineStrategy::Lookahead(_) => return Err(Error::UnsupportedStrategy("lookahead")),
    }
    cfg.validate()?;

    let coarse = Partition::coarse(system.alphabet_size())?;
    let start = estimate_dropping(system, &coarse, cfg)?;
    let mut dropped: Vec<DroppedWord> = start
        .dropped
        .iter()
        .map(|(w, c)| DroppedWord {
            word: w.clone(),
            iteration: None,
            count: *c,
            n_samples: cfg.n_samples,
            reason: drop_reason(*c, cfg.n_samples, cfg.zero_threshold),
        })
        .collect();
    let initial_partition = start.partition.clone();
    let mut current = start;
    let mut history = Vec::with_capacity(iterations);

    for n in 0..iterations {
        let estimates: Vec<Result<(Estimate, f64)>> = (0..current.partition.len())
            .into_par_iter()
            .map(|i| {
                let split = split_block(&current.partition, i)?;
                let est = estimate_dropping(system, &split, cfg)?;
                let d = metric.distance(&current.chain, &est.chain)?;
                Ok((est, d))
            })
            .collect();
        let estimates: Vec<(Estimate, f64)> = estimates.into_iter().collect::<Result<_>>()?;

        let mut chosen = 0;
        for (i, (_, d)) in estimates.iter().enumerate() {
            if !d.is_finite() || *d < 0.0 {
                return Err(Error::InvalidChain(format!(
                    "metric returned {d} for block {i}"
                )));
            }
            if *d > estimates[chosen].1 {
                chosen = i;
            }
        }
        let candidates = estimates
            .iter()
            .enumerate()
            .map(|(i, (est, d))| Candidate {
                block: i,
                word: current.partition.words()[i].clone(),
                distance: *d,
                dropped: est.dropped.iter().map(|(w, _)| w.clone()).collect(),
                n_states: est.partition.len(),
                unmatched_initial: est.unmatched_initial,
                unmatched_next: est.unmatched_next,
            })
            .collect();

        let (next, _) = estimates
            .into_iter()
            .nth(chosen)
            .expect("chosen index in range");
        dropped.extend(next.dropped.iter().map(|(w, c)| DroppedWord {
            word: w.clone(),
            iteration: Some(n),
            count: *c,
            n_samples: cfg.n_samples,
            reason: drop_reason(*c, cfg.n_samples, cfg.zero_threshold),
        }));
        debug_assert!(is_partition_consistent(
            &next.partition,
            &dropped.iter().map(|d| d.word.clone()).collect::<Vec<_>>()
        ));
        history.push(Iteration {
            candidates,
            chosen,
            n_states: next.partition.len(),
        });
        current = next;
    }

    Ok(RefineReport {
        metric: metric.name(),
        config: *cfg,
        initial_states: initial_partition.len(),
        initial_partition,
        iterations: history,
        dropped,
        partition: current.partition,
        chain: current.chain,
    })
}
