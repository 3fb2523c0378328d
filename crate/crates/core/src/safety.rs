//! Finite-horizon safety from abstractions: the measure of initial states
//! whose trajectory avoids an unsafe label for `H` steps, estimated from a
//! labeled Markov chain, from a uniform grid chain, or by direct sampling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{derive_seed, DynamicalSystem};
use crate::estimation::EstimationConfig;
use crate::markov::LabeledMarkovChain;
use crate::{Error, Label, Result};

const CHUNK: u64 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyQuery {
    pub horizon: usize,
    /// Allowed probability of leaving the safe states, in `(0, 1)`.
    pub beta: f64,
    pub unsafe_label: Label,
}

impl SafetyQuery {
    pub fn new(horizon: usize, beta: f64, unsafe_label: Label) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must lie in (0, 1), got {beta}"
            )));
        }
        Ok(SafetyQuery {
            horizon,
            beta,
            unsafe_label,
        })
    }
}

/// For every state `s₀`, the probability that the next `H` states of the
/// walk are all safe. The label of `s₀` itself is not looked at.
pub fn safe_walk_probabilities(chain: &LabeledMarkovChain, query: &SafetyQuery) -> Vec<f64> {
    let n = chain.n_states();
    let safe: Vec<bool> = chain
        .labels()
        .iter()
        .map(|&l| l != query.unsafe_label)
        .collect();
    let mut v = vec![1.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..query.horizon {
        for (s, out) in next.iter_mut().enumerate() {
            *out = chain
                .tau_row(s)
                .iter()
                .zip(&v)
                .zip(&safe)
                .filter(|(_, &ok)| ok)
                .map(|((&p, &vt), _)| p * vt)
                .sum();
        }
        std::mem::swap(&mut v, &mut next);
    }
    v
}

/// Safe states whose `H`-step walk stays safe with probability `≥ 1 − β`.
pub fn confident_initial_set(chain: &LabeledMarkovChain, query: &SafetyQuery) -> Vec<usize> {
    let v = safe_walk_probabilities(chain, query);
    (0..chain.n_states())
        .filter(|&s| chain.labels()[s] != query.unsafe_label && v[s] >= 1.0 - query.beta)
        .collect()
}

/// `Σ μ(s)` over the confident initial set.
pub fn estimate_ph(chain: &LabeledMarkovChain, query: &SafetyQuery) -> f64 {
    confident_initial_set(chain, query)
        .into_iter()
        .fold(0.0, |acc, s| acc + chain.mu()[s])
}

/// [`estimate_ph`] for horizons `0 ..= h_max`.
pub fn estimate_ph_curve(
    chain: &LabeledMarkovChain,
    beta: f64,
    unsafe_label: Label,
    h_max: usize,
) -> Result<Vec<f64>> {
    (0..=h_max)
        .map(|h| {
            Ok(estimate_ph(
                chain,
                &SafetyQuery::new(h, beta, unsafe_label)?,
            ))
        })
        .collect()
}

/// Fractions of `n_samples` sampled trajectories that avoid `unsafe_label` at
/// all times `0 ..= H`, for every `H ≤ h_max`.
pub fn ground_truth_ph_curve(
    system: &dyn DynamicalSystem,
    unsafe_label: Label,
    h_max: usize,
    n_samples: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be positive".into()));
    }
    let dim = system.dimension();
    let chunks = n_samples.div_ceil(CHUNK);
    // survived[h]: trajectories safe through time h
    let survived = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut survived = vec![0u64; h_max + 1];
            let mut x = vec![0.0; dim];
            let mut next = vec![0.0; dim];
            for j in c * CHUNK..((c + 1) * CHUNK).min(n_samples) {
                system.sample_initial(derive_seed(seed, &[j]), &mut x);
                for h in 0..=h_max {
                    if h > 0 {
                        system.step(&x, &mut next);
                        std::mem::swap(&mut x, &mut next);
                    }
                    if system.output(&x) == unsafe_label {
                        break;
                    }
                    survived[h] += 1;
                }
            }
            survived
        })
        .reduce(
            || vec![0u64; h_max + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(survived
        .into_iter()
        .map(|c| c as f64 / n_samples as f64)
        .collect())
}

/// Monte-Carlo estimate of the safe initial measure at horizon `horizon`.
pub fn ground_truth_ph(
    system: &dyn DynamicalSystem,
    unsafe_label: Label,
    horizon: usize,
    n_samples: u64,
    seed: u64,
) -> Result<f64> {
    Ok(ground_truth_ph_curve(system, unsafe_label, horizon, n_samples, seed)?[horizon])
}

/// A uniform grid over a box, cells numbered with the first coordinate most
/// significant.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub bounds: Vec<(f64, f64)>,
    pub parts: usize,
}

impl Grid {
    pub fn n_cells(&self) -> usize {
        self.parts.pow(self.bounds.len() as u32)
    }

    /// The cell containing `x`, or the nearest one when `x` is outside.
    pub fn cell(&self, x: &[f64]) -> usize {
        let p = self.parts;
        self.bounds.iter().zip(x).fold(0, |acc, (&(lo, hi), &xi)| {
            let t = ((xi - lo) / (hi - lo) * p as f64).floor();
            let i = if t.is_nan() {
                0
            } else {
                t.clamp(0.0, (p - 1) as f64) as usize
            };
            acc * p + i
        })
    }

    pub fn cell_box(&self, cell: usize) -> (Vec<f64>, Vec<f64>) {
        let p = self.parts;
        let d = self.bounds.len();
        let mut lo = vec![0.0; d];
        let mut hi = vec![0.0; d];
        let mut rest = cell;
        for k in (0..d).rev() {
            let i = rest % p;
            rest /= p;
            let (a, b) = self.bounds[k];
            let w = (b - a) / p as f64;
            lo[k] = a + w * i as f64;
            hi[k] = if i + 1 == p {
                b
            } else {
                a + w * (i + 1) as f64
            };
        }
        (lo, hi)
    }
}

/// A chain over the `p^d` cells of a uniform grid on the initial box, with
/// frequencies from `cfg.n_samples` one-step transitions.
///
/// A cell is labeled `unsafe_label` when it meets that label's region, as far
/// as the system can decide; otherwise it gets the most frequent label of its
/// samples (the label of its centre when it has none). Successor states
/// outside the box are assigned to the nearest cell. A cell without samples
/// gets a self-loop.
pub fn grid_abstraction(
    system: &dyn DynamicalSystem,
    parts: usize,
    unsafe_label: Label,
    cfg: &EstimationConfig,
) -> Result<LabeledMarkovChain> {
    cfg.validate()?;
    if parts == 0 {
        return Err(Error::InvalidConfig(
            "a grid needs at least one part per dimension".into(),
        ));
    }
    let bounds = system
        .init_box()
        .ok_or_else(|| {
            Error::InvalidSystem(format!("{} has no bounded initial box", system.name()))
        })?
        .to_vec();
    let grid = Grid { bounds, parts };
    let n = grid.n_cells();
    let a = system.alphabet_size();
    let dim = system.dimension();

    #[derive(Clone)]
    struct Tally {
        initial: Vec<u64>,
        transitions: Vec<u64>,
        labels: Vec<u64>,
    }
    let empty = || Tally {
        initial: vec![0; n],
        transitions: vec![0; n * n],
        labels: vec![0; n * a],
    };
    let chunks = cfg.n_samples.div_ceil(CHUNK);
    let tally = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut t = empty();
            let mut x = vec![0.0; dim];
            let mut next = vec![0.0; dim];
            for j in c * CHUNK..((c + 1) * CHUNK).min(cfg.n_samples) {
                system.sample_initial(derive_seed(cfg.master_seed, &[j]), &mut x);
                system.step(&x, &mut next);
                let (from, to) = (grid.cell(&x), grid.cell(&next));
                t.initial[from] += 1;
                t.transitions[from * n + to] += 1;
                t.labels[from * a + system.output(&x) as usize] += 1;
            }
            t
        })
        .reduce(empty, |mut l, r| {
            let add =
                |x: &mut Vec<u64>, y: Vec<u64>| x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
            add(&mut l.initial, r.initial);
            add(&mut l.transitions, r.transitions);
            add(&mut l.labels, r.labels);
            l
        });

    let total: u64 = tally.initial.iter().sum();
    let mu = tally
        .initial
        .iter()
        .map(|&c| c as f64 / total as f64)
        .collect();
    let mut tau = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let row = &tally.transitions[i * n..(i + 1) * n];
        let out: u64 = row.iter().sum();
        tau.push(if out == 0 {
            (0..n).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
        } else {
            row.iter().map(|&c| c as f64 / out as f64).collect()
        });

        let (lo, hi) = grid.cell_box(i);
        let counts = &tally.labels[i * a..(i + 1) * a];
        let dominant = || {
            if counts.iter().any(|&c| c > 0) {
                // most frequent, lowest label on ties
                let best = counts.iter().copied().max().unwrap_or(0);
                counts.iter().position(|&c| c == best).unwrap_or(0) as Label
            } else {
                let centre: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
                system.output(&centre)
            }
        };
        let label = match system.box_meets_label(&lo, &hi, unsafe_label) {
            Some(true) => unsafe_label,
            Some(false) => dominant(),
            None if counts[unsafe_label as usize] > 0 => unsafe_label,
            None => dominant(),
        };
        labels.push(label);
    }
    LabeledMarkovChain::validated(tau, mu, labels, a, None)
}
