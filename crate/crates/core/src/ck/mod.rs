//! The Cantor-Kantorovich metric between labeled Markov chains.
//!
//! For words of length `k`, `K^k` is the optimal transport cost between the
//! two induced distributions `p₁^k`, `p₂^k` under the Cantor distance. With
//! `r^l(w) = min(p₁^l(w), p₂^l(w))` and level overlaps `S_l = Σ_w r^l(w)`,
//!
//! ```text
//! K^k = 1 − Σ_{l<k} 2^{-l} S_l − 2^{1-k} S_k
//!     = Σ_{l<k} 2^{-l} (1 − S_l) + 2^{1-k} (1 − S_k)
//! ```
//!
//! and `0 ≤ CK − K^k ≤ 2^{1-k} S_k`. The overlaps come from one depth-first
//! walk of the word tree carrying the forward masses of both chains; a node
//! with `r = 0` is not expanded, since all of its descendants have `r = 0` too.
//!
//! [`oracle`] solves the same transport problem directly, for cross-checks.

pub mod oracle;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::markov::LabeledMarkovChain;
use crate::{Error, Label, Result};

/// Word length needed for accuracy `epsilon`: `⌈log₂(1/ε)⌉ + 1`.
pub fn depth_for_epsilon(epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    Ok((1.0 / epsilon).log2().ceil() as usize + 1)
}

/// Per-level statistics of the pruned word-tree walk, index `l-1` for
/// level `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelOverlap {
    /// `S_l`.
    pub overlap: Vec<f64>,
    /// `1 − S_l`, accumulated as half the L1 distance between `p₁^l` and
    /// `p₂^l` so that identical chains give exactly zero.
    pub deficit: Vec<f64>,
    /// Number of words with `r^l(w) > 0`.
    pub nodes_per_level: Vec<u64>,
    pub nodes_visited: u64,
}

impl LevelOverlap {
    pub fn depth(&self) -> usize {
        self.overlap.len()
    }

    /// `K^k` for any `k` up to the walked depth.
    pub fn kantorovich(&self, k: usize) -> f64 {
        assert!(
            k >= 1 && k <= self.depth(),
            "depth {k} outside 1..={}",
            self.depth()
        );
        let mut acc = 0.0;
        for l in 1..k {
            acc += dyadic(l as i32) * self.deficit[l - 1];
        }
        acc + dyadic(k as i32 - 1) * self.deficit[k - 1]
    }

    /// `K^k` written directly in terms of the overlaps.
    pub fn kantorovich_from_overlap(&self, k: usize) -> f64 {
        assert!(
            k >= 1 && k <= self.depth(),
            "depth {k} outside 1..={}",
            self.depth()
        );
        let mut acc = 0.0;
        for l in 1..k {
            acc += dyadic(l as i32) * self.overlap[l - 1];
        }
        1.0 - acc - dyadic(k as i32 - 1) * self.overlap[k - 1]
    }
}

/// `2^-e`, exact.
fn dyadic(e: i32) -> f64 {
    2f64.powi(-e)
}

#[derive(Debug, Clone, Default)]
struct LevelSums {
    overlap: Vec<f64>,
    visited_gap: Vec<f64>,
    pruned_gap: Vec<f64>,
    nodes: Vec<u64>,
}

impl LevelSums {
    fn new(k: usize) -> Self {
        LevelSums {
            overlap: vec![0.0; k],
            visited_gap: vec![0.0; k],
            pruned_gap: vec![0.0; k],
            nodes: vec![0; k],
        }
    }

    fn add(&mut self, other: &LevelSums) {
        for l in 0..self.overlap.len() {
            self.overlap[l] += other.overlap[l];
            self.visited_gap[l] += other.visited_gap[l];
            self.pruned_gap[l] += other.pruned_gap[l];
            self.nodes[l] += other.nodes[l];
        }
    }

    /// Returns whether the node survives (`r > 0`).
    fn record(&mut self, level: usize, p1: f64, p2: f64) -> bool {
        let r = p1.min(p2);
        let i = level - 1;
        if r > 0.0 {
            self.overlap[i] += r;
            self.visited_gap[i] += (p1 - p2).abs();
            self.nodes[i] += 1;
            true
        } else {
            // the surviving side's mass stays unmatched at every deeper level
            self.pruned_gap[i] += p1.max(p2);
            false
        }
    }
}

struct Walker<'a> {
    chains: [&'a LabeledMarkovChain; 2],
    depth: usize,
    /// Forward masses per tree level, one buffer per chain.
    alpha: [Vec<Vec<f64>>; 2],
    sums: LevelSums,
}

impl<'a> Walker<'a> {
    fn new(c1: &'a LabeledMarkovChain, c2: &'a LabeledMarkovChain, depth: usize) -> Self {
        Walker {
            chains: [c1, c2],
            depth,
            alpha: [
                vec![vec![0.0; c1.n_states()]; depth + 1],
                vec![vec![0.0; c2.n_states()]; depth + 1],
            ],
            sums: LevelSums::new(depth),
        }
    }

    fn walk_from(mut self, first: Label) -> LevelSums {
        let mut mass = [0.0; 2];
        for (side, chain) in self.chains.iter().enumerate() {
            chain.initial_into(first, &mut self.alpha[side][1]);
            mass[side] = self.alpha[side][1].iter().sum();
        }
        if self.sums.record(1, mass[0], mass[1]) {
            self.visit(1);
        }
        self.sums
    }

    fn visit(&mut self, level: usize) {
        if level == self.depth {
            return;
        }
        let letters = self.chains[0].alphabet_size() as Label;
        for a in 0..letters {
            let mut mass = [0.0; 2];
            for side in 0..2 {
                let (parent, child) = self.alpha[side].split_at_mut(level + 1);
                mass[side] = self.chains[side].extend_into(&parent[level], a, &mut child[0]);
            }
            if self.sums.record(level + 1, mass[0], mass[1]) {
                self.visit(level + 1);
            }
        }
    }
}

/// Level overlaps `S_1 … S_{k_max}` by a pruned walk of the word tree.
///
/// Letters are visited in ascending order. The subtrees below the first
/// letter are walked in parallel and combined in letter order, so the result
/// does not depend on the thread count.
pub fn level_overlap(
    c1: &LabeledMarkovChain,
    c2: &LabeledMarkovChain,
    k_max: usize,
) -> Result<LevelOverlap> {
    if c1.alphabet_size() != c2.alphabet_size() {
        return Err(Error::AlphabetMismatch(
            c1.alphabet_size(),
            c2.alphabet_size(),
        ));
    }
    if k_max == 0 {
        return Err(Error::InvalidConfig(
            "word length must be at least 1".into(),
        ));
    }
    let letters = c1.alphabet_size() as Label;
    let parts: Vec<LevelSums> = (0..letters)
        .into_par_iter()
        .map(|a| Walker::new(c1, c2, k_max).walk_from(a))
        .collect();
    let mut total = LevelSums::new(k_max);
    for p in &parts {
        total.add(p);
    }

    let mut deficit = Vec::with_capacity(k_max);
    let mut pruned = 0.0;
    for l in 0..k_max {
        pruned += total.pruned_gap[l];
        deficit.push(0.5 * (total.visited_gap[l] + pruned));
    }
    Ok(LevelOverlap {
        nodes_visited: total.nodes.iter().sum(),
        overlap: total.overlap,
        deficit,
        nodes_per_level: total.nodes,
    })
}

/// `K^k` with its distance to the limit bounded by `[value, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CkResult {
    pub value: f64,
    pub k_used: usize,
    pub lower: f64,
    /// `value + 2^{1-k} S_k`.
    pub upper: f64,
    pub nodes_visited: u64,
}

/// `K^k` at a fixed word length `k`.
pub fn ck_at_depth(c1: &LabeledMarkovChain, c2: &LabeledMarkovChain, k: usize) -> Result<CkResult> {
    let levels = level_overlap(c1, c2, k)?;
    let value = levels.kantorovich(k);
    Ok(CkResult {
        value,
        k_used: k,
        lower: value,
        upper: value + dyadic(k as i32 - 1) * levels.overlap[k - 1],
        nodes_visited: levels.nodes_visited,
    })
}

/// The metric to accuracy `epsilon`: the true value lies in
/// `[lower, upper]` and `upper − lower ≤ 2^{1-k} ≤ epsilon`.
pub fn ck_approx(
    c1: &LabeledMarkovChain,
    c2: &LabeledMarkovChain,
    epsilon: f64,
) -> Result<CkResult> {
    ck_at_depth(c1, c2, depth_for_epsilon(epsilon)?)
}
