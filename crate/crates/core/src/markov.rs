//! Labeled Markov chains and the word distributions they induce.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::symbolic::TimedWord;
use crate::{Error, Label, Result};

/// Tolerance on row and initial-measure sums.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// `(S, A, τ, μ, l)` with `S = {0, …, n-1}` and `A = {0, …, alphabet_size-1}`.
///
/// Serialized as `{alphabet_size, labels, mu, tau, states}` with `tau` as a list
/// of rows; loading validates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainFile", into = "ChainFile")]
pub struct LabeledMarkovChain {
    alphabet_size: usize,
    /// Row-major `n × n`.
    tau: Vec<f64>,
    mu: Vec<f64>,
    labels: Vec<Label>,
    state_names: Option<Vec<TimedWord>>,
    /// `successors[s * |A| + a]`: states `s'` with `l(s') = a` and `τ(s,s') > 0`.
    successors: Vec<Vec<(usize, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct ChainFile {
    alphabet_size: usize,
    labels: Vec<Label>,
    mu: Vec<f64>,
    tau: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    states: Option<Vec<TimedWord>>,
}

impl TryFrom<ChainFile> for LabeledMarkovChain {
    type Error = Error;

    fn try_from(f: ChainFile) -> Result<Self> {
        LabeledMarkovChain::validated(f.tau, f.mu, f.labels, f.alphabet_size, f.states)
    }
}

impl From<LabeledMarkovChain> for ChainFile {
    fn from(c: LabeledMarkovChain) -> Self {
        ChainFile {
            tau: c.tau_rows(),
            alphabet_size: c.alphabet_size,
            labels: c.labels,
            mu: c.mu,
            states: c.state_names,
        }
    }
}

/// One way in which a chain fails to be a labeled Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NegativeTransition { from: usize, to: usize, value: f64 },
    RowSum { state: usize, sum: f64 },
    NegativeInitial { state: usize, value: f64 },
    InitialSum(f64),
    NonFinite,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeTransition { from, to, value } => {
                write!(f, "tau[{from}][{to}] = {value} is negative")
            }
            Violation::RowSum { state, sum } => write!(f, "row {state} of tau sums to {sum}"),
            Violation::NegativeInitial { state, value } => {
                write!(f, "mu[{state}] = {value} is negative")
            }
            Violation::InitialSum(sum) => write!(f, "mu sums to {sum}"),
            Violation::NonFinite => write!(f, "chain contains non-finite entries"),
        }
    }
}

impl LabeledMarkovChain {
    /// Checks shapes only; stochasticity is reported by [`validate`].
    pub fn new(
        tau: Vec<Vec<f64>>,
        mu: Vec<f64>,
        labels: Vec<Label>,
        alphabet_size: usize,
        state_names: Option<Vec<TimedWord>>,
    ) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::InvalidChain("chain has no states".into()));
        }
        if tau.len() != n || tau.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidChain(format!("tau must be {n}x{n}")));
        }
        if labels.len() != n {
            return Err(Error::InvalidChain(format!(
                "{} labels for {n} states",
                labels.len()
            )));
        }
        if alphabet_size == 0 {
            return Err(Error::InvalidChain("empty alphabet".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= alphabet_size) {
            return Err(Error::LetterOutOfRange {
                letter: l,
                alphabet_size,
            });
        }
        if let Some(names) = &state_names {
            if names.len() != n {
                return Err(Error::InvalidChain(format!(
                    "{} state names for {n} states",
                    names.len()
                )));
            }
        }
        let tau: Vec<f64> = tau.into_iter().flatten().collect();
        let mut successors = vec![Vec::new(); n * alphabet_size];
        for s in 0..n {
            for t in 0..n {
                let p = tau[s * n + t];
                if p > 0.0 {
                    successors[s * alphabet_size + labels[t] as usize].push((t, p));
                }
            }
        }
        Ok(LabeledMarkovChain {
            alphabet_size,
            tau,
            mu,
            labels,
            state_names,
            successors,
        })
    }

    /// As [`LabeledMarkovChain::new`], failing on any [`Violation`].
    pub fn validated(
        tau: Vec<Vec<f64>>,
        mu: Vec<f64>,
        labels: Vec<Label>,
        alphabet_size: usize,
        state_names: Option<Vec<TimedWord>>,
    ) -> Result<Self> {
        let chain = Self::new(tau, mu, labels, alphabet_size, state_names)?;
        match validate(&chain).first() {
            Some(v) => Err(Error::InvalidChain(v.to_string())),
            None => Ok(chain),
        }
    }

    pub fn n_states(&self) -> usize {
        self.mu.len()
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn tau(&self, from: usize, to: usize) -> f64 {
        self.tau[from * self.n_states() + to]
    }

    pub fn tau_row(&self, from: usize) -> &[f64] {
        let n = self.n_states();
        &self.tau[from * n..(from + 1) * n]
    }

    pub fn tau_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_states())
            .map(|s| self.tau_row(s).to_vec())
            .collect()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn state_names(&self) -> Option<&[TimedWord]> {
        self.state_names.as_deref()
    }

    /// `alpha` for the one-letter word `a`.
    pub(crate) fn initial_into(&self, a: Label, alpha: &mut [f64]) {
        for ((out, &m), &l) in alpha.iter_mut().zip(&self.mu).zip(&self.labels) {
            *out = if l == a { m } else { 0.0 };
        }
    }

    /// `out[s'] = [l(s') = a] Σ_s alpha[s] τ(s, s')`, touching only nonzero
    /// entries. Returns the total mass of `out`.
    pub(crate) fn extend_into(&self, alpha: &[f64], a: Label, out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (s, &mass) in alpha.iter().enumerate() {
            if mass > 0.0 {
                for &(t, p) in &self.successors[s * self.alphabet_size + a as usize] {
                    out[t] += mass * p;
                }
            }
        }
        out.iter().sum()
    }
}

/// Unnormalized occupancy of each state after reading `word` along states
/// carrying its letters.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardMass {
    pub word: Vec<Label>,
    pub alpha: Vec<f64>,
}

impl ForwardMass {
    /// `p^k(word)`.
    pub fn total(&self) -> f64 {
        self.alpha.iter().sum()
    }
}

pub fn initial_mass(chain: &LabeledMarkovChain, a: Label) -> ForwardMass {
    let mut alpha = vec![0.0; chain.n_states()];
    chain.initial_into(a, &mut alpha);
    ForwardMass {
        word: vec![a],
        alpha,
    }
}

pub fn extend_mass(chain: &LabeledMarkovChain, m: &ForwardMass, a: Label) -> ForwardMass {
    let mut alpha = vec![0.0; chain.n_states()];
    chain.extend_into(&m.alpha, a, &mut alpha);
    let mut word = m.word.clone();
    word.push(a);
    ForwardMass { word, alpha }
}

/// `p^k(word)` for a word of length `k ≥ 1`; the empty word has probability 1.
pub fn word_probability(chain: &LabeledMarkovChain, word: &[Label]) -> f64 {
    let Some((&first, rest)) = word.split_first() else {
        return 1.0;
    };
    if word.iter().any(|&a| a as usize >= chain.alphabet_size()) {
        return 0.0;
    }
    let n = chain.n_states();
    let mut alpha = vec![0.0; n];
    let mut next = vec![0.0; n];
    chain.initial_into(first, &mut alpha);
    for &a in rest {
        chain.extend_into(&alpha, a, &mut next);
        std::mem::swap(&mut alpha, &mut next);
    }
    alpha.iter().sum()
}

/// Whether `word` has positive induced probability. Exact comparison: masses
/// are sums of products of nonnegative numbers.
pub fn in_behaviour(chain: &LabeledMarkovChain, word: &[Label]) -> bool {
    word_probability(chain, word) > 0.0
}

/// All ways in which `chain` fails to be row-stochastic with a probability
/// vector as initial measure.
pub fn validate(chain: &LabeledMarkovChain) -> Vec<Violation> {
    let mut out = Vec::new();
    if chain.tau.iter().chain(&chain.mu).any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite);
        return out;
    }
    let n = chain.n_states();
    for s in 0..n {
        let row = chain.tau_row(s);
        for (t, &v) in row.iter().enumerate() {
            if v < 0.0 {
                out.push(Violation::NegativeTransition {
                    from: s,
                    to: t,
                    value: v,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            out.push(Violation::RowSum { state: s, sum });
        }
    }
    for (s, &v) in chain.mu.iter().enumerate() {
        if v < 0.0 {
            out.push(Violation::NegativeInitial { state: s, value: v });
        }
    }
    let sum: f64 = chain.mu.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        out.push(Violation::InitialSum(sum));
    }
    out
}

/// A random chain for tests and benchmarks: uniform labels, and `τ`, `μ`
/// with each entry zero with probability `sparsity` (one entry per row is
/// always kept) and the rest uniform before normalization.
pub fn random_chain(
    n_states: usize,
    alphabet_size: usize,
    sparsity: f64,
    seed: u64,
) -> LabeledMarkovChain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vector = |rng: &mut ChaCha8Rng| {
        let keep = rng.random_range(0..n_states);
        let mut v: Vec<f64> = (0..n_states)
            .map(|j| {
                if j != keep && rng.random::<f64>() < sparsity {
                    0.0
                } else {
                    rng.random::<f64>() + 1e-3
                }
            })
            .collect();
        let total: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= total);
        v
    };
    let tau = (0..n_states).map(|_| vector(&mut rng)).collect();
    let mu = vector(&mut rng);
    let labels = (0..n_states)
        .map(|_| rng.random_range(0..alphabet_size) as Label)
        .collect();
    LabeledMarkovChain::validated(tau, mu, labels, alphabet_size, None)
        .expect("normalized by construction")
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Memory-1 abstraction of the quarter rotation: two labels, all
    /// transitions 1/2.
    pub(crate) fn rotation_memory1() -> LabeledMarkovChain {
        LabeledMarkovChain::validated(
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![0.5, 0.5],
            vec![0, 1],
            2,
            None,
        )
        .unwrap()
    }

    /// Memory-2 abstraction of the quarter rotation: states 00, 01, 10, 11
    /// cycling 00 → 01 → 11 → 10 → 00.
    pub(crate) fn rotation_memory2() -> LabeledMarkovChain {
        LabeledMarkovChain::validated(
            vec![
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
            ],
            vec![0.25; 4],
            vec![0, 0, 1, 1],
            2,
            None,
        )
        .unwrap()
    }

    /// Word probability by explicit enumeration of state paths.
    pub(crate) fn brute_force_probability(chain: &LabeledMarkovChain, word: &[Label]) -> f64 {
        fn go(chain: &LabeledMarkovChain, word: &[Label], s: usize, acc: f64) -> f64 {
            let Some((&a, rest)) = word.split_first() else {
                return acc;
            };
            (0..chain.n_states())
                .filter(|&t| chain.labels()[t] == a)
                .map(|t| go(chain, rest, t, acc * chain.tau(s, t)))
                .sum()
        }
        let (&a, rest) = word.split_first().unwrap();
        (0..chain.n_states())
            .filter(|&s| chain.labels()[s] == a)
            .map(|s| go(chain, rest, s, chain.mu()[s]))
            .sum()
    }

    pub(crate) fn arb_chain(
        max_states: usize,
        alphabet: usize,
    ) -> impl Strategy<Value = LabeledMarkovChain> {
        (1..=max_states).prop_flat_map(move |n| {
            (
                prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), n),
                prop::collection::vec(0.01f64..1.0, n),
                prop::collection::vec(0..alphabet as Label, n),
            )
                .prop_map(move |(tau, mu, labels)| {
                    let tau = tau
                        .into_iter()
                        .map(|row| {
                            let s: f64 = row.iter().sum::<f64>() + 1e-3;
                            let mut row: Vec<f64> = row.iter().map(|v| v / s).collect();
                            let rest = 1.0 - row.iter().sum::<f64>();
                            row[0] += rest;
                            row
                        })
                        .collect();
                    let s: f64 = mu.iter().sum();
                    let mu = mu.iter().map(|v| v / s).collect();
                    LabeledMarkovChain::new(tau, mu, labels, alphabet, None).unwrap()
                })
        })
    }

    #[test]
    fn initial_mass_examples() {
        let c = rotation_memory1();
        assert_eq!(initial_mass(&c, 0).alpha, vec![0.5, 0.0]);
        let total: f64 = (0..2).map(|a| initial_mass(&c, a).total()).sum();
        assert_eq!(total, 1.0);
        let single =
            LabeledMarkovChain::validated(vec![vec![1.0]], vec![1.0], vec![0], 2, None).unwrap();
        assert_eq!(initial_mass(&single, 1).alpha, vec![0.0]);
    }

    #[test]
    fn extend_examples() {
        let c1 = rotation_memory1();
        let m = extend_mass(&c1, &initial_mass(&c1, 0), 0);
        assert_eq!(m.word, vec![0, 0]);
        assert_eq!(m.total(), 0.25);
        assert_eq!(word_probability(&c1, &[0, 0]), 0.25);
        assert_eq!(word_probability(&c1, &[0, 0, 0]), 0.125);

        let c2 = rotation_memory2();
        assert_eq!(word_probability(&c2, &[0, 0, 0]), 0.0);
        assert_eq!(word_probability(&c2, &[0, 0, 1]), 0.25);
        assert!(!in_behaviour(&c2, &[0, 0, 0]));
        assert!(in_behaviour(&c1, &[0, 0, 0]));
    }

    #[test]
    fn empty_class_word_not_in_behaviour() {
        let single =
            LabeledMarkovChain::validated(vec![vec![1.0]], vec![1.0], vec![0], 2, None).unwrap();
        assert!(!in_behaviour(&single, &[1]));
        assert!(!in_behaviour(&single, &[0, 1]));
    }

    #[test]
    fn validate_examples() {
        let ok = LabeledMarkovChain::new(
            vec![vec![0.999_999_999, 0.0], vec![0.0, 1.0]],
            vec![0.5, 0.5],
            vec![0, 1],
            2,
            None,
        )
        .unwrap();
        assert!(validate(&ok).is_empty());

        let neg = LabeledMarkovChain::new(
            vec![vec![1.001, -1e-3], vec![0.0, 1.0]],
            vec![0.5, 0.5],
            vec![0, 1],
            2,
            None,
        )
        .unwrap();
        let v = validate(&neg);
        assert!(v
            .iter()
            .any(|v| matches!(v, Violation::NegativeTransition { from: 0, to: 1, .. })));

        let short_mu = LabeledMarkovChain::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.5, 0.4],
            vec![0, 1],
            2,
            None,
        )
        .unwrap();
        assert!(matches!(
            validate(&short_mu)[..],
            [Violation::InitialSum(_)]
        ));
    }

    #[test]
    fn shape_errors() {
        assert!(LabeledMarkovChain::new(vec![vec![1.0]], vec![1.0], vec![2], 2, None).is_err());
        assert!(
            LabeledMarkovChain::new(vec![vec![1.0, 0.0]], vec![1.0], vec![0], 2, None).is_err()
        );
        assert!(LabeledMarkovChain::new(vec![], vec![], vec![], 2, None).is_err());
    }

    proptest! {
        #[test]
        fn forward_matches_path_enumeration(
            chain in arb_chain(4, 3),
            word in prop::collection::vec(0u8..3, 1..5),
        ) {
            let fast = word_probability(&chain, &word);
            let slow = brute_force_probability(&chain, &word);
            prop_assert!((fast - slow).abs() <= 1e-12);
        }

        #[test]
        fn mass_is_conserved_and_monotone(
            chain in arb_chain(4, 3),
            word in prop::collection::vec(0u8..3, 1..6),
        ) {
            let p = word_probability(&chain, &word);
            let mut total = 0.0;
            for a in 0..3 {
                let mut w = word.clone();
                w.push(a);
                let q = word_probability(&chain, &w);
                prop_assert!(q <= p + 1e-15);
                total += q;
            }
            prop_assert!((total - p).abs() <= 1e-12);
        }
    }
}
