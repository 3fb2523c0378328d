//! Exact Kantorovich distance between length-`k` word distributions, solved as
//! a transportation problem over the full word set.
//!
//! The solver is successive shortest paths with node potentials on the
//! bipartite supply/demand graph. Every augmentation exhausts a supply, a
//! demand, or a previously routed flow, and the final flow is an optimal
//! coupling.

use std::collections::BTreeMap;

use crate::markov::LabeledMarkovChain;
use crate::symbolic::cantor_distance;
use crate::{Error, Label, Result};

/// Largest word set the oracle accepts.
pub const ORACLE_WORD_LIMIT: usize = 4096;

/// Masses below this are treated as exhausted.
const MASS_EPS: f64 = 1e-15;

/// Letters of word number `index` among the `alphabet^k` words, most
/// significant first.
pub fn word_letters(index: usize, alphabet_size: usize, k: usize) -> Vec<Label> {
    let mut letters = vec![0; k];
    let mut rest = index;
    for slot in letters.iter_mut().rev() {
        *slot = (rest % alphabet_size) as Label;
        rest /= alphabet_size;
    }
    letters
}

fn word_count(alphabet_size: usize, k: usize) -> Result<usize> {
    let words = (alphabet_size as u128)
        .checked_pow(k as u32)
        .unwrap_or(u128::MAX);
    if words > ORACLE_WORD_LIMIT as u128 {
        return Err(Error::TooLarge {
            words,
            limit: ORACLE_WORD_LIMIT,
        });
    }
    Ok(words as usize)
}

/// `p^k(w)` for every word, indexed as in [`word_letters`].
pub fn word_distribution(chain: &LabeledMarkovChain, k: usize) -> Result<Vec<f64>> {
    let a = chain.alphabet_size();
    let count = word_count(a, k)?;
    if k == 0 {
        return Ok(vec![1.0]);
    }
    let n = chain.n_states();
    let mut out = vec![0.0; count];
    // forward masses for every prefix, level by level
    let mut level: Vec<Vec<f64>> = (0..a)
        .map(|l| {
            let mut alpha = vec![0.0; n];
            chain.initial_into(l as Label, &mut alpha);
            alpha
        })
        .collect();
    for _ in 1..k {
        let mut next = Vec::with_capacity(level.len() * a);
        for alpha in &level {
            for l in 0..a {
                let mut child = vec![0.0; n];
                chain.extend_into(alpha, l as Label, &mut child);
                next.push(child);
            }
        }
        level = next;
    }
    for (slot, alpha) in out.iter_mut().zip(&level) {
        *slot = alpha.iter().sum();
    }
    Ok(out)
}

/// A joint distribution on pairs of length-`k` words.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    pub k: usize,
    pub alphabet_size: usize,
    /// Nonzero entries keyed by `(word index under p₁, word index under p₂)`.
    pub entries: BTreeMap<(usize, usize), f64>,
}

impl CouplingMatrix {
    pub fn get(&self, w1: usize, w2: usize) -> f64 {
        self.entries.get(&(w1, w2)).copied().unwrap_or(0.0)
    }

    pub fn n_words(&self) -> usize {
        self.alphabet_size.pow(self.k as u32)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_words()];
        for (&(i, _), &v) in &self.entries {
            out[i] += v;
        }
        out
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_words()];
        for (&(_, j), &v) in &self.entries {
            out[j] += v;
        }
        out
    }

    /// Nonnegative with marginals `p1`, `p2` within `tol`.
    pub fn is_coupling_of(&self, p1: &[f64], p2: &[f64], tol: f64) -> bool {
        self.entries.values().all(|&v| v >= 0.0)
            && close(&self.row_sums(), p1, tol)
            && close(&self.col_sums(), p2, tol)
    }

    /// Expected Cantor distance under this coupling.
    pub fn cost(&self) -> f64 {
        let cost = cantor_costs(self.alphabet_size, self.k);
        self.entries
            .iter()
            .map(|(&(i, j), &v)| v * cost(i, j))
            .sum()
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Cantor distance between word indices.
fn cantor_costs(alphabet_size: usize, k: usize) -> impl Fn(usize, usize) -> f64 {
    move |i, j| {
        let wi = word_letters(i, alphabet_size, k);
        let wj = word_letters(j, alphabet_size, k);
        cantor_distance(&wi, &wj).expect("equal lengths").value()
    }
}

/// Optimal flows `(i, j, amount)` and cost for moving `supply` onto `demand`.
///
/// Supplies and demands should have (nearly) equal totals; the solver stops
/// when either side is exhausted.
pub fn solve_transport(
    supply: &[f64],
    demand: &[f64],
    cost: impl Fn(usize, usize) -> f64,
) -> (f64, Vec<(usize, usize, f64)>) {
    let src: Vec<usize> = (0..supply.len())
        .filter(|&i| supply[i] > MASS_EPS)
        .collect();
    let dst: Vec<usize> = (0..demand.len())
        .filter(|&j| demand[j] > MASS_EPS)
        .collect();
    let (m, n) = (src.len(), dst.len());
    if m == 0 || n == 0 {
        return (0.0, Vec::new());
    }
    let c: Vec<f64> = src
        .iter()
        .flat_map(|&i| dst.iter().map(move |&j| (i, j)))
        .map(|(i, j)| cost(i, j))
        .collect();
    let mut rem_s: Vec<f64> = src.iter().map(|&i| supply[i]).collect();
    let mut rem_d: Vec<f64> = dst.iter().map(|&j| demand[j]).collect();
    let mut flow = vec![0.0; m * n];

    // nodes: 0 = source hub, 1..=m supplies, m+1..=m+n demands, m+n+1 = sink hub
    let nodes = m + n + 2;
    let sink = nodes - 1;
    let mut pot = vec![0.0f64; nodes];
    let mut dist = vec![f64::INFINITY; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];

    loop {
        if rem_s.iter().all(|&v| v <= MASS_EPS) || rem_d.iter().all(|&v| v <= MASS_EPS) {
            break;
        }
        dist.fill(f64::INFINITY);
        parent.fill(usize::MAX);
        done.fill(false);
        dist[0] = 0.0;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX || u == sink {
                break;
            }
            done[u] = true;
            let mut relax = |v: usize, arc_cost: f64| {
                let reduced = (arc_cost + pot[u] - pot[v]).max(0.0);
                if dist[u] + reduced < dist[v] {
                    dist[v] = dist[u] + reduced;
                    parent[v] = u;
                }
            };
            if u == 0 {
                for i in 0..m {
                    if rem_s[i] > MASS_EPS {
                        relax(1 + i, 0.0);
                    }
                }
            } else if u <= m {
                let i = u - 1;
                for j in 0..n {
                    relax(1 + m + j, c[i * n + j]);
                }
            } else {
                let j = u - 1 - m;
                for i in 0..m {
                    if flow[i * n + j] > MASS_EPS {
                        relax(1 + i, -c[i * n + j]);
                    }
                }
                if rem_d[j] > MASS_EPS {
                    relax(sink, 0.0);
                }
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let reach = dist[sink];
        for v in 0..nodes {
            pot[v] += dist[v].min(reach);
        }

        // bottleneck along the path sink ← … ← hub
        let mut path = vec![sink];
        while *path.last().unwrap() != 0 {
            path.push(parent[*path.last().unwrap()]);
        }
        path.reverse();
        let first_supply = path[1] - 1;
        let last_demand = path[path.len() - 2] - 1 - m;
        let mut delta = rem_s[first_supply].min(rem_d[last_demand]);
        for win in path[1..path.len() - 1].windows(2) {
            let (u, v) = (win[0], win[1]);
            if u > m {
                // backward arc demand → supply cancels routed flow
                delta = delta.min(flow[(v - 1) * n + (u - 1 - m)]);
            }
        }
        for win in path[1..path.len() - 1].windows(2) {
            let (u, v) = (win[0], win[1]);
            if u <= m {
                flow[(u - 1) * n + (v - 1 - m)] += delta;
            } else {
                let f = &mut flow[(v - 1) * n + (u - 1 - m)];
                *f -= delta;
                if *f < MASS_EPS {
                    *f = 0.0;
                }
            }
        }
        rem_s[first_supply] -= delta;
        rem_d[last_demand] -= delta;
    }

    let mut value = 0.0;
    let mut flows = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let f = flow[i * n + j];
            if f > 0.0 {
                value += f * c[i * n + j];
                flows.push((src[i], dst[j], f));
            }
        }
    }
    (value, flows)
}

/// Exact `K^k` between the chains and an optimal coupling.
///
/// Refuses word sets larger than [`ORACLE_WORD_LIMIT`].
pub fn kantorovich_lp_oracle(
    c1: &LabeledMarkovChain,
    c2: &LabeledMarkovChain,
    k: usize,
) -> Result<(f64, CouplingMatrix)> {
    if c1.alphabet_size() != c2.alphabet_size() {
        return Err(Error::AlphabetMismatch(
            c1.alphabet_size(),
            c2.alphabet_size(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidConfig(
            "word length must be at least 1".into(),
        ));
    }
    let a = c1.alphabet_size();
    word_count(a, k)?;
    let p1 = word_distribution(c1, k)?;
    let p2 = word_distribution(c2, k)?;
    Ok(transport_words(&p1, &p2, a, k))
}

/// Optimal transport between two explicit distributions on `A^k`.
pub fn transport_words(
    p1: &[f64],
    p2: &[f64],
    alphabet_size: usize,
    k: usize,
) -> (f64, CouplingMatrix) {
    let (value, flows) = solve_transport(p1, p2, cantor_costs(alphabet_size, k));
    let entries = flows.into_iter().map(|(i, j, f)| ((i, j), f)).collect();
    (
        value,
        CouplingMatrix {
            k,
            alphabet_size,
            entries,
        },
    )
}

const CHECK_TOL: f64 = 1e-9;

/// Every diagonal entry equals `min(p₁(w), p₂(w))`.
pub fn coupling_diagonal_check(coupling: &CouplingMatrix, p1: &[f64], p2: &[f64]) -> bool {
    (0..coupling.n_words()).all(|w| (coupling.get(w, w) - p1[w].min(p2[w])).abs() <= CHECK_TOL)
}

/// For every length-`(k-1)` prefix `w`, the mass leaving the block of words
/// starting with `w` is `max(p₁(w) − p₂(w), 0)` and the mass entering it is
/// `max(p₂(w) − p₁(w), 0)`.
pub fn coupling_block_marginal_check(
    coupling: &CouplingMatrix,
    p1_prefixes: &[f64],
    p2_prefixes: &[f64],
) -> bool {
    if coupling.k < 2 {
        return true;
    }
    let a = coupling.alphabet_size;
    let prefixes = coupling.n_words() / a;
    let mut outflow = vec![0.0; prefixes];
    let mut inflow = vec![0.0; prefixes];
    for (&(i, j), &v) in &coupling.entries {
        let (pi, pj) = (i / a, j / a);
        if pi != pj {
            outflow[pi] += v;
            inflow[pj] += v;
        }
    }
    (0..prefixes).all(|w| {
        let surplus = p1_prefixes[w] - p2_prefixes[w];
        (outflow[w] - surplus.max(0.0)).abs() <= CHECK_TOL
            && (inflow[w] - (-surplus).max(0.0)).abs() <= CHECK_TOL
    })
}
