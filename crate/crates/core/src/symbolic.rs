//! Timed words, the Cantor distance, and partitions of the state space given as
//! sets of timed words.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dynamics::Trace;
use crate::{Error, Label, Result};

const DIGITS: &[u8; 36] = b"0123456789abcdefghijklmnopqrstuvwxyz";

/// Largest alphabet the text syntax can spell.
pub const MAX_ALPHABET: usize = DIGITS.len();

/// A label string anchored in time: `letters[past]` is the label at time 0 and
/// the word covers times `-past ..= future`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimedWord {
    letters: Vec<Label>,
    past: usize,
}

impl TimedWord {
    pub fn new(letters: Vec<Label>, past: usize, future: usize) -> Result<Self> {
        let expected = past + future + 1;
        if letters.len() != expected {
            return Err(Error::MalformedWord {
                letters: letters.len(),
                past,
                future,
                expected,
            });
        }
        Ok(TimedWord { letters, past })
    }

    /// Word on `[0, len-1]`.
    pub fn future_only(letters: Vec<Label>) -> Self {
        assert!(!letters.is_empty(), "a timed word has at least one letter");
        TimedWord { letters, past: 0 }
    }

    pub fn letters(&self) -> &[Label] {
        &self.letters
    }

    pub fn past(&self) -> usize {
        self.past
    }

    pub fn future(&self) -> usize {
        self.letters.len() - self.past - 1
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    /// The label at time 0.
    pub fn anchor(&self) -> Label {
        self.letters[self.past]
    }

    pub fn is_future_only(&self) -> bool {
        self.past == 0
    }

    /// Whether the trace, shifted so that time `shift` plays the role of time
    /// 0, spells this word on its interval.
    pub fn matches_trace(&self, trace: &Trace, shift: i64) -> Result<bool> {
        let first = shift - self.past as i64;
        let last = shift + self.future() as i64;
        if first < trace.first_time() || last > trace.last_time() {
            return Err(Error::TraceTooShort(first, last));
        }
        let start = (first - trace.first_time()) as usize;
        Ok(trace.labels[start..start + self.letters.len()] == self.letters[..])
    }

    /// `self` followed by one more future letter.
    pub fn extended(&self, letter: Label) -> Self {
        let mut letters = self.letters.clone();
        letters.push(letter);
        TimedWord {
            letters,
            past: self.past,
        }
    }

    fn check_alphabet(&self, alphabet_size: usize) -> Result<()> {
        match self.letters.iter().find(|&&l| l as usize >= alphabet_size) {
            Some(&letter) => Err(Error::LetterOutOfRange {
                letter,
                alphabet_size,
            }),
            None => Ok(()),
        }
    }
}

impl fmt::Display for TimedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &l in &self.letters {
            write!(f, "{}", DIGITS[l as usize] as char)?;
        }
        write!(f, "@[{},{}]", -(self.past as i64), self.future())
    }
}

impl FromStr for TimedWord {
    type Err = Error;

    /// Parses `"01@[0,1]"` or `"11@[-1,0]"`. A bare `"01"` means `"01@[0,1]"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why| Error::WordSyntax(s.to_string(), why);
        let (body, interval) = match s.split_once('@') {
            Some((b, i)) => (b, Some(i)),
            None => (s, None),
        };
        if body.is_empty() {
            return Err(bad("empty word"));
        }
        let letters = body
            .bytes()
            .map(|c| {
                DIGITS
                    .iter()
                    .position(|&d| d == c.to_ascii_lowercase())
                    .map(|p| p as Label)
                    .ok_or_else(|| bad("letters must be base-36 digits"))
            })
            .collect::<Result<Vec<_>>>()?;
        let Some(interval) = interval else {
            return Ok(TimedWord::future_only(letters));
        };
        let inner = interval
            .trim()
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| bad("interval must look like [-s,t]"))?;
        let (lo, hi) = inner
            .split_once(',')
            .ok_or_else(|| bad("interval needs two ends"))?;
        let lo: i64 = lo.trim().parse().map_err(|_| bad("bad interval start"))?;
        let hi: i64 = hi.trim().parse().map_err(|_| bad("bad interval end"))?;
        if lo > 0 || hi < 0 {
            return Err(bad("interval must contain 0"));
        }
        TimedWord::new(letters, (-lo) as usize, hi as usize)
    }
}

impl Serialize for TimedWord {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimedWord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Cantor distance between equal-length words: 0 for equal words, otherwise
/// `2^-L` with `L` the length of the longest common prefix.
///
/// Kept as an exponent so that comparisons and sums of distances stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CantorDistance {
    Zero,
    /// `2^-exponent`.
    Dyadic(u32),
}

impl CantorDistance {
    pub fn value(self) -> f64 {
        match self {
            CantorDistance::Zero => 0.0,
            CantorDistance::Dyadic(e) => (-(e as f64)).exp2(),
        }
    }
}

impl PartialOrd for CantorDistance {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CantorDistance {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use CantorDistance::*;
        match (self, other) {
            (Zero, Zero) => std::cmp::Ordering::Equal,
            (Zero, Dyadic(_)) => std::cmp::Ordering::Less,
            (Dyadic(_), Zero) => std::cmp::Ordering::Greater,
            (Dyadic(a), Dyadic(b)) => b.cmp(a),
        }
    }
}

pub fn cantor_distance(w1: &[Label], w2: &[Label]) -> Result<CantorDistance> {
    if w1.len() != w2.len() {
        return Err(Error::LengthMismatch(w1.len(), w2.len()));
    }
    match w1.iter().zip(w2).position(|(a, b)| a != b) {
        None => Ok(CantorDistance::Zero),
        Some(l) => Ok(CantorDistance::Dyadic(l as u32)),
    }
}

/// A finite set of timed words whose blocks are meant to partition the state
/// space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PartitionFile", into = "PartitionFile")]
pub struct Partition {
    words: Vec<TimedWord>,
    alphabet_size: usize,
}

/// On-disk form of a [`Partition`], checked on load.
#[derive(Serialize, Deserialize)]
struct PartitionFile {
    alphabet_size: usize,
    words: Vec<TimedWord>,
}

impl TryFrom<PartitionFile> for Partition {
    type Error = Error;

    fn try_from(f: PartitionFile) -> Result<Self> {
        Partition::new(f.words, f.alphabet_size)
    }
}

impl From<Partition> for PartitionFile {
    fn from(p: Partition) -> Self {
        PartitionFile {
            alphabet_size: p.alphabet_size,
            words: p.words,
        }
    }
}

impl Partition {
    pub fn new(words: Vec<TimedWord>, alphabet_size: usize) -> Result<Self> {
        if alphabet_size == 0 || alphabet_size > MAX_ALPHABET {
            return Err(Error::InvalidConfig(format!(
                "alphabet size must lie in 1..={MAX_ALPHABET}, got {alphabet_size}"
            )));
        }
        let mut seen = HashSet::new();
        for w in &words {
            w.check_alphabet(alphabet_size)?;
            if !seen.insert(w) {
                return Err(Error::DuplicateWord(w.to_string()));
            }
        }
        Ok(Partition {
            words,
            alphabet_size,
        })
    }

    /// `{a@[0,0] : a ∈ A}`.
    pub fn coarse(alphabet_size: usize) -> Result<Self> {
        let words = (0..alphabet_size)
            .map(|a| TimedWord::future_only(vec![a as Label]))
            .collect();
        Partition::new(words, alphabet_size)
    }

    pub fn words(&self) -> &[TimedWord] {
        &self.words
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Largest past and future memory over all words.
    pub fn span(&self) -> (usize, usize) {
        self.words
            .iter()
            .fold((0, 0), |(p, f), w| (p.max(w.past()), f.max(w.future())))
    }

    pub fn is_future_only(&self) -> bool {
        self.words.iter().all(TimedWord::is_future_only)
    }

    /// Removes the given words, keeping the order of the rest.
    pub fn without(&self, drop: &[TimedWord]) -> Partition {
        Partition {
            words: self
                .words
                .iter()
                .filter(|w| !drop.contains(w))
                .cloned()
                .collect(),
            alphabet_size: self.alphabet_size,
        }
    }

    /// Index of the unique block containing the trajectory behind `trace`.
    pub fn match_block(&self, trace: &Trace) -> Result<usize> {
        self.match_block_shifted(trace, 0)
    }

    /// As [`Partition::match_block`] for the state at time `shift`.
    pub fn match_block_shifted(&self, trace: &Trace, shift: i64) -> Result<usize> {
        let mut found = None;
        for (i, w) in self.words.iter().enumerate() {
            if w.matches_trace(trace, shift)? {
                if let Some(j) = found {
                    return Err(Error::MultiMatch(j, i));
                }
                found = Some(i);
            }
        }
        found.ok_or(Error::NoMatch)
    }
}

/// Whether the future-only words of `partition`, together with the words
/// dropped as empty, are exactly the leaves of a complete `|A|`-ary prefix
/// tree: every infinite label sequence has exactly one of them as a prefix.
///
/// Sets containing past memory are not certified and yield `false`.
pub fn is_partition_consistent(partition: &Partition, dropped: &[TimedWord]) -> bool {
    let all: Vec<&TimedWord> = partition.words.iter().chain(dropped).collect();
    if all.is_empty() || !all.iter().all(|w| w.is_future_only()) {
        return false;
    }
    let leaves: HashSet<&[Label]> = all.iter().map(|w| w.letters()).collect();
    if leaves.len() != all.len() {
        return false;
    }
    let mut inner: HashSet<&[Label]> = HashSet::new();
    for w in &all {
        for l in 1..w.len() {
            inner.insert(&w.letters()[..l]);
        }
    }
    // prefix-free
    if leaves.iter().any(|l| inner.contains(l)) {
        return false;
    }
    // every child of an inner node (and of the root) is a leaf or inner node
    let a = partition.alphabet_size;
    let mut child = Vec::new();
    let roots = std::iter::once(&[][..]).chain(inner.iter().copied());
    for prefix in roots {
        child.clear();
        child.extend_from_slice(prefix);
        child.push(0);
        for letter in 0..a {
            *child.last_mut().unwrap() = letter as Label;
            if !leaves.contains(&child[..]) && !inner.contains(&child[..]) {
                return false;
            }
        }
    }
    true
}

/// Prefix-tree lookup for future-only, prefix-free word sets.
#[derive(Debug, Clone)]
pub(crate) struct BlockMatcher {
    kind: MatcherKind,
}

#[derive(Debug, Clone)]
enum MatcherKind {
    /// `nodes[n][a]`: `>= 0` child node, `-(i+1)` leaf word `i`, `i32::MIN` absent.
    Trie {
        nodes: Vec<Vec<i32>>,
    },
    Scan,
}

const ABSENT: i32 = i32::MIN;

/// `None` unless the words are future-only and prefix-free.
fn build_trie(partition: &Partition) -> Option<Vec<Vec<i32>>> {
    if !partition.is_future_only() {
        return None;
    }
    let a = partition.alphabet_size;
    let mut nodes: Vec<Vec<i32>> = vec![vec![ABSENT; a]];
    for (i, w) in partition.words.iter().enumerate() {
        let mut n = 0usize;
        let (&last, init) = w.letters().split_last()?;
        for &l in init {
            match nodes[n][l as usize] {
                ABSENT => {
                    nodes.push(vec![ABSENT; a]);
                    let id = nodes.len() - 1;
                    nodes[n][l as usize] = id as i32;
                    n = id;
                }
                leaf if leaf < 0 => return None,
                child => n = child as usize,
            }
        }
        if nodes[n][last as usize] != ABSENT {
            return None;
        }
        nodes[n][last as usize] = -(i as i32 + 1);
    }
    Some(nodes)
}

impl BlockMatcher {
    pub(crate) fn new(partition: &Partition) -> Self {
        let kind = match build_trie(partition) {
            Some(nodes) => MatcherKind::Trie { nodes },
            None => MatcherKind::Scan,
        };
        BlockMatcher { kind }
    }

    /// Matches the labels of a trace stored in `labels`, where `labels[origin]`
    /// is the label at time `shift`.
    pub(crate) fn find(
        &self,
        partition: &Partition,
        labels: &[Label],
        origin: usize,
        trace_start: i64,
    ) -> Result<usize> {
        match &self.kind {
            MatcherKind::Trie { nodes } => {
                let mut n = 0usize;
                for &l in &labels[origin..] {
                    let slot = nodes[n][l as usize];
                    if slot == ABSENT {
                        return Err(Error::NoMatch);
                    }
                    if slot < 0 {
                        return Ok((-slot - 1) as usize);
                    }
                    n = slot as usize;
                }
                Err(Error::TraceTooShort(0, labels.len() as i64))
            }
            MatcherKind::Scan => {
                let trace = Trace {
                    labels: labels.to_vec(),
                    start_offset: trace_start,
                };
                partition.match_block_shifted(&trace, origin as i64 + trace_start)
            }
        }
    }
}
