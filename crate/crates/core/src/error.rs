use thiserror::Error;

use crate::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("past labels requested but the system has no inverse map")]
    PastUnavailable,

    #[error("words have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("timed word has {letters} letters but interval [-{past},{future}] needs {expected}")]
    MalformedWord {
        letters: usize,
        past: usize,
        future: usize,
        expected: usize,
    },

    #[error("cannot parse timed word {0:?}: {1}")]
    WordSyntax(String, &'static str),

    #[error("letter {letter} is outside the alphabet of size {alphabet_size}")]
    LetterOutOfRange { letter: Label, alphabet_size: usize },

    #[error("word {0} appears twice in the partition")]
    DuplicateWord(String),

    #[error("trace does not cover the interval [{0},{1}] required by the partition")]
    TraceTooShort(i64, i64),

    #[error("trace lies in no block of the partition")]
    NoMatch,

    #[error("trace lies in blocks {0} and {1} of the partition")]
    MultiMatch(usize, usize),

    #[error("block {word} has {count} samples, at most the zero threshold {threshold}")]
    EmptyBlock {
        word: String,
        count: u64,
        threshold: u64,
    },

    #[error("block {0} has no witnessed transition into a kept block")]
    NoTransitions(String),

    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("chains use different alphabets ({0} vs {1})")]
    AlphabetMismatch(usize, usize),

    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),

    #[error("oracle refused: |A|^k = {words} exceeds the limit of {limit} words")]
    TooLarge { words: u128, limit: usize },

    #[error("word {0} has past memory; only future-only words can be split")]
    PastWordUnsupported(String),

    #[error("every letter of the alphabet was dropped as unobserved")]
    DegenerateAlphabet,

    #[error("refinement strategy {0} is not implemented")]
    UnsupportedStrategy(&'static str),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
