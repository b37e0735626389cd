//! Multi-answer labels over the options A–D, plus the sentinel "N".
//!
//! A label is either a non-empty set of options (serialized in ascending
//! letter order, e.g. "AC" or "BCD") or the marker "N" meaning that no
//! option is correct. "N" is a category of its own: it is a subset of
//! nothing but itself, and nothing else is a subset of it.

use std::fmt;

use thiserror::Error;

/// Number of candidate options per sample (A, B, C, D).
pub const NUM_OPTIONS: usize = 4;

const LETTERS: [char; NUM_OPTIONS] = ['A', 'B', 'C', 'D'];

/// Error from [`parse_answer_set`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty answer text")]
    Empty,
    #[error("invalid character {0:?} in answer text")]
    InvalidChar(char),
    #[error("\"N\" cannot be combined with option letters")]
    MixedNone,
}

/// A canonical multi-answer label: a non-empty option set or the "N" marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnswerSet {
    /// No option is correct. Serialized form is exactly "N".
    NoneMarker,
    /// Non-empty set of options, stored as a bitmask (bit 0 = A .. bit 3 = D).
    Options(OptionSet),
}

/// Non-empty subset of {A, B, C, D} packed into the low 4 bits of a byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OptionSet(u8);

impl OptionSet {
    /// Builds a set from a raw bitmask. Returns `None` for the empty mask or
    /// out-of-range bits.
    pub fn from_mask(mask: u8) -> Option<Self> {
        if mask == 0 || mask > 0b1111 {
            None
        } else {
            Some(Self(mask))
        }
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        false // non-empty by construction
    }

    /// True if option `index` (0 = A .. 3 = D) is in the set.
    pub fn contains(self, index: usize) -> bool {
        index < NUM_OPTIONS && self.0 & (1 << index) != 0
    }

    pub fn is_subset(self, other: OptionSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Option indices in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..NUM_OPTIONS).filter(move |i| self.0 & (1 << i) != 0)
    }
}

impl AnswerSet {
    /// Builds the label for a sample given which options are correct.
    /// An empty set maps to the "N" marker.
    pub fn from_correct_options(correct: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = 0u8;
        for i in correct {
            assert!(i < NUM_OPTIONS, "option index out of range: {i}");
            mask |= 1 << i;
        }
        match OptionSet::from_mask(mask) {
            Some(set) => AnswerSet::Options(set),
            None => AnswerSet::NoneMarker,
        }
    }

    /// Cardinality used by the proportional accuracy reward. "N" counts as a
    /// complete answer of size 1.
    pub fn cardinality(&self) -> usize {
        match self {
            AnswerSet::NoneMarker => 1,
            AnswerSet::Options(set) => set.len(),
        }
    }

    pub fn is_none_marker(&self) -> bool {
        matches!(self, AnswerSet::NoneMarker)
    }

    /// All 16 distinct labels: "N" first, then the 15 non-empty option sets
    /// in ascending bitmask order. The position of a label in this order is
    /// its [`AnswerSet::index`].
    pub fn all() -> impl Iterator<Item = AnswerSet> {
        std::iter::once(AnswerSet::NoneMarker).chain(
            (1u8..=0b1111).map(|mask| AnswerSet::Options(OptionSet::from_mask(mask).unwrap())),
        )
    }

    /// Stable index in `0..16`: 0 for "N", `mask` for an option set.
    pub fn index(&self) -> usize {
        match self {
            AnswerSet::NoneMarker => 0,
            AnswerSet::Options(set) => set.mask() as usize,
        }
    }

    /// Inverse of [`AnswerSet::index`].
    pub fn from_index(index: usize) -> Option<AnswerSet> {
        match index {
            0 => Some(AnswerSet::NoneMarker),
            1..=15 => Some(AnswerSet::Options(OptionSet::from_mask(index as u8)?)),
            _ => None,
        }
    }
}

impl fmt::Display for AnswerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerSet::NoneMarker => f.write_str("N"),
            AnswerSet::Options(set) => {
                for i in set.iter() {
                    write!(f, "{}", LETTERS[i])?;
                }
                Ok(())
            }
        }
    }
}

/// Canonical serialized form: ascending letters with no separators, or "N".
pub fn format_answer_set(a: &AnswerSet) -> String {
    a.to_string()
}

/// Parses a textual label or model answer into canonical form.
///
/// Input is trimmed and case-normalized; duplicate letters and arbitrary
/// order are accepted and normalized, as are commas and whitespace between
/// letters. "N" mixed with letters is rejected.
pub fn parse_answer_set(text: &str) -> Result<AnswerSet, ParseError> {
    let mut mask = 0u8;
    let mut saw_none = false;
    let mut saw_any = false;
    for c in text.chars() {
        let c = c.to_ascii_uppercase();
        match c {
            'A'..='D' => {
                saw_any = true;
                mask |= 1 << (c as u8 - b'A');
            }
            'N' => {
                saw_any = true;
                saw_none = true;
            }
            c if c.is_whitespace() || c == ',' => {}
            other => return Err(ParseError::InvalidChar(other)),
        }
    }
    if !saw_any {
        return Err(ParseError::Empty);
    }
    match (saw_none, OptionSet::from_mask(mask)) {
        (true, Some(_)) => Err(ParseError::MixedNone),
        (true, None) => Ok(AnswerSet::NoneMarker),
        (false, Some(set)) => Ok(AnswerSet::Options(set)),
        (false, None) => unreachable!("letters seen but mask empty"),
    }
}

/// Subset test used by both the reward and the evaluation metric.
///
/// "N" is a subset of "N" only; an option set is a subset of an option set
/// under ordinary set inclusion. The two kinds never relate.
pub fn is_subset_of(r: &AnswerSet, a: &AnswerSet) -> bool {
    match (r, a) {
        (AnswerSet::NoneMarker, AnswerSet::NoneMarker) => true,
        (AnswerSet::Options(rs), AnswerSet::Options(as_)) => rs.is_subset(*as_),
        _ => false,
    }
}
