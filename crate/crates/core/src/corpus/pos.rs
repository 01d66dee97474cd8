use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of Universal POS categories.
pub const NUM_CATEGORIES: usize = 17;

/// One of the 17 Universal POS tags. The discriminant is the category id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum PosCategory {
    Noun = 0,
    Verb,
    Adj,
    Adv,
    Propn,
    Num,
    Intj,
    Pron,
    Det,
    Adp,
    Aux,
    Cconj,
    Sconj,
    Part,
    Punct,
    Sym,
    X,
}

/// Reporting group a category belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PosGroup {
    NonFunction,
    Function,
    Other,
}

impl PosCategory {
    pub const ALL: [PosCategory; NUM_CATEGORIES] = [
        PosCategory::Noun,
        PosCategory::Verb,
        PosCategory::Adj,
        PosCategory::Adv,
        PosCategory::Propn,
        PosCategory::Num,
        PosCategory::Intj,
        PosCategory::Pron,
        PosCategory::Det,
        PosCategory::Adp,
        PosCategory::Aux,
        PosCategory::Cconj,
        PosCategory::Sconj,
        PosCategory::Part,
        PosCategory::Punct,
        PosCategory::Sym,
        PosCategory::X,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PosCategory::Noun => "NOUN",
            PosCategory::Verb => "VERB",
            PosCategory::Adj => "ADJ",
            PosCategory::Adv => "ADV",
            PosCategory::Propn => "PROPN",
            PosCategory::Num => "NUM",
            PosCategory::Intj => "INTJ",
            PosCategory::Pron => "PRON",
            PosCategory::Det => "DET",
            PosCategory::Adp => "ADP",
            PosCategory::Aux => "AUX",
            PosCategory::Cconj => "CCONJ",
            PosCategory::Sconj => "SCONJ",
            PosCategory::Part => "PART",
            PosCategory::Punct => "PUNCT",
            PosCategory::Sym => "SYM",
            PosCategory::X => "X",
        }
    }

    pub fn group(self) -> PosGroup {
        use PosCategory::*;
        match self {
            Noun | Verb | Adj | Adv | Propn | Num | Intj => PosGroup::NonFunction,
            Pron | Det | Adp | Aux | Cconj | Sconj | Part => PosGroup::Function,
            Punct | Sym | X => PosGroup::Other,
        }
    }

    /// Parses a tag name, falling back to `X` for anything outside the tag set.
    pub fn from_tag_lossy(tag: &str) -> (Self, bool) {
        match tag.parse() {
            Ok(c) => (c, true),
            Err(_) => (PosCategory::X, false),
        }
    }
}

impl FromStr for PosCategory {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        PosCategory::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or(())
    }
}

impl fmt::Display for PosCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mean of `values` over the categories of `group`, skipping categories for
/// which `include` is false. Returns `None` when nothing is included.
pub fn group_mean(values: &[f64], group: PosGroup, include: impl Fn(PosCategory) -> bool) -> Option<f64> {
    let picked: Vec<f64> = PosCategory::ALL
        .iter()
        .filter(|c| c.group() == group && include(**c))
        .map(|c| values[c.id()])
        .collect();
    if picked.is_empty() {
        None
    } else {
        Some(picked.iter().sum::<f64>() / picked.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_a_bijection() {
        for (i, c) in PosCategory::ALL.iter().enumerate() {
            assert_eq!(c.id(), i);
            assert_eq!(PosCategory::from_id(i), Some(*c));
            assert_eq!(c.name().parse::<PosCategory>(), Ok(*c));
        }
        assert_eq!(PosCategory::from_id(NUM_CATEGORIES), None);
    }

    #[test]
    fn groups_partition_the_tag_set() {
        let count = |g| PosCategory::ALL.iter().filter(|c| c.group() == g).count();
        assert_eq!(count(PosGroup::NonFunction), 7);
        assert_eq!(count(PosGroup::Function), 7);
        assert_eq!(count(PosGroup::Other), 3);
    }

    #[test]
    fn unknown_tag_is_x() {
        assert_eq!(PosCategory::from_tag_lossy("FOO"), (PosCategory::X, false));
        assert_eq!(PosCategory::from_tag_lossy("NOUN"), (PosCategory::Noun, true));
    }
}
