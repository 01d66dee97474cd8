//! Subword vocabulary.
//!
//! Word-initial pieces are stored as-is, continuation pieces carry a `##`
//! prefix. The first five ids are reserved, in the order of
//! [`RESERVED_TOKENS`].

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

pub const RESERVED_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const CONTINUATION: &str = "##";

/// Words longer than this many characters tokenize to `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit token list (reserved tokens are
    /// prepended and must not appear in `tokens`).
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::reserved_only();
        for t in tokens {
            let t = t.into();
            if !vocab.push(t.clone()) {
                return Err(Error::Other(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(vocab)
    }

    fn reserved_only() -> Self {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for t in RESERVED_TOKENS {
            vocab.push(t.to_owned());
        }
        vocab
    }

    fn push(&mut self, token: String) -> bool {
        if self.ids.contains_key(&token) {
            return false;
        }
        self.ids.insert(token.clone(), self.tokens.len() as u32);
        self.tokens.push(token);
        true
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_reserved(id: u32) -> bool {
        (id as usize) < RESERVED_TOKENS.len()
    }

    /// Splits one word by greedy longest match. Returns `[UNK]` when some
    /// suffix of the word cannot be matched.
    pub fn wordpiece(&self, word: &str) -> Vec<u32> {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        if chars.is_empty() || chars.len() > MAX_WORD_CHARS {
            return vec![UNK_ID];
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut candidate = String::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let byte_start = chars[start].0;
                let byte_end = chars.get(end).map_or(word.len(), |c| c.0);
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.push_str(&word[byte_start..byte_end]);
                if let Some(id) = self.id(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => return vec![UNK_ID],
            }
        }
        pieces
    }

    /// FNV-1a over the token list; identifies a vocabulary in checkpoints.
    pub fn fingerprint(&self) -> u64 {
        self.tokens
            .iter()
            .fold(FNV_OFFSET, |h, t| fnv1a(fnv1a(h, t.as_bytes()), b"\n"))
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if let Some(expected) = RESERVED_TOKENS.get(i) {
                if line != *expected {
                    return Err(Error::parse(
                        line_no,
                        format!("expected reserved token {expected}, found {line:?}"),
                    ));
                }
            }
            if line.is_empty() || line.contains(char::is_whitespace) {
                return Err(Error::parse(line_no, "token is empty or contains whitespace"));
            }
            if !vocab.push(line.to_owned()) {
                return Err(Error::parse(line_no, format!("duplicate token {line:?}")));
            }
        }
        if vocab.len() < RESERVED_TOKENS.len() {
            return Err(Error::parse(vocab.len() + 1, "missing reserved tokens"));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Other(format!("{}: {e}", path.display())))
    }
}

/// Learns a subword vocabulary of at most `vocab_size` entries (reserved
/// tokens included) from word frequencies.
///
/// Every character is first added as a word-initial and/or continuation
/// piece, most frequent first. Then the most frequent adjacent piece pair is
/// merged repeatedly until the budget is spent or every word is a single
/// piece. Frequency ties are broken by the lexicographic order of the pair.
pub fn build_vocab<'a, I>(words: I, vocab_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if vocab_size < RESERVED_TOKENS.len() {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} is smaller than the {} reserved tokens",
            RESERVED_TOKENS.len()
        )));
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for w in words {
        if !w.is_empty() && w.chars().count() <= MAX_WORD_CHARS {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut vocab = Vocabulary::reserved_only();

    // Symbol table shared by the merge loop; ids here are local, not vocab ids.
    let mut symbols: Vec<String> = Vec::new();
    let mut symbol_ids: HashMap<String, u32> = HashMap::new();
    let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
        *symbol_ids.entry(s.clone()).or_insert_with(|| {
            symbols.push(s);
            symbols.len() as u32 - 1
        })
    };

    let mut words: Vec<(Vec<u32>, u64)> = Vec::with_capacity(counts.len());
    let mut symbol_freq: HashMap<u32, u64> = HashMap::new();
    for (w, &c) in &counts {
        let pieces: Vec<u32> = w
            .chars()
            .enumerate()
            .map(|(i, ch)| {
                let s = if i == 0 {
                    ch.to_string()
                } else {
                    format!("{CONTINUATION}{ch}")
                };
                intern(s, &mut symbols)
            })
            .collect();
        for &p in &pieces {
            *symbol_freq.entry(p).or_default() += c;
        }
        words.push((pieces, c));
    }

    let mut alphabet: Vec<(u32, u64)> = symbol_freq.into_iter().collect();
    alphabet.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| symbols[a.0 as usize].cmp(&symbols[b.0 as usize])));
    let mut in_vocab: HashSet<u32> = HashSet::new();
    for (sym, _) in alphabet {
        if vocab.len() >= vocab_size {
            break;
        }
        vocab.push(symbols[sym as usize].clone());
        in_vocab.insert(sym);
    }

    // Pair statistics over words whose pieces are all in the vocabulary.
    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut pair_words: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    let usable: Vec<bool> = words
        .iter()
        .map(|(p, _)| p.iter().all(|s| in_vocab.contains(s)))
        .collect();
    for (wi, (pieces, c)) in words.iter().enumerate() {
        if !usable[wi] {
            continue;
        }
        for pair in pieces.windows(2) {
            let key = (pair[0], pair[1]);
            *pair_counts.entry(key).or_default() += c;
            pair_words.entry(key).or_default().insert(wi);
        }
    }

    type HeapKey = (u64, Reverse<(String, String)>, (u32, u32));
    let heap_key = |pair: (u32, u32), count: u64, symbols: &[String]| -> HeapKey {
        (
            count,
            Reverse((symbols[pair.0 as usize].clone(), symbols[pair.1 as usize].clone())),
            pair,
        )
    };
    let mut heap: BinaryHeap<HeapKey> = pair_counts
        .iter()
        .map(|(&p, &c)| heap_key(p, c, &symbols))
        .collect();

    while vocab.len() < vocab_size {
        let Some((count, _, pair)) = heap.pop() else {
            break;
        };
        if pair_counts.get(&pair).copied() != Some(count) || count == 0 {
            continue;
        }
        let left = &symbols[pair.0 as usize];
        let right = &symbols[pair.1 as usize];
        let merged = format!("{left}{}", right.strip_prefix(CONTINUATION).unwrap_or(right));
        let merged_id = intern(merged.clone(), &mut symbols);
        vocab.push(merged);

        let affected: Vec<usize> = pair_words
            .remove(&pair)
            .map(|s| {
                let mut v: Vec<usize> = s.into_iter().collect();
                v.sort_unstable();
                v
            })
            .unwrap_or_default();
        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        for wi in affected {
            let (pieces, c) = &mut words[wi];
            let c = *c;
            for w in pieces.windows(2) {
                let key = (w[0], w[1]);
                if let Some(v) = pair_counts.get_mut(&key) {
                    *v -= c;
                }
                if let Some(set) = pair_words.get_mut(&key) {
                    set.remove(&wi);
                }
                touched.insert(key);
            }
            let mut next = Vec::with_capacity(pieces.len());
            let mut i = 0;
            while i < pieces.len() {
                if i + 1 < pieces.len() && (pieces[i], pieces[i + 1]) == pair {
                    next.push(merged_id);
                    i += 2;
                } else {
                    next.push(pieces[i]);
                    i += 1;
                }
            }
            *pieces = next;
            for w in pieces.windows(2) {
                let key = (w[0], w[1]);
                *pair_counts.entry(key).or_default() += c;
                pair_words.entry(key).or_default().insert(wi);
                touched.insert(key);
            }
        }
        pair_counts.remove(&pair);
        let mut touched: Vec<(u32, u32)> = touched.into_iter().collect();
        touched.sort_unstable();
        for key in touched {
            if key == pair {
                continue;
            }
            match pair_counts.get(&key).copied() {
                Some(0) | None => {
                    pair_counts.remove(&key);
                }
                Some(c) => heap.push(heap_key(key, c, &symbols)),
            }
        }
    }
    Ok(vocab)
}

pub(crate) const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

/// Continues an FNV-1a hash from state `h`.
pub(crate) fn fnv1a(h: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(h, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::from_tokens(["a"]).unwrap();
        for (i, t) in RESERVED_TOKENS.iter().enumerate() {
            assert_eq!(v.id(t), Some(i as u32));
        }
        assert_eq!(v.id(MASK), Some(MASK_ID));
        assert_eq!(v.id("a"), Some(5));
    }

    #[test]
    fn whole_words_fit() {
        let v = build_vocab("a a b".split(' '), 7).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v.tokens()[5..], ["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn too_small_budget_is_rejected() {
        assert!(matches!(build_vocab(["a"], 4), Err(Error::Config(_))));
        assert_eq!(build_vocab(["a"], 5).unwrap().len(), 5);
    }

    #[test]
    fn merges_build_whole_words() {
        let text = "keep keeps keep keeps kept low lower lowest";
        let v = build_vocab(text.split(' '), 200).unwrap();
        assert!(v.id("keeps").is_some());
        assert!(v.id("lowest").is_some());
        let v2 = build_vocab(text.split(' '), 200).unwrap();
        assert_eq!(v, v2);
    }

    #[test]
    fn merge_ties_break_lexicographically() {
        // pairs (a,##b) and (c,##d) both occur once; "a" < "c"
        let v = build_vocab(["ab", "cd"], 5 + 4 + 1).unwrap();
        assert_eq!(v.tokens().last().unwrap(), "ab");
    }

    #[test]
    fn longest_match_split() {
        let v = Vocabulary::from_tokens(["keep", "##s", "k", "##e", "##p", "doctor"]).unwrap();
        let keep = v.id("keep").unwrap();
        let s = v.id("##s").unwrap();
        assert_eq!(v.wordpiece("keeps"), vec![keep, s]);
        assert_eq!(v.wordpiece("doctor"), vec![v.id("doctor").unwrap()]);
        assert_eq!(v.wordpiece("zebra"), vec![UNK_ID]);
        assert_eq!(v.wordpiece("keepz"), vec![UNK_ID]);
    }

    #[test]
    fn multibyte_words() {
        let v = build_vocab(["héllo", "héllo", "wörld"], 64).unwrap();
        let pieces = v.wordpiece("héllo");
        assert!(!pieces.contains(&UNK_ID));
        let joined: String = pieces
            .iter()
            .map(|&id| v.token(id).unwrap().trim_start_matches(CONTINUATION).to_string())
            .collect();
        assert_eq!(joined, "héllo");
    }

    #[test]
    fn text_round_trip() {
        let v = build_vocab("the cat sat on the mat".split(' '), 30).unwrap();
        let parsed = Vocabulary::parse(&v.to_text()).unwrap();
        assert_eq!(parsed, v);
        assert_eq!(parsed.fingerprint(), v.fingerprint());
    }

    #[test]
    fn parse_rejects_bad_files() {
        assert!(Vocabulary::parse("").is_err());
        assert!(Vocabulary::parse("[UNK]\n[PAD]\n[CLS]\n[SEP]\n[MASK]\n").is_err());
        assert!(Vocabulary::parse("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\na\na\n").is_err());
        assert!(Vocabulary::parse("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\n\n").is_err());
    }
}
