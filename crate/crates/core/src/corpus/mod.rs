//! Tagged corpus ingestion, subword tokenization with POS alignment, and
//! packing into fixed-length training sequences.

pub mod pos;
pub mod reader;
pub mod synth;
pub mod vocab;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use pos::{group_mean, PosCategory, PosGroup, NUM_CATEGORIES};
pub use reader::{load_tagged_corpus, open_tagged_corpus, parse_tagged_text, Sentence, TaggedReader, TaggedWord};
pub use vocab::{build_vocab, Vocabulary};

use crate::error::{Error, Result};
use vocab::{CLS_ID, PAD_ID, SEP_ID};

pub const DEFAULT_SEQ_LEN: usize = 128;
pub const DEFAULT_VOCAB_SIZE: usize = 8192;
pub const MIN_SEQ_LEN: usize = 8;

/// Subword pieces of one sentence, each tagged with its word's category.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Fragment {
    pub pieces: Vec<u32>,
    pub pos: Vec<PosCategory>,
    /// True where a piece begins a new word.
    pub word_start: Vec<bool>,
}

impl Fragment {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }
}

/// A packed training sequence. Special positions (`[CLS]`, `[SEP]`, `[PAD]`)
/// carry category `X` in `pos_ids`; `special_mask` is what tells them apart.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSequence {
    pub token_ids: Vec<u32>,
    pub pos_ids: Vec<PosCategory>,
    pub special_mask: Vec<bool>,
}

impl TaggedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Positions eligible for masking, ascending.
    pub fn maskable(&self) -> impl Iterator<Item = usize> + '_ {
        self.special_mask
            .iter()
            .enumerate()
            .filter(|(_, &s)| !s)
            .map(|(i, _)| i)
    }

    pub fn n_maskable(&self) -> usize {
        self.special_mask.iter().filter(|&&s| !s).count()
    }

    /// Checks the structural invariants against a vocabulary size.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let n = self.token_ids.len();
        if self.pos_ids.len() != n || self.special_mask.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: self.pos_ids.len().min(self.special_mask.len()),
            });
        }
        for (&id, &special) in self.token_ids.iter().zip(&self.special_mask) {
            if id as usize >= vocab_size {
                return Err(Error::TokenOutOfRange { id, vocab_size });
            }
            if special && !matches!(id, PAD_ID | CLS_ID | SEP_ID) {
                return Err(Error::Other(format!("special position holds non-special id {id}")));
            }
            if !special && matches!(id, PAD_ID | CLS_ID | SEP_ID) {
                return Err(Error::Other(format!("special id {id} not flagged")));
            }
        }
        Ok(())
    }
}

/// Splits every word of `sentence` with greedy longest match; pieces inherit
/// the word's category. No special tokens are inserted.
pub fn tokenize_aligned(sentence: &[TaggedWord], vocab: &Vocabulary) -> Fragment {
    let mut frag = Fragment::default();
    for word in sentence {
        let pieces = vocab.wordpiece(&word.form);
        for (i, p) in pieces.into_iter().enumerate() {
            frag.pieces.push(p);
            frag.pos.push(word.pos);
            frag.word_start.push(i == 0);
        }
    }
    frag
}

/// Packs sentence fragments into `[CLS] pieces.. [SEP] [PAD]..` sequences of
/// exactly `seq_len` tokens, in input order.
///
/// Whole sentences are packed while they fit. A sentence longer than the
/// `seq_len - 2` capacity is split at word boundaries, and only a single
/// word longer than the capacity is split mid-word.
pub fn pack_sequences<I>(fragments: I, seq_len: usize) -> Result<Vec<TaggedSequence>>
where
    I: IntoIterator<Item = Fragment>,
{
    if seq_len < MIN_SEQ_LEN {
        return Err(Error::Config(format!(
            "sequence length {seq_len} is below the minimum of {MIN_SEQ_LEN}"
        )));
    }
    let mut packer = Packer::new(seq_len);
    for frag in fragments {
        packer.push(&frag);
    }
    Ok(packer.finish())
}

struct Packer {
    seq_len: usize,
    capacity: usize,
    pieces: Vec<u32>,
    pos: Vec<PosCategory>,
    out: Vec<TaggedSequence>,
}

impl Packer {
    fn new(seq_len: usize) -> Self {
        Self {
            seq_len,
            capacity: seq_len - 2,
            pieces: Vec::new(),
            pos: Vec::new(),
            out: Vec::new(),
        }
    }

    fn push(&mut self, frag: &Fragment) {
        if frag.is_empty() {
            return;
        }
        if self.pieces.len() + frag.len() <= self.capacity {
            self.append(frag, 0, frag.len());
            return;
        }
        self.flush();
        if frag.len() <= self.capacity {
            self.append(frag, 0, frag.len());
            return;
        }
        // Oversized sentence: break at word starts.
        let mut start = 0;
        while start < frag.len() {
            let limit = (start + self.capacity).min(frag.len());
            let mut end = limit;
            if limit < frag.len() {
                // last word boundary that keeps the chunk non-empty
                if let Some(b) = (start + 1..=limit).rev().find(|&i| frag.word_start[i]) {
                    end = b;
                }
            }
            self.append(frag, start, end);
            if end < frag.len() {
                self.flush();
            }
            start = end;
        }
    }

    fn append(&mut self, frag: &Fragment, start: usize, end: usize) {
        self.pieces.extend_from_slice(&frag.pieces[start..end]);
        self.pos.extend_from_slice(&frag.pos[start..end]);
    }

    fn flush(&mut self) {
        if self.pieces.is_empty() {
            return;
        }
        let body = self.pieces.len();
        let mut token_ids = Vec::with_capacity(self.seq_len);
        let mut pos_ids = Vec::with_capacity(self.seq_len);
        let mut special_mask = Vec::with_capacity(self.seq_len);
        token_ids.push(CLS_ID);
        pos_ids.push(PosCategory::X);
        special_mask.push(true);
        token_ids.append(&mut self.pieces);
        pos_ids.append(&mut self.pos);
        special_mask.extend(std::iter::repeat(false).take(body));
        token_ids.push(SEP_ID);
        pos_ids.push(PosCategory::X);
        special_mask.push(true);
        let pad = self.seq_len - token_ids.len();
        token_ids.extend(std::iter::repeat(PAD_ID).take(pad));
        pos_ids.extend(std::iter::repeat(PosCategory::X).take(pad));
        special_mask.extend(std::iter::repeat(true).take(pad));
        self.out.push(TaggedSequence {
            token_ids,
            pos_ids,
            special_mask,
        });
    }

    fn finish(mut self) -> Vec<TaggedSequence> {
        self.flush();
        self.out
    }
}

/// Tokenizes and packs a whole corpus.
pub fn prepare_sequences(sentences: &[Sentence], vocab: &Vocabulary, seq_len: usize) -> Result<Vec<TaggedSequence>> {
    pack_sequences(sentences.iter().map(|s| tokenize_aligned(s, vocab)), seq_len)
}

/// Collects every word form in corpus order, for vocabulary construction.
pub fn word_forms(sentences: &[Sentence]) -> impl Iterator<Item = &str> {
    sentences.iter().flatten().map(|w| w.form.as_str())
}

/// Non-special token counts per category.
pub fn category_counts(sequences: &[TaggedSequence]) -> [u64; NUM_CATEGORIES] {
    let mut counts = [0u64; NUM_CATEGORIES];
    for seq in sequences {
        for i in seq.maskable() {
            counts[seq.pos_ids[i].id()] += 1;
        }
    }
    counts
}

#[derive(Serialize, Deserialize)]
struct SequenceRecord {
    tokens: Vec<u32>,
    pos: Vec<u8>,
    special: Vec<u8>,
}

/// Writes sequences as line-delimited JSON.
pub fn write_sequence_cache<W: Write>(mut out: W, sequences: &[TaggedSequence]) -> std::io::Result<()> {
    for seq in sequences {
        let rec = SequenceRecord {
            tokens: seq.token_ids.clone(),
            pos: seq.pos_ids.iter().map(|p| p.id() as u8).collect(),
            special: seq.special_mask.iter().map(|&b| b as u8).collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a line-JSON sequence cache and validates every record.
pub fn read_sequence_cache<R: BufRead>(input: R, vocab_size: usize) -> Result<Vec<TaggedSequence>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::parse(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SequenceRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(line_no, e.to_string()))?;
        let pos_ids = rec
            .pos
            .iter()
            .map(|&p| PosCategory::from_id(p as usize).ok_or_else(|| Error::parse(line_no, format!("bad category id {p}"))))
            .collect::<Result<Vec<_>>>()?;
        let special_mask = rec
            .special
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::parse(line_no, format!("bad special flag {b}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let seq = TaggedSequence {
            token_ids: rec.tokens,
            pos_ids,
            special_mask,
        };
        seq.validate(vocab_size)
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
        if let Some(first) = out.first().map(TaggedSequence::len) {
            if seq.len() != first {
                return Err(Error::parse(line_no, "sequence length differs from first record"));
            }
        }
        out.push(seq);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vocab::UNK_ID;
    use PosCategory::*;

    fn toy_vocab() -> Vocabulary {
        Vocabulary::from_tokens(["keep", "##s", "doctor", "the", "a", "b", "c", "d", "e"]).unwrap()
    }

    #[test]
    fn pieces_inherit_word_category() {
        let v = toy_vocab();
        let f = tokenize_aligned(&[TaggedWord::new("keeps", Verb)], &v);
        assert_eq!(f.pieces, vec![v.id("keep").unwrap(), v.id("##s").unwrap()]);
        assert_eq!(f.pos, vec![Verb, Verb]);
        assert_eq!(f.word_start, vec![true, false]);

        let f = tokenize_aligned(&[TaggedWord::new("doctor", Noun)], &v);
        assert_eq!((f.pieces.len(), f.pos[0]), (1, Noun));

        let f = tokenize_aligned(&[TaggedWord::new("zzz", Adj)], &v);
        assert_eq!((f.pieces, f.pos), (vec![UNK_ID], vec![Adj]));
    }

    fn frag(n: usize) -> Fragment {
        Fragment {
            pieces: (10..10 + n as u32).collect(),
            pos: vec![Noun; n],
            word_start: vec![true; n],
        }
    }

    #[test]
    fn five_pieces_in_eight() {
        let out = pack_sequences([frag(5)], 8).unwrap();
        assert_eq!(out.len(), 1);
        let s = &out[0];
        assert_eq!(s.token_ids, vec![CLS_ID, 10, 11, 12, 13, 14, SEP_ID, PAD_ID]);
        assert_eq!(s.special_mask.iter().filter(|&&b| b).count(), 3);
        assert_eq!(s.n_maskable(), 5);
        s.validate(100).unwrap();
    }

    #[test]
    fn sentences_do_not_straddle() {
        let out = pack_sequences([frag(4), frag(4), frag(2)], 8).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].n_maskable(), 4);
        assert_eq!(out[1].n_maskable(), 6);
    }

    #[test]
    fn oversized_sentence_splits_at_word_starts() {
        let mut f = frag(9);
        f.word_start = vec![true, false, false, true, false, true, false, false, false];
        let out = pack_sequences([f], 8).unwrap();
        let bodies: Vec<usize> = out.iter().map(|s| s.n_maskable()).collect();
        assert_eq!(bodies, vec![5, 4]);

        let mut long_word = frag(14);
        long_word.word_start = vec![false; 14];
        long_word.word_start[0] = true;
        let out = pack_sequences([long_word], 8).unwrap();
        assert_eq!(out.iter().map(|s| s.n_maskable()).collect::<Vec<_>>(), vec![6, 6, 2]);
    }

    #[test]
    fn short_seq_len_rejected() {
        assert!(pack_sequences([frag(1)], 7).is_err());
    }

    #[test]
    fn cache_round_trip_and_validation() {
        let seqs = pack_sequences([frag(5), frag(3)], 8).unwrap();
        let mut buf = Vec::new();
        write_sequence_cache(&mut buf, &seqs).unwrap();
        let back = read_sequence_cache(buf.as_slice(), 100).unwrap();
        assert_eq!(back, seqs);
        assert!(read_sequence_cache(buf.as_slice(), 12).is_err());
        assert!(read_sequence_cache(&b"{\"tokens\":[2],\"pos\":[99],\"special\":[1]}\n"[..], 10).is_err());
    }
}
