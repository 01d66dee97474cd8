//! Reader for POS-tagged text.
//!
//! Accepted record layouts, one token per line, blank line between sentences:
//!
//! * `FORM<TAB>UPOS`
//! * full CoNLL-U rows (10 tab-separated columns; FORM and UPOS are read,
//!   multiword ranges and empty nodes are skipped)
//! * `FORM UPOS` separated by whitespace
//!
//! Lines starting with `#` are comments.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::pos::PosCategory;
use crate::error::{Error, Result};

/// A surface form and its POS category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedWord {
    pub form: String,
    pub pos: PosCategory,
}

impl TaggedWord {
    pub fn new(form: impl Into<String>, pos: PosCategory) -> Self {
        Self {
            form: form.into(),
            pos,
        }
    }
}

pub type Sentence = Vec<TaggedWord>;

/// Streams sentences out of a tagged-text source in corpus order.
pub struct TaggedReader<R> {
    inner: R,
    line_no: usize,
    buf: String,
    sentences: usize,
    done: bool,
    unknown_tags: usize,
}

impl<R: BufRead> TaggedReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            line_no: 0,
            buf: String::new(),
            sentences: 0,
            done: false,
            unknown_tags: 0,
        }
    }

    /// Number of records whose tag fell back to `X`.
    pub fn unknown_tags(&self) -> usize {
        self.unknown_tags
    }

    fn parse_record(&mut self, line: &str) -> Result<Option<TaggedWord>> {
        let (form, tag) = if line.contains('\t') {
            let cols: Vec<&str> = line.split('\t').collect();
            match cols.len() {
                2 => (cols[0].trim(), cols[1].trim()),
                10 => {
                    let id = cols[0];
                    if id.contains('-') || id.contains('.') {
                        return Ok(None);
                    }
                    (cols[1], cols[3])
                }
                n => {
                    return Err(Error::parse(
                        self.line_no,
                        format!("expected 2 or 10 tab-separated columns, found {n}"),
                    ))
                }
            }
        } else {
            let mut fields = line.split_whitespace();
            match (fields.next(), fields.next(), fields.next()) {
                (Some(f), Some(t), None) => (f, t),
                _ => {
                    return Err(Error::parse(
                        self.line_no,
                        "expected a form and a POS tag",
                    ))
                }
            }
        };
        if form.is_empty() || tag.is_empty() {
            return Err(Error::parse(self.line_no, "empty form or tag"));
        }
        let (pos, known) = PosCategory::from_tag_lossy(tag);
        if !known {
            self.unknown_tags += 1;
            log::warn!("line {}: unknown POS tag {tag:?}, using X", self.line_no);
        }
        Ok(Some(TaggedWord::new(form, pos)))
    }

    fn next_sentence(&mut self) -> Result<Option<Sentence>> {
        let mut sentence = Vec::new();
        loop {
            self.buf.clear();
            let read = self.inner.read_line(&mut self.buf).map_err(|e| {
                Error::parse(self.line_no + 1, format!("read failed: {e}"))
            })?;
            if read == 0 {
                return Ok(if sentence.is_empty() {
                    None
                } else {
                    Some(sentence)
                });
            }
            self.line_no += 1;
            let line = self.buf.trim_end_matches(['\n', '\r']).to_owned();
            if line.trim().is_empty() {
                if !sentence.is_empty() {
                    return Ok(Some(sentence));
                }
            } else if !line.starts_with('#') {
                if let Some(word) = self.parse_record(&line)? {
                    sentence.push(word);
                }
            }
        }
    }
}

impl<R: BufRead> Iterator for TaggedReader<R> {
    type Item = Result<Sentence>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_sentence() {
            Ok(Some(s)) => {
                self.sentences += 1;
                Some(Ok(s))
            }
            Ok(None) => {
                self.done = true;
                (self.sentences == 0).then_some(Err(Error::EmptyCorpus))
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens a tagged corpus file as a sentence stream.
pub fn open_tagged_corpus(path: &Path) -> Result<TaggedReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(TaggedReader::new(BufReader::new(file)))
}

/// Reads a whole tagged corpus into memory.
pub fn load_tagged_corpus(path: &Path) -> Result<Vec<Sentence>> {
    open_tagged_corpus(path)?
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::Parse { line, message } => Error::Other(format!(
                "{}: line {line}: {message}",
                path.display()
            )),
            other => other,
        })
}

/// Parses tagged text held in memory.
pub fn parse_tagged_text(text: &str) -> Result<Vec<Sentence>> {
    TaggedReader::new(text.as_bytes()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use PosCategory::*;

    #[test]
    fn whitespace_record() {
        let s = parse_tagged_text("apple NOUN\n").unwrap();
        assert_eq!(s, vec![vec![TaggedWord::new("apple", Noun)]]);
    }

    #[test]
    fn tab_records_and_sentence_breaks() {
        let text = "The\tDET\ncat\tNOUN\n\n\n\nsat\tVERB\n.\tPUNCT\n";
        let s = parse_tagged_text(text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0][1], TaggedWord::new("cat", Noun));
        assert_eq!(s[1][1], TaggedWord::new(".", Punct));
    }

    #[test]
    fn unknown_tag_falls_back_to_x() {
        let mut r = TaggedReader::new("blah\tFOO\n".as_bytes());
        let s = r.next().unwrap().unwrap();
        assert_eq!(s[0].pos, X);
        assert_eq!(r.unknown_tags(), 1);
    }

    #[test]
    fn conllu_rows() {
        let text = "# sent_id = 1\n\
                    1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n\
                    1\tdo\tdo\tAUX\t_\t_\t0\troot\t_\t_\n\
                    2\tn't\tnot\tPART\t_\t_\t1\tadvmod\t_\t_\n\
                    2.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n";
        let s = parse_tagged_text(text).unwrap();
        assert_eq!(s, vec![vec![TaggedWord::new("do", Aux), TaggedWord::new("n't", Part)]]);
    }

    #[test]
    fn malformed_record_reports_line() {
        let err = parse_tagged_text("a NOUN\nb NOUN extra\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_tagged_text("a\tb\tc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse_tagged_text(""), Err(Error::EmptyCorpus)));
        assert!(matches!(parse_tagged_text("\n\n# c\n"), Err(Error::EmptyCorpus)));
    }
}
