//! Synthetic POS-tagged English-like text.
//!
//! A small clause grammar over closed function-word classes and large,
//! Zipf-distributed open classes with per-sentence topics. Function words are
//! mostly determined by syntax and agreement; content words are drawn from
//! thousands of invented lemmas. Used to produce desk-scale corpora for
//! training runs when no tagged corpus is at hand.

use std::collections::HashSet;
use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pos::PosCategory::{self, *};
use super::reader::{Sentence, TaggedWord};

#[derive(Clone, Debug)]
pub struct SynthConfig {
    /// Seed of the invented lexicon; corpora sharing it share a vocabulary.
    pub lexicon_seed: u64,
    /// Seed of the sentence stream.
    pub seed: u64,
    /// Generation stops once at least this many words were emitted.
    pub min_words: usize,
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub adverbs: usize,
    pub proper_nouns: usize,
    pub topics: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            lexicon_seed: 7,
            seed: 1,
            min_words: 100_000,
            nouns: 2500,
            verbs: 1200,
            adjectives: 800,
            adverbs: 300,
            proper_nouns: 600,
            topics: 25,
        }
    }
}

const ONSETS: [&str; 20] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st", "pl", "gr", "sh",
];
const VOWELS: [&str; 7] = ["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: [&str; 8] = ["", "", "", "n", "r", "l", "m", "k"];

const SUBJECT_PRONOUNS: [(&str, Agreement); 7] = [
    ("i", Agreement::First),
    ("you", Agreement::Plural),
    ("he", Agreement::Third),
    ("she", Agreement::Third),
    ("it", Agreement::Third),
    ("we", Agreement::Plural),
    ("they", Agreement::Plural),
];
const OBJECT_PRONOUNS: [&str; 7] = ["me", "you", "him", "her", "it", "us", "them"];
const ADPOSITIONS: [&str; 12] = ["in", "on", "at", "with", "from", "by", "for", "of", "under", "over", "near", "about"];
const COORDINATORS: [&str; 4] = ["and", "but", "or", "yet"];
const SUBORDINATORS: [&str; 6] = ["because", "while", "if", "when", "although", "since"];
const INTERJECTIONS: [&str; 5] = ["oh", "well", "hey", "wow", "alas"];
const MODALS: [&str; 4] = ["will", "can", "should", "must"];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Agreement {
    First,
    Third,
    Plural,
}

struct OpenClass {
    lemmas: Vec<String>,
    global: WeightedIndex<f64>,
    by_topic: Vec<(Vec<usize>, WeightedIndex<f64>)>,
}

impl OpenClass {
    fn new(lemmas: Vec<String>, topics: usize) -> Self {
        let zipf = |n: usize| WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + 1.0))).expect("non-empty class");
        let global = zipf(lemmas.len());
        let by_topic = (0..topics)
            .map(|t| {
                let members: Vec<usize> = (t..lemmas.len()).step_by(topics).collect();
                let dist = zipf(members.len().max(1));
                (members, dist)
            })
            .collect();
        Self {
            lemmas,
            global,
            by_topic,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, topic: usize) -> &str {
        let idx = if rng.gen_bool(0.75) {
            let (members, dist) = &self.by_topic[topic];
            members.get(dist.sample(rng)).copied().unwrap_or(0)
        } else {
            self.global.sample(rng)
        };
        &self.lemmas[idx]
    }
}

struct Lexicon {
    nouns: OpenClass,
    verbs: OpenClass,
    adjectives: OpenClass,
    adverbs: OpenClass,
    proper: OpenClass,
    foreign: Vec<String>,
    numbers: WeightedIndex<f64>,
}

fn invent(rng: &mut ChaCha8Rng, taken: &mut HashSet<String>, count: usize, syllables: (usize, usize)) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = rng.gen_range(syllables.0..=syllables.1);
        let mut w = String::new();
        for _ in 0..n {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        w.push_str(CODAS.choose(rng).unwrap());
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

impl Lexicon {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.lexicon_seed);
        let mut taken: HashSet<String> = SUBJECT_PRONOUNS
            .iter()
            .map(|p| p.0)
            .chain(OBJECT_PRONOUNS)
            .chain(ADPOSITIONS)
            .chain(COORDINATORS)
            .chain(SUBORDINATORS)
            .chain(INTERJECTIONS)
            .chain(MODALS)
            .chain(["a", "an", "the", "this", "that", "these", "those", "every", "some", "no", "my", "our", "their"])
            .chain(["is", "are", "am", "was", "were", "has", "have", "had", "does", "do", "did", "not", "to", "want"])
            .map(str::to_owned)
            .collect();
        let topics = cfg.topics.max(1);
        let nouns = invent(&mut rng, &mut taken, cfg.nouns.max(1), (1, 3));
        let verbs = invent(&mut rng, &mut taken, cfg.verbs.max(1), (1, 2));
        let adjectives = invent(&mut rng, &mut taken, cfg.adjectives.max(1), (2, 3));
        let adverbs: Vec<String> = invent(&mut rng, &mut taken, cfg.adverbs.max(1), (1, 2))
            .into_iter()
            .map(|w| format!("{w}ly"))
            .collect();
        let proper: Vec<String> = invent(&mut rng, &mut taken, cfg.proper_nouns.max(1), (2, 3))
            .into_iter()
            .map(|w| {
                let mut c = w.chars();
                let first = c.next().unwrap().to_ascii_uppercase();
                std::iter::once(first).chain(c).collect()
            })
            .collect();
        let foreign = invent(&mut rng, &mut taken, 40, (1, 2))
            .into_iter()
            .map(|w| format!("x{w}q"))
            .collect();
        Self {
            nouns: OpenClass::new(nouns, topics),
            verbs: OpenClass::new(verbs, topics),
            adjectives: OpenClass::new(adjectives, topics),
            adverbs: OpenClass::new(adverbs, topics),
            proper: OpenClass::new(proper, topics),
            foreign,
            numbers: WeightedIndex::new((1..=2000).map(|r| 1.0 / r as f64)).unwrap(),
        }
    }
}

fn plural(noun: &str) -> String {
    if noun.ends_with('s') || noun.ends_with("sh") {
        format!("{noun}es")
    } else {
        format!("{noun}s")
    }
}

fn verb_form(lemma: &str, form: VerbForm) -> String {
    let stem = lemma.strip_suffix('e').unwrap_or(lemma);
    match form {
        VerbForm::Base => lemma.to_owned(),
        VerbForm::Third => plural(lemma),
        VerbForm::Past => format!("{stem}ed"),
        VerbForm::Gerund => format!("{stem}ing"),
    }
}

#[derive(Clone, Copy)]
enum VerbForm {
    Base,
    Third,
    Past,
    Gerund,
}

struct Generator<'a> {
    lex: &'a Lexicon,
    rng: ChaCha8Rng,
    topic: usize,
    topics: usize,
}

type Words = Vec<TaggedWord>;

impl Generator<'_> {
    fn push(out: &mut Words, form: impl Into<String>, pos: PosCategory) {
        out.push(TaggedWord::new(form, pos));
    }

    fn number(&mut self) -> String {
        (self.lex.numbers.sample(&mut self.rng) + 1).to_string()
    }

    fn determiner(&mut self, plural: bool, next: &str) -> &'static str {
        let starts_vowel = next.starts_with(['a', 'e', 'i', 'o', 'u']);
        let r: f64 = self.rng.gen();
        match (plural, r) {
            (_, r) if r < 0.45 => "the",
            (false, r) if r < 0.75 => {
                if starts_vowel {
                    "an"
                } else {
                    "a"
                }
            }
            (false, r) if r < 0.85 => "this",
            (false, r) if r < 0.9 => "every",
            (true, r) if r < 0.65 => "some",
            (true, r) if r < 0.8 => "these",
            (true, r) if r < 0.88 => "those",
            (_, r) if r < 0.94 => "my",
            _ => "their",
        }
    }

    /// Common noun phrase; returns its agreement.
    fn noun_phrase(&mut self, out: &mut Words) -> Agreement {
        let is_plural = self.rng.gen_bool(0.35);
        let noun = self.lex.nouns.draw(&mut self.rng, self.topic).to_owned();
        let noun = if is_plural { plural(&noun) } else { noun };
        let adjective = self
            .rng
            .gen_bool(0.35)
            .then(|| self.lex.adjectives.draw(&mut self.rng, self.topic).to_owned());
        if is_plural && self.rng.gen_bool(0.12) {
            let n = self.number();
            Self::push(out, self.determiner(true, &n), Det);
            Self::push(out, n, Num);
        } else {
            let next = adjective.as_deref().unwrap_or(&noun).to_owned();
            Self::push(out, self.determiner(is_plural, &next), Det);
        }
        if let Some(a) = adjective {
            Self::push(out, a, Adj);
        }
        Self::push(out, noun, Noun);
        if is_plural {
            Agreement::Plural
        } else {
            Agreement::Third
        }
    }

    fn subject(&mut self, out: &mut Words) -> Agreement {
        let r: f64 = self.rng.gen();
        if r < 0.25 {
            let (p, agr) = *SUBJECT_PRONOUNS.choose(&mut self.rng).unwrap();
            Self::push(out, p, Pron);
            agr
        } else if r < 0.4 {
            Self::push(out, self.lex.proper.draw(&mut self.rng, self.topic).to_owned(), Propn);
            Agreement::Third
        } else if r < 0.43 {
            Self::push(out, self.number(), Num);
            Self::push(out, "%", Sym);
            Self::push(out, "of", Adp);
            self.noun_phrase(out);
            Agreement::Plural
        } else {
            self.noun_phrase(out)
        }
    }

    fn object(&mut self, out: &mut Words) {
        let r: f64 = self.rng.gen();
        if r < 0.15 {
            Self::push(out, *OBJECT_PRONOUNS.choose(&mut self.rng).unwrap(), Pron);
        } else if r < 0.25 {
            Self::push(out, self.lex.proper.draw(&mut self.rng, self.topic).to_owned(), Propn);
        } else if r < 0.28 {
            Self::push(out, "$", Sym);
            Self::push(out, self.number(), Num);
        } else {
            self.noun_phrase(out);
        }
    }

    fn predicate(&mut self, out: &mut Words, agr: Agreement) {
        let verb = self.lex.verbs.draw(&mut self.rng, self.topic).to_owned();
        let past = self.rng.gen_bool(0.4);
        let r: f64 = self.rng.gen();
        let be = match (agr, past) {
            (Agreement::First, false) => "am",
            (Agreement::Third, false) => "is",
            (Agreement::Plural, false) => "are",
            (Agreement::Plural, true) => "were",
            (_, true) => "was",
        };
        if r < 0.4 {
            let form = match (past, agr) {
                (true, _) => VerbForm::Past,
                (false, Agreement::Third) => VerbForm::Third,
                _ => VerbForm::Base,
            };
            Self::push(out, verb_form(&verb, form), Verb);
        } else if r < 0.55 {
            Self::push(out, be, Aux);
            Self::push(out, verb_form(&verb, VerbForm::Gerund), Verb);
        } else if r < 0.68 {
            let have = match (past, agr) {
                (true, _) => "had",
                (false, Agreement::Third) => "has",
                _ => "have",
            };
            Self::push(out, have, Aux);
            Self::push(out, verb_form(&verb, VerbForm::Past), Verb);
        } else if r < 0.8 {
            Self::push(out, *MODALS.choose(&mut self.rng).unwrap(), Aux);
            Self::push(out, verb, Verb);
        } else if r < 0.92 {
            let dummy = match (past, agr) {
                (true, _) => "did",
                (false, Agreement::Third) => "does",
                _ => "do",
            };
            Self::push(out, dummy, Aux);
            Self::push(out, "not", Part);
            Self::push(out, verb, Verb);
        } else {
            let form = if agr == Agreement::Third && !past {
                VerbForm::Third
            } else if past {
                VerbForm::Past
            } else {
                VerbForm::Base
            };
            Self::push(out, verb_form("want", form), Verb);
            Self::push(out, "to", Part);
            Self::push(out, verb, Verb);
        }
    }

    fn clause(&mut self, out: &mut Words) {
        let agr = self.subject(out);
        self.predicate(out, agr);
        if self.rng.gen_bool(0.7) {
            self.object(out);
        }
        if self.rng.gen_bool(0.4) {
            Self::push(out, *ADPOSITIONS.choose(&mut self.rng).unwrap(), Adp);
            if self.rng.gen_bool(0.2) {
                Self::push(out, self.lex.proper.draw(&mut self.rng, self.topic).to_owned(), Propn);
            } else {
                self.noun_phrase(out);
            }
        }
        if self.rng.gen_bool(0.25) {
            Self::push(out, self.lex.adverbs.draw(&mut self.rng, self.topic).to_owned(), Adv);
        }
    }

    fn sentence(&mut self) -> Sentence {
        self.topic = self.rng.gen_range(0..self.topics);
        let mut out = Vec::with_capacity(24);
        if self.rng.gen_bool(0.04) {
            Self::push(&mut out, *INTERJECTIONS.choose(&mut self.rng).unwrap(), Intj);
            Self::push(&mut out, ",", Punct);
        }
        self.clause(&mut out);
        let r: f64 = self.rng.gen();
        if r < 0.2 {
            Self::push(&mut out, ",", Punct);
            Self::push(&mut out, *COORDINATORS.choose(&mut self.rng).unwrap(), Cconj);
            self.clause(&mut out);
        } else if r < 0.35 {
            Self::push(&mut out, *SUBORDINATORS.choose(&mut self.rng).unwrap(), Sconj);
            self.clause(&mut out);
        }
        if self.rng.gen_bool(0.01) {
            let x = self.lex.foreign.choose(&mut self.rng).unwrap().clone();
            Self::push(&mut out, x, X);
        }
        let end = match self.rng.gen_range(0..100) {
            0..=84 => ".",
            85..=91 => "!",
            _ => "?",
        };
        Self::push(&mut out, end, Punct);
        out
    }
}

/// Generates sentences until at least `cfg.min_words` words were produced.
pub fn generate(cfg: &SynthConfig) -> Vec<Sentence> {
    let lex = Lexicon::new(cfg);
    let mut gen = Generator {
        lex: &lex,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        topic: 0,
        topics: cfg.topics.max(1),
    };
    let mut words = 0;
    let mut out = Vec::new();
    while words < cfg.min_words {
        let s = gen.sentence();
        words += s.len();
        out.push(s);
    }
    out
}

/// Writes sentences as `FORM<TAB>UPOS` lines with blank separators.
pub fn write_tagged<W: Write>(mut out: W, sentences: &[Sentence]) -> std::io::Result<()> {
    for s in sentences {
        for w in s {
            writeln!(out, "{}\t{}", w.form, w.pos)?;
        }
        writeln!(out)?;
    }
    Ok(())
}
