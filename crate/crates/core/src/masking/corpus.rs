//! Corpus files and a synthetic corpus generator.
//!
//! A corpus file is UTF-8 text with one document per line. Documents are
//! tokenized and concatenated into a single id stream before packing.

use std::fs;
use std::path::Path;

use rand::Rng;

use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Tokenized corpus: its vocabulary and the concatenated id stream.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocab,
    pub stream: Vec<usize>,
}

impl Corpus {
    pub fn from_lines<S: AsRef<str>>(lines: &[S], vocab: Vocab) -> Result<Self> {
        let stream: Vec<usize> = lines.iter().flat_map(|l| vocab.encode(l.as_ref())).collect();
        if stream.is_empty() {
            return Err(Error::Data("corpus is empty".into()));
        }
        Ok(Self { vocab, stream })
    }

    /// Builds the vocabulary from the lines themselves.
    pub fn build<S: AsRef<str>>(lines: &[S], max_vocab: usize) -> Result<Self> {
        let vocab = Vocab::build(lines.iter().map(|l| l.as_ref()), max_vocab)?;
        Self::from_lines(lines, vocab)
    }
}

pub fn read_corpus_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read corpus {}: {e}", path.display())))?;
    let lines: Vec<String> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    if lines.is_empty() {
        return Err(Error::Data(format!("corpus {} has no documents", path.display())));
    }
    Ok(lines)
}

pub fn write_corpus_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Deterministic pronounceable pseudo-word for index `i` within a class.
fn pseudo_word(class: &str, i: usize) -> String {
    let a = ONSETS[i % ONSETS.len()];
    let b = VOWELS[(i / ONSETS.len()) % VOWELS.len()];
    let c = ONSETS[(i * 7 + 3) % ONSETS.len()];
    let d = VOWELS[(i * 3 + 1) % VOWELS.len()];
    let block = ONSETS.len() * VOWELS.len();
    if i < block {
        format!("{a}{b}{c}{d}{class}")
    } else {
        format!("{a}{b}{c}{d}{}{class}", ONSETS[(i / block) % ONSETS.len()])
    }
}

struct Lexicon {
    nouns: Vec<String>,
    adjectives: Vec<String>,
    verbs: Vec<String>,
    adverbs: Vec<String>,
    names: Vec<String>,
}

const PREPOSITIONS: [&str; 6] = ["on", "under", "near", "with", "behind", "over"];

impl Lexicon {
    fn new() -> Self {
        let class = |tag: &str, n: usize| (0..n).map(|i| pseudo_word(tag, i)).collect();
        Self {
            nouns: class("n", 120),
            adjectives: class("j", 48),
            verbs: class("v", 60),
            adverbs: class("ly", 16),
            names: class("s", 24),
        }
    }
}

/// Skewed index in `0..n`: small indices are more frequent.
fn zipfish<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    let u: f64 = rng.random();
    ((u * u) * n as f64) as usize % n
}

/// Generates `lines` documents of templated sentences with strong local
/// structure: every noun prefers two adjectives, every verb one preposition.
/// Deterministic per seed.
pub fn synthetic_corpus(lines: usize, seed: u64) -> Vec<String> {
    let lex = Lexicon::new();
    let mut rng = stream_rng(seed, Stream::Corpus, 0);
    let adj_for = |n: usize, pick: bool| &lex.adjectives[(n * 5 + usize::from(pick) * 11) % lex.adjectives.len()];
    let prep_for = |v: usize| PREPOSITIONS[v % PREPOSITIONS.len()];
    let mut out = Vec::with_capacity(lines);
    for _ in 0..lines {
        let sentences = rng.random_range(3..8);
        let mut words: Vec<&str> = Vec::new();
        for _ in 0..sentences {
            let n1 = zipfish(&mut rng, lex.nouns.len());
            let n2 = zipfish(&mut rng, lex.nouns.len());
            let v = zipfish(&mut rng, lex.verbs.len());
            let a1 = adj_for(n1, rng.random());
            let a2 = adj_for(n2, rng.random());
            match rng.random_range(0..4) {
                0 => words.extend(["the", a1, &lex.nouns[n1], &lex.verbs[v], "the", a2, &lex.nouns[n2], "."]),
                1 => words.extend(["a", &lex.nouns[n1], &lex.verbs[v], prep_for(v), "the", &lex.nouns[n2], "."]),
                2 => {
                    let s = zipfish(&mut rng, lex.names.len());
                    let adv = &lex.adverbs[v % lex.adverbs.len()];
                    words.extend([&lex.names[s], &lex.verbs[v], "the", a1, &lex.nouns[n1], adv, "."]);
                }
                _ => words.extend(["the", &lex.nouns[n1], "is", a1, "and", a2, "."]),
            }
        }
        out.push(words.join(" "));
    }
    out
}
