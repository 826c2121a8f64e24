//! Seeded synthetic corpus generator.
//!
//! Documents are built from a fixed template grammar. Each sentence carries
//! one or two labeled scopes; a scope of class c is announced by a class cue
//! token (e.g. "no" before an Absent scope), starts with a length-coding
//! token `sev<L>`, and continues with L-1 content words drawn from a
//! class-specific vocabulary. Cue and content vocabularies are disjoint from
//! the filler vocabulary, so both the class and the exact extent of every
//! scope are recoverable from a small window around its start. That keeps
//! the corpus learnable by a model whose receptive field is much shorter
//! than a document.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;

use super::brat::{serialize_brat, Document};
use super::embed::write_embeddings;
use super::tokenize::Token;
use crate::nn::init::{derive_seed, rng_from_seed};
use crate::span::{AssertionClass, LabeledSpan, TokenSpan};

const FILLER: &[&str] = &[
    "the", "patient", "was", "seen", "in", "clinic", "today", "and", "exam", "noted", "on",
    "review", "chart", "states", "prior", "visit", "record", "also",
];

/// Cue token preceding a scope of class 1..=6, in class order.
const CUES: &[&str] = &["shows", "no", "if", "would", "possibly", "family"];

const CONTENT_WORDS_PER_CLASS: usize = 8;
const MIN_DOC_TOKENS: usize = 10;
const MAX_DOC_TOKENS: usize = 60;
/// lead(2) + cue(1) + scope(1) + trail(1) + period(1)
const MIN_SENTENCE_TOKENS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_documents: usize,
    pub seed: u64,
    /// Relative draw weights for classes 1..=6; need not be normalized.
    pub class_mix: [f64; 6],
    pub embed_dim: usize,
    pub max_scope_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_documents: 500,
            seed: 42,
            class_mix: [1.0; 6],
            embed_dim: 50,
            max_scope_len: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub documents: Vec<Document>,
    /// Source text of each document, parallel to `documents`.
    pub texts: Vec<String>,
    /// Embedding file covering the full generator vocabulary.
    pub embedding_file: String,
}

impl SynthCorpus {
    /// Write `<id>.txt`, `<id>.ann`, and `embeddings.vec` into `dir`. The
    /// embedding file deliberately avoids the `.txt` extension so corpus
    /// loaders do not mistake it for a document.
    pub fn write_to_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (doc, text) in self.documents.iter().zip(&self.texts) {
            fs::write(dir.join(format!("{}.txt", doc.id)), text)?;
            fs::write(dir.join(format!("{}.ann", doc.id)), serialize_brat(doc, text))?;
        }
        fs::write(dir.join("embeddings.vec"), &self.embedding_file)?;
        Ok(())
    }
}

fn content_word(class: AssertionClass, j: usize) -> String {
    format!("c{}w{}", class.id(), j)
}

fn sev_token(len: usize) -> String {
    format!("sev{len}")
}

fn draw_class(rng: &mut impl Rng, mix: &[f64; 6]) -> AssertionClass {
    let total: f64 = mix.iter().sum();
    assert!(total > 0.0, "class_mix must have positive mass");
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in mix.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return AssertionClass((i + 1) as u8);
        }
    }
    AssertionClass(6)
}

/// Mostly short scopes with a tail out to `max_len`.
fn draw_scope_len(rng: &mut impl Rng, max_len: usize) -> usize {
    let r: f64 = rng.gen();
    let l = if r < 0.7 {
        rng.gen_range(1..=4)
    } else if r < 0.9 {
        rng.gen_range(5..=9)
    } else {
        rng.gen_range(10..=20)
    };
    l.clamp(1, max_len)
}

fn push_fillers(rng: &mut impl Rng, tokens: &mut Vec<String>, count: usize) {
    for _ in 0..count {
        tokens.push(FILLER[rng.gen_range(0..FILLER.len())].to_string());
    }
}

/// Append one sentence of at most `budget` tokens (`budget` must allow the
/// minimal sentence) and record its gold scopes.
fn push_sentence(
    rng: &mut impl Rng,
    cfg: &SynthConfig,
    tokens: &mut Vec<String>,
    gold: &mut Vec<LabeledSpan>,
    budget: usize,
) {
    assert!(budget >= MIN_SENTENCE_TOKENS);
    let lead_max = 6.min(budget - 4);
    let lead = rng.gen_range(2..=lead_max);
    push_fillers(rng, tokens, lead);
    // Reserve one trailing filler and the period.
    let mut remaining = budget - lead - 2;

    let want_scopes = if rng.gen_bool(0.5) { 2 } else { 1 };
    for k in 0..want_scopes {
        if k > 0 {
            if remaining < 3 {
                break;
            }
            let between = rng.gen_range(1..=3.min(remaining - 2));
            push_fillers(rng, tokens, between);
            remaining -= between;
        }
        let class = draw_class(rng, &cfg.class_mix);
        let max_l = cfg.max_scope_len.min(remaining - 1);
        let l = draw_scope_len(rng, cfg.max_scope_len).min(max_l);
        tokens.push(CUES[(class.id() - 1) as usize].to_string());
        let start = tokens.len();
        tokens.push(sev_token(l));
        for _ in 1..l {
            tokens.push(content_word(class, rng.gen_range(0..CONTENT_WORDS_PER_CLASS)));
        }
        gold.push(
            LabeledSpan::new(TokenSpan::new(start, start + l - 1).unwrap(), class)
                .expect("generator classes are never background"),
        );
        remaining -= 1 + l;
    }

    let trail = rng.gen_range(1..=4.min(remaining + 1));
    push_fillers(rng, tokens, trail);
    tokens.push(".".to_string());
}

fn build_document(id: String, token_strings: Vec<String>, gold: Vec<LabeledSpan>) -> (Document, String) {
    let mut text = String::new();
    let mut tokens = Vec::with_capacity(token_strings.len());
    for (i, t) in token_strings.iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        let start = text.len();
        text.push_str(t);
        tokens.push(Token {
            text: t.clone(),
            start,
            end: text.len(),
        });
    }
    (Document { id, tokens, gold }, text)
}

/// Every token the grammar can emit, plus "unk".
fn full_vocabulary(cfg: &SynthConfig) -> BTreeSet<String> {
    let mut vocab: BTreeSet<String> = BTreeSet::new();
    vocab.extend(FILLER.iter().map(|s| s.to_string()));
    vocab.extend(CUES.iter().map(|s| s.to_string()));
    for c in 1..=6u8 {
        for j in 0..CONTENT_WORDS_PER_CLASS {
            vocab.insert(content_word(AssertionClass(c), j));
        }
    }
    for l in 1..=cfg.max_scope_len {
        vocab.insert(sev_token(l));
    }
    vocab.insert(".".to_string());
    vocab.insert("unk".to_string());
    vocab
}

pub fn generate_corpus(cfg: &SynthConfig) -> SynthCorpus {
    assert!(cfg.n_documents >= 1, "need at least one document");
    assert!(cfg.max_scope_len >= 1);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0));
    let mut documents = Vec::with_capacity(cfg.n_documents);
    let mut texts = Vec::with_capacity(cfg.n_documents);
    for i in 0..cfg.n_documents {
        let u: f64 = rng.gen();
        let target = (MIN_DOC_TOKENS + (u * u * 51.0) as usize).min(MAX_DOC_TOKENS);
        let mut tokens = Vec::new();
        let mut gold = Vec::new();
        while tokens.len() < target && MAX_DOC_TOKENS - tokens.len() >= MIN_SENTENCE_TOKENS {
            let budget = MAX_DOC_TOKENS - tokens.len();
            push_sentence(&mut rng, cfg, &mut tokens, &mut gold, budget);
        }
        let (doc, text) = build_document(format!("synth-{i:05}"), tokens, gold);
        documents.push(doc);
        texts.push(text);
    }

    let mut embed_rng = rng_from_seed(derive_seed(cfg.seed, 1));
    let words: Vec<(String, Vec<f64>)> = full_vocabulary(cfg)
        .into_iter()
        .map(|w| {
            let vec: Vec<f64> = (0..cfg.embed_dim)
                .map(|_| embed_rng.gen_range(-1.0..1.0))
                .collect();
            (w, vec)
        })
        .collect();
    let embedding_file = write_embeddings(&words, cfg.embed_dim);

    SynthCorpus {
        documents,
        texts,
        embedding_file,
    }
}
