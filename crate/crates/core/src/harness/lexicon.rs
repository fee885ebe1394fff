//! Word-level vocabulary for the toy model.
//!
//! Ids are assigned in a fixed order: `<eos>` at the configured id, then the
//! function words, then object names, then anonymous filler tokens. Image
//! "patches" are token ids too; an image's patches are drawn from its object
//! names and fillers with a generator seeded by the image id.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fnv1a;
use crate::error::{Error, Result};
use crate::model::{TokenId, TokenSequence};

pub const EOS_WORD: &str = "<eos>";
pub const SYSTEM_WORD: &str = "<sys>";

const FUNCTION_WORDS: [&str; 13] = [
    "yes",
    "no",
    SYSTEM_WORD,
    "is",
    "there",
    "a",
    "in",
    "the",
    "image",
    "describe",
    "?",
    "and",
    "with",
];

/// Object names, in id order. Only those that fit in the vocabulary are used.
pub const OBJECTS: [&str; 24] = [
    "person", "dog", "cat", "car", "bicycle", "bus", "train", "boat", "bird", "horse", "sheep",
    "cow", "chair", "table", "cup", "bottle", "umbrella", "kite", "frisbee", "clock", "laptop",
    "pizza", "banana", "bench",
];

/// Extra surface forms per object, for CHAIR synonym maps.
pub const SYNONYMS: [(&str, &[&str]); 6] = [
    ("person", &["man", "woman", "child", "people"]),
    ("dog", &["puppy"]),
    ("cat", &["kitten"]),
    ("bicycle", &["bike"]),
    ("table", &["dining table"]),
    ("cup", &["mug"]),
];

/// Smallest vocabulary holding `<eos>`, the function words and one object.
pub const MIN_VOCAB: usize = FUNCTION_WORDS.len() + 2;

#[derive(Debug, Clone)]
pub struct Lexicon {
    words: Vec<String>,
    ids: HashMap<String, TokenId>,
    eos: TokenId,
    objects: Vec<String>,
    fillers: Vec<TokenId>,
}

impl Lexicon {
    pub fn new(vocab_size: usize, eos_id: TokenId) -> Result<Self> {
        if vocab_size < MIN_VOCAB {
            return Err(Error::Config(format!(
                "vocab_size {vocab_size} is too small for the toy lexicon (need >= {MIN_VOCAB})"
            )));
        }
        if eos_id as usize >= vocab_size {
            return Err(Error::Config(format!("eos_id {eos_id} outside vocabulary")));
        }
        let mut named = FUNCTION_WORDS
            .iter()
            .chain(OBJECTS.iter())
            .map(|w| w.to_string());
        let mut words = Vec::with_capacity(vocab_size);
        let mut fillers = Vec::new();
        for id in 0..vocab_size {
            if id == eos_id as usize {
                words.push(EOS_WORD.to_string());
            } else if let Some(w) = named.next() {
                words.push(w);
            } else {
                words.push(format!("<w{id}>"));
                fillers.push(id as TokenId);
            }
        }
        let ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect::<HashMap<_, _>>();
        let objects = OBJECTS
            .iter()
            .filter(|o| ids.contains_key(**o))
            .map(|o| o.to_string())
            .collect();
        Ok(Self {
            words,
            ids,
            eos: eos_id,
            objects,
            fillers,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    /// Object names representable in this vocabulary.
    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// Lowercased words and `?`; unknown words are dropped.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let lower = text.to_lowercase();
        let mut out = Vec::new();
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut Vec<TokenId>| {
            if let Some(id) = self.id(word) {
                out.push(id);
            }
            word.clear();
        };
        for c in lower.chars() {
            if c.is_alphanumeric() {
                word.push(c);
            } else {
                flush(&mut word, &mut out);
                if c == '?' {
                    out.push(self.ids["?"]);
                }
            }
        }
        flush(&mut word, &mut out);
        out
    }

    /// Space-joined words up to (not including) the first `<eos>`.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .take_while(|&&t| t != self.eos)
            .filter_map(|&t| self.word(t))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn system_prompt(&self) -> Vec<TokenId> {
        vec![self.ids[SYSTEM_WORD], self.ids["the"]]
    }

    /// `n` patch tokens for an image: each patch shows one of the image's
    /// known objects with probability 1/2, otherwise a filler.
    pub fn image_tokens(&self, image_id: &str, objects: &[String], n: usize) -> Vec<TokenId> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(image_id));
        let shown: Vec<TokenId> = objects.iter().filter_map(|o| self.id(o)).collect();
        let background: Vec<TokenId> = if self.fillers.is_empty() {
            (0..self.vocab_size() as TokenId)
                .filter(|&t| t != self.eos)
                .collect()
        } else {
            self.fillers.clone()
        };
        (0..n)
            .map(|_| {
                if !shown.is_empty() && rng.random::<bool>() {
                    shown[rng.random_range(0..shown.len())]
                } else {
                    background[rng.random_range(0..background.len())]
                }
            })
            .collect()
    }

    pub fn prompt(
        &self,
        image_id: &str,
        objects: &[String],
        question: &str,
        n: usize,
    ) -> Result<TokenSequence> {
        TokenSequence::from_prompt(
            &self.system_prompt(),
            &self.image_tokens(image_id, objects, n),
            &self.encode(question),
        )
    }
}
