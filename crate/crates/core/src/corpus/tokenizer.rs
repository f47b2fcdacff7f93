//! Byte-level BPE tokenizer with a reserved block of special ids.
//!
//! Id layout: `[0, RESERVED)` specials, `[RESERVED, RESERVED + 256)` raw bytes,
//! then learned merges in rank order. Merges never cross pre-token boundaries,
//! so tokenizing a concatenation at a word boundary equals concatenating the
//! tokenizations.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Number of ids reserved for special tokens.
pub const RESERVED: u32 = 16;

/// Largest number of documents sampled to learn merges.
const MAX_TRAINING_DOCS: usize = 20_000;

/// Reserved special-token ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Specials;

impl Specials {
    pub const PAD: TokenId = 0;
    pub const BOS: TokenId = 1;
    pub const EOS: TokenId = 2;
    pub const AE: TokenId = 3;
    pub const CTX: TokenId = 4;
    pub const SEP: TokenId = 5;
    pub const INST_BEGIN: TokenId = 6;
    pub const INST_END: TokenId = 7;

    pub const ALL: [(TokenId, &'static str); 8] = [
        (Self::PAD, "<pad>"),
        (Self::BOS, "<s>"),
        (Self::EOS, "</s>"),
        (Self::AE, "<AE>"),
        (Self::CTX, "<CTX>"),
        (Self::SEP, "[SEP]"),
        (Self::INST_BEGIN, "[INST]"),
        (Self::INST_END, "[/INST]"),
    ];

    pub fn name(id: TokenId) -> Option<&'static str> {
        Self::ALL.iter().find(|(i, _)| *i == id).map(|(_, n)| *n)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Tokenizer {
    /// Merge rules in rank order; merge `i` produces id `RESERVED + 256 + i`.
    merges: Vec<(TokenId, TokenId)>,
    #[serde(skip)]
    ranks: HashMap<(TokenId, TokenId), u32>,
    #[serde(skip)]
    pieces: Vec<Vec<u8>>,
}

/// Splits text into pre-tokens: an optional single leading space followed by
/// a run of alphanumerics, or a run of other non-space characters; remaining
/// whitespace forms its own pre-tokens. Concatenating the pieces gives back
/// the input.
pub fn pretokenize(text: &str) -> Vec<&str> {
    #[derive(PartialEq, Clone, Copy)]
    enum Class {
        Alnum,
        Punct,
        Space,
    }
    fn class(c: char) -> Class {
        if c.is_alphanumeric() {
            Class::Alnum
        } else if c.is_whitespace() {
            Class::Space
        } else {
            Class::Punct
        }
    }

    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let start = chars[i].0;
        let (_, c) = chars[i];
        let mut j = i;
        let cls = if c == ' ' && i + 1 < chars.len() && class(chars[i + 1].1) != Class::Space {
            j += 1;
            class(chars[j].1)
        } else {
            class(c)
        };
        if cls == Class::Space {
            // whitespace run, leaving a trailing single space for the next word
            while j < chars.len() && class(chars[j].1) == Class::Space {
                if chars[j].1 == ' '
                    && j + 1 < chars.len()
                    && class(chars[j + 1].1) != Class::Space
                    && j > i
                {
                    break;
                }
                j += 1;
            }
        } else {
            while j < chars.len() && class(chars[j].1) == cls {
                j += 1;
            }
        }
        let end = if j < chars.len() { chars[j].0 } else { text.len() };
        out.push(&text[start..end]);
        i = j;
    }
    out
}

/// Lowercased alphanumeric words, the segmentation used for lexical retrieval.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

impl Tokenizer {
    /// Learns byte-pair merges from `corpus` until the vocabulary reaches
    /// `vocab_size` or no pair occurs at least twice.
    pub fn train<S: AsRef<str>>(corpus: &[S], vocab_size: usize, seed: u64) -> Result<Self> {
        let min = RESERVED as usize + 256;
        if corpus.is_empty() {
            return Err(Error::Config("tokenizer corpus is empty".into()));
        }
        if vocab_size < min {
            return Err(Error::Config(format!(
                "vocab_size {vocab_size} below the reserved minimum {min}"
            )));
        }

        let mut docs: Vec<&str> = corpus.iter().map(|s| s.as_ref()).collect();
        if docs.len() > MAX_TRAINING_DOCS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            docs.shuffle(&mut rng);
            docs.truncate(MAX_TRAINING_DOCS);
        }

        let mut freq: HashMap<&str, usize> = HashMap::new();
        for doc in &docs {
            for w in pretokenize(doc) {
                *freq.entry(w).or_default() += 1;
            }
        }
        // Sorted for a deterministic iteration order.
        let mut word_list: Vec<(&str, usize)> = freq.into_iter().collect();
        word_list.sort_unstable();
        let mut seqs: Vec<(Vec<TokenId>, usize)> = word_list
            .iter()
            .map(|(w, c)| (w.bytes().map(|b| RESERVED + b as u32).collect(), *c))
            .collect();

        let mut merges = Vec::new();
        let target = vocab_size - min;
        while merges.len() < target {
            let mut counts: HashMap<(TokenId, TokenId), usize> = HashMap::new();
            for (seq, c) in &seqs {
                for p in seq.windows(2) {
                    *counts.entry((p[0], p[1])).or_default() += c;
                }
            }
            // Highest count; ties go to the smallest pair.
            let best = counts
                .into_iter()
                .filter(|&(_, c)| c >= 2)
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
            let Some((pair, _)) = best else { break };
            let new_id = min as TokenId + merges.len() as TokenId;
            merges.push(pair);
            for (seq, _) in &mut seqs {
                merge_in_place(seq, pair, new_id);
            }
        }
        Ok(Self::from_merges(merges))
    }

    pub fn from_merges(merges: Vec<(TokenId, TokenId)>) -> Self {
        let mut t = Self {
            merges,
            ranks: HashMap::new(),
            pieces: Vec::new(),
        };
        t.rebuild();
        t
    }

    fn rebuild(&mut self) {
        let base = RESERVED + 256;
        self.ranks = self
            .merges
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, i as u32))
            .collect();
        let mut pieces: Vec<Vec<u8>> = (0..RESERVED).map(|_| Vec::new()).collect();
        pieces.extend((0..=255u8).map(|b| vec![b]));
        for &(a, b) in &self.merges {
            let mut p = pieces[a as usize].clone();
            p.extend_from_slice(&pieces[b as usize]);
            pieces.push(p);
        }
        debug_assert_eq!(pieces.len(), base as usize + self.merges.len());
        self.pieces = pieces;
    }

    pub fn vocab_size(&self) -> usize {
        RESERVED as usize + 256 + self.merges.len()
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn is_special(id: TokenId) -> bool {
        id < RESERVED
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for w in pretokenize(text) {
            let mut seq: Vec<TokenId> = w.bytes().map(|b| RESERVED + b as u32).collect();
            loop {
                let best = seq
                    .windows(2)
                    .filter_map(|p| self.ranks.get(&(p[0], p[1])).copied())
                    .min();
                let Some(rank) = best else { break };
                let pair = self.merges[rank as usize];
                merge_in_place(&mut seq, pair, RESERVED + 256 + rank);
            }
            out.extend(seq);
        }
        out
    }

    /// Decodes ids back to text; special ids are skipped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            if let Some(p) = self.pieces.get(id as usize) {
                bytes.extend_from_slice(p);
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    /// Human-readable piece for an id (specials by name).
    pub fn piece(&self, id: TokenId) -> String {
        match Specials::name(id) {
            Some(n) => n.to_string(),
            None => self.decode(&[id]),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut t: Self = serde_json::from_str(s)?;
        let limit = RESERVED + 256;
        for (i, &(a, b)) in t.merges.iter().enumerate() {
            let next = limit + i as u32;
            if a < RESERVED || b < RESERVED || a >= next || b >= next {
                return Err(Error::Invalid(format!("merge {i} references an invalid id")));
            }
        }
        t.rebuild();
        Ok(t)
    }
}

fn merge_in_place(seq: &mut Vec<TokenId>, pair: (TokenId, TokenId), new_id: TokenId) {
    if seq.len() < 2 {
        return;
    }
    let mut w = 0;
    let mut r = 0;
    while r < seq.len() {
        if r + 1 < seq.len() && seq[r] == pair.0 && seq[r + 1] == pair.1 {
            seq[w] = new_id;
            r += 2;
        } else {
            seq[w] = seq[r];
            r += 1;
        }
        w += 1;
    }
    seq.truncate(w);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> Tokenizer {
        let corpus = ["The color of Zorbax is Velmora. The city of Quillon is Tarvek."; 4];
        Tokenizer::train(&corpus, 400, 0).unwrap()
    }

    #[test]
    fn repeated_ab_roundtrips() {
        let doc = "ab".repeat(100);
        let t = Tokenizer::train(&[doc.as_str()], 300, 0).unwrap();
        assert_eq!(t.decode(&t.encode("abab")), "abab");
        assert!(t.encode("abab").len() < 4);
    }

    #[test]
    fn empty_string_is_empty() {
        assert!(small().encode("").is_empty());
    }

    #[test]
    fn vocab_below_minimum_is_rejected() {
        assert!(matches!(Tokenizer::train(&["abc"], 10, 0), Err(Error::Config(_))));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(Tokenizer::train(&empty, 4096, 0), Err(Error::Config(_))));
    }

    #[test]
    fn training_is_deterministic() {
        assert_eq!(small().merges(), small().merges());
    }

    #[test]
    fn specials_are_distinct_and_reserved() {
        let mut ids: Vec<_> = Specials::ALL.iter().map(|(i, _)| *i).collect();
        ids.dedup();
        assert_eq!(ids.len(), Specials::ALL.len());
        assert!(ids.iter().all(|&i| i < RESERVED));
    }

    #[test]
    fn pretokenize_keeps_leading_space() {
        assert_eq!(
            pretokenize("Question: who?\nAnswer:"),
            vec!["Question", ":", " who", "?", "\n", "Answer", ":"]
        );
        assert_eq!(pretokenize("a  b"), vec!["a", " ", " b"]);
    }

    #[test]
    fn json_roundtrip() {
        let t = small();
        let back = Tokenizer::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back.encode("The color of Zorbax"), t.encode("The color of Zorbax"));
    }

    #[test]
    fn words_lowercase_and_split_punctuation() {
        assert_eq!(words("The color, of Zorbax!"), vec!["the", "color", "of", "zorbax"]);
    }

    proptest! {
        #[test]
        fn roundtrip_identity(s in "\\PC{0,64}") {
            let t = small();
            let ids = t.encode(&s);
            prop_assert!(ids.iter().all(|&i| !Tokenizer::is_special(i)));
            prop_assert_eq!(t.decode(&ids), s);
        }

        #[test]
        fn pretokens_concatenate_to_input(s in "[ a-z.\\n]{0,40}") {
            prop_assert_eq!(pretokenize(&s).concat(), s);
        }
    }
}
