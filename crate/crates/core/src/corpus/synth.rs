//! Synthetic entity/attribute fact corpus with matching QA pairs.
//!
//! Every entity gets one document holding a few `The <attribute> of <entity>
//! is <value>.` facts, shuffled together with distractor sentences that name
//! other entities and attributes without a value. All invented words share
//! one consonant-vowel pattern and length, so no invented word is a substring
//! of another and each value occurs in exactly one document.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::chunk::Document;
use super::qa::QaExample;

pub const ATTRIBUTES: [&str; 10] = [
    "color", "city", "river", "teacher", "pet", "song", "ship", "garden", "mountain", "festival",
];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

const DISTRACTORS: [&str; 3] = [
    "Nobody recalls the {attr} of {ent}.",
    "Stories about {ent} rarely mention its {attr}.",
    "The {attr} of {ent} was once debated.",
];

#[derive(Debug, Clone, Copy)]
pub struct SynthOptions {
    pub min_facts: usize,
    pub max_facts: usize,
    pub min_distractors: usize,
    pub max_distractors: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            min_facts: 3,
            max_facts: 6,
            min_distractors: 1,
            max_distractors: 2,
        }
    }
}

/// One generated fact, kept for analysis and tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub doc_id: String,
    pub entity: String,
    pub attribute: &'static str,
    pub value: String,
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub documents: Vec<Document>,
    pub questions: Vec<QaExample>,
    pub facts: Vec<Fact>,
}

struct WordGen {
    rng: ChaCha8Rng,
    seen: HashSet<String>,
}

impl WordGen {
    fn next(&mut self) -> String {
        loop {
            let mut w = String::with_capacity(6);
            for i in 0..3 {
                let c = *CONSONANTS.choose(&mut self.rng).unwrap() as char;
                let v = *VOWELS.choose(&mut self.rng).unwrap() as char;
                w.push(if i == 0 { c.to_ascii_uppercase() } else { c });
                w.push(v);
            }
            if self.seen.insert(w.to_lowercase()) {
                return w;
            }
        }
    }
}

pub fn question_for(attribute: &str, entity: &str) -> String {
    format!("What is the {attribute} of {entity}?")
}

pub fn gen_synthetic(n_entities: usize, n_questions: usize, seed: u64) -> SyntheticSet {
    gen_synthetic_with(n_entities, n_questions, seed, SynthOptions::default())
}

pub fn gen_synthetic_with(
    n_entities: usize,
    n_questions: usize,
    seed: u64,
    opts: SynthOptions,
) -> SyntheticSet {
    assert!(n_entities >= 1, "need at least one entity");
    assert!(opts.min_facts >= 1 && opts.min_facts <= opts.max_facts);
    assert!(opts.max_facts <= ATTRIBUTES.len());
    assert!(opts.min_distractors <= opts.max_distractors);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = WordGen {
        rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_3a11),
        seen: HashSet::new(),
    };
    let entities: Vec<String> = (0..n_entities).map(|_| words.next()).collect();

    let mut documents = Vec::with_capacity(n_entities);
    let mut facts = Vec::new();
    for (e, entity) in entities.iter().enumerate() {
        let doc_id = format!("e{e:05}");
        let n_facts = rng.random_range(opts.min_facts..=opts.max_facts);
        let mut attrs: Vec<&'static str> = ATTRIBUTES.to_vec();
        attrs.shuffle(&mut rng);
        let mut sentences = Vec::new();
        for &attribute in &attrs[..n_facts] {
            let value = words.next();
            sentences.push(format!("The {attribute} of {entity} is {value}."));
            facts.push(Fact {
                doc_id: doc_id.clone(),
                entity: entity.clone(),
                attribute,
                value,
            });
        }
        let n_distract = rng.random_range(opts.min_distractors..=opts.max_distractors);
        for _ in 0..n_distract {
            let other = entities.choose(&mut rng).unwrap();
            let attr = ATTRIBUTES.choose(&mut rng).unwrap();
            let tpl = DISTRACTORS.choose(&mut rng).unwrap();
            sentences.push(tpl.replace("{attr}", attr).replace("{ent}", other));
        }
        sentences.shuffle(&mut rng);
        documents.push(Document {
            id: doc_id,
            text: sentences.join(" "),
        });
    }

    // Grouped by entity, entities in random order: a tail split holds out
    // whole entities (bar the one at the cut), so held-out answers cannot be
    // memorised from sibling questions.
    let mut by_entity: Vec<Vec<usize>> = vec![Vec::new(); n_entities];
    for (i, f) in facts.iter().enumerate() {
        let e: usize = f.doc_id[1..].parse().unwrap();
        by_entity[e].push(i);
    }
    by_entity.shuffle(&mut rng);
    let order: Vec<usize> = by_entity.into_iter().flatten().collect();
    let questions = order
        .iter()
        .take(n_questions)
        .enumerate()
        .map(|(i, &f)| QaExample {
            id: format!("q{i:05}"),
            question: question_for(facts[f].attribute, &facts[f].entity),
            answers: vec![facts[f].value.clone()],
        })
        .collect();

    SyntheticSet {
        documents,
        questions,
        facts,
    }
}
