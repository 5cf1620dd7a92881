//! Seeded toy reading-comprehension corpus: short paragraphs of
//! "who keeps what where" facts with questions about them.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::text::{Answer, DataInstance};

const NAMES: &[&str] = &[
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy", "mallory", "oscar",
];
const COLORS: &[&str] = &["red", "blue", "green", "yellow", "black", "white", "silver", "golden"];
const THINGS: &[&str] = &["box", "key", "lamp", "book", "coin", "map", "ring", "cup"];
const PLACES: &[&str] = &["kitchen", "garden", "attic", "cellar", "library", "garage", "harbor", "tower"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQa {
    pub qid: String,
    pub question: String,
    pub answer: Answer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParagraph {
    pub context: String,
    pub qas: Vec<SyntheticQa>,
}

/// `n_questions` questions spread over paragraphs of two to three facts.
pub fn paragraphs(n_questions: usize, seed: u64) -> Vec<SyntheticParagraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut made = 0;
    while made < n_questions {
        let n_facts = rng.random_range(2..=3);
        let mut names = NAMES.to_vec();
        names.shuffle(&mut rng);
        let mut context = String::new();
        let mut facts = Vec::new();
        for name in names.into_iter().take(n_facts) {
            let color = *COLORS.choose(&mut rng).expect("non-empty");
            let thing = *THINGS.choose(&mut rng).expect("non-empty");
            let place = *PLACES.choose(&mut rng).expect("non-empty");
            if !context.is_empty() {
                context.push(' ');
            }
            let base = context.chars().count();
            let sentence = format!("{name} keeps a {color} {thing} in the {place}.");
            let item_at = base + format!("{name} keeps a ").len();
            let place_at = base + format!("{name} keeps a {color} {thing} in the ").len();
            context.push_str(&sentence);
            facts.push((name, thing, format!("{color} {thing}"), item_at, place, place_at));
        }
        let mut qas = Vec::new();
        for (name, thing, item, item_at, place, place_at) in facts {
            if made == n_questions {
                break;
            }
            let qid = format!("syn-{made:04}");
            let qa = if rng.random_bool(0.5) {
                SyntheticQa {
                    qid,
                    question: format!("What does {name} keep?"),
                    answer: Answer {
                        text: item,
                        answer_start: item_at,
                    },
                }
            } else {
                SyntheticQa {
                    qid,
                    question: format!("Where does {name} keep the {thing}?"),
                    answer: Answer {
                        text: String::from(place),
                        answer_start: place_at,
                    },
                }
            };
            qas.push(qa);
            made += 1;
        }
        out.push(SyntheticParagraph { context, qas });
    }
    out
}

pub fn instances(n_questions: usize, seed: u64) -> Result<Vec<DataInstance>> {
    let mut out = Vec::with_capacity(n_questions);
    for p in paragraphs(n_questions, seed) {
        for qa in p.qas {
            out.push(DataInstance::build(
                qa.qid,
                p.context.clone(),
                qa.question,
                core::slice::from_ref(&qa.answer),
                false,
            )?);
        }
    }
    Ok(out)
}
