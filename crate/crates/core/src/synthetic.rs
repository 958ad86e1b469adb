//! A small deterministic grammar for end-to-end learning checks.
//!
//! Sentences follow `NP VERB NP [PP] [ADV]` with `NP = DET [ADJ] NOUN` and
//! `PP = ADP NP`. Determiners and adjectives attach to their noun, the
//! subject and object nouns and the adverb to the verb, a preposition to
//! its noun, and that noun to the verb. Labels: `root`, `subj`, `obj`,
//! `mod`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conllu::{Sentence, Token};

const DETS: [&str; 4] = ["the", "a", "every", "some"];
const ADJS: [&str; 6] = ["big", "small", "red", "old", "quiet", "happy"];
const NOUNS: [&str; 12] = [
    "dog", "cat", "bird", "child", "farmer", "teacher", "river", "house", "garden", "key", "book", "apple",
];
const VERBS: [&str; 8] = ["sees", "likes", "finds", "takes", "wants", "keeps", "helps", "follows"];
const ADVS: [&str; 4] = ["today", "quickly", "often", "again"];
const ADPS: [&str; 3] = ["near", "with", "under"];

fn pick<'a>(rng: &mut impl Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("non-empty word list")
}

struct Builder {
    tokens: Vec<Token>,
}

impl Builder {
    fn push(&mut self, form: &str, upos: &str) -> usize {
        self.tokens.push(Token::new(form, upos, 0, "root"));
        self.tokens.len()
    }

    fn attach(&mut self, dep: usize, head: usize, label: &str) {
        let t = &mut self.tokens[dep - 1];
        t.head = head;
        t.deprel = label.to_string();
    }

    /// Adds a noun phrase and returns the position of its noun.
    fn noun_phrase(&mut self, rng: &mut impl Rng) -> usize {
        let det = self.push(pick(rng, &DETS), "DET");
        let adj = rng.gen_bool(0.5).then(|| self.push(pick(rng, &ADJS), "ADJ"));
        let noun = self.push(pick(rng, &NOUNS), "NOUN");
        self.attach(det, noun, "mod");
        if let Some(a) = adj {
            self.attach(a, noun, "mod");
        }
        noun
    }
}

pub fn sentence(rng: &mut impl Rng) -> Sentence {
    let mut b = Builder { tokens: Vec::new() };
    let subj = b.noun_phrase(rng);
    let verb = b.push(pick(rng, &VERBS), "VERB");
    let obj = b.noun_phrase(rng);
    b.attach(subj, verb, "subj");
    b.attach(obj, verb, "obj");
    if rng.gen_bool(0.5) {
        let adp = b.push(pick(rng, &ADPS), "ADP");
        let noun = b.noun_phrase(rng);
        b.attach(adp, noun, "mod");
        b.attach(noun, verb, "mod");
    }
    if rng.gen_bool(0.5) {
        let adv = b.push(pick(rng, &ADVS), "ADV");
        b.attach(adv, verb, "mod");
    }
    b.attach(verb, 0, "root");
    Sentence::new(b.tokens)
}

/// `count` sentences from a seeded generator.
pub fn corpus(count: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sentence(&mut rng)).collect()
}

/// Words the grammar can produce.
pub fn lexicon_size() -> usize {
    DETS.len() + ADJS.len() + NOUNS.len() + VERBS.len() + ADVS.len() + ADPS.len()
}
