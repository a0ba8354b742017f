//! Generated captions with injected single-word errors, plus the oracle
//! critic and reviser scripts that know each injection.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{MockReply, MockScript};
use crate::corpus::CaptionRecord;
use crate::prompt::claim_prefix;

const COLORS: &[&str] = &["red", "blue", "green", "yellow", "white", "black", "orange", "purple"];
const NOUNS: &[&str] = &["dog", "cat", "bicycle", "car", "chair", "umbrella", "lamp", "kite"];
const COUNTS: &[&str] = &["two", "three", "four", "five", "six"];
const POSITIONS: &[&str] = &["left", "right", "top", "bottom"];

const TEMPLATES: &[&str] = &[
    "A {color} {noun} stands near the {position} edge of the image.",
    "There are {count} {color} {noun}s on the ground.",
    "The background shows a {color} wall behind the {noun}.",
    "On the {position} side there is a small {noun}.",
    "The {noun} appears to be {color} with {count} visible stripes.",
    "A {noun} rests in the {position} corner under a {color} sign.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Color,
    Noun,
    Count,
    Position,
}

impl Category {
    fn words(self) -> &'static [&'static str] {
        match self {
            Category::Color => COLORS,
            Category::Noun => NOUNS,
            Category::Count => COUNTS,
            Category::Position => POSITIONS,
        }
    }

    fn of(word: &str) -> Option<Self> {
        [Category::Color, Category::Noun, Category::Count, Category::Position]
            .into_iter()
            .find(|c| c.words().contains(&word))
    }

    fn name(self) -> &'static str {
        match self {
            Category::Color => "color",
            Category::Noun => "object",
            Category::Count => "count",
            Category::Position => "position",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub sentence_index: usize,
    pub category: Category,
    pub true_word: String,
    pub injected_word: String,
    pub true_sentence: String,
    pub corrupted_sentence: String,
}

impl Injection {
    pub fn critique(&self) -> String {
        format!(
            "The {} is {}, not {}.",
            self.category.name(),
            self.true_word,
            self.injected_word
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFixture {
    pub truth: CaptionRecord,
    pub corrupted: CaptionRecord,
    pub injections: Vec<Injection>,
}

fn fill_template(rng: &mut ChaCha8Rng, template: &str) -> String {
    let mut out = template.to_string();
    for (slot, words) in [
        ("{color}", COLORS),
        ("{noun}", NOUNS),
        ("{count}", COUNTS),
        ("{position}", POSITIONS),
    ] {
        while out.contains(slot) {
            out = out.replacen(slot, words.choose(rng).expect("non-empty"), 1);
        }
    }
    out
}

/// Byte ranges of words in `sentence` that belong to a category, with the
/// category.
fn swappable(sentence: &str) -> Vec<(usize, usize, Category)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in sentence.char_indices().chain(std::iter::once((sentence.len(), ' '))) {
        if ch.is_alphabetic() {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            if let Some(c) = Category::of(&sentence[s..i]) {
                out.push((s, i, c));
            }
        }
    }
    out
}

/// One fixture: a 3 to 6 sentence caption and a corrupted copy in which at
/// least one sentence has one category word swapped for another.
pub fn generate(seed: u64) -> SyntheticFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=6);
    let mut sentences: Vec<String> = Vec::with_capacity(n);
    while sentences.len() < n {
        let template = *TEMPLATES.choose(&mut rng).expect("non-empty");
        let s = fill_template(&mut rng, template);
        if !sentences.contains(&s) {
            sentences.push(s);
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let k = rng.random_range(1..=n);
    let mut chosen: Vec<usize> = order[..k].to_vec();
    chosen.sort_unstable();

    let mut corrupted = sentences.clone();
    let mut injections = Vec::new();
    for &i in &chosen {
        let candidates = swappable(&sentences[i]);
        let &(s, e, category) = candidates.choose(&mut rng).expect("every template has a slot");
        let true_word = &sentences[i][s..e];
        let others: Vec<&str> = category.words().iter().copied().filter(|w| *w != true_word).collect();
        let injected = *others.choose(&mut rng).expect("categories have several words");
        let replaced = format!("{}{}{}", &sentences[i][..s], injected, &sentences[i][e..]);
        // keep sentences distinct so every prompt addresses one sentence
        if corrupted.iter().any(|c| *c == replaced) {
            continue;
        }
        corrupted[i] = replaced.clone();
        injections.push(Injection {
            sentence_index: i,
            category,
            true_word: true_word.to_string(),
            injected_word: injected.to_string(),
            true_sentence: sentences[i].clone(),
            corrupted_sentence: replaced,
        });
    }
    if injections.is_empty() {
        return generate(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    }

    let id = format!("synthetic-{seed}");
    let image = format!("synthetic://{seed}.png");
    SyntheticFixture {
        truth: CaptionRecord::from_paragraph(&id, "synthetic", &image, sentences.join(" ")),
        corrupted: CaptionRecord::from_paragraph(&id, "synthetic", &image, corrupted.join(" ")),
        injections,
    }
}

impl SyntheticFixture {
    /// Flags exactly the corrupted sentences (in their original context) and
    /// names each injected error; everything else is judged accurate.
    pub fn oracle_critic(&self) -> MockScript {
        let mut script = MockScript::default();
        for inj in &self.injections {
            let prefix = claim_prefix(&self.corrupted, inj.sentence_index).expect("index in range");
            script = script
                .classify_in_context(&prefix, &inj.corrupted_sentence, false)
                .critique(&inj.corrupted_sentence, &inj.critique());
        }
        script.with_default(MockReply::verdict(true))
    }

    /// Restores each corrupted sentence.
    pub fn oracle_reviser(&self) -> MockScript {
        self.injections
            .iter()
            .fold(MockScript::default(), |s, inj| s.revise(&inj.corrupted_sentence, &inj.true_sentence))
    }

    /// Returns each flagged sentence unchanged.
    pub fn noop_reviser(&self) -> MockScript {
        self.injections
            .iter()
            .fold(MockScript::default(), |s, inj| s.revise(&inj.corrupted_sentence, &inj.corrupted_sentence))
    }
}
