//! Rule-based sentence boundary detection.
//!
//! A boundary falls after a run of `.`, `!` or `?` (plus any closing quotes
//! or brackets that follow it) when the next non-space character starts a new
//! sentence: an uppercase letter, a digit, or an opening quote. A period that
//! ends one of [`ABBREVIATIONS`] never closes a sentence.

use crate::corpus::SentenceSpan;

/// Tokens whose trailing period is part of the word.
pub const ABBREVIATIONS: &[&str] = &[
    "Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Sr.", "Jr.", "St.", "Mt.", "Messrs.", "Gen.", "Capt.",
    "Lt.", "Col.", "Sgt.", "Rev.", "Hon.", "Inc.", "Ltd.", "Co.", "Corp.", "No.", "Nos.", "Fig.",
    "Figs.", "Vol.", "approx.", "e.g.", "E.g.", "i.e.", "I.e.", "etc.", "vs.", "cf.", "ca.",
    "a.m.", "p.m.", "U.S.", "U.K.",
];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | '”' | '’' | '»' | ')' | ']')
}

fn is_opening_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '“' | '‘' | '«')
}

fn starts_sentence(c: char) -> bool {
    c.is_uppercase() || c.is_ascii_digit() || is_opening_quote(c)
}

/// True when the word ending at byte `dot_end` (exclusive, the `.` included)
/// is a protected abbreviation.
fn ends_with_abbreviation(text: &str, dot_end: usize) -> bool {
    let word_start = text[..dot_end]
        .rfind(char::is_whitespace)
        .map(|i| i + text[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(0);
    let word = text[word_start..dot_end].trim_start_matches(|c: char| {
        is_opening_quote(c) || matches!(c, '(' | '[')
    });
    ABBREVIATIONS.contains(&word)
}

/// Splits `paragraph` into sentence spans. Spans exclude the whitespace
/// between sentences; whitespace-only input yields no spans.
pub fn segment_sentences(paragraph: &str) -> Vec<SentenceSpan> {
    let chars: Vec<(usize, char)> = paragraph.char_indices().collect();
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut i = 0;

    while i < chars.len() {
        let (pos, c) = chars[i];
        if start.is_none() {
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            start = Some(pos);
        }
        if !is_terminator(c) {
            i += 1;
            continue;
        }

        // Consume the terminator run and any closing marks.
        let run_start = i;
        let mut j = i;
        while j < chars.len() && is_terminator(chars[j].1) {
            j += 1;
        }
        let last_terminator = chars[j - 1];
        while j < chars.len() && is_closing(chars[j].1) {
            j += 1;
        }
        let end = chars.get(j).map_or(paragraph.len(), |&(p, _)| p);

        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let followed_by_space = k > j;
        let next_starts = chars.get(k).is_some_and(|&(_, n)| starts_sentence(n));
        let protected = j - run_start == 1
            && last_terminator.1 == '.'
            && ends_with_abbreviation(paragraph, last_terminator.0 + 1);

        if followed_by_space && next_starts && !protected {
            spans.push(SentenceSpan::new(start.take().unwrap(), end));
            i = k;
        } else {
            i = j;
        }
    }

    if let Some(s) = start {
        let end = paragraph.trim_end().len();
        if end > s {
            spans.push(SentenceSpan::new(s, end));
        }
    }
    spans
}

/// Sentence texts of `paragraph`, in order.
pub fn split_sentences(paragraph: &str) -> Vec<&str> {
    segment_sentences(paragraph)
        .into_iter()
        .map(|s| &paragraph[s.start..s.end])
        .collect()
}

/// Canonical whitespace form: sentences joined by single spaces.
pub fn normalize_paragraph(paragraph: &str) -> String {
    split_sentences(paragraph).join(" ")
}
