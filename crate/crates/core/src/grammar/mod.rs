//! Declarative term grammar for recognizing high-variation concept names.
//!
//! A rule file declares token classes (sets of literal token sequences) and
//! rules (ordered slot sequences over classes). Text is tokenized into
//! lowercase alphanumeric runs, so hyphens and other punctuation act as
//! token separators: "long-haul COVID" and "long haul covid" are the same
//! token sequence. Matching is leftmost-longest and non-overlapping.

mod parse;
mod report;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;

pub use parse::{compile_grammar, parse_grammar};
pub use report::{term_frequency_report, DocumentNaming, NamingStatus, TermReport, ZipfPoint};

/// The bundled Long Covid grammar.
pub const DEFAULT_GRAMMAR: &str = include_str!("long_covid.grammar");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
    byte_start: usize,
    byte_end: usize,
}

/// Splits text into lowercase alphanumeric runs with their character offsets.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<Token> = None;
    for (char_idx, (byte_idx, c)) in text.char_indices().enumerate() {
        if c.is_alphanumeric() {
            let tok = current.get_or_insert_with(|| Token {
                text: String::new(),
                char_start: char_idx,
                char_end: char_idx,
                byte_start: byte_idx,
                byte_end: byte_idx,
            });
            tok.text.extend(c.to_lowercase());
            tok.char_end = char_idx + 1;
            tok.byte_end = byte_idx + c.len_utf8();
        } else if let Some(tok) = current.take() {
            tokens.push(tok);
        }
    }
    tokens.extend(current);
    tokens
}

fn is_hyphen(c: char) -> bool {
    matches!(
        c,
        '-' | '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2212}'
    )
}

/// Lowercases, turns hyphens into spaces, strips remaining punctuation and
/// collapses whitespace.
pub fn normalize(s: &str) -> String {
    let mut cleaned = String::with_capacity(s.len());
    for c in s.chars() {
        if is_hyphen(c) || c.is_whitespace() {
            cleaned.push(' ');
        } else if c.is_alphanumeric() {
            cleaned.extend(c.to_lowercase());
        }
    }
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One literal alternative of a token class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alternative {
    pub tokens: Vec<String>,
    /// Provenance tags such as `mesh` or `descriptive`.
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenClass {
    pub name: String,
    pub alternatives: Vec<Alternative>,
    by_first: HashMap<String, Vec<usize>>,
}

impl TokenClass {
    pub(crate) fn new(name: String, alternatives: Vec<Alternative>) -> Self {
        let mut by_first: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, alt) in alternatives.iter().enumerate() {
            by_first.entry(alt.tokens[0].clone()).or_default().push(i);
        }
        TokenClass {
            name,
            alternatives,
            by_first,
        }
    }

    /// End positions reachable by matching one alternative at `pos`.
    fn extend(&self, tokens: &[Token], pos: usize, out: &mut Vec<usize>) {
        let Some(first) = tokens.get(pos) else {
            return;
        };
        let Some(candidates) = self.by_first.get(&first.text) else {
            return;
        };
        for &i in candidates {
            let alt = &self.alternatives[i].tokens;
            let end = pos + alt.len();
            if end <= tokens.len() && tokens[pos..end].iter().zip(alt).all(|(t, a)| t.text == *a) {
                out.push(end);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    /// Index into [`GrammarRuleSet::classes`].
    pub class: usize,
    pub optional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub name: String,
    pub slots: Vec<Slot>,
}

/// A compiled, immutable grammar.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GrammarRuleSet {
    pub classes: Vec<TokenClass>,
    pub rules: Vec<Rule>,
}

/// A match of the grammar in a piece of text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermMatch {
    pub char_start: usize,
    pub char_end: usize,
    pub surface: String,
    pub normalized: String,
    pub rule: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextField {
    Title,
    Abstract,
    FullText,
}

/// A grammar match located in a particular field of a particular document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub doc_id: String,
    pub field: TextField,
    pub char_start: usize,
    pub char_end: usize,
    pub surface: String,
    pub normalized: String,
    pub rule: String,
}

impl GrammarRuleSet {
    pub fn bundled() -> Self {
        parse_grammar(DEFAULT_GRAMMAR).expect("bundled grammar compiles")
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn class(&self, name: &str) -> Option<&TokenClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Longest match of `rule` starting at token `start`, as an end index.
    fn longest_at(&self, rule: &Rule, tokens: &[Token], start: usize) -> Option<usize> {
        let mut frontier = vec![start];
        let mut next = Vec::new();
        for slot in &rule.slots {
            next.clear();
            for &pos in &frontier {
                if slot.optional {
                    next.push(pos);
                }
                self.classes[slot.class].extend(tokens, pos, &mut next);
            }
            next.sort_unstable();
            next.dedup();
            std::mem::swap(&mut frontier, &mut next);
            if frontier.is_empty() {
                return None;
            }
        }
        frontier.into_iter().filter(|&end| end > start).max()
    }

    /// Leftmost-longest, non-overlapping matches over `text`. When two rules
    /// produce the same longest span, the rule declared first wins.
    pub fn find(&self, text: &str) -> Vec<TermMatch> {
        if self.rules.is_empty() {
            return Vec::new();
        }
        let tokens = tokenize(text);
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut best: Option<(usize, &Rule)> = None;
            for rule in &self.rules {
                if let Some(end) = self.longest_at(rule, &tokens, i) {
                    if best.map_or(true, |(b, _)| end > b) {
                        best = Some((end, rule));
                    }
                }
            }
            match best {
                Some((end, rule)) => {
                    let (first, last) = (&tokens[i], &tokens[end - 1]);
                    let surface = &text[first.byte_start..last.byte_end];
                    out.push(TermMatch {
                        char_start: first.char_start,
                        char_end: last.char_end,
                        surface: surface.to_string(),
                        normalized: normalize(surface),
                        rule: rule.name.clone(),
                    });
                    i = end;
                }
                None => i += 1,
            }
        }
        out
    }
}

pub fn find_mentions(text: &str, rules: &GrammarRuleSet) -> Vec<TermMatch> {
    rules.find(text)
}

fn located(doc_id: &str, field: TextField, m: TermMatch) -> Mention {
    Mention {
        doc_id: doc_id.to_string(),
        field,
        char_start: m.char_start,
        char_end: m.char_end,
        surface: m.surface,
        normalized: m.normalized,
        rule: m.rule,
    }
}

/// Mentions in the title and abstract, in that order.
pub fn title_abstract_mentions(doc: &Document, rules: &GrammarRuleSet) -> Vec<Mention> {
    let mut out: Vec<Mention> = rules
        .find(&doc.title)
        .into_iter()
        .map(|m| located(&doc.id, TextField::Title, m))
        .collect();
    if let Some(text) = &doc.abstract_text {
        out.extend(
            rules
                .find(text)
                .into_iter()
                .map(|m| located(&doc.id, TextField::Abstract, m)),
        );
    }
    out
}

/// Mentions in every available text field of a document.
pub fn document_mentions(doc: &Document, rules: &GrammarRuleSet) -> Vec<Mention> {
    let mut out = title_abstract_mentions(doc, rules);
    if let Some(text) = &doc.full_text {
        out.extend(
            rules
                .find(text)
                .into_iter()
                .map(|m| located(&doc.id, TextField::FullText, m)),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bundled() -> GrammarRuleSet {
        GrammarRuleSet::bundled()
    }

    #[test]
    fn long_covid_single_mention() {
        let m = bundled().find("Long COVID");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].normalized, "long covid");
        assert_eq!(m[0].surface, "Long COVID");
    }

    #[test]
    fn pasc_full_phrase() {
        let text = "patients with post-acute sequelae of SARS-CoV-2 infection";
        let m = bundled().find(text);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].surface, "post-acute sequelae of SARS-CoV-2 infection");
        assert_eq!(m[0].normalized, "post acute sequelae of sars cov 2 infection");
    }

    #[test]
    fn no_vocabulary_no_mentions() {
        assert!(bundled().find("influenza outcomes in 2019").is_empty());
    }

    #[test]
    fn known_false_positive_is_kept() {
        let m = bundled().find("how long COVID-19 (SARS-CoV-2) survives");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].normalized, "long covid 19");
        assert_eq!(m[0].surface, "long COVID-19");
    }

    #[test]
    fn descriptive_pattern() {
        let m = bundled().find("We studied long-term outcomes of COVID-19 in adults.");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].normalized, "long term outcomes of covid 19");
    }

    #[test]
    fn hyphenation_variants_normalize_alike() {
        let g = bundled();
        let a = g.find("long-haul COVID");
        let b = g.find("long haul covid");
        assert_eq!(a[0].normalized, b[0].normalized);
    }

    #[test]
    fn offsets_are_character_offsets() {
        let text = "Étude: long COVID après";
        let m = bundled().find(text);
        assert_eq!(m.len(), 1);
        let slice: String = text
            .chars()
            .skip(m[0].char_start)
            .take(m[0].char_end - m[0].char_start)
            .collect();
        assert_eq!(slice, "long COVID");
        assert_eq!(m[0].char_start, 7);
    }

    #[test]
    fn empty_grammar_matches_nothing() {
        let g = parse_grammar("").unwrap();
        assert!(g.find("long covid").is_empty());
    }

    #[test]
    fn tokenizer_splits_on_punctuation() {
        let toks: Vec<_> = tokenize("SARS-CoV-2 (COVID19)").into_iter().map(|t| t.text).collect();
        assert_eq!(toks, vec!["sars", "cov", "2", "covid19"]);
    }

    #[test]
    fn document_mentions_cover_fields() {
        let doc = Document::new("d1", "Long COVID in children")
            .with_abstract("Post-COVID syndrome and fatigue.")
            .with_full_text("Chronic COVID syndrome was assessed.");
        let ms = document_mentions(&doc, &bundled());
        let fields: Vec<_> = ms.iter().map(|m| m.field).collect();
        assert_eq!(fields, vec![TextField::Title, TextField::Abstract, TextField::FullText]);
        assert!(ms.iter().all(|m| m.doc_id == "d1"));
    }

    /// Every phrase a rule can generate, by expanding each slot over its
    /// alternatives (optional slots both present and absent).
    fn expansions(g: &GrammarRuleSet, rule: &Rule) -> Vec<String> {
        let mut phrases = vec![Vec::<String>::new()];
        for slot in &rule.slots {
            let mut next = Vec::new();
            for p in &phrases {
                if slot.optional {
                    next.push(p.clone());
                }
                for alt in &g.classes[slot.class].alternatives {
                    let mut q = p.clone();
                    q.extend(alt.tokens.iter().cloned());
                    next.push(q);
                }
            }
            phrases = next;
        }
        phrases.into_iter().filter(|p| !p.is_empty()).map(|p| p.join(" ")).collect()
    }

    #[test]
    fn every_bundled_expansion_matches_in_context() {
        let g = bundled();
        let mut n = 0;
        for rule in &g.rules {
            for phrase in expansions(&g, rule) {
                let text = format!("... {phrase} ...");
                let m = g.find(&text);
                assert_eq!(m.len(), 1, "{phrase:?} via {}: {m:?}", rule.name);
                assert_eq!(m[0].surface, phrase);
                n += 1;
            }
        }
        assert!(n > 100);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn offsets_round_trip_and_order(
            words in proptest::collection::vec(
                prop_oneof![
                    Just("long"), Just("COVID"), Just("covid-19"), Just("post-acute"),
                    Just("sequelae"), Just("of"), Just("SARS-CoV-2"), Just("syndrome"),
                    Just("the"), Just("patients"), Just("Ünïcode"), Just("(PASC)"), Just("haul"),
                ],
                0..30,
            ),
            seps in proptest::collection::vec(prop_oneof![Just(" "), Just("-"), Just(", "), Just("  ")], 30),
        ) {
            let mut text = String::new();
            for (w, s) in words.iter().zip(seps.iter()) {
                text.push_str(w);
                text.push_str(s);
            }
            let ms = bundled().find(&text);
            let chars: Vec<char> = text.chars().collect();
            let mut last_end = 0;
            for m in &ms {
                prop_assert!(m.char_start < m.char_end && m.char_end <= chars.len());
                prop_assert!(m.char_start >= last_end);
                let slice: String = chars[m.char_start..m.char_end].iter().collect();
                prop_assert_eq!(&slice, &m.surface);
                last_end = m.char_end;
            }
        }
    }
}
