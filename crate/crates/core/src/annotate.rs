//! Concept annotation: tokenization, greedy longest-match lookup against a
//! concept lexicon, trigger-window negation and token-level alignment.
//!
//! Every token ends up with zero or one concept. A concept's id in the output
//! is the lexicon entry's preferred id, so synonymous surface forms collapse
//! onto the same node of the knowledge graph.

use std::collections::HashMap;
use std::io::BufRead;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
    #[error("duplicate lexicon entry ({surface:?}, {concept_id})")]
    DuplicateEntry { surface: String, concept_id: String },
    #[error("empty surface form")]
    EmptySurface,
    #[error("annotation span [{start}, {end}) is invalid for {len} tokens")]
    InvalidSpan { start: usize, end: usize, len: usize },
    #[error("annotation spans [{0}, {1}) and [{2}, {3}) overlap")]
    OverlappingSpans(usize, usize, usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

static PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\p{P}$").expect("valid regex"));

fn is_punct(c: char) -> bool {
    let mut buf = [0u8; 4];
    PUNCT.is_match(c.encode_utf8(&mut buf))
}

/// Whitespace split, then every leading and trailing run of punctuation
/// (Unicode category P) is split off as one token. Case is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<(usize, char)> = chunk.char_indices().collect();
        let Some(first) = chars.iter().position(|&(_, c)| !is_punct(c)) else {
            tokens.push(chunk.to_string());
            continue;
        };
        let last = chars.iter().rposition(|&(_, c)| !is_punct(c)).expect("a non-punct char exists");
        let body_start = chars[first].0;
        let body_end = chars.get(last + 1).map_or(chunk.len(), |&(i, _)| i);
        if body_start > 0 {
            tokens.push(chunk[..body_start].to_string());
        }
        tokens.push(chunk[body_start..body_end].to_string());
        if body_end < chunk.len() {
            tokens.push(chunk[body_end..].to_string());
        }
    }
    tokens
}

#[derive(Clone, Debug, PartialEq)]
pub struct LexiconEntry {
    /// Lowercase tokens.
    pub surface: Vec<String>,
    pub concept_id: String,
    pub preferred_id: String,
    pub score: f64,
}

/// Surface forms mapped to concepts. Entries are immutable once loaded.
#[derive(Clone, Debug, Default)]
pub struct ConceptLexicon {
    entries: Vec<LexiconEntry>,
    by_surface: HashMap<Vec<String>, Vec<usize>>,
    max_len: usize,
}

fn normalize_surface(surface: &str) -> Vec<String> {
    surface.split_whitespace().map(str::to_lowercase).collect()
}

impl ConceptLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// `preferred_id` defaults to `concept_id` when `None` or empty.
    pub fn insert(
        &mut self,
        surface: &str,
        concept_id: &str,
        preferred_id: Option<&str>,
        score: f64,
    ) -> Result<(), AnnotateError> {
        let surface = normalize_surface(surface);
        if surface.is_empty() {
            return Err(AnnotateError::EmptySurface);
        }
        let ids = self.by_surface.entry(surface.clone()).or_default();
        if ids.iter().any(|&i| self.entries[i].concept_id == concept_id) {
            return Err(AnnotateError::DuplicateEntry { surface: surface.join(" "), concept_id: concept_id.into() });
        }
        ids.push(self.entries.len());
        self.max_len = self.max_len.max(surface.len());
        let preferred_id = preferred_id.filter(|p| !p.is_empty()).unwrap_or(concept_id).to_string();
        self.entries.push(LexiconEntry { surface, concept_id: concept_id.to_string(), preferred_id, score });
        Ok(())
    }

    /// TSV `surface<TAB>concept_id<TAB>preferred_id<TAB>score`. The last two
    /// columns may be omitted (or left empty): preferred id then falls back to
    /// the concept id and the score to 1.
    pub fn load<R: BufRead>(reader: R) -> Result<Self, AnnotateError> {
        let mut lex = ConceptLexicon::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| AnnotateError::Lexicon { line: i + 1, reason: reason.to_string() };
            let fields: Vec<&str> = line.split('\t').collect();
            if !(2..=4).contains(&fields.len()) || fields[1].is_empty() {
                return Err(bad("expected surface<TAB>concept_id[<TAB>preferred_id[<TAB>score]]"));
            }
            let score = match fields.get(3).filter(|s| !s.is_empty()) {
                Some(s) => s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad("bad score"))?,
                None => 1.0,
            };
            lex.insert(fields[0], fields[1], fields.get(2).copied(), score).map_err(|e| bad(&e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Best entry for an exact (lowercased) surface: highest score, then
    /// smallest concept id.
    fn best(&self, surface: &[String]) -> Option<&LexiconEntry> {
        self.by_surface.get(surface)?.iter().map(|&i| &self.entries[i]).min_by(|a, b| {
            b.score.total_cmp(&a.score).then_with(|| a.concept_id.cmp(&b.concept_id))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptAnnotation {
    pub start: usize,
    pub end: usize,
    /// Preferred concept id.
    pub concept: String,
    pub negated: bool,
    pub score: f64,
}

/// Greedy left-to-right longest match. At each position the longest surface
/// present in the lexicon wins; equal-length candidates are ranked by score,
/// then by concept id.
pub fn match_concepts<S: AsRef<str>>(tokens: &[S], lexicon: &ConceptLexicon) -> Vec<ConceptAnnotation> {
    let lower: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lower.len() {
        let longest = lexicon.max_len.min(lower.len() - i);
        let hit = (1..=longest).rev().find_map(|len| lexicon.best(&lower[i..i + len]).map(|e| (len, e)));
        match hit {
            Some((len, entry)) => {
                out.push(ConceptAnnotation {
                    start: i,
                    end: i + len,
                    concept: entry.preferred_id.clone(),
                    negated: false,
                    score: entry.score,
                });
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

/// Negation triggers and the look-back window.
#[derive(Clone, Debug, PartialEq)]
pub struct NegationRules {
    /// Lowercase token sequences; multi-word triggers are allowed.
    pub triggers: Vec<Vec<String>>,
    pub window: usize,
}

pub const DEFAULT_TRIGGERS: [&str; 7] = ["no", "not", "without", "denies", "denied", "negative", "ruled out"];
pub const DEFAULT_WINDOW: usize = 5;

impl Default for NegationRules {
    fn default() -> Self {
        NegationRules::new(DEFAULT_TRIGGERS, DEFAULT_WINDOW)
    }
}

impl NegationRules {
    pub fn new<I, S>(triggers: I, window: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let triggers = triggers
            .into_iter()
            .map(|t| normalize_surface(t.as_ref()))
            .filter(|t| !t.is_empty())
            .collect();
        NegationRules { triggers, window }
    }

    /// One trigger per line; blank lines and `#` comments are skipped.
    pub fn load<R: BufRead>(reader: R, window: usize) -> Result<Self, AnnotateError> {
        let mut lines = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if !line.trim().is_empty() && !line.starts_with('#') {
                lines.push(line);
            }
        }
        Ok(NegationRules::new(lines, window))
    }
}

fn is_sentence_end(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| matches!(c, '.' | '!' | '?'))
}

/// Marks an annotation negated when a trigger lies entirely within the
/// `window` tokens before its span and no sentence-ending punctuation token
/// sits between the trigger and the span.
pub fn detect_negation<S: AsRef<str>>(
    tokens: &[S],
    annotations: Vec<ConceptAnnotation>,
    rules: &NegationRules,
) -> Vec<ConceptAnnotation> {
    let lower: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
    annotations
        .into_iter()
        .map(|mut ann| {
            let lo = ann.start.saturating_sub(rules.window);
            ann.negated = rules.triggers.iter().any(|trig| {
                (lo..ann.start).any(|p| {
                    let end = p + trig.len();
                    end <= ann.start
                        && lower[p..end] == trig[..]
                        && !lower[end..ann.start].iter().any(|t| is_sentence_end(t))
                })
            });
            ann
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedToken {
    pub text: String,
    pub concept: Option<String>,
    /// 1 when the token belongs to a negated concept, else 0.
    pub sentiment: u8,
}

/// Spread each annotation's concept and negation bit over its tokens.
pub fn align<S: AsRef<str>>(
    tokens: &[S],
    annotations: &[ConceptAnnotation],
) -> Result<Vec<AlignedToken>, AnnotateError> {
    let mut out: Vec<AlignedToken> = tokens
        .iter()
        .map(|t| AlignedToken { text: t.as_ref().to_string(), concept: None, sentiment: 0 })
        .collect();
    let mut spans: Vec<&ConceptAnnotation> = annotations.iter().collect();
    spans.sort_by_key(|a| (a.start, a.end));
    for pair in spans.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(AnnotateError::OverlappingSpans(pair[0].start, pair[0].end, pair[1].start, pair[1].end));
        }
    }
    for ann in spans {
        if ann.start >= ann.end || ann.end > tokens.len() {
            return Err(AnnotateError::InvalidSpan { start: ann.start, end: ann.end, len: tokens.len() });
        }
        for tok in &mut out[ann.start..ann.end] {
            tok.concept = Some(ann.concept.clone());
            tok.sentiment = u8::from(ann.negated);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub annotations: Vec<ConceptAnnotation>,
}

impl AnnotatedSentence {
    pub fn aligned(&self) -> Vec<AlignedToken> {
        align(&self.tokens, &self.annotations).expect("matcher output has disjoint in-range spans")
    }

    pub fn has_negation(&self) -> bool {
        self.annotations.iter().any(|a| a.negated)
    }
}

/// Lexicon plus negation rules; annotation is a pure function of the text.
#[derive(Clone, Debug, Default)]
pub struct Annotator {
    pub lexicon: ConceptLexicon,
    pub rules: NegationRules,
}

impl Annotator {
    pub fn new(lexicon: ConceptLexicon, rules: NegationRules) -> Self {
        Annotator { lexicon, rules }
    }

    pub fn annotate(&self, text: &str) -> AnnotatedSentence {
        let tokens = tokenize(text);
        let matched = match_concepts(&tokens, &self.lexicon);
        let annotations = detect_negation(&tokens, matched, &self.rules);
        AnnotatedSentence { tokens, annotations }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(str::to_string).collect()
    }

    fn fixture() -> ConceptLexicon {
        ConceptLexicon::load(
            "blood clots\tC-BC\tC-THROMBUS\t9.5\n\
             thrombus\tC-THROMBUS\t\t10\n\
             chest pain\tC-CP\tC-ANGINA\t8\n\
             pain\tC-PAIN\tC-PAIN\t7\n"
                .as_bytes(),
        )
        .unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("History of CVA."), ["History", "of", "CVA", "."]);
        assert_eq!(tokenize("no signs of pain"), ["no", "signs", "of", "pain"]);
        assert_eq!(tokenize("(pain), \"x\" ..."), ["(", "pain", "),", "\"", "x", "\"", "..."]);
        assert_eq!(tokenize("qtc=410 e.g."), ["qtc=410", "e.g", "."]);
        assert_eq!(tokenize("¿qué?"), ["¿", "qué", "?"]);
    }

    #[test]
    fn preferred_term_canonicalization() {
        let lex = fixture();
        let anns = match_concepts(&toks("blood clots"), &lex);
        assert_eq!(anns.len(), 1);
        assert_eq!((anns[0].start, anns[0].end, anns[0].concept.as_str()), (0, 2, "C-THROMBUS"));
        let anns = match_concepts(&toks("Patient has chest pain"), &lex);
        assert_eq!(anns.len(), 1);
        assert_eq!((anns[0].start, anns[0].end, anns[0].concept.as_str()), (2, 4, "C-ANGINA"));
        assert!(match_concepts(&toks("blood clots"), &ConceptLexicon::new()).is_empty());
    }

    #[test]
    fn length_beats_score_then_score_then_id() {
        let mut lex = ConceptLexicon::new();
        lex.insert("a b", "C-AB", None, 1.0).unwrap();
        lex.insert("a", "C-A", None, 9.0).unwrap();
        let anns = match_concepts(&toks("a b"), &lex);
        assert_eq!(anns.len(), 1);
        assert_eq!(anns[0].concept, "C-AB");

        let mut lex = ConceptLexicon::new();
        lex.insert("x", "C-2", None, 1.0).unwrap();
        lex.insert("x", "C-3", None, 5.0).unwrap();
        lex.insert("x", "C-1", None, 5.0).unwrap();
        assert_eq!(match_concepts(&toks("X"), &lex)[0].concept, "C-1");
    }

    #[test]
    fn lexicon_rejects_duplicates_and_bad_lines() {
        let mut lex = ConceptLexicon::new();
        lex.insert("Pain", "C1", None, 1.0).unwrap();
        assert!(matches!(lex.insert("pain", "C1", None, 2.0), Err(AnnotateError::DuplicateEntry { .. })));
        assert!(matches!(lex.insert("  ", "C2", None, 2.0), Err(AnnotateError::EmptySurface)));
        assert!(ConceptLexicon::load("pain\n".as_bytes()).is_err());
        assert!(ConceptLexicon::load("pain\tC1\tC1\tlots\n".as_bytes()).is_err());
        let lex = ConceptLexicon::load("pain\tC1\n".as_bytes()).unwrap();
        assert_eq!(lex.entries()[0].preferred_id, "C1");
        assert_eq!(lex.entries()[0].score, 1.0);
    }

    #[test]
    fn negation_examples() {
        let lex = fixture();
        let rules = NegationRules::default();
        let tokens = tokenize("The patient showed no signs of pain");
        let anns = detect_negation(&tokens, match_concepts(&tokens, &lex), &rules);
        assert_eq!(anns.len(), 1);
        assert_eq!((anns[0].start, anns[0].end), (6, 7));
        assert!(anns[0].negated);

        let tokens = tokenize("The patient reports pain");
        let anns = detect_negation(&tokens, match_concepts(&tokens, &lex), &rules);
        assert!(anns.iter().all(|a| !a.negated));

        // Trigger exactly 6 tokens before the span falls outside W = 5.
        let tokens = toks("no a b c d e pain");
        let anns = detect_negation(&tokens, match_concepts(&tokens, &lex), &rules);
        assert!(!anns[0].negated);
        let tokens = toks("no b c d e pain");
        let anns = detect_negation(&tokens, match_concepts(&tokens, &lex), &rules);
        assert!(anns[0].negated);
    }

    #[test]
    fn negation_bigram_and_sentence_boundary() {
        let lex = fixture();
        let rules = NegationRules::default();
        let tokens = tokenize("Thrombus was ruled out");
        let anns = detect_negation(&tokens, match_concepts(&tokens, &lex), &rules);
        assert!(!anns[0].negated, "trigger after the concept does not count");
        let tokens = tokenize("ruled out thrombus");
        assert!(detect_negation(&tokens, match_concepts(&tokens, &lex), &rules)[0].negated);
        let tokens = tokenize("No fever. Pain today");
        assert!(!detect_negation(&tokens, match_concepts(&tokens, &lex), &rules)[0].negated);
        let tokens = tokenize("Denies fever, pain");
        assert!(detect_negation(&tokens, match_concepts(&tokens, &lex), &rules)[0].negated);
    }

    #[test]
    fn align_examples() {
        let lex = fixture();
        let tokens = toks("blood clots");
        let aligned = align(&tokens, &match_concepts(&tokens, &lex)).unwrap();
        assert!(aligned.iter().all(|t| t.concept.as_deref() == Some("C-THROMBUS") && t.sentiment == 0));

        let aligned = align(&toks("no signs"), &[]).unwrap();
        assert!(aligned.iter().all(|t| t.concept.is_none() && t.sentiment == 0));

        let ann = ConceptAnnotation { start: 1, end: 2, concept: "C-PAIN".into(), negated: true, score: 1.0 };
        let aligned = align(&toks("no pain today"), &[ann]).unwrap();
        assert_eq!(aligned.iter().map(|t| t.sentiment).collect::<Vec<_>>(), [0, 1, 0]);
    }

    #[test]
    fn align_rejects_bad_spans() {
        let a = |s, e| ConceptAnnotation { start: s, end: e, concept: "C".into(), negated: false, score: 1.0 };
        let tokens = toks("a b c");
        assert!(matches!(align(&tokens, &[a(0, 2), a(1, 3)]), Err(AnnotateError::OverlappingSpans(..))));
        assert!(matches!(align(&tokens, &[a(2, 4)]), Err(AnnotateError::InvalidSpan { .. })));
        assert!(matches!(align(&tokens, &[a(1, 1)]), Err(AnnotateError::InvalidSpan { .. })));
    }

    fn arb_lexicon() -> impl Strategy<Value = ConceptLexicon> {
        let word = prop::sample::select(vec!["a", "b", "c", "no", "pain", "x"]);
        prop::collection::vec((prop::collection::vec(word, 1..4), 0u8..6, 0u8..6, 0.0f64..10.0), 0..12).prop_map(
            |entries| {
                let mut lex = ConceptLexicon::new();
                for (surface, c, p, s) in entries {
                    let _ = lex.insert(&surface.join(" "), &format!("C{c}"), Some(&format!("P{p}")), s);
                }
                lex
            },
        )
    }

    proptest! {
        #[test]
        fn annotation_invariants(text in "[a-cA-C xnopai.,!]{0,40}", lex in arb_lexicon()) {
            let annotator = Annotator::new(lex.clone(), NegationRules::default());
            let sent = annotator.annotate(&text);
            prop_assert_eq!(sent.tokens.len(), tokenize(&text).len());
            for w in sent.annotations.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            let aligned = align(&sent.tokens, &sent.annotations).unwrap();
            prop_assert_eq!(aligned.len(), sent.tokens.len());
            for t in &aligned {
                prop_assert!(t.sentiment == 0 || t.concept.is_some());
            }
            prop_assert_eq!(annotator.annotate(&text), sent);
        }

        #[test]
        fn tokens_never_empty(text in "\\PC{0,30}") {
            prop_assert!(tokenize(&text).iter().all(|t| !t.is_empty()));
        }
    }
}
