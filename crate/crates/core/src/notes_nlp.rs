//! Symptom and medication term extraction from free-text clinical notes.
//!
//! Extraction is a deterministic dictionary matcher: notes are tokenized,
//! stopwords removed, and the remaining tokens scanned left to right for the
//! longest lexicon term starting at each position. Negation is not handled,
//! so "no chest pain" still yields `chest pain`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Encoder;
use crate::error::{Error, Result};
use crate::ingest::NoteRow;

/// Longest lexicon term, in tokens after stopword removal.
pub const MAX_TERM_TOKENS: usize = 4;

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.tsv");
const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Symptom,
    Medication,
}

impl FromStr for TermKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "symptom" => Ok(TermKind::Symptom),
            "medication" => Ok(TermKind::Medication),
            other => Err(Error::Lexicon(format!("unknown term kind {other:?}"))),
        }
    }
}

impl fmt::Display for TermKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TermKind::Symptom => "symptom",
            TermKind::Medication => "medication",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    /// Canonical terms in load order.
    terms: Vec<(String, TermKind)>,
    /// Stopword-free token sequence → position in `terms`.
    index: HashMap<Vec<String>, usize>,
    stopwords: HashSet<String>,
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '…' | '–' | '—' | '«' | '»')
}

/// Lowercases, splits on whitespace and strips leading/trailing punctuation.
/// Stopwords are kept; removal happens during extraction.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(is_punct).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

impl Lexicon {
    pub fn new<I, S>(terms: I, stopwords: HashSet<String>) -> Result<Self>
    where
        I: IntoIterator<Item = (S, TermKind)>,
        S: AsRef<str>,
    {
        let stopwords: HashSet<String> = stopwords.into_iter().map(|s| s.to_lowercase()).collect();
        let mut lexicon = Lexicon {
            terms: Vec::new(),
            index: HashMap::new(),
            stopwords,
        };
        for (term, kind) in terms {
            let canonical = tokenize(term.as_ref()).join(" ");
            let key = lexicon.content_tokens(tokenize(&canonical));
            if key.is_empty() {
                return Err(Error::Lexicon(format!(
                    "term {:?} consists only of stopwords",
                    term.as_ref()
                )));
            }
            if key.len() > MAX_TERM_TOKENS {
                return Err(Error::Lexicon(format!(
                    "term {canonical:?} is longer than {MAX_TERM_TOKENS} tokens"
                )));
            }
            match lexicon.index.get(&key) {
                Some(&i) if lexicon.terms[i] == (canonical.clone(), kind) => {}
                Some(&i) => {
                    return Err(Error::Lexicon(format!(
                        "term {canonical:?} collides with {:?}",
                        lexicon.terms[i].0
                    )))
                }
                None => {
                    lexicon.index.insert(key, lexicon.terms.len());
                    lexicon.terms.push((canonical, kind));
                }
            }
        }
        if lexicon.terms.is_empty() {
            return Err(Error::Lexicon("no terms".into()));
        }
        Ok(lexicon)
    }

    /// Parses `term<TAB>kind` lines. Blank lines and `#` comments are skipped.
    pub fn parse(lexicon: &str, stopwords: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for (n, line) in lexicon.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (term, kind) = line
                .split_once('\t')
                .ok_or_else(|| Error::Lexicon(format!("line {}: expected term<TAB>kind", n + 1)))?;
            terms.push((term.to_owned(), kind.parse::<TermKind>()?));
        }
        Self::new(terms, parse_stopwords(stopwords))
    }

    pub fn load(lexicon_path: &Path, stopwords_path: Option<&Path>) -> Result<Self> {
        let lexicon = fs::read_to_string(lexicon_path).map_err(|e| Error::io(lexicon_path, e))?;
        let stopwords = match stopwords_path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => DEFAULT_STOPWORDS.to_owned(),
        };
        Self::parse(&lexicon, &stopwords)
    }

    /// The bundled clinical lexicon (symptoms and medications) with an
    /// English stopword list.
    pub fn clinical_default() -> Self {
        Self::parse(DEFAULT_LEXICON, DEFAULT_STOPWORDS).expect("bundled lexicon is valid")
    }

    pub fn terms(&self) -> &[(String, TermKind)] {
        &self.terms
    }

    pub fn terms_of_kind(&self, kind: TermKind) -> impl Iterator<Item = &str> {
        self.terms
            .iter()
            .filter(move |(_, k)| *k == kind)
            .map(|(t, _)| t.as_str())
    }

    pub fn kind_of(&self, term: &str) -> Option<TermKind> {
        let key = self.content_tokens(tokenize(term));
        self.index.get(&key).map(|&i| self.terms[i].1)
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn content_tokens(&self, tokens: Vec<String>) -> Vec<String> {
        tokens
            .into_iter()
            .filter(|t| !self.stopwords.contains(t))
            .collect()
    }

    /// Greedy longest-match scan. Matched spans consume their tokens, output
    /// follows text order, and repeated mentions are all reported.
    pub fn extract_terms(&self, tokens: &[String]) -> Vec<(String, TermKind)> {
        let content: Vec<&str> = tokens
            .iter()
            .map(String::as_str)
            .filter(|t| !self.is_stopword(t))
            .collect();
        self.match_spans(&content)
            .into_iter()
            .map(|span| self.terms[span.term].clone())
            .collect()
    }

    /// Matches over stopword-free tokens as (start, length, term) spans.
    fn match_spans(&self, content: &[&str]) -> Vec<Span> {
        let mut spans = Vec::new();
        let mut key: Vec<String> = Vec::with_capacity(MAX_TERM_TOKENS);
        let mut i = 0;
        while i < content.len() {
            let longest = MAX_TERM_TOKENS.min(content.len() - i);
            let mut matched = 0;
            for len in (1..=longest).rev() {
                key.clear();
                key.extend(content[i..i + len].iter().map(|t| (*t).to_owned()));
                if let Some(&term) = self.index.get(&key) {
                    spans.push(Span {
                        start: i,
                        len,
                        term,
                    });
                    matched = len;
                    break;
                }
            }
            i += matched.max(1);
        }
        spans
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    start: usize,
    len: usize,
    term: usize,
}

fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

pub fn extract_terms(tokens: &[String], lexicon: &Lexicon) -> Vec<(String, TermKind)> {
    lexicon.extract_terms(tokens)
}

/// Per-subject note-derived terms, symptoms and medications pooled.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubjectSymptomTable {
    entries: BTreeMap<usize, Vec<usize>>,
    n_symptoms: usize,
}

impl SubjectSymptomTable {
    pub fn new(entries: BTreeMap<usize, Vec<usize>>, n_symptoms: usize) -> Result<Self> {
        for (subject, symptoms) in &entries {
            if symptoms.is_empty() {
                return Err(Error::InvalidData(format!(
                    "subject {subject} has an empty symptom list"
                )));
            }
            if let Some(&bad) = symptoms.iter().find(|&&m| m >= n_symptoms) {
                return Err(Error::IndexOutOfRange {
                    what: "symptom",
                    index: bad,
                    size: n_symptoms,
                });
            }
        }
        Ok(SubjectSymptomTable {
            entries,
            n_symptoms,
        })
    }

    pub fn get(&self, subject: usize) -> Option<&[usize]> {
        self.entries.get(&subject).map(Vec::as_slice)
    }

    pub fn contains(&self, subject: usize) -> bool {
        self.entries.contains_key(&subject)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.entries.iter().map(|(s, v)| (*s, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_symptoms(&self) -> usize {
        self.n_symptoms
    }
}

#[derive(Debug, Clone)]
pub struct SymptomExtraction {
    pub table: SubjectSymptomTable,
    pub symptoms: Encoder,
    /// Notes whose subject is not in the subject encoder.
    pub skipped_notes: usize,
}

/// Runs extraction over every note and groups terms by subject.
///
/// Each subject's list is deduplicated and keeps first-mention order across
/// notes in input order. The symptom encoder is fit over all extracted terms
/// in the same order.
pub fn build_subject_symptom_table(
    notes: &[NoteRow],
    lexicon: &Lexicon,
    subjects: &Encoder,
) -> Result<SymptomExtraction> {
    let mut skipped_notes = 0;
    let mut mentions: Vec<(usize, String)> = Vec::new();
    for note in notes {
        let Ok(subject) = subjects.encode(&note.subject_id) else {
            skipped_notes += 1;
            continue;
        };
        for (term, _) in lexicon.extract_terms(&tokenize(&note.text)) {
            mentions.push((subject, term));
        }
    }
    if mentions.is_empty() {
        return Err(Error::NoSymptoms);
    }
    let symptoms = Encoder::fit(mentions.iter().map(|(_, t)| t))?;
    let mut entries: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (subject, term) in &mentions {
        let m = symptoms.encode(term)?;
        let list = entries.entry(*subject).or_default();
        if !list.contains(&m) {
            list.push(m);
        }
    }
    let table = SubjectSymptomTable::new(entries, symptoms.len())?;
    Ok(SymptomExtraction {
        table,
        symptoms,
        skipped_notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    fn small_lexicon() -> Lexicon {
        Lexicon::new(
            [
                ("chest pain", TermKind::Symptom),
                ("pain", TermKind::Symptom),
                ("aspirin", TermKind::Medication),
                ("edema", TermKind::Symptom),
                ("shortness of breath", TermKind::Symptom),
            ],
            ["of", "the", "given", "no"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .unwrap()
    }

    fn note(subject: &str, text: &str) -> NoteRow {
        NoteRow {
            subject_id: subject.into(),
            hadm_id: "1".into(),
            category: "Nursing".into(),
            text: text.into(),
        }
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Pt c/o Chest Pain."),
            toks(&["pt", "c/o", "chest", "pain"])
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("  edema,  edema "), toks(&["edema", "edema"]));
        assert_eq!(tokenize("“Fever” ... (chills)"), toks(&["fever", "chills"]));
    }

    #[test]
    fn greedy_longest_match() {
        let lex = Lexicon::new(
            [
                ("chest pain", TermKind::Symptom),
                ("aspirin", TermKind::Medication),
            ],
            HashSet::new(),
        )
        .unwrap();
        let found = lex.extract_terms(&toks(&["severe", "chest", "pain", "given", "aspirin"]));
        assert_eq!(
            found,
            vec![
                ("chest pain".to_string(), TermKind::Symptom),
                ("aspirin".to_string(), TermKind::Medication)
            ]
        );
        assert!(lex.extract_terms(&toks(&["afebrile", "stable"])).is_empty());
    }

    #[test]
    fn longer_span_shadows_subterm() {
        let lex = small_lexicon();
        let found = lex.extract_terms(&toks(&["chest", "pain", "then", "pain"]));
        assert_eq!(
            found.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>(),
            vec!["chest pain", "pain"]
        );
    }

    #[test]
    fn stopwords_inside_terms() {
        let lex = small_lexicon();
        let found = lex.extract_terms(&tokenize("Increasing shortness of breath, no edema"));
        assert_eq!(
            found.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>(),
            vec!["shortness of breath", "edema"]
        );
    }

    #[test]
    fn lexicon_validation() {
        let stop: HashSet<String> = ["of".to_string()].into();
        assert!(Lexicon::new([("of", TermKind::Symptom)], stop.clone()).is_err());
        assert!(Lexicon::new([("a b c d e", TermKind::Symptom)], HashSet::new()).is_err());
        assert!(Lexicon::new(Vec::<(String, TermKind)>::new(), HashSet::new()).is_err());
        assert!(Lexicon::parse("fever\tsymptom\nchills\tfoo\n", "").is_err());
        assert!(Lexicon::parse("fever symptom\n", "").is_err());
        let lex = Lexicon::parse("# header\nFever\tsymptom\n\naspirin\tMedication\n", "").unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.kind_of("fever"), Some(TermKind::Symptom));
    }

    #[test]
    fn bundled_lexicon_loads() {
        let lex = Lexicon::clinical_default();
        assert!(lex.len() >= 190, "{}", lex.len());
        assert!(lex.terms_of_kind(TermKind::Medication).count() > 50);
        assert_eq!(lex.kind_of("shortness of breath"), Some(TermKind::Symptom));
    }

    #[test]
    fn table_dedups_and_shares_indices() {
        let subjects = Encoder::fit(["1", "2", "3"]).unwrap();
        let notes = vec![
            note("1", "Edema in legs."),
            note("1", "Persistent edema; aspirin held."),
            note("2", "no acute events, edema"),
            note("3", "Comfortable overnight."),
            note("99", "edema"),
        ];
        let ex = build_subject_symptom_table(&notes, &small_lexicon(), &subjects).unwrap();
        assert_eq!(ex.skipped_notes, 1);
        let edema = ex.symptoms.encode("edema").unwrap();
        assert_eq!(
            ex.table.get(0).unwrap(),
            &[edema, ex.symptoms.encode("aspirin").unwrap()]
        );
        assert_eq!(ex.table.get(1).unwrap(), &[edema]);
        assert!(ex.table.get(2).is_none());
        assert_eq!(ex.table.n_symptoms(), ex.symptoms.len());
    }

    #[test]
    fn no_hits_anywhere() {
        let subjects = Encoder::fit(["1"]).unwrap();
        let err = build_subject_symptom_table(&[note("1", "stable")], &small_lexicon(), &subjects)
            .unwrap_err();
        assert!(matches!(err, Error::NoSymptoms));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tokenize_idempotent(text in "[ a-zA-Z.,;:!?()'/-]{0,80}") {
                let once = tokenize(&text);
                prop_assert_eq!(tokenize(&once.join(" ")), once);
            }

            #[test]
            fn matches_are_members_and_disjoint(words in proptest::collection::vec(
                prop_oneof!["chest", "pain", "aspirin", "edema", "shortness", "of", "breath", "stable", "no"],
                0..30,
            )) {
                let lex = small_lexicon();
                let tokens: Vec<String> = words.iter().map(|w| w.to_string()).collect();
                let found = lex.extract_terms(&tokens);
                let content: Vec<&str> = tokens.iter().map(String::as_str).filter(|t| !lex.is_stopword(t)).collect();
                let spans = lex.match_spans(&content);
                prop_assert_eq!(spans.len(), found.len());
                for pair in spans.windows(2) {
                    prop_assert!(pair[0].start + pair[0].len <= pair[1].start);
                }
                for (term, kind) in &found {
                    prop_assert_eq!(lex.kind_of(term), Some(*kind));
                }
            }
        }
    }
}
