//! Identifier encoding and the interaction records every other module shares.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bidirectional map between raw identifiers and contiguous indices.
///
/// Indices are handed out in order of first appearance. The encoder is frozen
/// after fitting: looking up an identifier that was never registered is an
/// error rather than a silent cold-start slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Encoder {
    forward: HashMap<String, usize>,
    backward: Vec<String>,
}

impl Encoder {
    pub fn fit<I, S>(raw_ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut forward = HashMap::new();
        let mut backward = Vec::new();
        for raw in raw_ids {
            let raw = raw.as_ref();
            if !forward.contains_key(raw) {
                forward.insert(raw.to_owned(), backward.len());
                backward.push(raw.to_owned());
            }
        }
        if backward.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        Ok(Encoder { forward, backward })
    }

    pub fn encode(&self, raw: &str) -> Result<usize> {
        self.forward
            .get(raw)
            .copied()
            .ok_or_else(|| Error::UnknownIdentifier(raw.to_owned()))
    }

    pub fn decode(&self, index: usize) -> Result<&str> {
        self.backward
            .get(index)
            .map(String::as_str)
            .ok_or(Error::IndexOutOfRange {
                what: "encoder",
                index,
                size: self.backward.len(),
            })
    }

    pub fn len(&self) -> usize {
        self.backward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backward.is_empty()
    }

    pub fn contains(&self, raw: &str) -> bool {
        self.forward.contains_key(raw)
    }

    /// Raw identifiers in index order.
    pub fn ids(&self) -> &[String] {
        &self.backward
    }
}

impl TryFrom<Vec<String>> for Encoder {
    type Error = Error;

    fn try_from(ids: Vec<String>) -> Result<Self> {
        let n = ids.len();
        let encoder = Encoder::fit(&ids)?;
        if encoder.len() != n {
            return Err(Error::ModelFormat(
                "encoder contains duplicate identifiers".into(),
            ));
        }
        Ok(encoder)
    }
}

impl From<Encoder> for Vec<String> {
    fn from(e: Encoder) -> Self {
        e.backward
    }
}

/// A labelled (subject, code[, symptom]) record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interaction {
    pub subject: usize,
    pub code: usize,
    /// Present only in hybrid (triple) datasets.
    pub symptom: Option<usize>,
    pub label: bool,
}

impl Interaction {
    pub fn positive(subject: usize, code: usize) -> Self {
        Interaction {
            subject,
            code,
            symptom: None,
            label: true,
        }
    }

    pub fn negative(subject: usize, code: usize) -> Self {
        Interaction {
            subject,
            code,
            symptom: None,
            label: false,
        }
    }

    pub fn with_symptom(mut self, symptom: usize) -> Self {
        self.symptom = Some(symptom);
        self
    }
}

/// Labelled records together with the vocabulary sizes they index into.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    records: Vec<Interaction>,
    n_subjects: usize,
    n_codes: usize,
    n_symptoms: usize,
}

impl InteractionSet {
    /// Validates every index against its cardinality, symptom presence
    /// consistency, and uniqueness of positive (subject, code) pairs.
    pub fn new(
        records: Vec<Interaction>,
        n_subjects: usize,
        n_codes: usize,
        n_symptoms: usize,
    ) -> Result<Self> {
        let hybrid = records.first().map(|r| r.symptom.is_some());
        let mut seen = HashSet::new();
        for r in &records {
            if r.subject >= n_subjects {
                return Err(Error::IndexOutOfRange {
                    what: "subject",
                    index: r.subject,
                    size: n_subjects,
                });
            }
            if r.code >= n_codes {
                return Err(Error::IndexOutOfRange {
                    what: "code",
                    index: r.code,
                    size: n_codes,
                });
            }
            if Some(r.symptom.is_some()) != hybrid {
                return Err(Error::InvalidData(
                    "records mix pair and triple interactions".into(),
                ));
            }
            if let Some(m) = r.symptom {
                if m >= n_symptoms {
                    return Err(Error::IndexOutOfRange {
                        what: "symptom",
                        index: m,
                        size: n_symptoms,
                    });
                }
            }
            if r.label && !seen.insert((r.subject, r.code)) {
                return Err(Error::InvalidData(format!(
                    "duplicate positive pair (subject {}, code {})",
                    r.subject, r.code
                )));
            }
        }
        Ok(InteractionSet {
            records,
            n_subjects,
            n_codes,
            n_symptoms,
        })
    }

    /// Same cardinalities, different records. Used by the splitter, which
    /// only ever takes subsets of an already validated set.
    pub(crate) fn with_records(&self, records: Vec<Interaction>) -> Self {
        InteractionSet {
            records,
            n_subjects: self.n_subjects,
            n_codes: self.n_codes,
            n_symptoms: self.n_symptoms,
        }
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_codes(&self) -> usize {
        self.n_codes
    }

    pub fn n_symptoms(&self) -> usize {
        self.n_symptoms
    }

    pub fn is_hybrid(&self) -> bool {
        self.records.first().is_some_and(|r| r.symptom.is_some())
    }

    pub fn positives(&self) -> impl Iterator<Item = &Interaction> {
        self.records.iter().filter(|r| r.label)
    }

    pub fn n_positive(&self) -> usize {
        self.positives().count()
    }

    pub fn n_negative(&self) -> usize {
        self.len() - self.n_positive()
    }

    /// Set of positive (subject, code) pairs.
    pub fn positive_pairs(&self) -> HashSet<(usize, usize)> {
        self.positives().map(|r| (r.subject, r.code)).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.label).collect()
    }
}

/// The encoders a trained model is bound to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub subjects: Encoder,
    pub codes: Encoder,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symptoms: Option<Encoder>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_appearance_order() {
        let e = Encoder::fit(["401.9", "428.0", "401.9"]).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.encode("401.9").unwrap(), 0);
        assert_eq!(e.encode("428.0").unwrap(), 1);
    }

    #[test]
    fn singleton() {
        let e = Encoder::fit(["A"]).unwrap();
        assert_eq!(e.encode("A").unwrap(), 0);
        assert_eq!(e.len(), 1);
    }

    #[test]
    fn round_trip_and_determinism() {
        let e = Encoder::fit(["401.9", "428.0"]).unwrap();
        let i = e.encode("428.0").unwrap();
        assert_eq!(e.decode(i).unwrap(), "428.0");
        assert_eq!(e.encode("428.0").unwrap(), i);
        assert!(i < e.len());
    }

    #[test]
    fn empty_and_unknown() {
        let err = Encoder::fit(Vec::<String>::new()).unwrap_err();
        assert!(err.to_string().contains("empty vocabulary"));
        let e = Encoder::fit(["A"]).unwrap();
        let err = e.encode("B").unwrap_err();
        assert!(err.to_string().contains("unknown identifier"));
        assert!(e.decode(5).is_err());
    }

    #[test]
    fn serde_rejects_duplicates() {
        let e: Encoder = serde_json::from_str(r#"["x","y"]"#).unwrap();
        assert_eq!(e.encode("y").unwrap(), 1);
        assert!(serde_json::from_str::<Encoder>(r#"["x","x"]"#).is_err());
    }

    #[test]
    fn interaction_set_validation() {
        let ok = InteractionSet::new(
            vec![Interaction::positive(0, 1), Interaction::negative(0, 0)],
            1,
            2,
            0,
        );
        assert!(ok.is_ok());
        let dup = InteractionSet::new(
            vec![Interaction::positive(0, 1), Interaction::positive(0, 1)],
            1,
            2,
            0,
        );
        assert!(dup.is_err());
        let out = InteractionSet::new(vec![Interaction::positive(3, 0)], 1, 2, 0);
        assert!(matches!(out, Err(Error::IndexOutOfRange { .. })));
        let mixed = InteractionSet::new(
            vec![
                Interaction::positive(0, 0).with_symptom(0),
                Interaction::negative(0, 1),
            ],
            1,
            2,
            1,
        );
        assert!(mixed.is_err());
    }

    // Repeated negatives are legal, repeated positives are not.
    #[test]
    fn duplicate_negatives_allowed() {
        let set = InteractionSet::new(
            vec![Interaction::negative(0, 0), Interaction::negative(0, 0)],
            1,
            1,
            0,
        )
        .unwrap();
        assert_eq!(set.n_negative(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn refit_on_shuffle_keeps_key_set(ids in proptest::collection::vec("[a-c]{1,2}", 1..40), seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut shuffled = ids.clone();
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let a = Encoder::fit(&ids).unwrap();
                let b = Encoder::fit(&shuffled).unwrap();
                let ka: HashSet<_> = a.ids().iter().collect();
                let kb: HashSet<_> = b.ids().iter().collect();
                prop_assert_eq!(ka, kb);
                for (i, raw) in a.ids().iter().enumerate() {
                    prop_assert_eq!(a.encode(raw).unwrap(), i);
                    prop_assert_eq!(a.decode(i).unwrap(), raw.as_str());
                }
            }
        }
    }
}
