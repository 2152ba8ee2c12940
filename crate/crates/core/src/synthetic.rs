//! Seeded generator of diagnosis and note tables with planted comorbidity
//! clusters.
//!
//! Codes are dealt to clusters round-robin and subjects are dealt to clusters
//! in a shuffled round-robin, so cluster sizes differ by at most one. Each
//! cluster owns `symptoms_per_cluster` symptom terms of the default lexicon,
//! and every subject gets one note naming its cluster's terms.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_diagnoses, write_notes, DiagnosisRow, NoteRow};
use crate::notes_nlp::{Lexicon, TermKind};
use crate::sampling::rng;

pub const NOTE_CATEGORY: &str = "Nursing";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_subjects: usize,
    pub n_codes: usize,
    pub n_clusters: usize,
    /// Probability a subject holds a code of its own cluster.
    pub p_in: f64,
    /// Probability a subject holds a code of another cluster.
    pub p_out: f64,
    pub symptoms_per_cluster: usize,
    /// Probability a note also names one term of another cluster.
    pub symptom_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_subjects: 1000,
            n_codes: 60,
            n_clusters: 6,
            p_in: 0.6,
            p_out: 0.05,
            symptoms_per_cluster: 5,
            symptom_noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("synthetic: {msg}")));
        if self.n_clusters == 0 || self.n_clusters > self.n_subjects.min(self.n_codes) {
            return bad(format!(
                "n_clusters must be in 1..={}, got {}",
                self.n_subjects.min(self.n_codes),
                self.n_clusters
            ));
        }
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return bad(format!(
                "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            ));
        }
        if !(0.0..=1.0).contains(&self.symptom_noise) {
            return bad(format!(
                "symptom_noise must be in [0, 1], got {}",
                self.symptom_noise
            ));
        }
        if self.symptoms_per_cluster == 0 {
            return bad("symptoms_per_cluster must be positive".into());
        }
        let available = symptom_pool().len();
        if self.symptoms_per_cluster * self.n_clusters > available {
            return bad(format!(
                "{} clusters × {} symptoms exceeds the {available} lexicon symptoms",
                self.n_clusters, self.symptoms_per_cluster
            ));
        }
        Ok(())
    }
}

/// The planted structure behind a generated dataset, keyed by raw ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub subject_clusters: BTreeMap<String, usize>,
    pub code_clusters: BTreeMap<String, usize>,
    pub cluster_symptoms: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub diagnoses: Vec<DiagnosisRow>,
    pub notes: Vec<NoteRow>,
    pub truth: GroundTruth,
}

pub fn subject_id(s: usize) -> String {
    format!("{}", 10_000 + s)
}

pub fn code_id(c: usize) -> String {
    format!("C{c:03}")
}

fn hadm_id(s: usize) -> String {
    format!("{}", 100_000 + s)
}

/// Single-word symptom terms of the default lexicon, in lexicon order. Single
/// words keep adjacent terms in a note from fusing into another entry.
fn symptom_pool() -> Vec<String> {
    Lexicon::clinical_default()
        .terms_of_kind(TermKind::Symptom)
        .filter(|t| !t.contains(' '))
        .map(str::to_owned)
        .collect()
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let k = config.n_clusters;
    let mut rng = rng(config.seed);

    let code_cluster: Vec<usize> = (0..config.n_codes).map(|c| c % k).collect();
    let mut subject_cluster: Vec<usize> = (0..config.n_subjects).map(|s| s % k).collect();
    subject_cluster.shuffle(&mut rng);

    let pool = symptom_pool();
    let cluster_symptoms: Vec<Vec<String>> = pool
        .chunks(config.symptoms_per_cluster)
        .take(k)
        .map(<[String]>::to_vec)
        .collect();

    let mut diagnoses = Vec::new();
    let mut notes = Vec::with_capacity(config.n_subjects);
    for (s, &cluster) in subject_cluster.iter().enumerate() {
        for (c, &code_cl) in code_cluster.iter().enumerate() {
            let p = if code_cl == cluster {
                config.p_in
            } else {
                config.p_out
            };
            if rng.gen_bool(p) {
                diagnoses.push(DiagnosisRow {
                    subject_id: subject_id(s),
                    hadm_id: hadm_id(s),
                    icd9_code: code_id(c),
                });
            }
        }
        let mut terms = cluster_symptoms[cluster].clone();
        if k > 1 && rng.gen_bool(config.symptom_noise) {
            let other = (cluster + rng.gen_range(1..k)) % k;
            let list = &cluster_symptoms[other];
            terms.push(list[rng.gen_range(0..list.len())].clone());
        }
        notes.push(NoteRow {
            subject_id: subject_id(s),
            hadm_id: hadm_id(s),
            category: NOTE_CATEGORY.to_owned(),
            text: format!("Patient seen today. Reports {}.", terms.join(", ")),
        });
    }

    let truth = GroundTruth {
        subject_clusters: subject_cluster
            .iter()
            .enumerate()
            .map(|(s, &cl)| (subject_id(s), cl))
            .collect(),
        code_clusters: code_cluster
            .iter()
            .enumerate()
            .map(|(c, &cl)| (code_id(c), cl))
            .collect(),
        cluster_symptoms,
    };
    Ok(SyntheticData {
        diagnoses,
        notes,
        truth,
    })
}

pub const DIAGNOSES_FILE: &str = "diagnoses.csv";
pub const NOTES_FILE: &str = "notes.csv";
pub const TRUTH_FILE: &str = "truth.json";

impl SyntheticData {
    pub fn diagnoses_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_diagnoses(&mut buf, &self.diagnoses)?;
        Ok(buf)
    }

    pub fn notes_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_notes(&mut buf, &self.notes)?;
        Ok(buf)
    }

    pub fn truth_json(&self) -> Result<Vec<u8>> {
        let mut buf = serde_json::to_vec_pretty(&self.truth)?;
        buf.push(b'\n');
        Ok(buf)
    }

    /// Writes the three files into `dir`, creating it if needed. Everything
    /// is rendered before the first write, and files already written are
    /// removed if a later write fails.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let contents = [
            (DIAGNOSES_FILE, self.diagnoses_csv()?),
            (NOTES_FILE, self.notes_csv()?),
            (TRUTH_FILE, self.truth_json()?),
        ];
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (name, bytes) in contents {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, bytes) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                return Err(Error::io(&path, e));
            }
            written.push(path);
        }
        Ok(written)
    }
}
