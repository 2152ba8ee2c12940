//! Reading diagnosis and note tables shaped like MIMIC-III's `DIAGNOSES_ICD`
//! and `NOTEEVENTS`, plus the filters applied before encoding.
//!
//! Both tables are UTF-8 CSV with a header row. Column names are matched
//! case-insensitively and any extra columns are ignored.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::StringRecord;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{Encoder, Interaction, InteractionSet};
use crate::error::{Error, Result};

pub const DIAGNOSES_COLUMNS: [&str; 3] = ["SUBJECT_ID", "HADM_ID", "ICD9_CODE"];
pub const NOTES_COLUMNS: [&str; 4] = ["SUBJECT_ID", "HADM_ID", "CATEGORY", "TEXT"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisRow {
    pub subject_id: String,
    pub hadm_id: String,
    pub icd9_code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteRow {
    pub subject_id: String,
    pub hadm_id: String,
    pub category: String,
    pub text: String,
}

/// Parsed rows plus the number of records discarded for blank fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub rows: Vec<T>,
    pub dropped: usize,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn column_positions(headers: &StringRecord, required: &[&str]) -> Result<Vec<usize>> {
    required
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::MissingColumn {
                    column: (*name).to_owned(),
                })
        })
        .collect()
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader)
}

pub fn read_diagnoses<R: Read>(reader: R) -> Result<Loaded<DiagnosisRow>> {
    let mut rdr = csv_reader(reader);
    let pos = column_positions(rdr.headers()?, &DIAGNOSES_COLUMNS)?;
    let mut rows = Vec::new();
    let mut dropped = 0;
    for record in rdr.records() {
        let record = record?;
        let field = |i: usize| record.get(pos[i]).unwrap_or("").trim();
        let (subject_id, hadm_id, icd9_code) = (field(0), field(1), field(2));
        if subject_id.is_empty() || hadm_id.is_empty() || icd9_code.is_empty() {
            dropped += 1;
            continue;
        }
        rows.push(DiagnosisRow {
            subject_id: subject_id.to_owned(),
            hadm_id: hadm_id.to_owned(),
            icd9_code: icd9_code.to_owned(),
        });
    }
    if rows.is_empty() && dropped == 0 {
        warn!("diagnoses table has a header but no records");
    }
    Ok(Loaded { rows, dropped })
}

pub fn load_diagnoses(path: impl AsRef<Path>) -> Result<Loaded<DiagnosisRow>> {
    read_diagnoses(open(path.as_ref())?)
}

/// Keeps rows whose code is among the `k` most frequent codes.
///
/// Frequencies count rows, not distinct subjects. Codes tied at the cut-off
/// are ordered lexicographically. Returns the retained rows and the fraction
/// of input rows they represent.
pub fn filter_top_k_codes(rows: &[DiagnosisRow], k: usize) -> Result<(Vec<DiagnosisRow>, f64)> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("ingest: top-k filter"));
    }
    if k == 0 {
        return Err(Error::Config("top-k code count must be at least 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows {
        *counts.entry(r.icd9_code.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    // BTreeMap iteration is lexicographic, and the sort is stable.
    ranked.sort_by_key(|&(_, n)| std::cmp::Reverse(n));
    let keep: HashSet<&str> = ranked.iter().take(k).map(|(c, _)| *c).collect();
    let retained: Vec<DiagnosisRow> = rows
        .iter()
        .filter(|r| keep.contains(r.icd9_code.as_str()))
        .cloned()
        .collect();
    let coverage = retained.len() as f64 / rows.len() as f64;
    Ok((retained, coverage))
}

/// Reads notes, dropping excluded categories (case-insensitive exact match)
/// and truncating to the first `max_notes` eligible rows in file order.
pub fn read_notes<R: Read>(
    reader: R,
    excluded_categories: &HashSet<String>,
    max_notes: Option<usize>,
) -> Result<Loaded<NoteRow>> {
    let excluded: HashSet<String> = excluded_categories
        .iter()
        .map(|c| c.trim().to_lowercase())
        .collect();
    let mut rdr = csv_reader(reader);
    let pos = column_positions(rdr.headers()?, &NOTES_COLUMNS)?;
    let mut rows = Vec::new();
    let mut dropped = 0;
    for record in rdr.records() {
        if max_notes.is_some_and(|m| rows.len() >= m) {
            break;
        }
        let record = record?;
        let field = |i: usize| record.get(pos[i]).unwrap_or("");
        let category = field(2).trim();
        if excluded.contains(&category.to_lowercase()) {
            continue;
        }
        let (subject_id, hadm_id, text) = (field(0).trim(), field(1).trim(), field(3));
        if subject_id.is_empty() || text.trim().is_empty() {
            dropped += 1;
            continue;
        }
        rows.push(NoteRow {
            subject_id: subject_id.to_owned(),
            hadm_id: hadm_id.to_owned(),
            category: category.to_owned(),
            text: text.to_owned(),
        });
    }
    Ok(Loaded { rows, dropped })
}

pub fn load_notes(
    path: impl AsRef<Path>,
    excluded_categories: &HashSet<String>,
    max_notes: Option<usize>,
) -> Result<Loaded<NoteRow>> {
    read_notes(open(path.as_ref())?, excluded_categories, max_notes)
}

/// Collapses diagnosis rows into one positive per distinct (subject, code).
pub fn build_positive_set(rows: &[DiagnosisRow]) -> Result<(InteractionSet, Encoder, Encoder)> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("ingest: positive set"));
    }
    let subjects = Encoder::fit(rows.iter().map(|r| &r.subject_id))?;
    let codes = Encoder::fit(rows.iter().map(|r| &r.icd9_code))?;
    let set = encode_positive_set(rows, &subjects, &codes)?;
    Ok((set, subjects, codes))
}

/// Like [`build_positive_set`] but against fixed encoders, e.g. those stored
/// with a trained model. Unknown identifiers are errors.
pub fn encode_positive_set(
    rows: &[DiagnosisRow],
    subjects: &Encoder,
    codes: &Encoder,
) -> Result<InteractionSet> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for r in rows {
        let pair = (subjects.encode(&r.subject_id)?, codes.encode(&r.icd9_code)?);
        if seen.insert(pair) {
            records.push(Interaction::positive(pair.0, pair.1));
        }
    }
    InteractionSet::new(records, subjects.len(), codes.len(), 0)
}

pub fn write_diagnoses<W: Write>(writer: W, rows: &[DiagnosisRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DIAGNOSES_COLUMNS)?;
    for r in rows {
        w.write_record([&r.subject_id, &r.hadm_id, &r.icd9_code])?;
    }
    w.flush().map_err(|e| Error::io("<diagnoses writer>", e))?;
    Ok(())
}

pub fn write_notes<W: Write>(writer: W, rows: &[NoteRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(NOTES_COLUMNS)?;
    for r in rows {
        w.write_record([&r.subject_id, &r.hadm_id, &r.category, &r.text])?;
    }
    w.flush().map_err(|e| Error::io("<notes writer>", e))?;
    Ok(())
}
