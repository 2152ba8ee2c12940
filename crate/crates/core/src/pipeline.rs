//! End-to-end runs: positive set → negatives → split → train → evaluate.

use std::collections::BTreeMap;
use std::path::PathBuf;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::data::{InteractionSet, Vocabulary};
use crate::error::{Error, Result};
use crate::ingest::{
    build_positive_set, encode_positive_set, filter_top_k_codes, DiagnosisRow, NoteRow,
};
use crate::metrics::{hit_ratio_at_k, EvalReport};
use crate::models::{
    score_candidates, train, Model, ModelKind, SavedModel, SymptomResolver, TrainConfig,
    TrainHistory,
};
use crate::notes_nlp::{build_subject_symptom_table, Lexicon, SubjectSymptomTable};
use crate::sampling::{
    build_hitratio_cases_from, generate_negative_pairs, generate_negative_triples, split,
    HitRatioCase, Split, SplitSpec,
};

pub const DEFAULT_CANDIDATES: usize = 100;
pub const DEFAULT_K: usize = 10;

/// How raw tables become labelled splits. Stored with a trained model so that
/// evaluation rebuilds the same test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub split: SplitSpec,
    pub top_k_codes: Option<usize>,
    pub max_notes: Option<usize>,
    pub excluded_categories: Vec<String>,
    /// `None` selects the bundled lexicon.
    pub lexicon: Option<PathBuf>,
    /// Candidate list length for hit-ratio cases, capped by [`candidate_count`].
    pub hit_candidates: usize,
    /// Seeds negative generation, hit-ratio cases and symptom resolution.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            split: SplitSpec::default(),
            top_k_codes: None,
            max_notes: None,
            excluded_categories: vec!["Discharge summary".to_owned()],
            lexicon: None,
            hit_candidates: DEFAULT_CANDIDATES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl PipelineConfig {
    /// Points every seed at `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.data.split.seed = seed;
        self.train.seed = seed;
    }
}

/// Everything a train or eval command needs, loadable from JSON. Flags given
/// on the command line override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model_kind: ModelKind,
    pub diagnoses: Option<PathBuf>,
    pub notes: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub k: usize,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            data: self.data.clone(),
            train: self.train.clone(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model_kind: ModelKind::Ncf,
            diagnoses: None,
            notes: None,
            out: None,
            history: None,
            k: DEFAULT_K,
            data: DataConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Candidate list length actually used: the configured length, capped so a
/// sixth of the code universe is left for the subject's own positives.
pub fn candidate_count(configured: usize, n_codes: usize) -> usize {
    configured.min(n_codes - n_codes / 6).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_subjects: usize,
    pub n_codes: usize,
    pub n_symptoms: Option<usize>,
    pub n_positive: usize,
    pub n_negative: usize,
    /// Fraction of diagnosis rows kept by the top-k filter.
    pub coverage: Option<f64>,
    pub dropped_subjects: usize,
    pub dropped_positives: usize,
}

/// A labelled dataset ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub kind: ModelKind,
    pub vocab: Vocabulary,
    pub positives: InteractionSet,
    pub symptoms: Option<SubjectSymptomTable>,
    pub split: Split,
    pub stats: DatasetStats,
}

/// Builds the labelled splits. With `fixed` encoders (from a saved model)
/// every subject, code and term must already be known.
pub fn prepare(
    kind: ModelKind,
    diagnoses: &[DiagnosisRow],
    notes: Option<(&[NoteRow], &Lexicon)>,
    pipeline: &PipelineConfig,
    fixed: Option<&Vocabulary>,
) -> Result<Prepared> {
    let data = &pipeline.data;
    let (rows, coverage) = match data.top_k_codes {
        Some(k) => {
            let (rows, coverage) = filter_top_k_codes(diagnoses, k)?;
            info!(
                "top-{k} codes cover {:.2}% of diagnosis rows",
                coverage * 100.0
            );
            (rows, Some(coverage))
        }
        None => (diagnoses.to_vec(), None),
    };
    let (positives, subjects, codes) = match fixed {
        Some(v) => (
            encode_positive_set(&rows, &v.subjects, &v.codes)?,
            v.subjects.clone(),
            v.codes.clone(),
        ),
        None => build_positive_set(&rows)?,
    };

    let ratio = pipeline.train.neg_ratio;
    let (labelled, symptom_encoder, table, dropped_subjects, dropped_positives) = match kind {
        ModelKind::Ncf => (
            generate_negative_pairs(&positives, ratio, data.seed)?,
            None,
            None,
            0,
            0,
        ),
        ModelKind::Dhf => {
            let (notes, lexicon) =
                notes.ok_or_else(|| Error::Config("dhf needs notes and a lexicon".into()))?;
            let extraction = build_subject_symptom_table(notes, lexicon, &subjects)?;
            if extraction.skipped_notes > 0 {
                warn!(
                    "{} notes belong to subjects without diagnoses",
                    extraction.skipped_notes
                );
            }
            if let Some(expected) = fixed.and_then(|v| v.symptoms.as_ref()) {
                if let Some(term) = extraction
                    .symptoms
                    .ids()
                    .iter()
                    .find(|t| !expected.contains(t))
                {
                    return Err(Error::UnknownIdentifier(term.clone()));
                }
            }
            let encoder = match fixed.and_then(|v| v.symptoms.clone()) {
                Some(e) => e,
                None => extraction.symptoms.clone(),
            };
            let table = remap_table(&extraction.table, &extraction.symptoms, &encoder)?;
            let triples = generate_negative_triples(&positives, &table, ratio, data.seed)?;
            if triples.dropped_subjects > 0 {
                warn!(
                    "{} subjects ({} positives) have no note-derived terms and were dropped",
                    triples.dropped_subjects, triples.dropped_positives
                );
            }
            (
                triples.data,
                Some(encoder),
                Some(table),
                triples.dropped_subjects,
                triples.dropped_positives,
            )
        }
    };
    let stats = DatasetStats {
        n_subjects: subjects.len(),
        n_codes: codes.len(),
        n_symptoms: symptom_encoder.as_ref().map(|e| e.len()),
        n_positive: labelled.n_positive(),
        n_negative: labelled.n_negative(),
        coverage,
        dropped_subjects,
        dropped_positives,
    };
    info!(
        "{} positives, {} negatives over {} subjects × {} codes",
        stats.n_positive, stats.n_negative, stats.n_subjects, stats.n_codes
    );
    let split = split(&labelled, &data.split)?;
    Ok(Prepared {
        kind,
        vocab: Vocabulary {
            subjects,
            codes,
            symptoms: symptom_encoder,
        },
        positives,
        symptoms: table,
        split,
        stats,
    })
}

/// Re-indexes a table built against `from` onto the encoder `to`.
fn remap_table(
    table: &SubjectSymptomTable,
    from: &crate::data::Encoder,
    to: &crate::data::Encoder,
) -> Result<SubjectSymptomTable> {
    if from == to {
        return Ok(table.clone());
    }
    let mut entries = BTreeMap::new();
    for (subject, list) in table.iter() {
        let mapped = list
            .iter()
            .map(|&m| to.encode(from.decode(m)?))
            .collect::<Result<Vec<_>>>()?;
        entries.insert(subject, mapped);
    }
    SubjectSymptomTable::new(entries, to.len())
}

/// The columns of the results tables for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model_kind: ModelKind,
    pub neg_ratio: usize,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
    pub train_macro_f1: f64,
    pub validation_macro_f1: f64,
    pub test_macro_f1: f64,
    pub test_auc: Option<f64>,
    pub test_micro_f1: f64,
    pub hit_ratio_at_k: Option<f64>,
    pub k: usize,
    pub n_candidates: usize,
    pub n_cases: usize,
    pub skipped_cases: usize,
    pub dataset: DatasetStats,
    pub test: EvalReport,
}

fn split_report(model: &Model, set: &InteractionSet, k: usize) -> Result<EvalReport> {
    let probs = model.predict_records(set.records())?;
    EvalReport::from_scores(&probs, &set.labels(), k)
}

/// Hit-ratio cases hold out a test-split positive and draw the remaining
/// candidates from codes the subject never had.
pub fn hit_ratio_cases(
    prepared: &Prepared,
    configured: usize,
    seed: u64,
) -> Result<(Vec<HitRatioCase>, usize, usize)> {
    let n = candidate_count(configured, prepared.positives.n_codes());
    let cases = build_hitratio_cases_from(&prepared.split.test, &prepared.positives, n, seed)?;
    Ok((cases.cases, cases.skipped, n))
}

pub fn evaluate(
    model: &Model,
    prepared: &Prepared,
    pipeline: &PipelineConfig,
    k: usize,
) -> Result<ExperimentReport> {
    if model.kind() != prepared.kind {
        return Err(Error::Config(format!(
            "model is {} but data was prepared for {}",
            model.kind(),
            prepared.kind
        )));
    }
    let split = &prepared.split;
    let train_r = split_report(model, &split.train, k)?;
    let val_r = split_report(model, &split.validation, k)?;
    let mut test_r = split_report(model, &split.test, k)?;

    let seed = pipeline.data.seed;
    let (cases, skipped, n_candidates) =
        hit_ratio_cases(prepared, pipeline.data.hit_candidates, seed.wrapping_add(2))?;
    if skipped > 0 {
        warn!("{skipped} subjects had too few non-positive codes for a hit-ratio case");
    }
    let hit = if cases.is_empty() || k > n_candidates {
        warn!(
            "hit ratio not computed: {} cases, k={k}, {n_candidates} candidates",
            cases.len()
        );
        None
    } else {
        let resolver = prepared
            .symptoms
            .clone()
            .map(|t| SymptomResolver::new(t, seed.wrapping_add(3)));
        let hr = hit_ratio_at_k(
            &cases,
            |subject, codes| {
                let mut scored = score_candidates(model, subject, codes, resolver.as_ref())?;
                scored.sort_by_key(|&(c, _)| c);
                let by_code: Vec<f64> = scored.into_iter().map(|(_, p)| p).collect();
                Ok(by_code)
            },
            k,
        )?;
        Some(hr)
    };
    if let Some(hr) = hit {
        test_r = test_r.with_hit_ratio(hr, cases.len());
    }
    Ok(ExperimentReport {
        model_kind: model.kind(),
        neg_ratio: pipeline.train.neg_ratio.get(),
        train_accuracy: train_r.accuracy,
        validation_accuracy: val_r.accuracy,
        test_accuracy: test_r.accuracy,
        train_macro_f1: train_r.macro_f1,
        validation_macro_f1: val_r.macro_f1,
        test_macro_f1: test_r.macro_f1,
        test_auc: test_r.auc,
        test_micro_f1: test_r.micro_f1,
        hit_ratio_at_k: hit,
        k,
        n_candidates,
        n_cases: cases.len(),
        skipped_cases: skipped,
        dataset: prepared.stats.clone(),
        test: test_r,
    })
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub saved: SavedModel,
    pub history: TrainHistory,
    pub report: ExperimentReport,
}

/// Trains on the train split, monitors the validation split and reports on
/// all three.
pub fn run_experiment(
    prepared: &Prepared,
    pipeline: &PipelineConfig,
    k: usize,
) -> Result<Experiment> {
    let (model, history) = train(
        &pipeline.train,
        &prepared.split.train,
        &prepared.split.validation,
    )?;
    let report = evaluate(&model, prepared, pipeline, k)?;
    Ok(Experiment {
        saved: SavedModel {
            model,
            vocab: prepared.vocab.clone(),
            pipeline: Some(pipeline.clone()),
        },
        history,
        report,
    })
}
