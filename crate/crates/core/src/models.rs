//! NCF and DHF models built on [`crate::neuralnet`]: training, candidate
//! scoring and JSON persistence.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Interaction, InteractionSet, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, classify};
use crate::neuralnet::{
    Activation, AdamConfig, Batch, DenseLayer, EmbeddingTable, Network, OptimizerState,
};
use crate::notes_nlp::SubjectSymptomTable;
use crate::pipeline::PipelineConfig;
use crate::sampling::{rng, NegRatio};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ncf,
    Dhf,
}

impl ModelKind {
    /// Number of embedding tables feeding the tower.
    pub fn n_inputs(self) -> usize {
        match self {
            ModelKind::Ncf => 2,
            ModelKind::Dhf => 3,
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ncf" => Ok(ModelKind::Ncf),
            "dhf" => Ok(ModelKind::Dhf),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ncf => "ncf",
            ModelKind::Dhf => "dhf",
        })
    }
}

/// Subject and code embeddings (P, Q) concatenated into a dense tower.
#[derive(Debug, Clone, PartialEq)]
pub struct NcfModel {
    net: Network,
}

/// NCF plus a third embedding (R) for a note-derived term.
#[derive(Debug, Clone, PartialEq)]
pub struct DhfModel {
    net: Network,
}

impl NcfModel {
    pub fn new(net: Network) -> Result<Self> {
        if net.embeddings().len() != 2 {
            return Err(Error::Shape(format!(
                "NCF takes 2 embedding tables, got {}",
                net.embeddings().len()
            )));
        }
        Ok(NcfModel { net })
    }

    pub fn subject_embedding(&self) -> &EmbeddingTable {
        &self.net.embeddings()[0]
    }

    pub fn code_embedding(&self) -> &EmbeddingTable {
        &self.net.embeddings()[1]
    }

    pub fn layers(&self) -> &[DenseLayer] {
        self.net.layers()
    }

    pub fn forward(&self, subject: usize, code: usize) -> Result<f64> {
        self.net.predict(&[subject, code])
    }
}

impl DhfModel {
    pub fn new(net: Network) -> Result<Self> {
        if net.embeddings().len() != 3 {
            return Err(Error::Shape(format!(
                "DHF takes 3 embedding tables, got {}",
                net.embeddings().len()
            )));
        }
        Ok(DhfModel { net })
    }

    pub fn subject_embedding(&self) -> &EmbeddingTable {
        &self.net.embeddings()[0]
    }

    pub fn code_embedding(&self) -> &EmbeddingTable {
        &self.net.embeddings()[1]
    }

    pub fn symptom_embedding(&self) -> &EmbeddingTable {
        &self.net.embeddings()[2]
    }

    pub fn layers(&self) -> &[DenseLayer] {
        self.net.layers()
    }

    pub fn forward(&self, subject: usize, code: usize, symptom: usize) -> Result<f64> {
        self.net.predict(&[subject, code, symptom])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Ncf(NcfModel),
    Dhf(DhfModel),
}

impl Model {
    pub fn from_network(kind: ModelKind, net: Network) -> Result<Self> {
        match kind {
            ModelKind::Ncf => NcfModel::new(net).map(Model::Ncf),
            ModelKind::Dhf => DhfModel::new(net).map(Model::Dhf),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Ncf(_) => ModelKind::Ncf,
            Model::Dhf(_) => ModelKind::Dhf,
        }
    }

    pub fn network(&self) -> &Network {
        match self {
            Model::Ncf(m) => &m.net,
            Model::Dhf(m) => &m.net,
        }
    }

    fn network_mut(&mut self) -> &mut Network {
        match self {
            Model::Ncf(m) => &mut m.net,
            Model::Dhf(m) => &mut m.net,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.network().embeddings()[0].dim()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        let layers = self.network().layers();
        layers[..layers.len() - 1]
            .iter()
            .map(DenseLayer::out_dim)
            .collect()
    }

    pub fn n_subjects(&self) -> usize {
        self.network().embeddings()[0].rows()
    }

    pub fn n_codes(&self) -> usize {
        self.network().embeddings()[1].rows()
    }

    pub fn n_symptoms(&self) -> Option<usize> {
        self.network().embeddings().get(2).map(EmbeddingTable::rows)
    }

    fn inputs(&self, r: &Interaction) -> Result<Vec<usize>> {
        match (self, r.symptom) {
            (Model::Ncf(_), _) => Ok(vec![r.subject, r.code]),
            (Model::Dhf(_), Some(m)) => Ok(vec![r.subject, r.code, m]),
            (Model::Dhf(_), None) => Err(Error::InvalidData(
                "DHF model needs a symptom for every record".into(),
            )),
        }
    }

    pub fn predict(&self, r: &Interaction) -> Result<f64> {
        self.network().predict(&self.inputs(r)?)
    }

    pub fn predict_records(&self, records: &[Interaction]) -> Result<Vec<f64>> {
        let batch = self.batch(records)?;
        self.network().predict_batch(&batch)
    }

    fn batch(&self, records: &[Interaction]) -> Result<Batch> {
        let width = self.kind().n_inputs();
        let mut inputs = Vec::with_capacity(records.len() * width);
        for r in records {
            inputs.extend(self.inputs(r)?);
        }
        Batch::new(width, inputs, records.iter().map(|r| r.label).collect())
    }

    fn check_compatible(&self, data: &InteractionSet) -> Result<()> {
        if data.n_subjects() != self.n_subjects() || data.n_codes() != self.n_codes() {
            return Err(Error::InvalidData(format!(
                "data has {} subjects × {} codes, model expects {} × {}",
                data.n_subjects(),
                data.n_codes(),
                self.n_subjects(),
                self.n_codes()
            )));
        }
        if let Some(n) = self.n_symptoms() {
            if data.n_symptoms() != n {
                return Err(Error::InvalidData(format!(
                    "data has {} symptoms, model expects {n}",
                    data.n_symptoms()
                )));
            }
        }
        Ok(())
    }
}

/// Hyperparameters for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub neg_ratio: NegRatio,
    pub seed: u64,
    /// Stop after this many epochs without validation-accuracy improvement and
    /// return the best model seen. Off when `None`.
    pub early_stopping_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_dim: 8,
            hidden_sizes: vec![64, 32],
            epochs: 20,
            batch_size: 256,
            learning_rate: 1e-3,
            neg_ratio: NegRatio::FOUR,
            seed: 0,
            early_stopping_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "embedding_dim and batch_size must be positive".into(),
            ));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.early_stopping_patience == Some(0) {
            return Err(Error::Config(
                "early stopping patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    /// Accuracy of the predictions made while training through the epoch.
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Builds an untrained model sized for `data`.
pub fn init_model(config: &TrainConfig, data: &InteractionSet) -> Result<Model> {
    let (kind, sizes) = if data.is_hybrid() {
        (
            ModelKind::Dhf,
            vec![data.n_subjects(), data.n_codes(), data.n_symptoms()],
        )
    } else {
        (ModelKind::Ncf, vec![data.n_subjects(), data.n_codes()])
    };
    let net = Network::init(
        &sizes,
        config.embedding_dim,
        &config.hidden_sizes,
        config.seed,
    )?;
    Model::from_network(kind, net)
}

/// Mini-batch Adam on mean BCE, shuffled each epoch from the config seed.
/// The model kind follows the data: triples train DHF, pairs train NCF.
pub fn train(
    config: &TrainConfig,
    train_set: &InteractionSet,
    validation: &InteractionSet,
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::EmptyInput("training"));
    }
    if train_set.is_hybrid() != validation.is_hybrid() {
        return Err(Error::InvalidData(
            "train and validation sets differ in record type".into(),
        ));
    }
    let mut model = init_model(config, train_set)?;
    model.check_compatible(train_set)?;
    model.check_compatible(validation)?;

    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut optimizer = OptimizerState::for_network(adam, model.network());
    let mut shuffler = rng(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let validation_labels = validation.labels();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Model)> = None;
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffler);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        let mut correct = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let records: Vec<Interaction> = chunk.iter().map(|&i| train_set.records()[i]).collect();
            let batch = model.batch(&records)?;
            let out = model.network().forward_backward(&batch)?;
            if !out.loss.is_finite() || !out.gradients.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    learning_rate: config.learning_rate,
                });
            }
            correct += classify(&out.probabilities)
                .iter()
                .zip(batch.labels())
                .filter(|(p, y)| p == y)
                .count();
            loss_sum += out.loss;
            n_batches += 1;
            optimizer.apply(model.network_mut(), &out.gradients)?;
        }
        let train_loss = loss_sum / n_batches as f64;
        let validation_accuracy = accuracy(
            &classify(&model.predict_records(validation.records())?),
            &validation_labels,
        )?;
        let stats = EpochStats {
            epoch,
            train_loss,
            train_accuracy: correct as f64 / train_set.len() as f64,
            validation_accuracy,
        };
        debug!(
            "epoch {epoch}: loss {:.5} train acc {:.4} val acc {:.4}",
            stats.train_loss, stats.train_accuracy, stats.validation_accuracy
        );
        history.epochs.push(stats);

        if let Some(patience) = config.early_stopping_patience {
            if best
                .as_ref()
                .is_none_or(|(acc, _)| validation_accuracy > *acc)
            {
                best = Some((validation_accuracy, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    info!("early stopping after epoch {epoch}");
                    break;
                }
            }
        }
    }
    if let Some((_, best_model)) = best {
        model = best_model;
    }
    Ok((model, history))
}

/// Chooses the note-derived term a DHF model scores a subject with: a seeded
/// uniform draw from that subject's terms, stable across calls.
#[derive(Debug, Clone)]
pub struct SymptomResolver {
    table: SubjectSymptomTable,
    seed: u64,
}

impl SymptomResolver {
    pub fn new(table: SubjectSymptomTable, seed: u64) -> Self {
        SymptomResolver { table, seed }
    }

    pub fn table(&self) -> &SubjectSymptomTable {
        &self.table
    }

    pub fn resolve(&self, subject: usize) -> Result<usize> {
        let list = self.table.get(subject).ok_or_else(|| {
            Error::InvalidData(format!("subject {subject} has no note-derived terms"))
        })?;
        let mixed = self
            .seed
            .wrapping_add((subject as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Ok(list[rng(mixed).gen_range(0..list.len())])
    }
}

/// Scores every candidate code for `subject`, sorted by descending
/// probability with ties broken by ascending code index.
pub fn score_candidates(
    model: &Model,
    subject: usize,
    codes: &[usize],
    resolver: Option<&SymptomResolver>,
) -> Result<Vec<(usize, f64)>> {
    if codes.is_empty() {
        return Err(Error::EmptyInput("models: candidate scoring"));
    }
    let symptom = match (model.kind(), resolver) {
        (ModelKind::Ncf, _) => None,
        (ModelKind::Dhf, Some(r)) => Some(r.resolve(subject)?),
        (ModelKind::Dhf, None) => {
            return Err(Error::InvalidData(
                "DHF scoring needs a symptom resolver".into(),
            ))
        }
    };
    let records: Vec<Interaction> = codes
        .iter()
        .map(|&c| Interaction {
            subject,
            code: c,
            symptom,
            label: false,
        })
        .collect();
    let probs = model.predict_records(&records)?;
    let mut scored: Vec<(usize, f64)> = codes.iter().copied().zip(probs).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerParams {
    activation: Activation,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Parameters {
    subject_embedding: Vec<Vec<f64>>,
    code_embedding: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    symptom_embedding: Option<Vec<Vec<f64>>>,
    layers: Vec<LayerParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VocabSizes {
    subjects: usize,
    codes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    symptoms: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model_kind: ModelKind,
    embedding_dim: usize,
    hidden_sizes: Vec<usize>,
    vocab_sizes: VocabSizes,
    encoders: Vocabulary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pipeline: Option<PipelineConfig>,
    parameters: Parameters,
}

/// A model with the encoders it was trained against and, when it came from
/// the CLI pipeline, the data settings needed to rebuild its splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: Model,
    pub vocab: Vocabulary,
    pub pipeline: Option<PipelineConfig>,
}

fn to_rows(table: &EmbeddingTable) -> Vec<Vec<f64>> {
    table
        .weights()
        .chunks(table.dim())
        .map(<[f64]>::to_vec)
        .collect()
}

fn from_rows(name: &str, rows: Vec<Vec<f64>>, n_rows: usize, dim: usize) -> Result<EmbeddingTable> {
    if rows.len() != n_rows || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::ModelFormat(format!(
            "{name} embedding is not {n_rows}×{dim}"
        )));
    }
    EmbeddingTable::from_weights(n_rows, dim, rows.concat())
        .map_err(|e| Error::ModelFormat(format!("{name} embedding: {e}")))
}

impl SavedModel {
    fn to_file(&self) -> ModelFile {
        let net = self.model.network();
        let emb = net.embeddings();
        ModelFile {
            format_version: FORMAT_VERSION,
            model_kind: self.model.kind(),
            embedding_dim: self.model.embedding_dim(),
            hidden_sizes: self.model.hidden_sizes(),
            vocab_sizes: VocabSizes {
                subjects: self.model.n_subjects(),
                codes: self.model.n_codes(),
                symptoms: self.model.n_symptoms(),
            },
            encoders: self.vocab.clone(),
            pipeline: self.pipeline.clone(),
            parameters: Parameters {
                subject_embedding: to_rows(&emb[0]),
                code_embedding: to_rows(&emb[1]),
                symptom_embedding: emb.get(2).map(to_rows),
                layers: net
                    .layers()
                    .iter()
                    .map(|l| LayerParams {
                        activation: l.activation(),
                        weights: l
                            .weights()
                            .chunks(l.in_dim())
                            .map(<[f64]>::to_vec)
                            .collect(),
                        bias: l.bias().to_vec(),
                    })
                    .collect(),
            },
        }
    }

    fn from_file(file: ModelFile) -> Result<Self> {
        if file.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: file.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let sizes = &file.vocab_sizes;
        let vocab = &file.encoders;
        if vocab.subjects.len() != sizes.subjects
            || vocab.codes.len() != sizes.codes
            || vocab.symptoms.as_ref().map(|e| e.len()) != sizes.symptoms
        {
            return Err(Error::ModelFormat(
                "encoder sizes disagree with vocab_sizes".into(),
            ));
        }
        if (file.model_kind == ModelKind::Dhf) != sizes.symptoms.is_some()
            || sizes.symptoms.is_some() != file.parameters.symptom_embedding.is_some()
        {
            return Err(Error::ModelFormat(format!(
                "{} model with inconsistent symptom vocabulary",
                file.model_kind
            )));
        }
        let dim = file.embedding_dim;
        let params = file.parameters;
        let mut embeddings = vec![
            from_rows("subject", params.subject_embedding, sizes.subjects, dim)?,
            from_rows("code", params.code_embedding, sizes.codes, dim)?,
        ];
        if let (Some(rows), Some(n)) = (params.symptom_embedding, sizes.symptoms) {
            embeddings.push(from_rows("symptom", rows, n, dim)?);
        }
        let mut layers = Vec::with_capacity(params.layers.len());
        for (i, l) in params.layers.into_iter().enumerate() {
            let out_dim = l.weights.len();
            let in_dim = l.weights.first().map_or(0, Vec::len);
            if l.weights.iter().any(|r| r.len() != in_dim) {
                return Err(Error::ModelFormat(format!("layer {i} weights are ragged")));
            }
            layers.push(
                DenseLayer::new(in_dim, out_dim, l.weights.concat(), l.bias, l.activation)
                    .map_err(|e| Error::ModelFormat(format!("layer {i}: {e}")))?,
            );
        }
        let net =
            Network::new(embeddings, layers).map_err(|e| Error::ModelFormat(e.to_string()))?;
        let model = Model::from_network(file.model_kind, net)?;
        if model.hidden_sizes() != file.hidden_sizes {
            return Err(Error::ModelFormat(format!(
                "hidden_sizes {:?} disagree with layers {:?}",
                file.hidden_sizes,
                model.hidden_sizes()
            )));
        }
        Ok(SavedModel {
            model,
            vocab: file.encoders,
            pipeline: file.pipeline,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.to_file())?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)
            .map_err(|e| Error::ModelFormat(format!("corrupt model file: {e}")))?;
        Self::from_file(file)
    }
}

pub fn save_model(path: impl AsRef<Path>, saved: &SavedModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, saved.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SavedModel::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Encoder;
    use crate::neuralnet::EmbeddingTable;

    fn block_data() -> InteractionSet {
        // Subjects 0,1 hold code 0; subjects 2,3 hold code 1.
        let mut recs = Vec::new();
        for s in 0..4 {
            for c in 0..2 {
                recs.push(Interaction {
                    subject: s,
                    code: c,
                    symptom: None,
                    label: (s < 2) == (c == 0),
                });
            }
        }
        InteractionSet::new(recs, 4, 2, 0).unwrap()
    }

    fn zero_output(model: &Model) -> Model {
        let net = model.network();
        let mut layers = net.layers().to_vec();
        let last = layers.pop().unwrap();
        layers.push(
            DenseLayer::new(
                last.in_dim(),
                1,
                vec![0.0; last.in_dim()],
                vec![0.0],
                Activation::Sigmoid,
            )
            .unwrap(),
        );
        Model::from_network(
            model.kind(),
            Network::new(net.embeddings().to_vec(), layers).unwrap(),
        )
        .unwrap()
    }

    fn dhf(seed: u64) -> Model {
        Model::from_network(
            ModelKind::Dhf,
            Network::init(&[5, 6, 7], 8, &[64, 32], seed).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_output_layer_gives_half() {
        let ncf = zero_output(
            &Model::from_network(
                ModelKind::Ncf,
                Network::init(&[3, 4], 8, &[64, 32], 0).unwrap(),
            )
            .unwrap(),
        );
        let Model::Ncf(m) = &ncf else { unreachable!() };
        for s in 0..3 {
            for c in 0..4 {
                assert_eq!(m.forward(s, c).unwrap(), 0.5);
            }
        }
        let Model::Dhf(m) = zero_output(&dhf(1)) else {
            unreachable!()
        };
        assert_eq!(m.forward(4, 5, 6).unwrap(), 0.5);
        assert!(m.forward(5, 0, 0).is_err());
    }

    #[test]
    fn dhf_shapes() {
        let Model::Dhf(m) = dhf(0) else {
            unreachable!()
        };
        assert_eq!(m.layers()[0].in_dim(), 24);
        assert_eq!(m.symptom_embedding().rows(), 7);
        assert_eq!(m.subject_embedding().dim(), 8);
    }

    #[test]
    fn symptom_pathway_is_live() {
        for seed in 0..10 {
            let Model::Dhf(m) = dhf(seed) else {
                unreachable!()
            };
            let scores: Vec<f64> = (0..7).map(|k| m.forward(1, 2, k).unwrap()).collect();
            assert!(scores.iter().any(|&p| p != scores[0]), "seed {seed}");
            assert!(scores.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let a = dhf(3);
        let b = dhf(3);
        let r = Interaction::positive(2, 3).with_symptom(4);
        assert_eq!(
            a.predict(&r).unwrap().to_bits(),
            b.predict(&r).unwrap().to_bits()
        );
        assert_eq!(
            a.predict(&r).unwrap().to_bits(),
            a.predict(&r).unwrap().to_bits()
        );
    }

    #[test]
    fn toy_problem_learns() {
        let data = block_data();
        let config = TrainConfig {
            epochs: 5,
            batch_size: 1,
            learning_rate: 0.05,
            hidden_sizes: vec![8, 4],
            seed: 2,
            ..TrainConfig::default()
        };
        let (_, history) = train(&config, &data, &data).unwrap();
        let acc: Vec<f64> = history.epochs.iter().map(|e| e.train_accuracy).collect();
        assert_eq!(history.epochs.len(), 5);
        assert!(acc[4] > acc[0], "{acc:?}");
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let data = block_data();
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (model, history) = train(&config, &data, &data).unwrap();
        assert!(history.epochs.is_empty());
        assert_eq!(model, init_model(&config, &data).unwrap());
    }

    #[test]
    fn training_is_reproducible() {
        let data = block_data();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let (m1, h1) = train(&config, &data, &data).unwrap();
        let (m2, h2) = train(&config, &data, &data).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn divergent_learning_rate_reports_numeric_failure() {
        let data = block_data();
        let config = TrainConfig {
            epochs: 50,
            batch_size: 1,
            learning_rate: 1e300,
            ..TrainConfig::default()
        };
        match train(&config, &data, &data) {
            Err(e @ Error::NonFiniteLoss { .. }) => {
                assert!(e.is_numeric());
                assert!(e.to_string().contains("learning rate"));
            }
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }

    #[test]
    fn early_stopping_keeps_best() {
        let data = block_data();
        let config = TrainConfig {
            epochs: 40,
            batch_size: 1,
            learning_rate: 0.05,
            early_stopping_patience: Some(2),
            ..TrainConfig::default()
        };
        let (_, history) = train(&config, &data, &data).unwrap();
        assert!(history.epochs.len() < 40);
    }

    #[test]
    fn scoring_order() {
        let model = Model::from_network(
            ModelKind::Ncf,
            Network::init(&[2, 30], 8, &[16], 4).unwrap(),
        )
        .unwrap();
        let one = score_candidates(&model, 0, &[7], None).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].0, 7);
        let codes: Vec<usize> = (0..30).rev().collect();
        let ranked = score_candidates(&model, 1, &codes, None).unwrap();
        let mut seen: Vec<usize> = ranked.iter().map(|r| r.0).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..30).collect::<Vec<_>>());
        assert!(ranked.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(score_candidates(&model, 0, &[], None).is_err());
    }

    #[test]
    fn scoring_ties_by_code() {
        let model = zero_output(
            &Model::from_network(ModelKind::Ncf, Network::init(&[1, 5], 2, &[3], 0).unwrap())
                .unwrap(),
        );
        let ranked = score_candidates(&model, 0, &[4, 1, 3], None).unwrap();
        assert_eq!(
            ranked.iter().map(|r| r.0).collect::<Vec<_>>(),
            vec![1, 3, 4]
        );
    }

    #[test]
    fn ranking_survives_logit() {
        let model = Model::from_network(
            ModelKind::Ncf,
            Network::init(&[2, 40], 8, &[16], 8).unwrap(),
        )
        .unwrap();
        let codes: Vec<usize> = (0..40).collect();
        let ranked = score_candidates(&model, 1, &codes, None).unwrap();
        let mut by_logit: Vec<(usize, f64)> = ranked
            .iter()
            .map(|&(c, p)| (c, (p / (1.0 - p)).ln()))
            .collect();
        by_logit.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        assert_eq!(
            by_logit.iter().map(|r| r.0).collect::<Vec<_>>(),
            ranked.iter().map(|r| r.0).collect::<Vec<_>>()
        );
    }

    #[test]
    fn dhf_scoring_needs_resolver() {
        let model = dhf(2);
        assert!(score_candidates(&model, 0, &[1, 2], None).is_err());
        let table = SubjectSymptomTable::new([(0, vec![3, 5])].into(), 7).unwrap();
        let resolver = SymptomResolver::new(table, 9);
        let a = score_candidates(&model, 0, &[1, 2], Some(&resolver)).unwrap();
        assert_eq!(
            a,
            score_candidates(&model, 0, &[1, 2], Some(&resolver)).unwrap()
        );
        assert!([3, 5].contains(&resolver.resolve(0).unwrap()));
        assert!(score_candidates(&model, 1, &[1], Some(&resolver)).is_err());
    }

    fn vocab(model: &Model) -> Vocabulary {
        let ids = |n: usize, p: &str| Encoder::fit((0..n).map(|i| format!("{p}{i}"))).unwrap();
        Vocabulary {
            subjects: ids(model.n_subjects(), "s"),
            codes: ids(model.n_codes(), "c"),
            symptoms: model.n_symptoms().map(|n| ids(n, "m")),
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        for model in [
            dhf(5),
            Model::from_network(
                ModelKind::Ncf,
                Network::init(&[4, 6], 8, &[64, 32], 6).unwrap(),
            )
            .unwrap(),
        ] {
            let saved = SavedModel {
                vocab: vocab(&model),
                model,
                pipeline: None,
            };
            let back = SavedModel::from_json(&saved.to_json().unwrap()).unwrap();
            assert_eq!(back, saved);
            for (a, b) in saved
                .model
                .network()
                .tensors()
                .iter()
                .zip(back.model.network().tensors())
            {
                assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            let r = Interaction::positive(1, 2).with_symptom(3);
            assert_eq!(
                saved.model.predict(&r).unwrap().to_bits(),
                back.model.predict(&r).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn corrupt_files_are_errors() {
        let model = dhf(1);
        let saved = SavedModel {
            vocab: vocab(&model),
            model,
            pipeline: None,
        };
        let json = saved.to_json().unwrap();
        let err = SavedModel::from_json(&json[..json.len() / 2]).unwrap_err();
        assert!(err.to_string().contains("corrupt"), "{err}");

        let bumped = json.replacen("\"format_version\": 1", "\"format_version\": 99", 1);
        assert!(matches!(
            SavedModel::from_json(&bumped),
            Err(Error::VersionMismatch { found: 99, .. })
        ));

        let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
        value["parameters"]["code_embedding"]
            .as_array_mut()
            .unwrap()
            .pop();
        assert!(matches!(
            SavedModel::from_json(&value.to_string()),
            Err(Error::ModelFormat(_))
        ));

        let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
        value["model_kind"] = "ncf".into();
        assert!(SavedModel::from_json(&value.to_string()).is_err());
    }

    #[test]
    fn wrong_embedding_count_rejected() {
        let net = Network::new(
            vec![EmbeddingTable::zeros(2, 2).unwrap()],
            vec![DenseLayer::new(2, 1, vec![0.0; 2], vec![0.0], Activation::Sigmoid).unwrap()],
        )
        .unwrap();
        assert!(NcfModel::new(net.clone()).is_err());
        assert!(DhfModel::new(net).is_err());
    }
}
