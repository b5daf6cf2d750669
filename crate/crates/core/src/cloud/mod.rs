//! Cloud tier: labeled datasets, the stratified train/test split, the
//! reference classifiers, confusion-matrix metrics, model persistence, and
//! the broker-driven classification service.

mod mlp;

pub use mlp::{MlpGrads, MlpModel, TrainConfig, HIDDEN_1, HIDDEN_2, INPUT_LEN};

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edge::HrcFunction;
use crate::features::FeatureGrid;
use crate::transport::{
    Broker, ClassificationMsg, Clock, FusedGridMsg, LatencyHistogram, MessageKind, Subscription,
    TelemetryMessage, Topic,
};
use crate::types::{make_rng, Timestamp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("class {class} has {got} samples; need at least {min}")]
    TooFewSamples {
        class: usize,
        got: usize,
        min: usize,
    },
    #[error("samples disagree on channel counts ({0} vs {1})")]
    InconsistentChannels(usize, usize),
    #[error("grid channels do not match the model: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label {0} outside class count {1}")]
    LabelOutOfRange(usize, usize),
    #[error("model file malformed: {0}")]
    ModelFormat(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CloudError {
    fn from(e: std::io::Error) -> Self {
        CloudError::Io(e.to_string())
    }
}

/// Labeled feature grids plus the class-name table.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<(FeatureGrid, usize)>,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        samples: Vec<(FeatureGrid, usize)>,
        class_names: Vec<String>,
    ) -> Result<Self, CloudError> {
        let k = class_names.len();
        for (_, label) in &samples {
            if *label >= k {
                return Err(CloudError::LabelOutOfRange(*label, k));
            }
        }
        Ok(LabeledDataset {
            samples,
            class_names,
        })
    }

    pub fn channels(&self) -> Result<usize, CloudError> {
        let mut channels = None;
        for (grid, _) in &self.samples {
            match channels {
                None => channels = Some(grid.channels.len()),
                Some(c) if c != grid.channels.len() => {
                    return Err(CloudError::InconsistentChannels(c, grid.channels.len()))
                }
                _ => {}
            }
        }
        channels.ok_or(CloudError::EmptyDataset)
    }
}

/// Stratified split, deterministic in the seed: every class contributes
/// `round(fraction * n)` samples to the training part, clamped so both
/// parts stay non-empty. Classes with fewer than 2 samples are rejected.
pub fn split_dataset(
    dataset: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), CloudError> {
    let k = dataset.class_names.len();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, (_, label)) in dataset.samples.iter().enumerate() {
        per_class[*label].push(i);
    }
    let mut rng = make_rng(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class, indices) in per_class.iter_mut().enumerate() {
        if indices.len() < 2 {
            return Err(CloudError::TooFewSamples {
                class,
                got: indices.len(),
                min: 2,
            });
        }
        for i in (1..indices.len()).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        let n = indices.len();
        let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        train_idx.extend_from_slice(&indices[..n_train]);
        test_idx.extend_from_slice(&indices[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| LabeledDataset {
        samples: idx.iter().map(|&i| dataset.samples[i].clone()).collect(),
        class_names: dataset.class_names.clone(),
    };
    Ok((pick(&train_idx), pick(&test_idx)))
}

/// Nearest-centroid baseline over concatenated channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    pub channels: usize,
    pub classes: usize,
    pub centroids: Vec<Vec<f64>>,
}

impl CentroidModel {
    fn flatten(grid: &FeatureGrid) -> Vec<f64> {
        grid.channels
            .iter()
            .flat_map(|(_, g)| g.data.iter().copied())
            .collect()
    }

    pub fn fit(train: &LabeledDataset) -> Result<Self, CloudError> {
        let channels = train.channels()?;
        let classes = train.class_names.len();
        let dim = channels * INPUT_LEN;
        let mut sums = vec![vec![0.0; dim]; classes];
        let mut counts = vec![0usize; classes];
        for (grid, label) in &train.samples {
            let x = Self::flatten(grid);
            if x.len() != dim {
                return Err(CloudError::ChannelMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            for (s, v) in sums[*label].iter_mut().zip(&x) {
                *s += v;
            }
            counts[*label] += 1;
        }
        for (class, (sum, count)) in sums.iter_mut().zip(&counts).enumerate() {
            if *count == 0 {
                return Err(CloudError::TooFewSamples {
                    class,
                    got: 0,
                    min: 1,
                });
            }
            for v in sum.iter_mut() {
                *v /= *count as f64;
            }
        }
        Ok(CentroidModel {
            channels,
            classes,
            centroids: sums,
        })
    }

    pub fn predict(&self, grid: &FeatureGrid) -> Result<Vec<f64>, CloudError> {
        if grid.channels.len() != self.channels {
            return Err(CloudError::ChannelMismatch {
                expected: self.channels,
                got: grid.channels.len(),
            });
        }
        let x = Self::flatten(grid);
        let scores: Vec<f64> = self
            .centroids
            .iter()
            .map(|c| -c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / sum).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ReferenceMlp,
    NearestCentroid,
}

/// A trained classifier plus its class-name table.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierModel {
    Mlp {
        model: MlpModel,
        class_names: Vec<String>,
    },
    Centroid {
        model: CentroidModel,
        class_names: Vec<String>,
    },
}

impl ClassifierModel {
    pub fn class_names(&self) -> &[String] {
        match self {
            ClassifierModel::Mlp { class_names, .. } => class_names,
            ClassifierModel::Centroid { class_names, .. } => class_names,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            ClassifierModel::Mlp { model, .. } => model.channels,
            ClassifierModel::Centroid { model, .. } => model.channels,
        }
    }
}

/// Trains the requested classifier kind on the training set.
pub fn train_classifier(
    train: &LabeledDataset,
    kind: ModelKind,
    config: &TrainConfig,
) -> Result<ClassifierModel, CloudError> {
    let channels = train.channels()?;
    let classes = train.class_names.len();
    match kind {
        ModelKind::NearestCentroid => Ok(ClassifierModel::Centroid {
            model: CentroidModel::fit(train)?,
            class_names: train.class_names.clone(),
        }),
        ModelKind::ReferenceMlp => {
            let samples: Vec<(Vec<DVector<f64>>, usize)> = train
                .samples
                .iter()
                .map(|(grid, label)| (mlp::grid_channel_vectors(grid), *label))
                .collect();
            let mut model = MlpModel::init(channels, classes, *config);
            model.fit(&samples);
            Ok(ClassifierModel::Mlp {
                model,
                class_names: train.class_names.clone(),
            })
        }
    }
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax_class(probs: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, p) in probs.iter().enumerate().skip(1) {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

/// Predicted class plus the softmax vector.
pub fn classify(model: &ClassifierModel, grid: &FeatureGrid) -> Result<(usize, Vec<f64>), CloudError> {
    let probs = match model {
        ClassifierModel::Mlp { model, .. } => model.predict(grid)?,
        ClassifierModel::Centroid { model, .. } => model.predict(grid)?,
    };
    Ok((argmax_class(&probs), probs))
}

/// Row = actual class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.classes + predicted]
    }

    pub fn add(&mut self, actual: usize, predicted: usize) {
        self.counts[actual * self.classes + predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, actual: usize) -> u64 {
        (0..self.classes).map(|j| self.get(actual, j)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, predicted)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.trace() as f64 / total as f64
    }

    /// Per-class precision; an empty predicted column scores 0.
    pub fn precision(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|j| {
                let col = self.col_sum(j);
                if col == 0 {
                    0.0
                } else {
                    self.get(j, j) as f64 / col as f64
                }
            })
            .collect()
    }

    pub fn recall(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|i| {
                let row = self.row_sum(i);
                if row == 0 {
                    0.0
                } else {
                    self.get(i, i) as f64 / row as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub accuracy: f64,
}

/// Confusion matrix and metrics of a model over a test set.
pub fn evaluate(model: &ClassifierModel, test: &LabeledDataset) -> Result<Evaluation, CloudError> {
    if test.samples.is_empty() {
        return Err(CloudError::EmptyDataset);
    }
    let mut confusion = ConfusionMatrix::new(test.class_names.len());
    for (grid, actual) in &test.samples {
        let (predicted, _) = classify(model, grid)?;
        confusion.add(*actual, predicted);
    }
    Ok(Evaluation {
        precision: confusion.precision(),
        recall: confusion.recall(),
        accuracy: confusion.accuracy(),
        confusion,
    })
}

/// Metrics report CSV: one row per class (precision, recall, support).
pub fn metrics_csv(eval: &Evaluation, class_names: &[String]) -> String {
    let mut out = String::from("class,precision,recall,support\n");
    for (i, name) in class_names.iter().enumerate() {
        out.push_str(&format!(
            "{name},{},{},{}\n",
            eval.precision[i],
            eval.recall[i],
            eval.confusion.row_sum(i)
        ));
    }
    out
}

/// Single-pipeline vs fused accuracy comparison. A fused accuracy more
/// than 0.02 below the best single pipeline is flagged as a violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionGainReport {
    pub singles: Vec<(String, f64)>,
    pub fused_accuracy: f64,
    pub best_single: f64,
    pub gain_vs_best: f64,
    pub violation: bool,
}

pub fn fusion_gain_report(singles: &[(String, f64)], fused_accuracy: f64) -> FusionGainReport {
    let best_single = singles.iter().map(|(_, a)| *a).fold(0.0, f64::max);
    FusionGainReport {
        singles: singles.to_vec(),
        fused_accuracy,
        best_single,
        gain_vs_best: fused_accuracy - best_single,
        violation: fused_accuracy < best_single - 0.02,
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    kind: ModelKind,
    channels: usize,
    input_len: usize,
    classes: usize,
    class_names: Vec<String>,
    config: Option<TrainConfig>,
    weights: usize,
}

/// Model file: one JSON header line, then the weights as a flat
/// little-endian f64 block (row-major, w1 blocks in channel order, b1,
/// w2, b2, w3, b3; centroids are row-major class-by-class).
pub fn save_model<P: AsRef<Path>>(model: &ClassifierModel, path: P) -> Result<(), CloudError> {
    let (header, weights) = match model {
        ClassifierModel::Mlp { model, class_names } => (
            ModelHeader {
                kind: ModelKind::ReferenceMlp,
                channels: model.channels,
                input_len: INPUT_LEN,
                classes: model.classes,
                class_names: class_names.clone(),
                config: Some(model.config),
                weights: model.param_count(),
            },
            model.flat_params(),
        ),
        ClassifierModel::Centroid { model, class_names } => (
            ModelHeader {
                kind: ModelKind::NearestCentroid,
                channels: model.channels,
                input_len: INPUT_LEN,
                classes: model.classes,
                class_names: class_names.clone(),
                config: None,
                weights: model.classes * model.channels * INPUT_LEN,
            },
            model.centroids.iter().flatten().copied().collect(),
        ),
    };
    let mut file = std::fs::File::create(path)?;
    let header_line =
        serde_json::to_string(&header).map_err(|e| CloudError::ModelFormat(e.to_string()))?;
    file.write_all(header_line.as_bytes())?;
    file.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(weights.len() * 8);
    for w in &weights {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    file.write_all(&bytes)?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<ClassifierModel, CloudError> {
    let mut file = std::fs::File::open(path)?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)?;
    let newline = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CloudError::ModelFormat("missing header line".into()))?;
    let header: ModelHeader = serde_json::from_slice(&raw[..newline])
        .map_err(|e| CloudError::ModelFormat(e.to_string()))?;
    let body = &raw[newline + 1..];
    if body.len() != header.weights * 8 {
        return Err(CloudError::ModelFormat(format!(
            "weight block has {} bytes, expected {}",
            body.len(),
            header.weights * 8
        )));
    }
    if header.input_len != INPUT_LEN {
        return Err(CloudError::ModelFormat(format!(
            "unsupported input_len {}",
            header.input_len
        )));
    }
    let weights: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    match header.kind {
        ModelKind::ReferenceMlp => {
            let config = header.config.unwrap_or_default();
            let model =
                MlpModel::from_flat_params(header.channels, header.classes, config, &weights)?;
            Ok(ClassifierModel::Mlp {
                model,
                class_names: header.class_names,
            })
        }
        ModelKind::NearestCentroid => {
            let dim = header.channels * INPUT_LEN;
            let centroids: Vec<Vec<f64>> = weights.chunks_exact(dim).map(|c| c.to_vec()).collect();
            if centroids.len() != header.classes {
                return Err(CloudError::ModelFormat("centroid count mismatch".into()));
            }
            Ok(ClassifierModel::Centroid {
                model: CentroidModel {
                    channels: header.channels,
                    classes: header.classes,
                    centroids,
                },
                class_names: header.class_names,
            })
        }
    }
}

/// Broker-driven classification service: consumes fused grids, publishes
/// results per HRC function, and records detection latency.
pub struct CloudService<C: Clock> {
    cell: String,
    broker: Broker,
    clock: C,
    subscription: Subscription,
    models: BTreeMap<HrcFunction, ClassifierModel>,
    latencies: BTreeMap<HrcFunction, LatencyHistogram>,
}

impl<C: Clock> CloudService<C> {
    pub fn new(broker: Broker, cell: &str, clock: C) -> Result<Self, crate::transport::TransportError> {
        for function in HrcFunction::ALL {
            broker.register(
                &Topic::cloud(cell, function.as_str())?,
                MessageKind::Classification,
            )?;
        }
        broker.register(&Topic::cloud(cell, "controller")?, MessageKind::Controller)?;
        broker.register(&Topic::cloud(cell, "ssm")?, MessageKind::Ssm)?;
        let subscription = broker.subscribe(&format!("edge/{cell}/fused/+"))?;
        Ok(CloudService {
            cell: cell.to_string(),
            broker,
            clock,
            subscription,
            models: BTreeMap::new(),
            latencies: BTreeMap::new(),
        })
    }

    pub fn set_model(&mut self, function: HrcFunction, model: ClassifierModel) {
        self.models.insert(function, model);
    }

    pub fn latency(&self, function: HrcFunction) -> Option<&LatencyHistogram> {
        self.latencies.get(&function)
    }

    /// Drains currently queued fused grids; returns published results.
    pub fn process_available(&mut self) -> Result<Vec<ClassificationMsg>, CloudError> {
        let mut out = Vec::new();
        while let Some(msg) = self.subscription.try_recv() {
            if let Some(published) = self.handle(&msg)? {
                out.push(published);
            }
        }
        Ok(out)
    }

    fn handle(&mut self, msg: &TelemetryMessage) -> Result<Option<ClassificationMsg>, CloudError> {
        let fused: FusedGridMsg = match msg.decode_payload() {
            Ok(f) => f,
            Err(_) => return Ok(None),
        };
        let Some(function) = HrcFunction::from_str(&fused.function) else {
            return Ok(None);
        };
        let Some(model) = self.models.get(&function) else {
            return Ok(None);
        };
        let (class, probs) = classify(model, &fused.grid)?;
        let classified_ms = self.clock.now_ms();
        let latency_ms = (classified_ms - fused.ingest_wall_ms).max(0.0);
        self.latencies
            .entry(function)
            .or_default()
            .record(latency_ms);
        let result = ClassificationMsg {
            function: fused.function.clone(),
            window_end_ms: fused.grid.window_end,
            class,
            label: model.class_names()[class].clone(),
            probs,
            latency_ms,
        };
        let topic = Topic::cloud(&self.cell, function.as_str())
            .map_err(|e| CloudError::Io(e.to_string()))?;
        let envelope = TelemetryMessage::new(
            topic,
            classified_ms,
            MessageKind::Classification,
            &result,
        )
        .map_err(|e| CloudError::Io(e.to_string()))?;
        self.broker
            .publish(envelope)
            .map_err(|e| CloudError::Io(e.to_string()))?;
        Ok(Some(result))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Grid;
    use crate::types::PipelineId;

    fn grid_with_value(v: f64, channels: usize) -> FeatureGrid {
        let pids = [PipelineId::FmcwRadar, PipelineId::ThzCamera, PipelineId::IrArray];
        FeatureGrid {
            channels: (0..channels)
                .map(|c| (pids[c], Grid::new(32, 32, vec![v; 1024]).unwrap()))
                .collect(),
            window_end: Timestamp(0),
        }
    }

    /// Blob dataset: class c's grids are constant c-dependent values plus
    /// per-sample jitter, linearly separable.
    fn blob_dataset(classes: usize, per_class: usize, channels: usize, seed: u64) -> LabeledDataset {
        let mut rng = make_rng(seed);
        let mut samples = Vec::new();
        for class in 0..classes {
            for _ in 0..per_class {
                let base = class as f64 / classes as f64;
                let mut grid = grid_with_value(base, channels);
                for (_, g) in grid.channels.iter_mut() {
                    for v in g.data.iter_mut() {
                        *v = (*v + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0);
                    }
                }
                samples.push((grid, class));
            }
        }
        LabeledDataset::new(samples, (0..classes).map(|c| format!("c{c}")).collect()).unwrap()
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let ds = blob_dataset(3, 10, 1, 5);
        let (train, test) = split_dataset(&ds, 0.8, 42).unwrap();
        assert_eq!(train.samples.len(), 24);
        assert_eq!(test.samples.len(), 6);
        for class in 0..3 {
            assert_eq!(train.samples.iter().filter(|(_, l)| *l == class).count(), 8);
            assert_eq!(test.samples.iter().filter(|(_, l)| *l == class).count(), 2);
        }
        let (train2, test2) = split_dataset(&ds, 0.8, 42).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        let (train3, _) = split_dataset(&ds, 0.8, 43).unwrap();
        assert_ne!(train, train3, "different seed, different split");
    }

    #[test]
    fn split_rejects_singleton_class() {
        let mut ds = blob_dataset(2, 3, 1, 5);
        ds.samples.retain(|(_, l)| *l == 0 || ds.samples.len() < 100);
        let mut samples = blob_dataset(2, 3, 1, 5).samples;
        samples.retain(|(_, l)| *l == 0);
        samples.push((grid_with_value(0.9, 1), 1));
        let ds = LabeledDataset::new(samples, vec!["a".into(), "b".into()]).unwrap();
        assert!(matches!(
            split_dataset(&ds, 0.8, 1),
            Err(CloudError::TooFewSamples { class: 1, got: 1, .. })
        ));
    }

    #[test]
    fn single_class_model_predicts_it_everywhere() {
        let mut ds = blob_dataset(1, 8, 1, 9);
        ds.class_names = vec!["only".into()];
        let model = train_classifier(&ds, ModelKind::ReferenceMlp, &TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        })
        .unwrap();
        for (grid, _) in &ds.samples {
            let (class, probs) = classify(&model, grid).unwrap();
            assert_eq!(class, 0);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn separable_blobs_reach_high_accuracy_vs_centroid_oracle() {
        let ds = blob_dataset(3, 20, 2, 11);
        let (train, test) = split_dataset(&ds, 0.8, 3).unwrap();
        let mlp = train_classifier(&train, ModelKind::ReferenceMlp, &TrainConfig::default()).unwrap();
        let centroid = train_classifier(&train, ModelKind::NearestCentroid, &TrainConfig::default())
            .unwrap();
        let mlp_eval = evaluate(&mlp, &test).unwrap();
        let centroid_eval = evaluate(&centroid, &test).unwrap();
        assert!(centroid_eval.accuracy >= 0.99, "centroid oracle sanity");
        assert!(mlp_eval.accuracy >= 0.99, "mlp accuracy {}", mlp_eval.accuracy);
    }

    #[test]
    fn training_loss_decreases_on_separable_data() {
        let ds = blob_dataset(2, 12, 1, 13);
        let samples: Vec<(Vec<DVector<f64>>, usize)> = ds
            .samples
            .iter()
            .map(|(g, l)| (mlp::grid_channel_vectors(g), *l))
            .collect();
        let mut model = MlpModel::init(1, 2, TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        });
        let losses = model.fit(&samples);
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "loss not strictly decreasing: {losses:?}");
        }
    }

    #[test]
    fn tie_breaks_to_lowest_class() {
        assert_eq!(argmax_class(&[0.7, 0.2, 0.1]), 0);
        assert_eq!(argmax_class(&[0.5, 0.5]), 0);
        assert_eq!(argmax_class(&[0.2, 0.5, 0.5]), 1);
    }

    #[test]
    fn evaluation_metrics_match_matrix() {
        let mut confusion = ConfusionMatrix::new(2);
        for _ in 0..5 {
            confusion.add(0, 0);
        }
        for _ in 0..5 {
            confusion.add(1, 0);
        }
        // All predictions class 0 on a balanced 2-class set.
        assert_eq!(confusion.accuracy(), 0.5);
        assert_eq!(confusion.recall(), vec![1.0, 0.0]);
        assert_eq!(confusion.precision(), vec![0.5, 0.0]);
    }

    #[test]
    fn random_model_near_chance() {
        // A model trained on labels independent of the input lands near
        // 1/K accuracy (binomial oracle, 5 standard errors).
        let k = 4;
        let n = 400;
        let mut rng = make_rng(17);
        let mut samples = Vec::new();
        for _ in 0..n {
            let mut grid = grid_with_value(0.5, 1);
            for (_, g) in grid.channels.iter_mut() {
                for v in g.data.iter_mut() {
                    *v = rng.random_range(0.0..1.0);
                }
            }
            samples.push((grid, rng.random_range(0..k)));
        }
        let ds = LabeledDataset::new(samples, (0..k).map(|c| format!("c{c}")).collect()).unwrap();
        let (train, test) = split_dataset(&ds, 0.5, 2).unwrap();
        let model = train_classifier(&train, ModelKind::NearestCentroid, &TrainConfig::default())
            .unwrap();
        let eval = evaluate(&model, &test).unwrap();
        let p = 1.0 / k as f64;
        let se = (p * (1.0 - p) / test.samples.len() as f64).sqrt();
        assert!(
            (eval.accuracy - p).abs() <= 5.0 * se,
            "accuracy {} vs chance {p}",
            eval.accuracy
        );
    }

    #[test]
    fn fusion_gain_examples() {
        let report = fusion_gain_report(&[("radar".into(), 0.788)], 0.969);
        assert!((report.gain_vs_best - 0.181).abs() < 1e-12);
        assert!(!report.violation);

        let equal = fusion_gain_report(&[("a".into(), 0.9), ("b".into(), 0.85)], 0.9);
        assert_eq!(equal.gain_vs_best, 0.0);
        assert!(!equal.violation);

        let worse = fusion_gain_report(&[("a".into(), 0.9)], 0.85);
        assert!(worse.violation);
    }

    #[test]
    fn model_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = blob_dataset(3, 4, 2, 21);
        for kind in [ModelKind::ReferenceMlp, ModelKind::NearestCentroid] {
            let model = train_classifier(&ds, kind, &TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            })
            .unwrap();
            let path = dir.path().join(format!("{kind:?}.model"));
            save_model(&model, &path).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back, model);
            for (grid, _) in &ds.samples {
                assert_eq!(classify(&back, grid).unwrap(), classify(&model, grid).unwrap());
            }
        }
    }

    #[test]
    fn metrics_csv_layout() {
        let mut confusion = ConfusionMatrix::new(2);
        confusion.add(0, 0);
        confusion.add(1, 1);
        confusion.add(1, 0);
        let eval = Evaluation {
            precision: confusion.precision(),
            recall: confusion.recall(),
            accuracy: confusion.accuracy(),
            confusion,
        };
        let csv = metrics_csv(&eval, &["a".into(), "b".into()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,precision,recall,support");
        assert!(lines[1].starts_with("a,0.5,1,"));
        assert!(lines[2].starts_with("b,1,0.5,"));
    }
}
