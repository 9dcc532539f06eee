use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sparsity::MaskSet;
use crate::tensor::graph::softmax_ce_rows;
use crate::tensor::Tensor;

/// Rows evaluated per forward pass.
pub const EVAL_BATCH: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` for classes absent from the evaluated labels.
    pub recall: Vec<Option<f64>>,
    /// Minimum over classes that occur.
    pub min_recall: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn metrics_from_predictions(predictions: &[usize], labels: &[usize], class_count: usize) -> Result<Metrics> {
    if labels.is_empty() {
        return Err(Error::Contract("metrics of an empty dataset".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0usize; class_count]; class_count];
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= class_count || t >= class_count {
            return Err(Error::Index(format!("class {} with {class_count} classes", p.max(t))));
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..class_count).map(|k| confusion[k][k]).sum();
    let recall: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[k] as f64 / n as f64)
        })
        .collect();
    let min_recall = recall.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    Ok(Metrics {
        accuracy: correct as f64 / labels.len() as f64,
        recall,
        min_recall,
        confusion,
    })
}

/// Eval-mode logits for every example.
pub fn dataset_logits(model: &Model, masks: Option<&MaskSet>, dataset: &Dataset) -> Result<Tensor> {
    model.predict_logits(masks, dataset.images(), EVAL_BATCH)
}

/// Argmax predictions (ties to the lower class) and derived metrics.
pub fn evaluate(model: &Model, masks: Option<&MaskSet>, dataset: &Dataset) -> Result<Metrics> {
    let logits = dataset_logits(model, masks, dataset)?;
    metrics_from_predictions(&logits.argmax_rows()?, dataset.labels(), dataset.class_count())
}

/// Accuracy and mean cross-entropy from one evaluation pass.
pub fn accuracy_and_loss(model: &Model, masks: Option<&MaskSet>, dataset: &Dataset) -> Result<(f64, f64)> {
    let logits = dataset_logits(model, masks, dataset)?;
    Ok(accuracy_and_loss_of(&logits, dataset.labels()))
}

pub(crate) fn accuracy_and_loss_of(logits: &Tensor, labels: &[usize]) -> (f64, f64) {
    let k = logits.shape()[1];
    let (losses, _) = softmax_ce_rows(logits.data(), k, labels);
    let loss = losses.iter().sum::<f64>() / labels.len() as f64;
    let correct = logits
        .argmax_rows()
        .expect("rank-2 logits")
        .iter()
        .zip(labels)
        .filter(|(p, t)| p == t)
        .count();
    (correct as f64 / labels.len() as f64, loss)
}
