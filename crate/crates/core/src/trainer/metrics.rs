use std::io::Write;

use serde::{Deserialize, Serialize};

use super::model::{Model, Prediction};
use crate::data::{DomainDataset, Split};
use crate::error::{Error, Result};
use crate::network::{HeadKind, ParamSummary};

/// All-points interpolated average precision. `detections` are
/// `(score, is_true_positive)`; `num_truth` is the number of ground-truth
/// objects. `None` when there is nothing to recall.
pub fn average_precision(detections: &[(f64, bool)], num_truth: usize) -> Option<f64> {
    if num_truth == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].0.total_cmp(&detections[a].0));
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    for i in order {
        if detections[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_truth as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    Some(
        (1..recall.len())
            .filter(|&i| recall[i] != recall[i - 1])
            .map(|i| (recall[i] - recall[i - 1]) * precision[i])
            .sum(),
    )
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

/// Mean over classes of the AP at IoU ≥ 0.5, one detection per image.
pub fn detection_map(
    predictions: &[Prediction],
    truth: &[(usize, crate::data::BoundingBox)],
    num_classes: usize,
) -> f64 {
    let mut aps = Vec::new();
    for c in 0..num_classes {
        let n_truth = truth.iter().filter(|(l, _)| *l == c).count();
        let dets: Vec<(f64, bool)> = predictions
            .iter()
            .zip(truth)
            .filter(|(p, _)| p.label == c)
            .map(|(p, (l, b))| {
                let hit = *l == c && p.bbox.is_some_and(|pb| pb.iou(b) >= 0.5);
                (p.score, hit)
            })
            .collect();
        if let Some(ap) = average_precision(&dets, n_truth) {
            aps.push(ap);
        }
    }
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// Accuracy for classification heads, mAP@0.5 for grid heads.
pub fn evaluate(model: &Model, dataset: usize, ds: &DomainDataset, split: Split) -> Result<f64> {
    model.check_task(dataset, ds)?;
    let samples = ds.split(split);
    let preds = samples
        .iter()
        .map(|s| model.predict(&s.image, dataset))
        .collect::<Result<Vec<_>>>()?;
    Ok(match model.head_kind(dataset)? {
        HeadKind::Classification { .. } => {
            let p: Vec<usize> = preds.iter().map(|p| p.label).collect();
            let t: Vec<usize> = samples.iter().map(|s| s.label).collect();
            accuracy(&p, &t)
        }
        HeadKind::Localization { num_classes, .. } => {
            let truth: Vec<_> = samples.iter().map(|s| (s.label, s.bbox)).collect();
            detection_map(&preds, &truth, num_classes)
        }
    })
}

/// Unweighted mean over datasets.
pub fn average_metric(per_dataset: &[f64]) -> f64 {
    if per_dataset.is_empty() {
        return 0.0;
    }
    per_dataset.iter().sum::<f64>() / per_dataset.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub dataset: String,
    /// Mean per-sample training loss over the epoch.
    pub loss: f64,
    /// Held-out metric, present on evaluated epochs.
    pub metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub architecture: String,
    pub seed: u64,
    pub datasets: Vec<String>,
    pub final_metrics: Vec<f64>,
    pub average_metric: f64,
    pub params: ParamSummary,
    pub adapter_overhead: f64,
    pub relative_cost: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
    pub summary: Option<Summary>,
}

impl MetricsLog {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean training loss over datasets for each epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.records {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    /// Columns `epoch,dataset,loss,metric`; the metric is empty on
    /// epochs that were not evaluated.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "dataset", "loss", "metric"])?;
        for r in &self.records {
            out.write_record([
                r.epoch.to_string(),
                r.dataset.clone(),
                r.loss.to_string(),
                r.metric.map(|m| m.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::contract(e.to_string()))
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)? + "\n")
    }
}
