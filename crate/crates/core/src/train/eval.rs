use super::trainer::{argmax, check_samples};
use super::TrainError;
use crate::data::Sample;
use crate::model::{forward_batch, ForwardOutput, Fusion, PogarsConfig, PogarsParams};
use crate::scalar::Scalar;

/// Counts of (true label, predicted label) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }
}

/// Per-sample prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub group_true: usize,
    pub group_pred: usize,
    /// softmax of the group logits
    pub group_probs: Vec<f64>,
    pub actions_true: Vec<usize>,
    pub actions_pred: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub group_accuracy: f64,
    /// micro-average over every person of every sample
    pub action_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<Prediction>,
}

fn softmax_f64<S: Scalar>(logits: &[S]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Forward passes over `samples` in chunks of `batch_size`, in sample order.
pub(crate) fn forward_all<S: Scalar>(
    params: &PogarsParams<S>,
    cfg: &PogarsConfig,
    samples: &[Sample],
    batch_size: usize,
) -> Result<Vec<ForwardOutput<S>>, TrainError> {
    check_samples(samples, cfg)?;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        out.extend(forward_batch(&refs, params, cfg)?);
    }
    Ok(out)
}

/// The group label a forward output predicts.
pub fn predict_group<S: Scalar>(out: &ForwardOutput<S>) -> usize {
    argmax(out.group_logits.values())
}

pub fn evaluate<S: Scalar>(
    params: &PogarsParams<S>,
    cfg: &PogarsConfig,
    samples: &[Sample],
    batch_size: usize,
) -> Result<Evaluation, TrainError> {
    let outputs = forward_all(params, cfg, samples, batch_size)?;
    let mut confusion = ConfusionMatrix::new(cfg.group_classes);
    let (mut persons, mut persons_right) = (0usize, 0usize);
    let mut predictions = Vec::with_capacity(samples.len());
    for (s, out) in samples.iter().zip(&outputs) {
        let group_pred = predict_group(out);
        confusion.record(s.group, group_pred);
        let actions_pred: Vec<usize> = out
            .action_logits
            .values()
            .chunks(cfg.action_classes)
            .map(argmax)
            .collect();
        let actions_true: Vec<usize> = s.persons.iter().map(|p| p.action).collect();
        persons += actions_true.len();
        persons_right += actions_true
            .iter()
            .zip(&actions_pred)
            .filter(|(a, b)| a == b)
            .count();
        predictions.push(Prediction {
            id: s.id.clone(),
            group_true: s.group,
            group_pred,
            group_probs: softmax_f64(out.group_logits.values()),
            actions_true,
            actions_pred,
        });
    }
    Ok(Evaluation {
        group_accuracy: confusion.accuracy(),
        action_accuracy: if persons == 0 {
            0.0
        } else {
            persons_right as f64 / persons as f64
        },
        confusion,
        predictions,
    })
}

/// Attention weights of every sample plus the dataset-wide temporal curve.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionReport {
    pub ids: Vec<String>,
    /// per sample, `N` rows of `T` weights
    pub temporal: Vec<Vec<Vec<f64>>>,
    /// per sample, `N` weights
    pub spatial: Vec<Vec<f64>>,
    /// mean of all temporal rows
    pub mean_temporal: Vec<f64>,
}

pub fn export_attention<S: Scalar>(
    params: &PogarsParams<S>,
    cfg: &PogarsConfig,
    samples: &[Sample],
    batch_size: usize,
) -> Result<AttentionReport, TrainError> {
    if cfg.fusion == Fusion::Early {
        return Err(TrainError::Unsupported(
            "attention export needs a late-fusion model; early fusion has no spatial attention"
                .into(),
        ));
    }
    let outputs = forward_all(params, cfg, samples, batch_size)?;
    let t = cfg.frames;
    let mut mean = vec![0.0; t];
    let mut rows = 0usize;
    let mut temporal = Vec::with_capacity(samples.len());
    let mut spatial = Vec::with_capacity(samples.len());
    for out in &outputs {
        let table: Vec<Vec<f64>> = out
            .temporal_weights
            .values()
            .chunks(t)
            .map(|r| r.iter().map(|v| v.as_f64()).collect())
            .collect();
        for r in &table {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
            rows += 1;
        }
        temporal.push(table);
        let w = out
            .spatial_weights
            .as_ref()
            .expect("late fusion reports spatial weights");
        spatial.push(w.values().iter().map(|v| v.as_f64()).collect());
    }
    mean.iter_mut().for_each(|m| *m /= rows.max(1) as f64);
    Ok(AttentionReport {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        temporal,
        spatial,
        mean_temporal: mean,
    })
}
