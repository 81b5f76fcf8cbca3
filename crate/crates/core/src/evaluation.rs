//! Metrics, missingness sweeps and attention-based attribute reports.

use std::collections::BTreeMap;
use std::sync::Arc;

use rovtl_autograd::Matrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{CoreError, Result};
use crate::finetune::{MultimodalModel, TaskKind, TaskSpec};
use crate::fusion::aggregate_attention;
use crate::tabular::{apply_missingness, ImportanceRanking, MissingnessProtocol, ProtocolKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Auc,
    Accuracy,
    Mae,
}

impl MetricKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "auc" => Ok(Self::Auc),
            "accuracy" => Ok(Self::Accuracy),
            "mae" => Ok(Self::Mae),
            _ => Err(CoreError::Config(format!("unknown metric {s:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Auc => "auc",
            Self::Accuracy => "accuracy",
            Self::Mae => "mae",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self != Self::Mae
    }
}

/// Rank-based ROC AUC with average ranks for ties.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(CoreError::Shape(format!("{} scores vs {} labels", scores.len(), positive.len())));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::Metric("AUC needs both classes".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(CoreError::NonFinite("AUC score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

fn softmax_row(row: ndarray::ArrayView1<'_, f64>) -> Vec<f64> {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Macro average of per-column AUCs, skipping columns with one class.
fn macro_auc(score_cols: &[Vec<f64>], truth_cols: &[Vec<bool>]) -> Result<f64> {
    let mut values = Vec::new();
    for (j, (s, t)) in score_cols.iter().zip(truth_cols).enumerate() {
        match auc(s, t) {
            Ok(v) => values.push(v),
            Err(CoreError::Metric(_)) => log::warn!("AUC skipped for output {j}: single class"),
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(CoreError::Metric("no output has both classes".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Metric of raw head outputs against labels.
pub fn metric(predictions: &Matrix, labels: &[Label], kind: MetricKind, task: &TaskSpec) -> Result<f64> {
    let (n, o) = predictions.dim();
    if n != labels.len() || o != task.outputs || n == 0 {
        return Err(CoreError::Shape(format!("{n}x{o} predictions for {} labels", labels.len())));
    }
    let targets = task.targets(&labels.iter().collect::<Vec<_>>())?;
    match (kind, task.kind) {
        (MetricKind::Auc, TaskKind::Multiclass) => {
            let probs: Vec<Vec<f64>> = predictions.rows().into_iter().map(softmax_row).collect();
            let truth = |c: usize| targets.column(c).iter().map(|&t| t > 0.5).collect::<Vec<_>>();
            if o == 2 {
                let s: Vec<f64> = probs.iter().map(|p| p[1]).collect();
                return auc(&s, &truth(1));
            }
            let scores: Vec<Vec<f64>> = (0..o).map(|c| probs.iter().map(|p| p[c]).collect()).collect();
            macro_auc(&scores, &(0..o).map(truth).collect::<Vec<_>>())
        }
        (MetricKind::Auc, TaskKind::Multilabel) => {
            let scores: Vec<Vec<f64>> = predictions.columns().into_iter().map(|c| c.to_vec()).collect();
            let truth: Vec<Vec<bool>> = targets.columns().into_iter().map(|c| c.iter().map(|&t| t > 0.5).collect()).collect();
            macro_auc(&scores, &truth)
        }
        (MetricKind::Accuracy, TaskKind::Multiclass) => {
            let correct = predictions
                .rows()
                .into_iter()
                .zip(labels)
                .filter(|(row, label)| {
                    let best = (0..o).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                    **label == Label::Class(best)
                })
                .count();
            Ok(correct as f64 / n as f64)
        }
        (MetricKind::Accuracy, TaskKind::Multilabel) => {
            let hits = predictions
                .iter()
                .zip(targets.iter())
                .filter(|(p, t)| (**p > 0.0) == (**t > 0.5))
                .count();
            Ok(hits as f64 / (n * o) as f64)
        }
        (MetricKind::Mae, TaskKind::Regression) => Ok((predictions - &targets).mapv(f64::abs).mean().unwrap_or(0.0)),
        (k, t) => Err(CoreError::Config(format!("metric {} does not apply to a {t:?} task", k.as_str()))),
    }
}

/// Metric values over an availability grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: ProtocolKind,
    pub metric: MetricKind,
    pub fractions: Vec<f64>,
    pub values: Vec<f64>,
    pub mean: f64,
}

impl SweepResult {
    pub fn new(kind: ProtocolKind, metric: MetricKind, fractions: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if fractions.len() != values.len() || fractions.is_empty() {
            return Err(CoreError::Shape("sweep needs one value per fraction".into()));
        }
        if fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Config("sweep fractions must be strictly increasing".into()));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Ok(Self {
            kind,
            metric,
            fractions,
            values,
            mean,
        })
    }

    pub fn value_at(&self, fraction: f64) -> Option<f64> {
        self.fractions
            .iter()
            .position(|&f| (f - fraction).abs() < 1e-9)
            .map(|i| self.values[i])
    }

    /// Mean over the fractions that are at most `upto`.
    pub fn mean_upto(&self, upto: f64) -> f64 {
        let picked: Vec<f64> = self
            .fractions
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| **f <= upto + 1e-9)
            .map(|(_, v)| *v)
            .collect();
        picked.iter().sum::<f64>() / picked.len().max(1) as f64
    }
}

/// `0.0, 0.1, …, 1.0`.
pub fn default_fractions() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Per-sample protocol seed, so every sample gets its own random subset.
pub fn sample_seed(seed: u64, fraction_index: usize, sample_index: usize) -> u64 {
    let mut z = seed
        ^ (fraction_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (sample_index as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Applies the protocol at each fraction to every test row, predicts and
/// scores.
pub fn sweep(
    model: &MultimodalModel,
    data: &Dataset,
    kind: ProtocolKind,
    ranking: Option<Arc<ImportanceRanking>>,
    fractions: &[f64],
    metric_kind: MetricKind,
    seed: u64,
) -> Result<SweepResult> {
    let images: Vec<_> = data.images.iter().collect();
    let mut values = Vec::with_capacity(fractions.len());
    for (fi, &f) in fractions.iter().enumerate() {
        let base = MissingnessProtocol::new(kind, f, ranking.clone(), seed)?;
        let tables = data
            .tabular
            .iter()
            .enumerate()
            .map(|(i, t)| apply_missingness(t, &base.with_seed(sample_seed(seed, fi, i))))
            .collect::<Result<Vec<_>>>()?;
        let preds = model.predict_batch(&images, &tables)?;
        values.push(metric(&preds, &data.labels, metric_kind, &model.task)?);
    }
    SweepResult::new(kind, metric_kind, fractions.to_vec(), values)
}

/// Mean attention per attribute for one group of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScores {
    pub group: String,
    pub samples: usize,
    /// `(column name, score)`, highest first.
    pub scores: Vec<(String, f64)>,
}

/// Attention scores of every test sample, averaged per class for
/// classification and over the whole set otherwise.
pub fn interpretability_report(model: &MultimodalModel, data: &Dataset) -> Result<Vec<AttributeScores>> {
    let width = data.schema.len();
    let mut sums: BTreeMap<String, (usize, Vec<f64>)> = BTreeMap::new();
    for ((img, t), label) in data.images.iter().zip(&data.tabular).zip(&data.labels) {
        let (_, trace) = model.predict_with_trace(img, t)?;
        let Some(trace) = trace else { continue };
        let scores = match aggregate_attention(&trace) {
            Ok(s) => s,
            Err(CoreError::NoAttributes) => continue,
            Err(e) => return Err(e),
        };
        let group = match (model.task.kind, label) {
            (TaskKind::Multiclass, Label::Class(c)) => format!("class_{c}"),
            _ => "all".to_owned(),
        };
        let entry = sums.entry(group).or_insert_with(|| (0, vec![0.0; width]));
        entry.0 += 1;
        for (&c, s) in trace.attribute_columns.iter().zip(scores) {
            entry.1[c] += s;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(group, (n, total))| {
            let mut scores: Vec<(String, f64)> = total
                .iter()
                .enumerate()
                .map(|(c, s)| (data.schema.column(c).name.clone(), s / n as f64))
                .collect();
            scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            AttributeScores { group, samples: n, scores }
        })
        .collect())
}

/// CSV with header `group,attribute,score`.
pub fn write_report<W: std::io::Write>(writer: W, report: &[AttributeScores]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "attribute", "score"])?;
    for g in report {
        for (name, s) in &g.scores {
            w.write_record([g.group.as_str(), name.as_str(), &format!("{s}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn auc_hand_case_and_ties() {
        let a = auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!((a - 0.75).abs() < 1e-12);
        assert_eq!(auc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn macro_auc_skips_single_class_label() {
        let task = TaskSpec::multilabel(2);
        let preds = array![[0.1, 0.0], [0.9, 1.0]];
        let labels = vec![Label::Multi(vec![false, true]), Label::Multi(vec![true, true])];
        assert_eq!(metric(&preds, &labels, MetricKind::Auc, &task).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_and_mae() {
        let task = TaskSpec::classification(2);
        let preds = array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let labels = vec![Label::Class(0), Label::Class(1), Label::Class(0)];
        assert!((metric(&preds, &labels, MetricKind::Accuracy, &task).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(metric(&preds, &labels, MetricKind::Mae, &task).is_err());
        let reg = TaskSpec::regression(1);
        let labels = vec![Label::Real(vec![1.0]), Label::Real(vec![3.0])];
        assert_eq!(metric(&array![[1.0], [3.0]], &labels, MetricKind::Mae, &reg).unwrap(), 0.0);
        assert_eq!(metric(&array![[2.0], [1.0]], &labels, MetricKind::Mae, &reg).unwrap(), 1.5);
    }

    #[test]
    fn sweep_result_mean() {
        let r = SweepResult::new(ProtocolKind::Random, MetricKind::Auc, vec![0.0, 0.5, 1.0], vec![0.5, 0.6, 0.7]).unwrap();
        assert!((r.mean - 0.6).abs() < 1e-12);
        assert_eq!(r.value_at(0.5), Some(0.6));
        assert!((r.mean_upto(0.5) - 0.55).abs() < 1e-12);
        assert!(SweepResult::new(ProtocolKind::Random, MetricKind::Auc, vec![0.5, 0.0], vec![1.0, 1.0]).is_err());
    }
}
