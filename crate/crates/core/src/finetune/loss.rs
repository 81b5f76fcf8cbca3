//! Task losses and the scalar combinations used during fine-tuning.

use ndarray::Array2;
use rovtl_autograd::{Graph, Matrix, Var};
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{CoreError, Result};

pub const HUBER_DELTA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Multiclass,
    Multilabel,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLossKind {
    CrossEntropy,
    BinaryCrossEntropy,
    Huber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Class count, label count or regression width.
    pub outputs: usize,
    pub loss: TaskLossKind,
    /// Weight of the ranking hinge.
    pub lambda: f64,
}

impl TaskSpec {
    pub fn classification(classes: usize) -> Self {
        Self {
            kind: TaskKind::Multiclass,
            outputs: classes,
            loss: TaskLossKind::CrossEntropy,
            lambda: 1.0,
        }
    }

    pub fn multilabel(labels: usize) -> Self {
        Self {
            kind: TaskKind::Multilabel,
            outputs: labels,
            loss: TaskLossKind::BinaryCrossEntropy,
            lambda: 1.0,
        }
    }

    pub fn regression(outputs: usize) -> Self {
        Self {
            kind: TaskKind::Regression,
            outputs,
            loss: TaskLossKind::Huber,
            lambda: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = matches!(
            (self.kind, self.loss),
            (TaskKind::Multiclass, TaskLossKind::CrossEntropy)
                | (TaskKind::Multilabel, TaskLossKind::BinaryCrossEntropy)
                | (TaskKind::Regression, TaskLossKind::Huber)
        );
        if !ok {
            return Err(CoreError::Config(format!("{:?} loss does not fit a {:?} task", self.loss, self.kind)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(CoreError::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.outputs == 0 || (self.kind == TaskKind::Multiclass && self.outputs < 2) {
            return Err(CoreError::Config(format!("{} outputs for a {:?} task", self.outputs, self.kind)));
        }
        Ok(())
    }

    /// Dense target matrix for a batch of labels.
    pub fn targets(&self, labels: &[&Label]) -> Result<Matrix> {
        let mut t = Array2::zeros((labels.len(), self.outputs));
        for (i, label) in labels.iter().enumerate() {
            match (self.kind, label) {
                (TaskKind::Multiclass, Label::Class(c)) if *c < self.outputs => t[[i, *c]] = 1.0,
                (TaskKind::Multilabel, Label::Multi(bits)) if bits.len() == self.outputs => {
                    for (j, &b) in bits.iter().enumerate() {
                        t[[i, j]] = f64::from(u8::from(b));
                    }
                }
                (TaskKind::Regression, Label::Real(v)) if v.len() == self.outputs && v.iter().all(|x| x.is_finite()) => {
                    for (j, &x) in v.iter().enumerate() {
                        t[[i, j]] = x;
                    }
                }
                _ => {
                    return Err(CoreError::Shape(format!(
                        "label {label:?} does not fit a {:?} task with {} outputs",
                        self.kind, self.outputs
                    )))
                }
            }
        }
        Ok(t)
    }
}

/// Mean task loss of `predictions` (batch × outputs) inside `g`.
pub fn task_loss_graph(g: &mut Graph, predictions: Var, labels: &[&Label], spec: &TaskSpec) -> Result<Var> {
    let (b, o) = g.shape(predictions);
    if b != labels.len() || o != spec.outputs || b == 0 {
        return Err(CoreError::Shape(format!(
            "{b}x{o} predictions for {} labels and {} outputs",
            labels.len(),
            spec.outputs
        )));
    }
    let targets = g.constant(spec.targets(labels)?);
    Ok(match spec.loss {
        TaskLossKind::CrossEntropy => {
            let logp = g.log_softmax_rows(predictions);
            let picked = g.mul(logp, targets);
            let total = g.sum(picked);
            g.scale(total, -1.0 / b as f64)
        }
        TaskLossKind::BinaryCrossEntropy => {
            let l = g.bce_with_logits(predictions, targets);
            g.mean(l)
        }
        TaskLossKind::Huber => {
            let l = g.huber(predictions, targets, HUBER_DELTA);
            g.mean(l)
        }
    })
}

pub fn task_loss(predictions: &Matrix, labels: &[Label], spec: &TaskSpec) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(predictions.clone());
    let refs: Vec<&Label> = labels.iter().collect();
    let l = task_loss_graph(&mut g, p, &refs, spec)?;
    Ok(g.scalar_value(l))
}

/// `max(L⁺ − L⁻, 0)`.
pub fn tabmofe_loss(plus: f64, minus: f64) -> Result<f64> {
    if !plus.is_finite() || !minus.is_finite() {
        return Err(CoreError::NonFinite(format!("ranking loss inputs {plus}, {minus}")));
    }
    Ok((plus - minus).max(0.0))
}

pub fn multimodal_loss(plus: f64, minus: f64, lambda: f64) -> Result<f64> {
    Ok(plus + minus + lambda * tabmofe_loss(plus, minus)?)
}

pub fn unimodal_loss(image: f64, tabular: f64) -> f64 {
    image + tabular
}

/// Graph form of the hinge. Zero is the first argument of the maximum so
/// the kink takes the zero subgradient.
pub fn tabmofe_graph(g: &mut Graph, plus: Var, minus: Var) -> Var {
    let diff = g.sub(plus, minus);
    let zero = g.scalar(0.0);
    g.maximum(zero, diff)
}

/// Per-step losses. `tabmofe` is the raw hinge; `tabmofe_term` is the hinge
/// times λ as it enters `multi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub task_plus: f64,
    pub task_minus: f64,
    pub tabmofe: f64,
    pub tabmofe_term: f64,
    pub multi: f64,
    pub unimodal_image: f64,
    pub unimodal_tabular: f64,
    /// Mean gate over samples that had attributes, if any did.
    pub mean_gate: Option<f64>,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.task_plus,
            self.task_minus,
            self.tabmofe,
            self.tabmofe_term,
            self.multi,
            self.unimodal_image,
            self.unimodal_tabular,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hinge_and_sums() {
        assert!((tabmofe_loss(0.5, 0.3).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(tabmofe_loss(0.3, 0.5).unwrap(), 0.0);
        assert_eq!(tabmofe_loss(0.7, 0.7).unwrap(), 0.0);
        assert!(tabmofe_loss(f64::NAN, 0.0).is_err());
        assert!((multimodal_loss(0.5, 0.3, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(unimodal_loss(0.4, 0.6), 1.0);
    }

    #[test]
    fn task_loss_cases() {
        let ce = TaskSpec::classification(3);
        let l = task_loss(&array![[20.0, 0.0, 0.0]], &[Label::Class(0)], &ce).unwrap();
        assert!(l < 1e-6);
        let bce = TaskSpec::multilabel(1);
        let l = task_loss(&array![[0.0]], &[Label::Multi(vec![true])], &bce).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let reg = TaskSpec::regression(1);
        assert_eq!(task_loss(&array![[1.5]], &[Label::Real(vec![1.5])], &reg).unwrap(), 0.0);
        assert!(task_loss(&array![[1.5]], &[Label::Class(0)], &reg).is_err());
        assert!(task_loss(&array![[0.0, 0.0, 0.0]], &[Label::Class(3)], &ce).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = TaskSpec::classification(2);
        s.loss = TaskLossKind::Huber;
        assert!(s.validate().is_err());
        let mut s = TaskSpec::regression(1);
        s.lambda = -1.0;
        assert!(s.validate().is_err());
        assert_eq!(TaskSpec::regression(1).lambda, 0.05);
        assert_eq!(TaskSpec::classification(2).lambda, 1.0);
    }
}
