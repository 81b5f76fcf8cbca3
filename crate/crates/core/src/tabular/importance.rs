//! Attribute importance from a bagged ensemble of CART trees (mean decrease
//! in impurity), used to drive the least/most-important protocols.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tabular::schema::{ColumnKind, TabularSample, Value};

/// Columns ordered most important first, with per-column scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RankingRepr")]
pub struct ImportanceRanking {
    order: Vec<usize>,
    /// Indexed by column, not by rank.
    scores: Vec<f64>,
    #[serde(skip)]
    rank: Vec<usize>,
}

#[derive(Deserialize)]
struct RankingRepr {
    order: Vec<usize>,
    scores: Vec<f64>,
}

impl TryFrom<RankingRepr> for ImportanceRanking {
    type Error = CoreError;

    fn try_from(r: RankingRepr) -> Result<Self> {
        Self::new(r.order, r.scores)
    }
}

impl ImportanceRanking {
    pub fn new(order: Vec<usize>, scores: Vec<f64>) -> Result<Self> {
        let n = order.len();
        if scores.len() != n {
            return Err(CoreError::Config("ranking: score count differs from column count".into()));
        }
        let mut rank = vec![usize::MAX; n];
        for (r, &c) in order.iter().enumerate() {
            if c >= n || rank[c] != usize::MAX {
                return Err(CoreError::Config("ranking is not a permutation".into()));
            }
            rank[c] = r;
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(CoreError::Config("ranking scores must be finite and non-negative".into()));
        }
        if order.windows(2).any(|w| scores[w[0]] < scores[w[1]]) {
            return Err(CoreError::Config("ranking scores increase along the order".into()));
        }
        Ok(Self { order, scores, rank })
    }

    /// Orders columns by descending score; ties keep the lower column first.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Self::new(order, scores)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Position of `column` in the ranking (0 = most important).
    pub fn rank_of(&self, column: usize) -> usize {
        if self.rank.len() == self.order.len() {
            self.rank[column]
        } else {
            // deserialised without the cached inverse
            self.order.iter().position(|&c| c == column).unwrap_or(usize::MAX)
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceTask {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: 16,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

/// Fits a random forest on mode/mean-imputed data and ranks columns by
/// normalised mean decrease in impurity. `labels` hold class ids (as `f64`)
/// for classification and targets for regression.
pub fn rank_importance(
    dataset: &[TabularSample],
    labels: &[f64],
    task: ImportanceTask,
    config: &ForestConfig,
) -> Result<ImportanceRanking> {
    if dataset.len() < 2 {
        return Err(CoreError::Config("importance needs at least two samples".into()));
    }
    if labels.len() != dataset.len() {
        return Err(CoreError::Shape(format!(
            "{} labels for {} samples",
            labels.len(),
            dataset.len()
        )));
    }
    if labels.iter().any(|y| !y.is_finite()) {
        return Err(CoreError::NonFinite("label".into()));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(CoreError::ConstantLabels);
    }
    let features = impute(dataset);
    let target = match task {
        ImportanceTask::Classification => {
            if labels.iter().any(|&y| y < 0.0 || y.fract() != 0.0) {
                return Err(CoreError::Config("class labels must be non-negative integers".into()));
            }
            let classes = labels.iter().fold(0.0f64, |m, &y| m.max(y)) as usize + 1;
            Target::Classes(labels.iter().map(|&y| y as usize).collect(), classes)
        }
        ImportanceTask::Regression => Target::Values(labels.to_vec()),
    };
    let p = features.len();
    let mtry = match task {
        ImportanceTask::Classification => (p as f64).sqrt().round() as usize,
        ImportanceTask::Regression => p / 3,
    }
    .clamp(1, p);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = labels.len();
    let mut totals = vec![0.0; p];
    for _ in 0..config.trees {
        let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut tree_imp = vec![0.0; p];
        let mut builder = TreeBuilder {
            features: &features,
            target: &target,
            mtry,
            config,
            importance: &mut tree_imp,
            rng: &mut rng,
        };
        builder.grow(bootstrap, 0);
        let sum: f64 = tree_imp.iter().sum();
        if sum > 0.0 {
            for (t, v) in totals.iter_mut().zip(&tree_imp) {
                *t += v / sum;
            }
        }
    }
    let sum: f64 = totals.iter().sum();
    if sum > 0.0 {
        totals.iter_mut().for_each(|v| *v /= sum);
    }
    ImportanceRanking::from_scores(totals)
}

/// Column-major feature matrix; missing entries take the column mode
/// (categorical) or mean (continuous).
fn impute(dataset: &[TabularSample]) -> Vec<Vec<f64>> {
    let schema = dataset[0].schema();
    let mut columns = Vec::with_capacity(schema.len());
    for (c, col) in schema.columns().iter().enumerate() {
        let observed: Vec<Value> = dataset.iter().filter_map(|s| s.get(c)).collect();
        let fill = match col.kind {
            ColumnKind::Continuous => {
                let xs: Vec<f64> = observed.iter().filter_map(|v| v.as_real()).collect();
                if xs.is_empty() {
                    0.0
                } else {
                    xs.iter().sum::<f64>() / xs.len() as f64
                }
            }
            ColumnKind::Categorical => {
                let mut counts = vec![0usize; col.levels.len()];
                for l in observed.iter().filter_map(|v| v.as_level()) {
                    counts[l] += 1;
                }
                // first level wins ties
                let mode = counts
                    .iter()
                    .enumerate()
                    .fold((0, 0), |best, (l, &k)| if k > best.1 { (l, k) } else { best })
                    .0;
                mode as f64
            }
        };
        columns.push(
            dataset
                .iter()
                .map(|s| match s.get(c) {
                    Some(Value::Real(x)) => x,
                    Some(Value::Level(l)) => l as f64,
                    None => fill,
                })
                .collect(),
        );
    }
    columns
}

enum Target {
    Classes(Vec<usize>, usize),
    Values(Vec<f64>),
}

/// Sufficient statistics for node impurity.
#[derive(Clone)]
enum Stats {
    Counts(Vec<f64>, f64),
    Moments { n: f64, sum: f64, sum_sq: f64 },
}

impl Stats {
    fn empty(target: &Target) -> Self {
        match target {
            Target::Classes(_, k) => Stats::Counts(vec![0.0; *k], 0.0),
            Target::Values(_) => Stats::Moments {
                n: 0.0,
                sum: 0.0,
                sum_sq: 0.0,
            },
        }
    }

    fn add(&mut self, target: &Target, i: usize, sign: f64) {
        match (self, target) {
            (Stats::Counts(c, n), Target::Classes(y, _)) => {
                c[y[i]] += sign;
                *n += sign;
            }
            (Stats::Moments { n, sum, sum_sq }, Target::Values(y)) => {
                *n += sign;
                *sum += sign * y[i];
                *sum_sq += sign * y[i] * y[i];
            }
            _ => unreachable!("stats/target kinds always agree"),
        }
    }

    fn count(&self) -> f64 {
        match self {
            Stats::Counts(_, n) => *n,
            Stats::Moments { n, .. } => *n,
        }
    }

    /// Gini index or variance.
    fn impurity(&self) -> f64 {
        match self {
            Stats::Counts(c, n) => {
                if *n <= 0.0 {
                    return 0.0;
                }
                1.0 - c.iter().map(|k| (k / n) * (k / n)).sum::<f64>()
            }
            Stats::Moments { n, sum, sum_sq } => {
                if *n <= 0.0 {
                    return 0.0;
                }
                let mean = sum / n;
                (sum_sq / n - mean * mean).max(0.0)
            }
        }
    }
}

struct TreeBuilder<'a> {
    features: &'a [Vec<f64>],
    target: &'a Target,
    mtry: usize,
    config: &'a ForestConfig,
    importance: &'a mut [f64],
    rng: &'a mut ChaCha8Rng,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) {
        let mut stats = Stats::empty(self.target);
        for &i in &rows {
            stats.add(self.target, i, 1.0);
        }
        let parent = stats.impurity();
        let min_leaf = self.config.min_samples_leaf.max(1);
        if depth >= self.config.max_depth || rows.len() < 2 * min_leaf || parent <= 1e-12 {
            return;
        }
        let n = rows.len() as f64;
        let p = self.features.len();
        let candidates = index::sample(self.rng, p, self.mtry).into_vec();

        // (decrease, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.clone();
        for f in candidates {
            let x = &self.features[f];
            sorted.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
            let mut left = Stats::empty(self.target);
            let mut right = stats.clone();
            for (pos, &i) in sorted.iter().enumerate().take(sorted.len() - 1) {
                left.add(self.target, i, 1.0);
                right.add(self.target, i, -1.0);
                let next = sorted[pos + 1];
                if x[i] == x[next] || pos + 1 < min_leaf || sorted.len() - pos - 1 < min_leaf {
                    continue;
                }
                let decrease = n * parent - left.count() * left.impurity() - right.count() * right.impurity();
                if best.is_none_or(|(d, _, _)| decrease > d + 1e-12) {
                    best = Some((decrease, f, 0.5 * (x[i] + x[next])));
                }
            }
        }
        let Some((decrease, f, threshold)) = best else { return };
        if decrease <= 0.0 {
            return;
        }
        self.importance[f] += decrease;
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| self.features[f][i] <= threshold);
        self.grow(l, depth + 1);
        self.grow(r, depth + 1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_validation() {
        assert!(ImportanceRanking::new(vec![0, 0], vec![1.0, 1.0]).is_err());
        assert!(ImportanceRanking::new(vec![1, 0], vec![1.0, 0.5]).is_err());
        let r = ImportanceRanking::new(vec![1, 0], vec![0.5, 1.0]).unwrap();
        assert_eq!(r.rank_of(1), 0);
        assert_eq!(r.rank_of(0), 1);
    }

    #[test]
    fn from_scores_breaks_ties_by_column() {
        let r = ImportanceRanking::from_scores(vec![0.2, 0.5, 0.2, 0.1]).unwrap();
        assert_eq!(r.order(), &[1, 0, 2, 3]);
    }
}
