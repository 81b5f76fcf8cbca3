//! Random attribute subsets for missingness augmentation and the nested
//! pairs used by the more-vs-fewer ranking loss, plus the marginal
//! corruption baseline.

use rand::seq::index;
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::tabular::schema::{TabularSample, Value};

/// Uniform size in `[1, n]`, then a uniform subset of that size.
pub fn sample_subset<R: Rng + ?Sized>(full: &TabularSample, rng: &mut R) -> Result<TabularSample> {
    let n = full.len();
    if n == 0 {
        return Err(CoreError::EmptySample);
    }
    let k = rng.random_range(1..=n);
    Ok(full.keep_positions(&index::sample(rng, n, k).into_vec()))
}

/// Draws `(t_plus, t_minus)` with `t_minus ⊊ t_plus ⊆ full`.
///
/// `|t_plus|` is uniform over `[1, n]` and `|t_minus|` uniform over
/// `[0, |t_plus| - 1]`, each followed by a uniform subset of that size.
pub fn sample_nested_pair<R: Rng + ?Sized>(
    full: &TabularSample,
    rng: &mut R,
) -> Result<(TabularSample, TabularSample)> {
    let plus = sample_subset(full, rng)?;
    let m = plus.len();
    let k = rng.random_range(0..m);
    let minus = plus.keep_positions(&index::sample(rng, m, k).into_vec());
    Ok((plus, minus))
}

/// Per-column pools of observed values, used as empirical marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pools: Vec<Vec<Value>>,
}

impl Marginals {
    pub fn new(pools: Vec<Vec<Value>>) -> Self {
        Self { pools }
    }

    /// Collects every present value of every column across `samples`.
    pub fn from_samples(samples: &[TabularSample]) -> Self {
        let width = samples.first().map_or(0, |s| s.schema().len());
        let mut pools = vec![Vec::new(); width];
        for s in samples {
            for &(c, v) in s.entries() {
                pools[c].push(v);
            }
        }
        Self { pools }
    }

    pub fn pool(&self, column: usize) -> &[Value] {
        self.pools.get(column).map_or(&[], Vec::as_slice)
    }
}

/// Replaces each present entry, independently with probability `rate`, by a
/// uniform draw from its column's pool. Presence is never changed.
pub fn marginal_corrupt<R: Rng + ?Sized>(
    t: &TabularSample,
    marginals: &Marginals,
    rate: f64,
    rng: &mut R,
) -> Result<TabularSample> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(CoreError::Config(format!("corruption rate {rate} outside [0, 1]")));
    }
    let mut entries = Vec::with_capacity(t.len());
    for &(c, v) in t.entries() {
        let replace = rng.random::<f64>() < rate;
        if replace {
            let pool = marginals.pool(c);
            if pool.is_empty() {
                return Err(CoreError::EmptyPool(t.schema().column(c).name.clone()));
            }
            entries.push((c, pool[rng.random_range(0..pool.len())]));
        } else {
            entries.push((c, v));
        }
    }
    Ok(t.with_entries(entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::schema::{AttributeSchema, Column};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn sample(n: usize) -> TabularSample {
        let schema = Arc::new(
            AttributeSchema::new((0..n).map(|i| Column::continuous(format!("c{i}"))).collect()).unwrap(),
        );
        TabularSample::new(schema, (0..n).map(|i| (i, Value::Real(i as f64))).collect()).unwrap()
    }

    #[test]
    fn single_attribute_is_forced() {
        let t = sample(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(sample_subset(&t, &mut rng).unwrap(), t);
            let (p, m) = sample_nested_pair(&t, &mut rng).unwrap();
            assert_eq!(p, t);
            assert!(m.is_empty());
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        let t = sample(3).keep_positions(&[]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_subset(&t, &mut rng), Err(CoreError::EmptySample)));
        assert!(matches!(sample_nested_pair(&t, &mut rng), Err(CoreError::EmptySample)));
    }

    #[test]
    fn corruption_extremes() {
        let t = sample(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pools = Marginals::new((0..4).map(|c| vec![Value::Real(100.0 + c as f64)]).collect());
        assert_eq!(marginal_corrupt(&t, &pools, 0.0, &mut rng).unwrap(), t);
        let all = marginal_corrupt(&t, &pools, 1.0, &mut rng).unwrap();
        for &(c, v) in all.entries() {
            assert_eq!(v, Value::Real(100.0 + c as f64));
        }
        let empty = Marginals::new(vec![Vec::new(); 4]);
        assert!(matches!(
            marginal_corrupt(&t, &empty, 1.0, &mut rng),
            Err(CoreError::EmptyPool(_))
        ));
    }

    #[test]
    fn corruption_rate_matches_binomial() {
        // 10,000 entries at rate 0.3; each replacement lands on a value that
        // differs from the original, so replacement count is observable.
        let t = sample(10);
        let pools = Marginals::new((0..10).map(|_| vec![Value::Real(-1.0)]).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut replaced = 0usize;
        for _ in 0..1000 {
            let out = marginal_corrupt(&t, &pools, 0.3, &mut rng).unwrap();
            assert_eq!(out.present().collect::<Vec<_>>(), t.present().collect::<Vec<_>>());
            replaced += out.entries().iter().filter(|(_, v)| *v == Value::Real(-1.0)).count();
        }
        let freq = replaced as f64 / 10_000.0;
        assert!((freq - 0.3).abs() < 0.01, "frequency {freq}");
    }
}
