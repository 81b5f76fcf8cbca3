//! Evaluation-time attribute removal: random, least-important and
//! most-important protocols at a given availability fraction.

use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tabular::importance::ImportanceRanking;
use crate::tabular::schema::TabularSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Random,
    LeastImportant,
    MostImportant,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 3] = [
        ProtocolKind::Random,
        ProtocolKind::LeastImportant,
        ProtocolKind::MostImportant,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            ProtocolKind::Random => "random",
            ProtocolKind::LeastImportant => "li",
            ProtocolKind::MostImportant => "mi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(ProtocolKind::Random),
            "li" | "least_important" => Some(ProtocolKind::LeastImportant),
            "mi" | "most_important" => Some(ProtocolKind::MostImportant),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MissingnessProtocol {
    kind: ProtocolKind,
    fraction: f64,
    ranking: Option<Arc<ImportanceRanking>>,
    seed: u64,
}

impl MissingnessProtocol {
    pub fn new(
        kind: ProtocolKind,
        fraction: f64,
        ranking: Option<Arc<ImportanceRanking>>,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(CoreError::Config(format!("availability fraction {fraction} outside [0, 1]")));
        }
        if kind != ProtocolKind::Random && ranking.is_none() {
            return Err(CoreError::MissingRanking {
                kind: kind.short_name(),
            });
        }
        Ok(Self {
            kind,
            fraction,
            ranking,
            seed,
        })
    }

    pub fn random(fraction: f64, seed: u64) -> Result<Self> {
        Self::new(ProtocolKind::Random, fraction, None, seed)
    }

    pub fn kind(&self) -> ProtocolKind {
        self.kind
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Number of attributes kept out of `n` at availability `fraction`,
/// rounding half up.
pub fn kept_count(fraction: f64, n: usize) -> usize {
    // The epsilon absorbs products like 0.3 * 5 landing just under x.5.
    let k = (fraction * n as f64 + 0.5 + 1e-9).floor() as usize;
    k.min(n)
}

/// Keeps exactly `kept_count(f, |t|)` of `t`'s present attributes.
pub fn apply_missingness(t: &TabularSample, protocol: &MissingnessProtocol) -> Result<TabularSample> {
    let n = t.len();
    let k = kept_count(protocol.fraction, n);
    if k == n {
        return Ok(t.clone());
    }
    let positions: Vec<usize> = match protocol.kind {
        ProtocolKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
            index::sample(&mut rng, n, k).into_vec()
        }
        kind => {
            let ranking = protocol.ranking.as_deref().ok_or(CoreError::MissingRanking {
                kind: kind.short_name(),
            })?;
            let mut by_rank: Vec<usize> = (0..n).collect();
            by_rank.sort_by_key(|&p| ranking.rank_of(t.entries()[p].0));
            if kind == ProtocolKind::MostImportant {
                by_rank.truncate(k);
            } else {
                by_rank.drain(..n - k);
            }
            by_rank
        }
    };
    Ok(t.keep_positions(&positions))
}
