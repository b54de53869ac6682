//! Adjacent-block partitions and cross-fitting fold plans.
//!
//! Two schemes are supported:
//!
//! * **RCF** (reverse cross-fitting): fold `k` trains on the larger of the
//!   left complement `B₁..Bₖ₋₁` and the right complement `Bₖ₊₁..B_K`,
//!   measured in observations, or on both when they are the same size.
//!   Training on the right complement runs time-reversed.
//! * **NLO** (neighbours left out): fold `k` trains on every block except
//!   `Bₖ` and its immediate neighbours.
//!
//! Indices are zero-based and ranges are half-open.

use std::ops::Range;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    len: usize,
    blocks: Vec<Range<usize>>,
}

impl BlockPartition {
    /// Splits `0..len` into `k` contiguous blocks; the first `len mod k`
    /// blocks receive one extra observation.
    pub fn new(len: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(invalid(format!("need at least 2 folds, got {k}")));
        }
        if k > len {
            return Err(invalid(format!("cannot split {len} observations into {k} blocks")));
        }
        let base = len / k;
        let extra = len % k;
        Self::from_sizes(&(0..k).map(|i| base + usize::from(i < extra)).collect::<Vec<_>>())
    }

    /// Partition with explicit, consecutive block sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(invalid("a partition needs at least 2 blocks"));
        }
        if sizes.contains(&0) {
            return Err(invalid("blocks must be non-empty"));
        }
        let mut start = 0;
        let blocks = sizes
            .iter()
            .map(|&s| {
                let r = start..start + s;
                start += s;
                r
            })
            .collect();
        Ok(Self { len: start, blocks })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    /// The same block sizes in reverse time order.
    pub fn reversed(&self) -> Self {
        let mut sizes = self.sizes();
        sizes.reverse();
        Self::from_sizes(&sizes).expect("reversing a valid partition")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Rcf,
    Nlo,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Rcf => "rcf",
            Scheme::Nlo => "nlo",
        })
    }
}

/// Direction in which a fold's auxiliary data are used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Auxiliary data lie entirely before the main block.
    Forward,
    /// Auxiliary data lie entirely after the main block; rows are fed to
    /// the learner in reverse time order.
    Reversed,
    Both,
}

impl Direction {
    pub fn swapped(self) -> Self {
        match self {
            Direction::Forward => Direction::Reversed,
            Direction::Reversed => Direction::Forward,
            Direction::Both => Direction::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub main: Range<usize>,
    /// Disjoint, increasing index ranges.
    pub auxiliary: Vec<Range<usize>>,
    pub direction: Direction,
}

impl Fold {
    pub fn aux_len(&self) -> usize {
        self.auxiliary.iter().map(|r| r.len()).sum()
    }

    /// Auxiliary indices in the order they are handed to the learner:
    /// ascending, or descending for a reversed fold.
    pub fn training_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.auxiliary.iter().flat_map(|r| r.clone()).collect();
        if self.direction == Direction::Reversed {
            idx.reverse();
        }
        idx
    }

    pub fn main_indices(&self) -> Vec<usize> {
        self.main.clone().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub scheme: Scheme,
    pub len: usize,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn build(scheme: Scheme, partition: &BlockPartition) -> Result<Self> {
        match scheme {
            Scheme::Rcf => Ok(rcf_plan(partition)),
            Scheme::Nlo => nlo_plan(partition),
        }
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Fold owning each time index as a main observation.
    pub fn fold_of_t(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.len];
        for (k, f) in self.folds.iter().enumerate() {
            for t in f.main.clone() {
                out[t] = k;
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn span(blocks: &[Range<usize>]) -> Option<Range<usize>> {
    match (blocks.first(), blocks.last()) {
        (Some(a), Some(b)) => Some(a.start..b.end),
        _ => None,
    }
}

/// Reverse cross-fitting plan: keep the larger complement, or both sides
/// when they hold the same number of observations.
pub fn rcf_plan(partition: &BlockPartition) -> FoldPlan {
    let blocks = partition.blocks();
    let folds = blocks
        .iter()
        .enumerate()
        .map(|(k, main)| {
            let left = span(&blocks[..k]);
            let right = span(&blocks[k + 1..]);
            let nl = left.as_ref().map_or(0, |r| r.len());
            let nr = right.as_ref().map_or(0, |r| r.len());
            let (auxiliary, direction) = if nl > nr {
                (vec![left.unwrap()], Direction::Forward)
            } else if nr > nl {
                (vec![right.unwrap()], Direction::Reversed)
            } else {
                (vec![left.unwrap(), right.unwrap()], Direction::Both)
            };
            Fold { main: main.clone(), auxiliary, direction }
        })
        .collect();
    FoldPlan { scheme: Scheme::Rcf, len: partition.len(), folds }
}

/// Neighbours-left-out plan: drop the main block and its adjacent blocks.
pub fn nlo_plan(partition: &BlockPartition) -> Result<FoldPlan> {
    let k_total = partition.k();
    if k_total < 3 {
        return Err(invalid(format!("NLO needs at least 3 folds, got {k_total}")));
    }
    let blocks = partition.blocks();
    let mut folds = Vec::with_capacity(k_total);
    for (k, main) in blocks.iter().enumerate() {
        let mut auxiliary = Vec::new();
        if k >= 2 {
            auxiliary.extend(span(&blocks[..k - 1]));
        }
        if k + 2 < k_total {
            auxiliary.extend(span(&blocks[k + 2..]));
        }
        if auxiliary.is_empty() {
            return Err(invalid(format!("NLO fold {} has an empty auxiliary sample with K = {k_total}", k + 1)));
        }
        folds.push(Fold { main: main.clone(), auxiliary, direction: Direction::Both });
    }
    Ok(FoldPlan { scheme: Scheme::Nlo, len: partition.len(), folds })
}

/// Mean share of the sample available for training, as an exact fraction.
pub fn sample_usage_exact(plan: &FoldPlan) -> Ratio<u64> {
    let aux: u64 = plan.folds.iter().map(|f| f.aux_len() as u64).sum();
    Ratio::new(aux, (plan.k() * plan.len) as u64)
}

pub fn sample_usage(plan: &FoldPlan) -> f64 {
    let r = sample_usage_exact(plan);
    *r.numer() as f64 / *r.denom() as f64
}
