//! Ranking evaluation: full-catalog Hit@K and RR@K, plus a popularity
//! baseline used as a sanity anchor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::IndexedSample;
use crate::error::{Error, Result};
use crate::model::{encode, score_all, ForwardOpts, ModelParams};

/// Aggregate metrics at each requested cutoff.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub cutoffs: Vec<usize>,
    pub hit: Vec<f64>,
    pub rr: Vec<f64>,
    pub n: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization cannot fail")
    }

    /// Metric value lookup by cutoff.
    pub fn hit_at(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == k).map(|i| self.hit[i])
    }

    pub fn rr_at(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == k).map(|i| self.rr[i])
    }
}

/// 1-based rank of `target` in a score vector; tied scores count as ranked
/// above the target, so a constant scorer ranks everything last.
pub fn rank_from_scores(scores: &[f64], target: usize) -> usize {
    let target_score = scores[target];
    let better = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| i != target && s >= target_score)
        .count();
    1 + better
}

/// Ranks the sample's target among all catalog items at the target time.
pub fn rank_target(
    params: &ModelParams,
    opts: &ForwardOpts,
    sample: &IndexedSample,
) -> Result<usize> {
    let enc = encode(&sample.items, &sample.times, params, opts)?;
    let scores = score_all(&enc, sample.target_time, params, opts);
    if sample.target_item >= scores.len() {
        return Err(Error::Data(format!(
            "target index {} outside vocabulary of {}",
            sample.target_item,
            scores.len()
        )));
    }
    Ok(rank_from_scores(&scores, sample.target_item))
}

pub fn hit_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn rr_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / rank as f64
    } else {
        0.0
    }
}

fn aggregate(ranks: &[usize], cutoffs: &[usize]) -> EvalReport {
    let n = ranks.len();
    let mut hit = Vec::with_capacity(cutoffs.len());
    let mut rr = Vec::with_capacity(cutoffs.len());
    for &k in cutoffs {
        let mut hit_sum = 0.0;
        let mut rr_sum = 0.0;
        for &r in ranks {
            hit_sum += hit_at_k(r, k);
            rr_sum += rr_at_k(r, k);
        }
        hit.push(hit_sum / n as f64);
        rr.push(rr_sum / n as f64);
    }
    EvalReport {
        cutoffs: cutoffs.to_vec(),
        hit,
        rr,
        n,
    }
}

/// Evaluates every sample with full-catalog ranking. Samples are scored in
/// parallel; sums run in fixed sample order so results never depend on
/// thread scheduling.
pub fn evaluate(
    params: &ModelParams,
    opts: &ForwardOpts,
    samples: &[IndexedSample],
    cutoffs: &[usize],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty sample set".into()));
    }
    if cutoffs.is_empty() || cutoffs.iter().any(|&k| k == 0) {
        return Err(Error::Config("cutoffs must be positive".into()));
    }
    let ranks: Vec<usize> = samples
        .par_iter()
        .map(|s| rank_target(params, opts, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&ranks, cutoffs))
}

/// Static frequency ranker: items ordered by descending train-set
/// occurrence count (windows and targets), ties by ascending item index.
#[derive(Debug, Clone)]
pub struct PopularityBaseline {
    /// rank_of_item[i] = 1-based rank of item i.
    rank_of_item: Vec<usize>,
}

impl PopularityBaseline {
    pub fn rank_of(&self, item: usize) -> usize {
        self.rank_of_item[item]
    }

    /// Items in rank order, best first.
    pub fn top(&self, count: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.rank_of_item.len()).collect();
        order.sort_by_key(|&i| self.rank_of_item[i]);
        order.truncate(count);
        order
    }

    pub fn evaluate(&self, samples: &[IndexedSample], cutoffs: &[usize]) -> Result<EvalReport> {
        if samples.is_empty() {
            return Err(Error::Data("cannot evaluate an empty sample set".into()));
        }
        let ranks: Vec<usize> = samples
            .iter()
            .map(|s| self.rank_of(s.target_item))
            .collect();
        Ok(aggregate(&ranks, cutoffs))
    }
}

pub fn popularity_baseline(train: &[IndexedSample], vocab_size: usize) -> Result<PopularityBaseline> {
    if train.is_empty() {
        return Err(Error::Data(
            "popularity baseline needs a non-empty train set".into(),
        ));
    }
    let mut counts = vec![0usize; vocab_size];
    for s in train {
        for &i in &s.items {
            if i >= vocab_size {
                return Err(Error::Data(format!(
                    "item index {i} outside vocabulary of {vocab_size}"
                )));
            }
            counts[i] += 1;
        }
        if s.target_item >= vocab_size {
            return Err(Error::Data(format!(
                "item index {} outside vocabulary of {vocab_size}",
                s.target_item
            )));
        }
        counts[s.target_item] += 1;
    }
    let mut order: Vec<usize> = (0..vocab_size).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut rank_of_item = vec![0usize; vocab_size];
    for (pos, &item) in order.iter().enumerate() {
        rank_of_item[item] = pos + 1;
    }
    Ok(PopularityBaseline { rank_of_item })
}
