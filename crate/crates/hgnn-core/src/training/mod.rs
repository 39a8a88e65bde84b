//! Training: pairwise ranking loss over sampled negatives, assignment
//! entropy and L2 regularization, exact hand-written reverse-mode
//! gradients, Adam updates, and a validation-gated epoch loop.

pub mod adam;
pub mod backward;
pub mod gradcheck;

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::IndexedSample;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{
    encode, score_candidate, AblationFlags, EncodeTrace, ForwardOpts, GatWeights, Hyper,
    ModelParams, ScoreTrace,
};
use crate::tsg::SECONDS_PER_DAY;

pub use adam::{AdamHyper, AdamState};
pub use backward::{backward, batch_step, GatTensors, GradientSet};
pub use gradcheck::{grad_check, GradCheckDims, GradCheckReport};

/// Optimizer and loop settings. `patience` counts consecutive epochs
/// without a validation Hit@10 improvement before stopping; zero disables
/// early stopping.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hyper: Hyper,
    /// Edge-issue bound in seconds.
    pub t_bound: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Entropy-regularizer weight (lambda 1).
    pub lambda_entropy: f64,
    /// L2 weight (lambda 2).
    pub lambda_l2: f64,
    pub negatives_per_positive: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub flags: AblationFlags,
    pub adam: AdamHyper,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hyper: Hyper {
                d: 64,
                d_head: 32,
                heads: 2,
                factors: 5,
                gamma: 0.8,
                mu: SECONDS_PER_DAY,
            },
            t_bound: 7.0 * SECONDS_PER_DAY,
            learning_rate: 0.001,
            batch_size: 1024,
            lambda_entropy: 1e-4,
            lambda_l2: 1e-4,
            negatives_per_positive: 1,
            max_epochs: 500,
            patience: 10,
            seed: 42,
            flags: AblationFlags::default(),
            adam: AdamHyper::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config(
                "negatives per positive must be at least 1".into(),
            ));
        }
        if self.lambda_entropy < 0.0 || self.lambda_l2 < 0.0 {
            return Err(Error::Config(
                "regularizer weights must be non-negative".into(),
            ));
        }
        if !(self.t_bound > 0.0) {
            return Err(Error::Config(format!(
                "timespan bound must be positive, got {}",
                self.t_bound
            )));
        }
        Ok(())
    }

    pub fn opts(&self) -> ForwardOpts {
        ForwardOpts {
            t_bound: self.t_bound,
            flags: self.flags,
        }
    }

    /// Entropy weight after applying the ablation switch.
    pub fn effective_lambda_entropy(&self) -> f64 {
        if self.flags.no_entropy {
            0.0
        } else {
            self.lambda_entropy
        }
    }
}

fn gaussian_matrix(
    rng: &mut ChaCha8Rng,
    normal: &Normal<f64>,
    rows: usize,
    cols: usize,
) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = normal.sample(rng);
        }
    }
    m
}

/// Draws every trainable entry i.i.d. Gaussian (mean 0, std 0.1) from a
/// generator seeded by `seed`. Draw order is fixed: embedding table, first
/// layer heads then output, second layer heads then output, assignment
/// projection, all row-major.
pub fn init_params(vocab_size: usize, hyper: Hyper, seed: u64) -> Result<ModelParams> {
    hyper.validate()?;
    if vocab_size == 0 {
        return Err(Error::Data("cannot initialize an empty vocabulary".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1).expect("constant std is valid");
    let x = gaussian_matrix(&mut rng, &normal, vocab_size, hyper.d);
    let mut gats = Vec::with_capacity(2);
    for _ in 0..2 {
        let mut w_heads = Vec::with_capacity(hyper.heads);
        for _ in 0..hyper.heads {
            w_heads.push(gaussian_matrix(&mut rng, &normal, hyper.d_head, hyper.d));
        }
        let w_out = gaussian_matrix(&mut rng, &normal, hyper.d, hyper.heads * hyper.d_head);
        gats.push(GatWeights { w_heads, w_out });
    }
    let w_assign = gaussian_matrix(&mut rng, &normal, hyper.d, hyper.factors);
    let gat2 = gats.pop().unwrap();
    let gat1 = gats.pop().unwrap();
    Ok(ModelParams {
        hyper,
        x,
        gat1,
        gat2,
        w_assign,
    })
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Pairwise ranking loss: -ln logistic(y_pos - y_neg).
pub fn bpr_pair_loss(y_pos: f64, y_neg: f64) -> f64 {
    softplus(-(y_pos - y_neg))
}

/// Mean per-row entropy of a row-stochastic matrix, with 0 ln 0 = 0.
pub fn entropy_loss(s: &Array2<f64>) -> f64 {
    let n = s.nrows();
    let mut total = 0.0;
    for row in s.rows() {
        for &v in row {
            if v > 0.0 {
                total -= v * v.ln();
            }
        }
    }
    total / n as f64
}

/// One positive sample prepared for a training step.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub items: Vec<usize>,
    pub times: Vec<i64>,
    pub target: usize,
    pub target_time: i64,
    pub negatives: Vec<usize>,
}

impl BatchItem {
    pub fn from_sample(sample: &IndexedSample, negatives: Vec<usize>) -> Self {
        BatchItem {
            items: sample.items.clone(),
            times: sample.times.clone(),
            target: sample.target_item,
            target_time: sample.target_time,
            negatives,
        }
    }
}

/// Forward traces for one positive and its negatives; negatives share the
/// positive's window encoding (and therefore its assignment matrix).
#[derive(Debug, Clone)]
pub struct SampleTraces {
    pub enc: EncodeTrace,
    pub pos: ScoreTrace,
    pub negs: Vec<ScoreTrace>,
}

pub fn forward_sample(
    item: &BatchItem,
    params: &ModelParams,
    opts: &ForwardOpts,
) -> Result<SampleTraces> {
    let enc = encode(&item.items, &item.times, params, opts)?;
    let pos = score_candidate(&enc, item.target, item.target_time, params, opts)?;
    let negs = item
        .negatives
        .iter()
        .map(|&n| score_candidate(&enc, n, item.target_time, params, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleTraces { enc, pos, negs })
}

/// Ranking terms plus the weighted assignment entropy for one sample.
pub fn sample_loss(traces: &SampleTraces, lambda_entropy: f64) -> f64 {
    let mut loss: f64 = traces
        .negs
        .iter()
        .map(|n| bpr_pair_loss(traces.pos.y, n.y))
        .sum();
    if lambda_entropy > 0.0 {
        if let Some(s) = traces.enc.s() {
            loss += lambda_entropy * entropy_loss(s);
        }
    }
    loss
}

/// Embedding rows referenced anywhere in the batch: window nodes, targets,
/// and sampled negatives. The L2 term touches each row once per batch.
pub fn touched_rows(traces: &[SampleTraces]) -> BTreeSet<usize> {
    let mut rows = BTreeSet::new();
    for t in traces {
        rows.extend(t.enc.graph.node_items.iter().copied());
        rows.insert(t.pos.candidate);
        rows.extend(t.negs.iter().map(|n| n.candidate));
    }
    rows
}

/// lambda_l2 times the squared entries of every weight matrix plus the
/// batch-touched embedding rows.
pub fn l2_penalty(params: &ModelParams, touched: &BTreeSet<usize>, lambda_l2: f64) -> f64 {
    if lambda_l2 == 0.0 {
        return 0.0;
    }
    let mut sq = 0.0;
    for gat in [&params.gat1, &params.gat2] {
        for w in &gat.w_heads {
            sq += w.iter().map(|v| v * v).sum::<f64>();
        }
        sq += gat.w_out.iter().map(|v| v * v).sum::<f64>();
    }
    sq += params.w_assign.iter().map(|v| v * v).sum::<f64>();
    for &r in touched {
        sq += params.x.row(r).iter().map(|v| v * v).sum::<f64>();
    }
    lambda_l2 * sq
}

/// Full batch objective: ranking terms and entropy per sample, plus one L2
/// term over weights and batch-touched embedding rows.
pub fn total_loss(
    traces: &[SampleTraces],
    params: &ModelParams,
    lambda_entropy: f64,
    lambda_l2: f64,
) -> f64 {
    let base: f64 = traces.iter().map(|t| sample_loss(t, lambda_entropy)).sum();
    base + l2_penalty(params, &touched_rows(traces), lambda_l2)
}

/// Convenience for gradient checking: forward the whole batch and return
/// the objective.
pub fn batch_loss(
    batch: &[BatchItem],
    params: &ModelParams,
    opts: &ForwardOpts,
    lambda_entropy: f64,
    lambda_l2: f64,
) -> Result<f64> {
    let traces = batch
        .iter()
        .map(|b| forward_sample(b, params, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(total_loss(&traces, params, lambda_entropy, lambda_l2))
}

/// Draws `count` distinct items uniformly from the complement of
/// `history`.
pub fn sample_negatives<R: Rng>(
    history: &BTreeSet<usize>,
    vocab_size: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let in_vocab_history = history.iter().filter(|&&i| i < vocab_size).count();
    let available = vocab_size - in_vocab_history;
    if count > available {
        return Err(Error::Data(format!(
            "cannot draw {count} negatives: only {available} items outside the user history"
        )));
    }
    let mut chosen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let candidate = rng.random_range(0..vocab_size);
        if history.contains(&candidate) || !chosen.insert(candidate) {
            continue;
        }
        out.push(candidate);
    }
    Ok(out)
}

/// One epoch row of the training log.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_hit10: f64,
    pub val_rr10: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_hit10,val_rr10,seconds";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.val_hit10, self.val_rr10, self.seconds
        )
    }
}

/// Result of a training run: the selected parameters (best validation
/// Hit@10 when a validation split exists, otherwise the final state), the
/// per-epoch log, and which epoch was selected.
#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

/// Per-user item sets used to exclude observed items from negative draws.
fn build_histories(sample_sets: &[&[IndexedSample]]) -> HashMap<usize, BTreeSet<usize>> {
    let mut histories: HashMap<usize, BTreeSet<usize>> = HashMap::new();
    for samples in sample_sets {
        for s in *samples {
            let h = histories.entry(s.user).or_default();
            h.extend(s.items.iter().copied());
            h.insert(s.target_item);
        }
    }
    histories
}

/// The epoch loop.
///
/// Each epoch shuffles the train samples with the run RNG, draws negatives
/// per positive in shuffled order, and applies one Adam update per batch.
/// Per-batch forward/backward runs in parallel but gradients are summed in
/// sample order, so identical configs and seeds give bit-identical runs
/// regardless of thread count. Validation Hit@10 selects the returned
/// checkpoint; with an empty validation split the metric columns log as
/// NaN, early stopping is disabled, and the final parameters are returned.
pub fn train(
    train_samples: &[IndexedSample],
    val_samples: &[IndexedSample],
    vocab_size: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_samples.is_empty() {
        return Err(Error::Data("train split is empty".into()));
    }
    let histories = build_histories(&[train_samples, val_samples]);
    let opts = config.opts();
    let lambda_entropy = config.effective_lambda_entropy();

    let mut params = init_params(vocab_size, config.hyper, config.seed)?;
    let mut adam = AdamState::new(&params, config.adam, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stale = 0usize;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &train_samples[i];
                let history = histories
                    .get(&s.user)
                    .expect("history exists for every train user");
                let negatives = sample_negatives(
                    history,
                    vocab_size,
                    config.negatives_per_positive,
                    &mut rng,
                )?;
                batch.push(BatchItem::from_sample(s, negatives));
            }
            let (loss, grads) =
                batch_step(&batch, &params, &opts, lambda_entropy, config.lambda_l2)?;
            adam.step(&mut params, &grads);
            loss_sum += loss;
        }
        let train_loss = loss_sum / train_samples.len() as f64;

        let (val_hit10, val_rr10) = if val_samples.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let report = evaluate(&params, &opts, val_samples, &[10])?;
            (report.hit[0], report.rr[0])
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            val_hit10,
            val_rr10,
            seconds: start.elapsed().as_secs_f64(),
        });

        if !val_samples.is_empty() {
            let improved = best.as_ref().is_none_or(|(b, _, _)| val_hit10 > *b);
            if improved {
                best = Some((val_hit10, epoch, params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if config.patience > 0 && stale >= config.patience {
                    break;
                }
            }
        }
    }

    let (params, best_epoch) = match best {
        Some((_, epoch, p)) => (p, Some(epoch)),
        None => (params, None),
    };
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
    })
}
