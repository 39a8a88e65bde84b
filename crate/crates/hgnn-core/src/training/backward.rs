//! Exact reverse-mode gradients of the batch objective, accumulated
//! through candidate scoring, factor timestamps, factor embeddings, the
//! assignment softmax, both attention layers, and the embedding gather.
//! Edge weights and raw node timestamps are constants; everything else,
//! including the temporal term's dependence on factor timestamps, is
//! differentiated.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{s, Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    elu_prime, leaky_relu_prime, sigmoid, EncodeTrace, ForwardOpts, GatTrace, GatWeights,
    ModelParams, ScoreTrace,
};

use super::{
    forward_sample, l2_penalty, sample_loss, touched_rows, BatchItem, SampleTraces,
};

/// Gradient (or moment) storage for one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GatTensors {
    pub w_heads: Vec<Array2<f64>>,
    pub w_out: Array2<f64>,
}

impl GatTensors {
    fn zeros_like(w: &GatWeights) -> Self {
        GatTensors {
            w_heads: w.w_heads.iter().map(|m| Array2::zeros(m.dim())).collect(),
            w_out: Array2::zeros(w.w_out.dim()),
        }
    }

    fn add(&mut self, other: &GatTensors) {
        for (a, b) in self.w_heads.iter_mut().zip(&other.w_heads) {
            *a += b;
        }
        self.w_out += &other.w_out;
    }
}

/// One tensor of partial derivatives per trainable matrix, shapes matching
/// the parameters; embedding rows untouched by the batch stay zero. Also
/// reused as Adam moment storage.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub x: Array2<f64>,
    pub gat1: GatTensors,
    pub gat2: GatTensors,
    pub w_assign: Array2<f64>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientSet {
            x: Array2::zeros(params.x.dim()),
            gat1: GatTensors::zeros_like(&params.gat1),
            gat2: GatTensors::zeros_like(&params.gat2),
            w_assign: Array2::zeros(params.w_assign.dim()),
        }
    }

    /// All tensors, named, in the same order as `ModelParams::matrices`.
    pub fn matrices(&self) -> Vec<(String, ndarray::ArrayView2<'_, f64>)> {
        let mut out = vec![("embedding table".to_string(), self.x.view())];
        for (layer, gat) in [("first", &self.gat1), ("second", &self.gat2)] {
            for (h, w) in gat.w_heads.iter().enumerate() {
                out.push((format!("{layer} attention head {h}"), w.view()));
            }
            out.push((format!("{layer} attention output"), gat.w_out.view()));
        }
        out.push(("assignment projection".to_string(), self.w_assign.view()));
        out
    }

    fn accumulate(&mut self, sample: &SampleGrads) {
        for (&item, row) in &sample.x_rows {
            let mut dst = self.x.row_mut(item);
            dst += row;
        }
        if let Some(g) = &sample.gat1 {
            self.gat1.add(g);
        }
        if let Some(g) = &sample.gat2 {
            self.gat2.add(g);
        }
        if let Some(g) = &sample.w_assign {
            self.w_assign += g;
        }
    }

    fn ensure_finite(&self) -> Result<()> {
        for (name, m) in self.matrices() {
            if !m.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in {name}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-sample contribution with the embedding gradient kept sparse.
#[derive(Debug, Clone)]
pub(crate) struct SampleGrads {
    x_rows: BTreeMap<usize, Array1<f64>>,
    gat1: Option<GatTensors>,
    gat2: Option<GatTensors>,
    w_assign: Option<Array2<f64>>,
}

/// Backward through one attention layer. Takes the upstream gradient of
/// the layer output and returns the weight gradients plus the gradient of
/// the layer input.
fn gat_backward(
    trace: &GatTrace,
    weights: &GatWeights,
    gamma: f64,
    g_out: &Array2<f64>,
) -> (GatTensors, Array2<f64>) {
    let n = trace.x_in.nrows();
    let d_head = trace.heads[0].x_tilde.ncols();

    let g_concat = g_out.dot(&weights.w_out);
    let g_w_out = g_out.t().dot(&trace.concat);

    let mut g_x_in = Array2::zeros(trace.x_in.dim());
    let mut g_w_heads = Vec::with_capacity(trace.heads.len());
    for (h, (head, w_h)) in trace.heads.iter().zip(&weights.w_heads).enumerate() {
        let g_q = g_concat.slice(s![.., h * d_head..(h + 1) * d_head]);

        let mut g_p = g_q.to_owned();
        for (gp, &pre) in g_p.iter_mut().zip(head.head_pre.iter()) {
            *gp *= elu_prime(pre);
        }

        let g_alpha = g_p.dot(&head.x_tilde.t());
        let mut g_t = head.attn.t().dot(&g_p);

        // Softmax over each neighborhood, then LeakyReLU, then the gamma
        // mixing; the edge-weight summand is constant. Off-neighborhood
        // attention is exactly zero, which silences those entries.
        let mut g_dots = Array2::zeros((n, n));
        for i in 0..n {
            let mut row_dot = 0.0;
            for k in 0..n {
                row_dot += head.attn[(i, k)] * g_alpha[(i, k)];
            }
            for j in 0..n {
                let alpha = head.attn[(i, j)];
                if alpha > 0.0 {
                    let g_e = alpha * (g_alpha[(i, j)] - row_dot);
                    g_dots[(i, j)] = g_e * leaky_relu_prime(head.a_raw[(i, j)]) * gamma;
                }
            }
        }

        // The pairwise dot products are x_tilde x_tildeT.
        let sym = &g_dots + &g_dots.t();
        g_t += &sym.dot(&head.x_tilde);

        g_x_in += &g_t.dot(w_h);
        g_w_heads.push(g_t.t().dot(&trace.x_in));
    }

    (
        GatTensors {
            w_heads: g_w_heads,
            w_out: g_w_out,
        },
        g_x_in,
    )
}

/// Backward through one candidate's scoring, accumulating into the shared
/// factor-embedding gradient, factor-timestamp gradient, and the
/// candidate's embedding row.
fn score_backward(
    sc: &ScoreTrace,
    g_y: f64,
    enc: &EncodeTrace,
    params: &ModelParams,
    use_timespan: bool,
    g_c: &mut Array2<f64>,
    g_t_fac: &mut [f64],
    x_rows: &mut BTreeMap<usize, Array1<f64>>,
) {
    let k = sc.beta.len();
    let d = params.hyper.d;
    let mu = params.hyper.mu;
    let g_weighted = g_y * sc.y * (1.0 - sc.y);
    let v = params.x.row(sc.candidate);
    let mut g_v = Array1::zeros(d);
    for j in 0..k {
        // Logit gradient through the beta softmax; the affinity also feeds
        // the weighted sum directly.
        let g_logit = g_weighted * sc.beta[j] * (sc.dots[j] - sc.weighted);
        let g_dot = g_weighted * sc.beta[j] + g_logit;
        for col in 0..d {
            g_c[(j, col)] += g_dot * v[col];
            g_v[col] += g_dot * enc.c[(j, col)];
        }
        if use_timespan {
            let delta = sc.t_v as f64 - enc.t_fac[j];
            if delta.abs() > mu {
                // Uncapped region: tau = mu / |delta|.
                g_t_fac[j] += g_logit * mu * delta.signum() / (delta * delta);
            }
        }
    }
    let row = x_rows
        .entry(sc.candidate)
        .or_insert_with(|| Array1::zeros(d));
    *row += &g_v;
}

/// Backward for one positive sample and its negatives (no L2, which is a
/// batch-level term). `include_bpr` exists for term-isolation testing.
pub(crate) fn backward_sample_terms(
    traces: &SampleTraces,
    params: &ModelParams,
    opts: &ForwardOpts,
    lambda_entropy: f64,
    include_bpr: bool,
) -> Result<SampleGrads> {
    let enc = &traces.enc;
    let n = enc.graph.len();
    let k = enc.factor_count();
    let d = params.hyper.d;
    let gamma = params.hyper.gamma;
    let use_timespan = !opts.flags.no_timespan;

    let mut x_rows: BTreeMap<usize, Array1<f64>> = BTreeMap::new();
    let mut g_c = Array2::zeros((k, d));
    let mut g_t_fac = vec![0.0; k];

    if include_bpr {
        let mut g_y_pos = 0.0;
        for neg in &traces.negs {
            // d/ds of -ln sigmoid(s) at s = y_pos - y_neg is -sigmoid(-s).
            let w = sigmoid(neg.y - traces.pos.y);
            g_y_pos -= w;
            score_backward(
                neg, w, enc, params, use_timespan, &mut g_c, &mut g_t_fac, &mut x_rows,
            );
        }
        score_backward(
            &traces.pos,
            g_y_pos,
            enc,
            params,
            use_timespan,
            &mut g_c,
            &mut g_t_fac,
            &mut x_rows,
        );
    }

    let (g_z, gat2_grads, w_assign_grad) = if let Some(assign) = &enc.assign {
        let s_mat = &assign.s;
        // Factor embeddings C = S^T Z.
        let mut g_s = enc.z.dot(&g_c.t());

        // Factor timestamps: t_j is the S-weighted mean of node times.
        for j in 0..k {
            if g_t_fac[j] != 0.0 {
                let den: f64 = (0..n).map(|i| s_mat[(i, j)]).sum();
                for i in 0..n {
                    let t_i = enc.graph.node_times[i] as f64;
                    g_s[(i, j)] += g_t_fac[j] * (t_i - enc.t_fac[j]) / den;
                }
            }
        }

        if lambda_entropy > 0.0 {
            let scale = lambda_entropy / n as f64;
            for i in 0..n {
                for j in 0..k {
                    let sv = s_mat[(i, j)];
                    g_s[(i, j)] -= scale * (sv.ln() + 1.0);
                }
            }
        }

        // Row softmax producing S from the assignment logits.
        let mut g_logits = Array2::zeros((n, k));
        for i in 0..n {
            let mut row_dot = 0.0;
            for j in 0..k {
                row_dot += g_s[(i, j)] * s_mat[(i, j)];
            }
            for j in 0..k {
                g_logits[(i, j)] = s_mat[(i, j)] * (g_s[(i, j)] - row_dot);
            }
        }

        let w_assign_grad = assign.gat.out.t().dot(&g_logits);
        let g_gat2_out = g_logits.dot(&params.w_assign.t());
        let (gat2_grads, g_z_from_gat2) =
            gat_backward(&assign.gat, &params.gat2, gamma, &g_gat2_out);
        let g_z = s_mat.dot(&g_c) + g_z_from_gat2;
        (g_z, Some(gat2_grads), Some(w_assign_grad))
    } else {
        // Clustering ablated: C is Z and the factor timestamps are the raw
        // node times, so the factor gradients flow straight to Z.
        (g_c, None, None)
    };

    let (gat1_grads, g_x_window) = if let Some(gat1) = &enc.gat1 {
        let (grads, g_in) = gat_backward(gat1, &params.gat1, gamma, &g_z);
        (Some(grads), g_in)
    } else {
        (None, g_z)
    };

    for (i, &item) in enc.graph.node_items.iter().enumerate() {
        let row = x_rows.entry(item).or_insert_with(|| Array1::zeros(d));
        *row += &g_x_window.row(i);
    }

    Ok(SampleGrads {
        x_rows,
        gat1: gat1_grads,
        gat2: gat2_grads,
        w_assign: w_assign_grad,
    })
}

pub(crate) fn backward_sample(
    traces: &SampleTraces,
    params: &ModelParams,
    opts: &ForwardOpts,
    lambda_entropy: f64,
) -> Result<SampleGrads> {
    backward_sample_terms(traces, params, opts, lambda_entropy, true)
}

fn add_l2(
    grads: &mut GradientSet,
    params: &ModelParams,
    touched: &BTreeSet<usize>,
    lambda_l2: f64,
) {
    if lambda_l2 == 0.0 {
        return;
    }
    let c = 2.0 * lambda_l2;
    for (g, w) in [(&mut grads.gat1, &params.gat1), (&mut grads.gat2, &params.gat2)] {
        for (gh, wh) in g.w_heads.iter_mut().zip(&w.w_heads) {
            gh.scaled_add(c, wh);
        }
        g.w_out.scaled_add(c, &w.w_out);
    }
    grads.w_assign.scaled_add(c, &params.w_assign);
    for &r in touched {
        grads.x.row_mut(r).scaled_add(c, &params.x.row(r));
    }
}

/// Exact gradient of the batch objective for already-computed traces,
/// summed in sample order.
pub fn backward(
    traces: &[SampleTraces],
    params: &ModelParams,
    opts: &ForwardOpts,
    lambda_entropy: f64,
    lambda_l2: f64,
) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(params);
    for t in traces {
        let sg = backward_sample(t, params, opts, lambda_entropy)?;
        grads.accumulate(&sg);
    }
    add_l2(&mut grads, params, &touched_rows(traces), lambda_l2);
    grads.ensure_finite()?;
    Ok(grads)
}

fn batch_touched_rows(batch: &[BatchItem]) -> BTreeSet<usize> {
    let mut rows = BTreeSet::new();
    for item in batch {
        rows.extend(item.items.iter().copied());
        rows.insert(item.target);
        rows.extend(item.negatives.iter().copied());
    }
    rows
}

/// Fused forward/backward for one batch. Samples run in parallel; the
/// per-sample gradients are folded in sample order, so the result is
/// independent of thread count. Returns the batch objective and its
/// gradient.
pub fn batch_step(
    batch: &[BatchItem],
    params: &ModelParams,
    opts: &ForwardOpts,
    lambda_entropy: f64,
    lambda_l2: f64,
) -> Result<(f64, GradientSet)> {
    let per_sample: Vec<Result<(f64, SampleGrads)>> = batch
        .par_iter()
        .map(|item| {
            let traces = forward_sample(item, params, opts)?;
            let loss = sample_loss(&traces, lambda_entropy);
            let grads = backward_sample(&traces, params, opts, lambda_entropy)?;
            Ok((loss, grads))
        })
        .collect();

    let mut grads = GradientSet::zeros_like(params);
    let mut loss = 0.0;
    for result in per_sample {
        let (sample_loss, sample_grads) = result?;
        loss += sample_loss;
        grads.accumulate(&sample_grads);
    }
    let touched = batch_touched_rows(batch);
    loss += l2_penalty(params, &touched, lambda_l2);
    add_l2(&mut grads, params, &touched, lambda_l2);
    grads.ensure_finite()?;
    Ok((loss, grads))
}
