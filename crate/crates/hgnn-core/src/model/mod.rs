//! Model forward pass: two graph-attention layers with timespan-mixed
//! attention scores, soft assignment of window nodes to preference-factor
//! nodes, factor timestamps, and temporal-attentive candidate scoring.
//!
//! Every operation returns a trace holding the intermediates the training
//! module needs for exact reverse-mode differentiation.

pub mod checkpoint;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::tsg::{build_graph, TimespanGraph};

/// Model widths and mixing constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    /// Embedding width d.
    pub d: usize,
    /// Per-head width d'; d = d' * heads.
    pub d_head: usize,
    /// Attention head count H.
    pub heads: usize,
    /// Preference-factor count K.
    pub factors: usize,
    /// Mixing weight between feature attention and timespan weights.
    pub gamma: f64,
    /// Timespan unit in seconds.
    pub mu: f64,
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.factors == 0 {
            return Err(Error::Config(
                "embedding width, head count, and factor count must be positive".into(),
            ));
        }
        if self.d_head * self.heads != self.d {
            return Err(Error::Config(format!(
                "head width {} times head count {} must equal embedding width {}",
                self.d_head, self.heads, self.d
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.mu > 0.0) {
            return Err(Error::Config(format!(
                "timespan unit must be positive, got {}",
                self.mu
            )));
        }
        Ok(())
    }
}

/// Weights of one attention layer: per-head projections plus the output
/// projection applied to the head concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct GatWeights {
    /// H matrices, each d'×d; projects input rows to head space.
    pub w_heads: Vec<Array2<f64>>,
    /// d×(H·d'); maps the concatenated heads back to width d.
    pub w_out: Array2<f64>,
}

/// All trainable state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: Hyper,
    /// |V|×d item embedding table; also supplies candidate embeddings.
    pub x: Array2<f64>,
    pub gat1: GatWeights,
    pub gat2: GatWeights,
    /// d×K assignment projection.
    pub w_assign: Array2<f64>,
}

impl ModelParams {
    pub fn vocab_size(&self) -> usize {
        self.x.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let Hyper {
            d, d_head, heads, factors, ..
        } = self.hyper;
        if self.x.ncols() != d {
            return Err(Error::Config(format!(
                "embedding table width {} does not match d = {d}",
                self.x.ncols()
            )));
        }
        for (name, gat) in [("first", &self.gat1), ("second", &self.gat2)] {
            if gat.w_heads.len() != heads {
                return Err(Error::Config(format!(
                    "{name} attention layer has {} heads, expected {heads}",
                    gat.w_heads.len()
                )));
            }
            for w in &gat.w_heads {
                if w.dim() != (d_head, d) {
                    return Err(Error::Config(format!(
                        "{name} attention head shape {:?}, expected ({d_head}, {d})",
                        w.dim()
                    )));
                }
            }
            if gat.w_out.dim() != (d, heads * d_head) {
                return Err(Error::Config(format!(
                    "{name} attention output shape {:?}, expected ({d}, {})",
                    gat.w_out.dim(),
                    heads * d_head
                )));
            }
        }
        if self.w_assign.dim() != (d, factors) {
            return Err(Error::Config(format!(
                "assignment projection shape {:?}, expected ({d}, {factors})",
                self.w_assign.dim()
            )));
        }
        for (name, m) in self.matrices() {
            ensure_finite(&name, &m)?;
        }
        Ok(())
    }

    /// All trainable matrices, named, in checkpoint order.
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
}

/// Runtime ablation switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    /// Skip the first attention layer: Z = gathered embeddings.
    pub no_gat1: bool,
    /// Skip clustering: factors are the nodes themselves.
    pub no_gat2: bool,
    /// Binary edge weights and zero temporal term in scoring.
    pub no_timespan: bool,
    /// Drop the assignment-entropy regularizer (training only).
    pub no_entropy: bool,
}

/// Per-forward options that are not trainable state.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOpts {
    /// Edge-issue bound in seconds.
    pub t_bound: f64,
    pub flags: AblationFlags,
}

fn ensure_finite(name: &str, m: &ndarray::ArrayView2<'_, f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite values in {name}")))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

pub(crate) fn elu_prime(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

const LEAKY_SLOPE: f64 = 0.2;

pub(crate) fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub(crate) fn leaky_relu_prime(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Row-wise softmax over all columns.
pub(crate) fn row_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// One attention head's intermediates.
#[derive(Debug, Clone)]
pub struct GatHeadTrace {
    /// N×d' projected features.
    pub x_tilde: Array2<f64>,
    /// N×N mixed scores before LeakyReLU; only on-neighborhood entries
    /// are meaningful.
    pub a_raw: Array2<f64>,
    /// N×N attention; zero outside the neighborhood.
    pub attn: Array2<f64>,
    /// N×d' aggregation before ELU.
    pub head_pre: Array2<f64>,
    /// N×d' head output.
    pub head_out: Array2<f64>,
}

/// One attention layer's intermediates.
#[derive(Debug, Clone)]
pub struct GatTrace {
    /// N×d input rows.
    pub x_in: Array2<f64>,
    pub heads: Vec<GatHeadTrace>,
    /// N×(H·d') head concatenation.
    pub concat: Array2<f64>,
    /// N×d layer output.
    pub out: Array2<f64>,
}

/// One attention layer.
///
/// Per head: projected features x̃ = input · W^hᵀ; the attention score of
/// neighbor j mixes the feature dot product with the edge weight,
/// γ·(x̃_i·x̃_j) + (1−γ)·A_ij, passes through LeakyReLU (slope 0.2), and is
/// softmax-normalized over the neighborhood {j : A_ij > 0} (self included
/// through the unit diagonal). Head output is ELU of the attention-weighted
/// aggregation; the layer output applies `w_out` to the head concatenation.
pub fn gat_layer(
    adjacency: &Array2<f64>,
    x_in: &Array2<f64>,
    weights: &GatWeights,
    gamma: f64,
) -> Result<GatTrace> {
    let n = x_in.nrows();
    if adjacency.nrows() != n || adjacency.ncols() != n {
        return Err(Error::Config(format!(
            "adjacency shape {:?} does not match {n} input rows",
            adjacency.dim()
        )));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    ensure_finite("adjacency", &adjacency.view())?;
    ensure_finite("attention layer input", &x_in.view())?;
    let d_in = x_in.ncols();
    let head_count = weights.w_heads.len();
    if head_count == 0 {
        return Err(Error::Config("attention layer needs at least one head".into()));
    }
    let d_head = weights.w_heads[0].nrows();

    let mut heads = Vec::with_capacity(head_count);
    for w_h in &weights.w_heads {
        if w_h.dim() != (d_head, d_in) {
            return Err(Error::Config(format!(
                "head projection shape {:?}, expected ({d_head}, {d_in})",
                w_h.dim()
            )));
        }
        let x_tilde = x_in.dot(&w_h.t());
        let dots = x_tilde.dot(&x_tilde.t());

        let mut a_raw = Array2::zeros((n, n));
        let mut attn = Array2::zeros((n, n));
        for i in 0..n {
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if adjacency[(i, j)] > 0.0 {
                    let a = gamma * dots[(i, j)] + (1.0 - gamma) * adjacency[(i, j)];
                    a_raw[(i, j)] = a;
                    max = max.max(leaky_relu(a));
                }
            }
            let mut sum = 0.0;
            for j in 0..n {
                if adjacency[(i, j)] > 0.0 {
                    let e = (leaky_relu(a_raw[(i, j)]) - max).exp();
                    attn[(i, j)] = e;
                    sum += e;
                }
            }
            for j in 0..n {
                attn[(i, j)] /= sum;
            }
        }

        let head_pre = attn.dot(&x_tilde);
        let head_out = head_pre.mapv(elu);
        heads.push(GatHeadTrace {
            x_tilde,
            a_raw,
            attn,
            head_pre,
            head_out,
        });
    }

    if weights.w_out.ncols() != head_count * d_head {
        return Err(Error::Config(format!(
            "output projection shape {:?}, expected (_, {})",
            weights.w_out.dim(),
            head_count * d_head
        )));
    }
    let mut concat = Array2::zeros((n, head_count * d_head));
    for (h, head) in heads.iter().enumerate() {
        concat
            .slice_mut(s![.., h * d_head..(h + 1) * d_head])
            .assign(&head.head_out);
    }
    let out = concat.dot(&weights.w_out.t());
    ensure_finite("attention layer output", &out.view())?;
    Ok(GatTrace {
        x_in: x_in.clone(),
        heads,
        concat,
        out,
    })
}

/// Soft-assignment intermediates.
#[derive(Debug, Clone)]
pub struct AssignTrace {
    pub gat: GatTrace,
    /// N×K pre-softmax logits.
    pub logits: Array2<f64>,
    /// N×K row-stochastic assignment.
    pub s: Array2<f64>,
}

/// Soft assignment of nodes to factors: row-softmax of a second attention
/// layer's output projected by `w_assign`.
pub fn assignment(
    adjacency: &Array2<f64>,
    z: &Array2<f64>,
    gat2: &GatWeights,
    w_assign: &Array2<f64>,
    gamma: f64,
) -> Result<AssignTrace> {
    let gat = gat_layer(adjacency, z, gat2, gamma)?;
    if w_assign.nrows() != gat.out.ncols() {
        return Err(Error::Config(format!(
            "assignment projection shape {:?} does not accept width {}",
            w_assign.dim(),
            gat.out.ncols()
        )));
    }
    let logits = gat.out.dot(w_assign);
    let s = row_softmax(&logits);
    Ok(AssignTrace { gat, logits, s })
}

/// Factor embeddings: c_j = Σ_i S_ij z_i, i.e. C = Sᵀ Z.
pub fn factor_embeddings(s: &Array2<f64>, z: &Array2<f64>) -> Array2<f64> {
    s.t().dot(z)
}

/// Assignment-weighted mean timestamp per factor.
pub fn factor_timestamps(s: &Array2<f64>, node_times: &[i64]) -> Vec<f64> {
    let k = s.ncols();
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &t) in node_times.iter().enumerate() {
            num += s[(i, j)] * t as f64;
            den += s[(i, j)];
        }
        out.push(num / den);
    }
    out
}

/// Capped inverse gap between the candidate time and a factor timestamp,
/// mirroring the edge-weight formula on real-valued times.
pub fn temporal_term(t_v: f64, t_fac: f64, mu: f64) -> f64 {
    let dt = (t_v - t_fac).abs();
    if dt <= mu {
        1.0
    } else {
        mu / dt
    }
}

/// Scoring intermediates for one candidate.
#[derive(Debug, Clone)]
pub struct ScoreTrace {
    pub candidate: usize,
    pub t_v: i64,
    /// c_j · v per factor.
    pub dots: Vec<f64>,
    /// Temporal terms per factor (zero under the timespan ablation).
    pub tau: Vec<f64>,
    /// Softmax over dots + tau.
    pub beta: Vec<f64>,
    /// Σ_j β_j (c_j · v), the pre-logistic score.
    pub weighted: f64,
    /// Interaction probability in (0, 1).
    pub y: f64,
}

/// Scores one candidate item against the factor summary.
///
/// β is the softmax over per-factor affinities c_j·v shifted by the
/// temporal term; the returned probability is the logistic of the
/// β-weighted affinity sum.
pub fn score(
    c: &Array2<f64>,
    t_fac: &[f64],
    v_index: usize,
    t_v: i64,
    x: &Array2<f64>,
    mu: f64,
    use_timespan: bool,
) -> Result<ScoreTrace> {
    if v_index >= x.nrows() {
        return Err(Error::Data(format!(
            "candidate index {v_index} outside vocabulary of {}",
            x.nrows()
        )));
    }
    if c.nrows() != t_fac.len() {
        return Err(Error::Config(format!(
            "{} factor embeddings but {} factor timestamps",
            c.nrows(),
            t_fac.len()
        )));
    }
    let v = x.row(v_index);
    let k = c.nrows();
    let dots: Vec<f64> = (0..k).map(|j| c.row(j).dot(&v)).collect();
    let tau: Vec<f64> = if use_timespan {
        t_fac
            .iter()
            .map(|&tj| temporal_term(t_v as f64, tj, mu))
            .collect()
    } else {
        vec![0.0; k]
    };
    let logits: Vec<f64> = dots.iter().zip(&tau).map(|(d, t)| d + t).collect();
    let beta = softmax_vec(&logits);
    let weighted: f64 = beta.iter().zip(&dots).map(|(b, d)| b * d).sum();
    let y = sigmoid(weighted);
    if !y.is_finite() {
        return Err(Error::Numerical("non-finite candidate score".into()));
    }
    Ok(ScoreTrace {
        candidate: v_index,
        t_v,
        dots,
        tau,
        beta,
        weighted,
        y,
    })
}

/// Everything computed from the window alone (candidate-independent).
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub graph: TimespanGraph,
    /// N×d gathered embedding rows.
    pub x_window: Array2<f64>,
    /// First layer trace; absent under the no-gat1 ablation.
    pub gat1: Option<GatTrace>,
    /// N×d refined node embeddings.
    pub z: Array2<f64>,
    /// Assignment trace; absent under the no-gat2 ablation.
    pub assign: Option<AssignTrace>,
    /// K×d factor embeddings (K = N under no-gat2).
    pub c: Array2<f64>,
    /// Factor timestamps in seconds.
    pub t_fac: Vec<f64>,
}

impl EncodeTrace {
    /// Soft assignment matrix when clustering ran.
    pub fn s(&self) -> Option<&Array2<f64>> {
        self.assign.as_ref().map(|a| &a.s)
    }

    pub fn factor_count(&self) -> usize {
        self.c.nrows()
    }
}

/// Full forward trace for one (sample, candidate) pair.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub encode: EncodeTrace,
    pub score: ScoreTrace,
}

/// Runs the candidate-independent part of the forward pass on a
/// pre-built graph.
pub fn encode_on_graph(
    graph: TimespanGraph,
    params: &ModelParams,
    opts: &ForwardOpts,
) -> Result<EncodeTrace> {
    let d = params.hyper.d;
    let n = graph.len();
    let vocab = params.vocab_size();
    let mut x_window = Array2::zeros((n, d));
    for (i, &item) in graph.node_items.iter().enumerate() {
        if item >= vocab {
            return Err(Error::Data(format!(
                "item index {item} outside vocabulary of {vocab}"
            )));
        }
        x_window.row_mut(i).assign(&params.x.row(item));
    }

    let (gat1, z) = if opts.flags.no_gat1 {
        (None, x_window.clone())
    } else {
        let trace = gat_layer(&graph.adjacency, &x_window, &params.gat1, params.hyper.gamma)?;
        let z = trace.out.clone();
        (Some(trace), z)
    };

    let (assign, c, t_fac) = if opts.flags.no_gat2 {
        let t_fac: Vec<f64> = graph.node_times.iter().map(|&t| t as f64).collect();
        (None, z.clone(), t_fac)
    } else {
        let at = assignment(
            &graph.adjacency,
            &z,
            &params.gat2,
            &params.w_assign,
            params.hyper.gamma,
        )?;
        let c = factor_embeddings(&at.s, &z);
        let t_fac = factor_timestamps(&at.s, &graph.node_times);
        (Some(at), c, t_fac)
    };

    Ok(EncodeTrace {
        graph,
        x_window,
        gat1,
        z,
        assign,
        c,
        t_fac,
    })
}

/// Builds the sample graph and runs the candidate-independent forward.
pub fn encode(
    items: &[usize],
    times: &[i64],
    params: &ModelParams,
    opts: &ForwardOpts,
) -> Result<EncodeTrace> {
    let graph = build_graph(
        items,
        times,
        opts.t_bound,
        params.hyper.mu,
        opts.flags.no_timespan,
    )?;
    encode_on_graph(graph, params, opts)
}

/// Scores one candidate against an encoded window.
pub fn score_candidate(
    enc: &EncodeTrace,
    candidate: usize,
    t_v: i64,
    params: &ModelParams,
    opts: &ForwardOpts,
) -> Result<ScoreTrace> {
    score(
        &enc.c,
        &enc.t_fac,
        candidate,
        t_v,
        &params.x,
        params.hyper.mu,
        !opts.flags.no_timespan,
    )
}

/// End-to-end forward for one (sample, candidate) pair.
pub fn forward(
    items: &[usize],
    times: &[i64],
    candidate: usize,
    candidate_time: i64,
    params: &ModelParams,
    opts: &ForwardOpts,
) -> Result<ForwardTrace> {
    let enc = encode(items, times, params, opts)?;
    let sc = score_candidate(&enc, candidate, candidate_time, params, opts)?;
    Ok(ForwardTrace {
        encode: enc,
        score: sc,
    })
}

/// Scores every catalog item at once (shared factor summary, one matrix
/// product for all affinities). Used by evaluation and recommendation.
pub fn score_all(
    enc: &EncodeTrace,
    t_v: i64,
    params: &ModelParams,
    opts: &ForwardOpts,
) -> Vec<f64> {
    let k = enc.factor_count();
    let dots_all = enc.c.dot(&params.x.t());
    let tau: Vec<f64> = if opts.flags.no_timespan {
        vec![0.0; k]
    } else {
        enc.t_fac
            .iter()
            .map(|&tj| temporal_term(t_v as f64, tj, params.hyper.mu))
            .collect()
    };
    let vocab = params.vocab_size();
    let mut scores = Vec::with_capacity(vocab);
    let mut logits = vec![0.0; k];
    for v in 0..vocab {
        for j in 0..k {
            logits[j] = dots_all[(j, v)] + tau[j];
        }
        let beta = softmax_vec(&logits);
        let weighted: f64 = beta
            .iter()
            .enumerate()
            .map(|(j, b)| b * dots_all[(j, v)])
            .sum();
        scores.push(sigmoid(weighted));
    }
    scores
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsg::SECONDS_PER_DAY;
    use ndarray::array;

    fn simple_weights(d: usize, d_head: usize, heads: usize, scale: f64) -> GatWeights {
        let mut w_heads = Vec::new();
        for h in 0..heads {
            let mut w = Array2::zeros((d_head, d));
            for r in 0..d_head {
                for c in 0..d {
                    w[(r, c)] = scale * ((r + 2 * c + h) % 5) as f64 / 5.0 - 0.1;
                }
            }
            w_heads.push(w);
        }
        let mut w_out = Array2::zeros((d, heads * d_head));
        for r in 0..d {
            for c in 0..heads * d_head {
                w_out[(r, c)] = scale * ((3 * r + c) % 7) as f64 / 7.0 - 0.15;
            }
        }
        GatWeights { w_heads, w_out }
    }

    #[test]
    fn single_node_attention_is_identity_weighting() {
        let d = 4;
        let weights = simple_weights(d, 2, 2, 0.6);
        let x = ndarray::Array2::from_shape_vec((1, d), vec![0.3, -0.2, 0.5, 0.1]).unwrap();
        let a = Array2::from_elem((1, 1), 1.0);
        let trace = gat_layer(&a, &x, &weights, 0.8).unwrap();
        for head in &trace.heads {
            assert!((head.attn[(0, 0)] - 1.0).abs() < 1e-15);
        }
        // Z reduces to w_out applied to the ELU of each head projection.
        let mut concat = Vec::new();
        for w_h in &weights.w_heads {
            let t = x.dot(&w_h.t());
            concat.extend(t.row(0).iter().map(|&v| elu(v)));
        }
        let concat = Array2::from_shape_vec((1, concat.len()), concat).unwrap();
        let expect = concat.dot(&weights.w_out.t());
        for (a, b) in trace.out.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_nodes_split_attention_evenly() {
        let d = 4;
        let weights = simple_weights(d, 2, 2, 0.5);
        let row = vec![0.4, -0.1, 0.2, 0.3];
        let mut x = Array2::zeros((2, d));
        x.row_mut(0).assign(&ndarray::Array1::from(row.clone()));
        x.row_mut(1).assign(&ndarray::Array1::from(row));
        let a = Array2::from_elem((2, 2), 1.0);
        let trace = gat_layer(&a, &x, &weights, 0.8).unwrap();
        for head in &trace.heads {
            for i in 0..2 {
                for j in 0..2 {
                    assert!((head.attn[(i, j)] - 0.5).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one_on_neighborhoods() {
        let d = 6;
        let weights = simple_weights(d, 3, 2, 0.7);
        let mut x = Array2::zeros((4, d));
        for i in 0..4 {
            for j in 0..d {
                x[(i, j)] = ((i * d + j) % 11) as f64 / 11.0 - 0.4;
            }
        }
        let mut a = Array2::zeros((4, 4));
        for i in 0..4 {
            a[(i, i)] = 1.0;
        }
        a[(0, 1)] = 0.5;
        a[(1, 0)] = 0.5;
        a[(1, 2)] = 0.25;
        a[(2, 1)] = 0.25;
        a[(2, 3)] = 1.0;
        a[(3, 2)] = 1.0;
        let trace = gat_layer(&a, &x, &weights, 0.8).unwrap();
        for head in &trace.heads {
            for i in 0..4 {
                let row_sum: f64 = head.attn.row(i).sum();
                assert!((row_sum - 1.0).abs() < 1e-12);
                for j in 0..4 {
                    if a[(i, j)] == 0.0 {
                        assert_eq!(head.attn[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn gamma_one_ignores_edge_magnitudes() {
        let d = 4;
        let weights = simple_weights(d, 2, 2, 0.6);
        let mut x = Array2::zeros((3, d));
        for i in 0..3 {
            for j in 0..d {
                x[(i, j)] = ((2 * i + j) % 7) as f64 / 7.0 - 0.3;
            }
        }
        let mut a1 = Array2::zeros((3, 3));
        for i in 0..3 {
            a1[(i, i)] = 1.0;
        }
        a1[(0, 1)] = 0.9;
        a1[(1, 0)] = 0.9;
        a1[(1, 2)] = 0.2;
        a1[(2, 1)] = 0.2;
        let mut a2 = a1.clone();
        a2[(0, 1)] = 0.05;
        a2[(1, 0)] = 0.05;
        a2[(1, 2)] = 0.77;
        a2[(2, 1)] = 0.77;
        let t1 = gat_layer(&a1, &x, &weights, 1.0).unwrap();
        let t2 = gat_layer(&a2, &x, &weights, 1.0).unwrap();
        for (h1, h2) in t1.heads.iter().zip(&t2.heads) {
            for (v1, v2) in h1.attn.iter().zip(h2.attn.iter()) {
                assert!((v1 - v2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn closer_edges_attract_attention_when_mixed() {
        // With gamma < 1 and scores in LeakyReLU's positive region, a larger
        // edge weight cannot lower the attention it receives.
        let d = 4;
        let weights = simple_weights(d, 2, 2, 0.3);
        let mut x = Array2::zeros((3, d));
        for i in 0..3 {
            for j in 0..d {
                x[(i, j)] = 0.3 + ((i + j) % 3) as f64 / 10.0;
            }
        }
        let build = |w01: f64| {
            let mut a = Array2::zeros((3, 3));
            for i in 0..3 {
                a[(i, i)] = 1.0;
            }
            a[(0, 1)] = w01;
            a[(1, 0)] = w01;
            a[(1, 2)] = 0.5;
            a[(2, 1)] = 0.5;
            a
        };
        let lo = gat_layer(&build(0.2), &x, &weights, 0.8).unwrap();
        let hi = gat_layer(&build(0.9), &x, &weights, 0.8).unwrap();
        for (h_lo, h_hi) in lo.heads.iter().zip(&hi.heads) {
            assert!(h_hi.attn[(0, 1)] >= h_lo.attn[(0, 1)]);
        }
    }

    fn small_params(vocab: usize, d: usize, d_head: usize, heads: usize, k: usize) -> ModelParams {
        let mut x = Array2::zeros((vocab, d));
        for i in 0..vocab {
            for j in 0..d {
                x[(i, j)] = ((i * 13 + j * 5) % 17) as f64 / 17.0 - 0.45;
            }
        }
        let mut w_assign = Array2::zeros((d, k));
        for i in 0..d {
            for j in 0..k {
                w_assign[(i, j)] = ((i * 3 + j * 7) % 9) as f64 / 9.0 - 0.42;
            }
        }
        ModelParams {
            hyper: Hyper {
                d,
                d_head,
                heads,
                factors: k,
                gamma: 0.8,
                mu: SECONDS_PER_DAY,
            },
            x,
            gat1: simple_weights(d, d_head, heads, 0.5),
            gat2: simple_weights(d, d_head, heads, 0.4),
            w_assign,
        }
    }

    fn default_opts() -> ForwardOpts {
        ForwardOpts {
            t_bound: 7.0 * SECONDS_PER_DAY,
            flags: AblationFlags::default(),
        }
    }

    #[test]
    fn assignment_rows_are_probabilities() {
        let params = small_params(10, 4, 2, 2, 3);
        let times: Vec<i64> = (0..5).map(|i| i * 86_400).collect();
        let enc = encode(&[0, 2, 4, 6, 8], &times, &params, &default_opts()).unwrap();
        let s = enc.s().unwrap();
        for row in s.rows() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_assignment_projection_gives_uniform_rows() {
        let mut params = small_params(10, 4, 2, 2, 4);
        params.w_assign.fill(0.0);
        let times: Vec<i64> = (0..3).map(|i| i * 86_400).collect();
        let enc = encode(&[1, 3, 5], &times, &params, &default_opts()).unwrap();
        let s = enc.s().unwrap();
        for row in s.rows() {
            for &v in row {
                assert!((v - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicate_nodes_get_identical_assignment_rows() {
        let params = small_params(10, 4, 2, 2, 3);
        // Same item at the same timestamp twice: rows of A and features match.
        let enc = encode(&[7, 7, 2], &[1000, 1000, 2000], &params, &default_opts()).unwrap();
        let s = enc.s().unwrap();
        for j in 0..3 {
            assert!((s[(0, j)] - s[(1, j)]).abs() < 1e-12);
        }
    }

    #[test]
    fn factor_embeddings_match_triple_loop() {
        let s = array![
            [0.7, 0.3],
            [0.2, 0.8],
            [0.5, 0.5],
            [0.9, 0.1]
        ];
        let z = array![
            [1.0, -2.0, 0.5],
            [0.0, 1.5, -1.0],
            [2.0, 0.25, 0.75],
            [-1.0, 1.0, 3.0]
        ];
        let c = factor_embeddings(&s, &z);
        for j in 0..2 {
            for col in 0..3 {
                let mut want = 0.0;
                for i in 0..4 {
                    want += s[(i, j)] * z[(i, col)];
                }
                assert!((c[(j, col)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_hot_assignment_collapses_factors() {
        let s = array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        let z = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let c = factor_embeddings(&s, &z);
        assert_eq!(c[(0, 0)], 9.0);
        assert_eq!(c[(0, 1)], 12.0);
        assert_eq!(c[(1, 0)], 0.0);
        assert_eq!(c[(1, 1)], 0.0);
    }

    #[test]
    fn factor_timestamps_weighted_means() {
        // Constant timestamps collapse to that constant.
        let s = array![[0.6, 0.4], [0.1, 0.9]];
        let t = factor_timestamps(&s, &[500, 500]);
        assert!((t[0] - 500.0).abs() < 1e-9);
        assert!((t[1] - 500.0).abs() < 1e-9);

        // Uniform rows give the plain mean.
        let s = array![[0.5, 0.5], [0.5, 0.5]];
        let t = factor_timestamps(&s, &[0, 100]);
        assert!((t[0] - 50.0).abs() < 1e-9);
        assert!((t[1] - 50.0).abs() < 1e-9);

        // One-hot assignment averages only the assigned nodes.
        let s = array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let t = factor_timestamps(&s, &[10, 20, 40]);
        assert!((t[0] - 10.0).abs() < 1e-9);
        assert!((t[1] - 30.0).abs() < 1e-9);
    }

    #[test]
    fn zero_factors_score_half() {
        let c = Array2::zeros((4, 3));
        let x = Array2::from_elem((5, 3), 0.7);
        let t_fac = vec![0.0; 4];
        let sc = score(&c, &t_fac, 2, 0, &x, SECONDS_PER_DAY, true).unwrap();
        for b in &sc.beta {
            assert!((b - 0.25).abs() < 1e-12);
        }
        assert!((sc.y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_factor_scores_plain_logistic() {
        let c = array![[0.5, -0.25, 1.0]];
        let mut x = Array2::zeros((3, 3));
        x.row_mut(1)
            .assign(&ndarray::Array1::from(vec![1.0, 2.0, -0.5]));
        let sc = score(&c, &[12345.0], 1, 99999, &x, SECONDS_PER_DAY, true).unwrap();
        assert!((sc.beta[0] - 1.0).abs() < 1e-15);
        let dot = 0.5 - 0.5 - 0.5;
        assert!((sc.y - sigmoid(dot)).abs() < 1e-12);
    }

    #[test]
    fn unknown_candidate_is_data_error() {
        let c = Array2::zeros((2, 3));
        let x = Array2::zeros((5, 3));
        let err = score(&c, &[0.0, 0.0], 5, 0, &x, SECONDS_PER_DAY, true).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn temporal_term_caps_and_decays() {
        let mu = SECONDS_PER_DAY;
        assert_eq!(temporal_term(0.0, 0.0, mu), 1.0);
        assert_eq!(temporal_term(0.0, mu / 2.0, mu), 1.0);
        assert_eq!(temporal_term(0.0, 2.0 * mu, mu), 0.5);
        assert_eq!(temporal_term(2.0 * mu, 0.0, mu), 0.5);
    }

    #[test]
    fn forward_is_deterministic() {
        let params = small_params(12, 4, 2, 2, 3);
        let times: Vec<i64> = (0..4).map(|i| i * 100_000).collect();
        let a = forward(&[1, 4, 7, 10], &times, 3, 500_000, &params, &default_opts()).unwrap();
        let b = forward(&[1, 4, 7, 10], &times, 3, 500_000, &params, &default_opts()).unwrap();
        assert_eq!(a.score.y.to_bits(), b.score.y.to_bits());
        for (va, vb) in a.encode.c.iter().zip(b.encode.c.iter()) {
            assert_eq!(va.to_bits(), vb.to_bits());
        }
    }

    #[test]
    fn node_permutation_leaves_summary_unchanged() {
        let params = small_params(12, 4, 2, 2, 3);
        let items = [1usize, 4, 7, 10, 2];
        let times: Vec<i64> = (0..5).map(|i| i * 90_000).collect();
        let base = forward(&items, &times, 6, 600_000, &params, &default_opts()).unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let p_items: Vec<usize> = perm.iter().map(|&i| items[i]).collect();
        let p_times: Vec<i64> = perm.iter().map(|&i| times[i]).collect();
        let permuted = forward(&p_items, &p_times, 6, 600_000, &params, &default_opts()).unwrap();
        assert!((base.score.y - permuted.score.y).abs() < 1e-9);
        for (a, b) in base.encode.c.iter().zip(permuted.encode.c.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in base.encode.t_fac.iter().zip(permuted.encode.t_fac.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in base.score.beta.iter().zip(permuted.score.beta.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ablations_change_shapes_as_documented() {
        let params = small_params(12, 4, 2, 2, 3);
        let times: Vec<i64> = (0..5).map(|i| i * 90_000).collect();
        let items = [1usize, 4, 7, 10, 2];

        let mut opts = default_opts();
        opts.flags.no_gat1 = true;
        let enc = encode(&items, &times, &params, &opts).unwrap();
        assert!(enc.gat1.is_none());
        assert_eq!(enc.z, enc.x_window);

        let mut opts = default_opts();
        opts.flags.no_gat2 = true;
        let enc = encode(&items, &times, &params, &opts).unwrap();
        assert!(enc.assign.is_none());
        assert_eq!(enc.c, enc.z);
        assert_eq!(enc.factor_count(), 5);
        for (tf, &t) in enc.t_fac.iter().zip(&times) {
            assert_eq!(*tf, t as f64);
        }

        let mut opts = default_opts();
        opts.flags.no_timespan = true;
        let enc = encode(&items, &times, &params, &opts).unwrap();
        for (i, row) in enc.graph.adjacency.rows().into_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!(v == 0.0 || v == 1.0, "({i},{j}) = {v}");
            }
        }
        let sc = score_candidate(&enc, 3, 600_000, &params, &opts).unwrap();
        assert!(sc.tau.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn score_all_matches_single_candidate_scores() {
        let params = small_params(9, 4, 2, 2, 3);
        let times: Vec<i64> = (0..4).map(|i| i * 90_000).collect();
        let enc = encode(&[0, 3, 6, 8], &times, &params, &default_opts()).unwrap();
        let all = score_all(&enc, 400_000, &params, &default_opts());
        assert_eq!(all.len(), 9);
        for v in 0..9 {
            let one = score_candidate(&enc, v, 400_000, &params, &default_opts()).unwrap();
            assert!((all[v] - one.y).abs() < 1e-12);
        }
    }

    #[test]
    fn hyper_rejects_mismatched_widths() {
        let hyper = Hyper {
            d: 6,
            d_head: 4,
            heads: 2,
            factors: 3,
            gamma: 0.8,
            mu: SECONDS_PER_DAY,
        };
        assert!(matches!(hyper.validate(), Err(Error::Config(_))));
    }
}
