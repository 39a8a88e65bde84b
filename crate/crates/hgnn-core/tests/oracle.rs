//! Straight-line scalar re-derivation of the forward pass and the batch
//! objective, compared against the library on small instances. Everything
//! here is written with plain loops over `f64` so a disagreement points at
//! the library, not at a shared helper.

use hgnn_core::model::{forward, AblationFlags, ForwardOpts, Hyper, ModelParams};
use hgnn_core::training::{batch_loss, init_params, BatchItem};

const LEAKY: f64 = 0.2;

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

type Mat = Vec<Vec<f64>>;

fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

/// min(1, mu/dt) adjacency with the consecutive-position guard.
fn oracle_adjacency(times: &[i64], t_bound: f64, mu: f64, binary: bool) -> Mat {
    let n = times.len();
    let mut a = zeros(n, n);
    for i in 0..n {
        a[i][i] = 1.0;
        for j in i + 1..n {
            let dt = (times[j] - times[i]).abs() as f64;
            if dt > t_bound && j != i + 1 {
                continue;
            }
            let w = if binary {
                1.0
            } else if dt <= mu {
                1.0
            } else {
                mu / dt
            };
            a[i][j] = w;
            a[j][i] = w;
        }
    }
    a
}

/// One attention layer, scalar form: per head project, mix attention
/// logits with the edge weight, masked softmax, ELU, then concatenate and
/// project back to width d.
fn oracle_gat(
    a: &Mat,
    x: &Mat,
    w_heads: &[Mat],
    w_out: &Mat,
    gamma: f64,
) -> Mat {
    let n = x.len();
    let d_in = x[0].len();
    let d_head = w_heads[0].len();
    let mut concat = zeros(n, w_heads.len() * d_head);
    for (h, w_h) in w_heads.iter().enumerate() {
        let mut xt = zeros(n, d_head);
        for i in 0..n {
            for r in 0..d_head {
                let mut acc = 0.0;
                for c in 0..d_in {
                    acc += x[i][c] * w_h[r][c];
                }
                xt[i][r] = acc;
            }
        }
        for i in 0..n {
            let mut logits = vec![f64::NEG_INFINITY; n];
            for j in 0..n {
                if a[i][j] > 0.0 {
                    let mut dot = 0.0;
                    for r in 0..d_head {
                        dot += xt[i][r] * xt[j][r];
                    }
                    logits[j] = leaky(gamma * dot + (1.0 - gamma) * a[i][j]);
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut exps = vec![0.0; n];
            let mut sum = 0.0;
            for j in 0..n {
                if a[i][j] > 0.0 {
                    exps[j] = (logits[j] - max).exp();
                    sum += exps[j];
                }
            }
            for r in 0..d_head {
                let mut acc = 0.0;
                for j in 0..n {
                    if a[i][j] > 0.0 {
                        acc += exps[j] / sum * xt[j][r];
                    }
                }
                concat[i][h * d_head + r] = elu(acc);
            }
        }
    }
    let d_out = w_out.len();
    let mut out = zeros(n, d_out);
    for i in 0..n {
        for r in 0..d_out {
            let mut acc = 0.0;
            for c in 0..concat[0].len() {
                acc += concat[i][c] * w_out[r][c];
            }
            out[i][r] = acc;
        }
    }
    out
}

fn to_mat(v: &ndarray::Array2<f64>) -> Mat {
    v.rows().into_iter().map(|r| r.to_vec()).collect()
}

struct OracleOut {
    s: Mat,
    c: Mat,
    beta: Vec<f64>,
    y: f64,
}

/// The whole forward pass for one (window, candidate) pair.
fn oracle_forward(
    items: &[usize],
    times: &[i64],
    candidate: usize,
    t_v: i64,
    params: &ModelParams,
    t_bound: f64,
) -> OracleOut {
    let Hyper { d, factors: k, gamma, mu, .. } = params.hyper;
    let n = items.len();
    let a = oracle_adjacency(times, t_bound, mu, false);
    let mut x = zeros(n, d);
    for (i, &it) in items.iter().enumerate() {
        for c in 0..d {
            x[i][c] = params.x[(it, c)];
        }
    }
    let g1_heads: Vec<Mat> = params.gat1.w_heads.iter().map(to_mat).collect();
    let z = oracle_gat(&a, &x, &g1_heads, &to_mat(&params.gat1.w_out), gamma);
    let g2_heads: Vec<Mat> = params.gat2.w_heads.iter().map(to_mat).collect();
    let g2 = oracle_gat(&a, &z, &g2_heads, &to_mat(&params.gat2.w_out), gamma);

    let mut s = zeros(n, k);
    for i in 0..n {
        let mut logits = vec![0.0; k];
        for j in 0..k {
            let mut acc = 0.0;
            for c in 0..d {
                acc += g2[i][c] * params.w_assign[(c, j)];
            }
            logits[j] = acc;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for j in 0..k {
            s[i][j] = exps[j] / sum;
        }
    }

    let mut c_mat = zeros(k, d);
    let mut t_fac = vec![0.0; k];
    for j in 0..k {
        let mut den = 0.0;
        let mut num = 0.0;
        for i in 0..n {
            den += s[i][j];
            num += s[i][j] * times[i] as f64;
            for col in 0..d {
                c_mat[j][col] += s[i][j] * z[i][col];
            }
        }
        t_fac[j] = num / den;
    }

    let mut dots = vec![0.0; k];
    for j in 0..k {
        for col in 0..d {
            dots[j] += c_mat[j][col] * params.x[(candidate, col)];
        }
    }
    let logits: Vec<f64> = (0..k)
        .map(|j| {
            let dt = (t_v as f64 - t_fac[j]).abs();
            let tau = if dt <= mu { 1.0 } else { mu / dt };
            dots[j] + tau
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let beta: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    let weighted: f64 = (0..k).map(|j| beta[j] * dots[j]).sum();
    OracleOut {
        s,
        c: c_mat,
        beta,
        y: sigmoid(weighted),
    }
}

fn opts(t_bound: f64) -> ForwardOpts {
    ForwardOpts {
        t_bound,
        flags: AblationFlags::default(),
    }
}

const HOUR: i64 = 3600;

fn case_windows(seed: u64, vocab: usize) -> (Vec<usize>, Vec<i64>, usize, i64) {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        state >> 33
    };
    let n = 3 + (next() % 4) as usize;
    let items: Vec<usize> = (0..n).map(|_| (next() as usize) % vocab).collect();
    let mut t = 1_000_000_000i64;
    let times: Vec<i64> = (0..n)
        .map(|_| {
            t += (1 + (next() % 90) as i64) * HOUR;
            t
        })
        .collect();
    let candidate = (next() as usize) % vocab;
    let t_v = t + (1 + (next() % 48) as i64) * HOUR;
    (items, times, candidate, t_v)
}

#[test]
fn forward_matches_scalar_rederivation() {
    let vocab = 9;
    let t_bound = 30.0 * HOUR as f64;
    for seed in 0..300u64 {
        let heads = 1 + (seed % 2) as usize;
        let d_head = 2 + (seed % 3) as usize;
        let hyper = Hyper {
            d: heads * d_head,
            d_head,
            heads,
            factors: 2 + (seed % 2) as usize,
            gamma: 0.8,
            mu: 86_400.0,
        };
        let params = init_params(vocab, hyper, seed).unwrap();
        let (items, times, candidate, t_v) = case_windows(seed, vocab);
        let trace = forward(&items, &times, candidate, t_v, &params, &opts(t_bound)).unwrap();
        let oracle = oracle_forward(&items, &times, candidate, t_v, &params, t_bound);

        let s = trace.encode.s().expect("clustering ran");
        for i in 0..items.len() {
            for j in 0..hyper.factors {
                assert!(
                    (s[(i, j)] - oracle.s[i][j]).abs() < 1e-12,
                    "seed {seed}: S[{i}][{j}] {} vs {}",
                    s[(i, j)],
                    oracle.s[i][j]
                );
            }
        }
        for j in 0..hyper.factors {
            for c in 0..hyper.d {
                assert!(
                    (trace.encode.c[(j, c)] - oracle.c[j][c]).abs() < 1e-12,
                    "seed {seed}: C[{j}][{c}]"
                );
            }
            assert!(
                (trace.score.beta[j] - oracle.beta[j]).abs() < 1e-12,
                "seed {seed}: beta[{j}]"
            );
        }
        assert!(
            (trace.score.y - oracle.y).abs() < 1e-12,
            "seed {seed}: y {} vs {}",
            trace.score.y,
            oracle.y
        );
    }
}

#[test]
fn batch_objective_matches_scalar_sum() {
    let vocab = 7;
    let t_bound = 30.0 * HOUR as f64;
    let hyper = Hyper {
        d: 4,
        d_head: 2,
        heads: 2,
        factors: 2,
        gamma: 0.8,
        mu: 86_400.0,
    };
    let (lambda_entropy, lambda_l2) = (1e-4, 1e-4);
    for seed in 0..50u64 {
        let params = init_params(vocab, hyper, seed).unwrap();
        let mut batch = Vec::new();
        let mut touched = std::collections::BTreeSet::new();
        for case in 0..2u64 {
            let (items, times, target, t_v) = case_windows(seed * 2 + case + 1000, vocab);
            let negative = (target + 1 + case as usize) % vocab;
            touched.extend(items.iter().copied());
            touched.insert(target);
            touched.insert(negative);
            batch.push(BatchItem {
                items,
                times,
                target,
                target_time: t_v,
                negatives: vec![negative],
            });
        }

        let mut expected = 0.0;
        for item in &batch {
            let pos = oracle_forward(&item.items, &item.times, item.target, item.target_time, &params, t_bound);
            let neg = oracle_forward(
                &item.items,
                &item.times,
                item.negatives[0],
                item.target_time,
                &params,
                t_bound,
            );
            expected += softplus(-(pos.y - neg.y));
            let n = item.items.len();
            let mut ent = 0.0;
            for row in &pos.s {
                for &v in row {
                    if v > 0.0 {
                        ent -= v * v.ln();
                    }
                }
            }
            expected += lambda_entropy * ent / n as f64;
        }
        let mut sq = 0.0;
        for gat in [&params.gat1, &params.gat2] {
            for w in &gat.w_heads {
                sq += w.iter().map(|v| v * v).sum::<f64>();
            }
            sq += gat.w_out.iter().map(|v| v * v).sum::<f64>();
        }
        sq += params.w_assign.iter().map(|v| v * v).sum::<f64>();
        for &r in &touched {
            for c in 0..hyper.d {
                sq += params.x[(r, c)] * params.x[(r, c)];
            }
        }
        expected += lambda_l2 * sq;

        let got = batch_loss(&batch, &params, &opts(t_bound), lambda_entropy, lambda_l2).unwrap();
        assert!(
            (got - expected).abs() < 1e-12,
            "seed {seed}: batch loss {got} vs {expected}"
        );
    }
}
