//! Central finite-difference verification of the analytic gradients.

use crate::error::{Error, Result};
use crate::model::{AblationFlags, ForwardOpts, Hyper, ModelParams};
use crate::tsg::SECONDS_PER_DAY;

use super::backward::backward;
use super::{batch_loss, forward_sample, init_params, BatchItem, SampleTraces};

/// Shapes of the randomized instance the check runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradCheckDims {
    /// Window length N.
    pub window: usize,
    pub d: usize,
    pub d_head: usize,
    pub heads: usize,
    pub factors: usize,
}

impl Default for GradCheckDims {
    fn default() -> Self {
        GradCheckDims {
            window: 4,
            d: 4,
            d_head: 2,
            heads: 2,
            factors: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative disagreement across every trainable entry, with
    /// magnitudes floored so that absolute errors below 1e-7 never fail.
    pub max_rel_err: f64,
    /// Tensor and coordinates of the worst entry.
    pub worst: String,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < 1e-4
    }
}

const HOUR: i64 = 3600;

/// Two windows with gaps on both sides of the timespan unit and one pair
/// beyond the edge-issue bound, so capped weights, uncapped weights, and
/// the connectivity guard all participate.
fn synthetic_batch(window: usize, vocab: usize) -> Vec<BatchItem> {
    let times_a: Vec<i64> = (0..window)
        .map(|i| {
            if i == 0 {
                0
            } else {
                (2 + 24 * (i as i64 - 1)) * HOUR
            }
        })
        .collect();
    let times_b: Vec<i64> = (0..window)
        .map(|i| match i {
            0 => 0,
            1 => 30 * HOUR,
            _ => (31 + 24 * (i as i64 - 2)) * HOUR,
        })
        .collect();
    let last_a = *times_a.last().unwrap();
    let last_b = *times_b.last().unwrap();
    vec![
        BatchItem {
            items: (0..window).map(|i| i % vocab).collect(),
            times: times_a,
            target: window % vocab,
            target_time: last_a + 30 * HOUR,
            negatives: vec![(window + 1) % vocab, (window + 2) % vocab],
        },
        BatchItem {
            items: (0..window).map(|i| vocab - 1 - i % vocab).collect(),
            times: times_b,
            target: (window + 3) % vocab,
            target_time: last_b + 45 * HOUR,
            negatives: vec![(window + 4) % vocab],
        },
    ]
}

fn entry_mut(params: &mut ModelParams, tensor: usize, r: usize, c: usize) -> &mut f64 {
    let heads = params.hyper.heads;
    if tensor == 0 {
        &mut params.x[(r, c)]
    } else if tensor < 1 + heads {
        &mut params.gat1.w_heads[tensor - 1][(r, c)]
    } else if tensor == 1 + heads {
        &mut params.gat1.w_out[(r, c)]
    } else if tensor < 2 + 2 * heads {
        &mut params.gat2.w_heads[tensor - 2 - heads][(r, c)]
    } else if tensor == 2 + 2 * heads {
        &mut params.gat2.w_out[(r, c)]
    } else {
        &mut params.w_assign[(r, c)]
    }
}

/// Compares the analytic gradient of the batch objective against central
/// finite differences (step 1e-5) for every trainable entry.
pub fn grad_check(
    dims: &GradCheckDims,
    gamma: f64,
    lambda_entropy: f64,
    lambda_l2: f64,
    seed: u64,
    flags: AblationFlags,
) -> Result<GradCheckReport> {
    if dims.window < 2 {
        return Err(Error::Config(format!(
            "gradient check needs a window of at least 2, got {}",
            dims.window
        )));
    }
    let hyper = Hyper {
        d: dims.d,
        d_head: dims.d_head,
        heads: dims.heads,
        factors: dims.factors,
        gamma,
        mu: SECONDS_PER_DAY,
    };
    hyper.validate()?;
    let vocab = dims.window + 6;
    let mut params = init_params(vocab, hyper, seed)?;
    let opts = ForwardOpts {
        t_bound: 30.0 * 3600.0,
        flags,
    };
    let lambda_entropy = if flags.no_entropy { 0.0 } else { lambda_entropy };
    let batch = synthetic_batch(dims.window, vocab);

    let traces: Vec<SampleTraces> = batch
        .iter()
        .map(|b| forward_sample(b, &params, &opts))
        .collect::<Result<Vec<_>>>()?;
    let analytic = backward(&traces, &params, &opts, lambda_entropy, lambda_l2)?;

    let step = 1e-5;
    let mut max_rel_err = 0.0f64;
    let mut worst = String::from("none");
    let mut entries_checked = 0usize;

    let tensors: Vec<(String, (usize, usize))> = analytic
        .matrices()
        .into_iter()
        .map(|(name, m)| (name, m.dim()))
        .collect();
    for (tensor_idx, (name, (rows, cols))) in tensors.iter().enumerate() {
        for r in 0..*rows {
            for c in 0..*cols {
                let original = *entry_mut(&mut params, tensor_idx, r, c);
                *entry_mut(&mut params, tensor_idx, r, c) = original + step;
                let loss_plus = batch_loss(&batch, &params, &opts, lambda_entropy, lambda_l2)?;
                *entry_mut(&mut params, tensor_idx, r, c) = original - step;
                let loss_minus = batch_loss(&batch, &params, &opts, lambda_entropy, lambda_l2)?;
                *entry_mut(&mut params, tensor_idx, r, c) = original;

                let fd = (loss_plus - loss_minus) / (2.0 * step);
                let a = analytic.matrices()[tensor_idx].1[(r, c)];
                let err = (fd - a).abs();
                // err <= max(1e-4 * magnitude, 1e-7) expressed as a single
                // ratio against a floored magnitude.
                let magnitude = fd.abs().max(a.abs()).max(1e-3);
                let rel = err / magnitude;
                entries_checked += 1;
                if rel > max_rel_err {
                    max_rel_err = rel;
                    worst = format!("{name} ({r}, {c}): analytic {a}, finite-difference {fd}");
                }
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_err,
        worst,
        entries_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(flags: AblationFlags, lambda_entropy: f64) -> GradCheckReport {
        grad_check(
            &GradCheckDims::default(),
            0.8,
            lambda_entropy,
            1e-4,
            20240,
            flags,
        )
        .unwrap()
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let report = run(AblationFlags::default(), 1e-4);
        assert!(
            report.passed(),
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst
        );
        assert!(report.entries_checked > 100);
    }

    #[test]
    fn holds_without_first_attention_layer() {
        let flags = AblationFlags {
            no_gat1: true,
            ..Default::default()
        };
        let report = run(flags, 1e-4);
        assert!(report.passed(), "{}: {}", report.max_rel_err, report.worst);
    }

    #[test]
    fn holds_without_clustering() {
        let flags = AblationFlags {
            no_gat2: true,
            ..Default::default()
        };
        let report = run(flags, 1e-4);
        assert!(report.passed(), "{}: {}", report.max_rel_err, report.worst);
    }

    #[test]
    fn holds_without_timespans() {
        let flags = AblationFlags {
            no_timespan: true,
            ..Default::default()
        };
        let report = run(flags, 1e-4);
        assert!(report.passed(), "{}: {}", report.max_rel_err, report.worst);
    }

    #[test]
    fn holds_without_entropy_term() {
        let report = run(AblationFlags::default(), 0.0);
        assert!(report.passed(), "{}: {}", report.max_rel_err, report.worst);
    }

    #[test]
    fn holds_on_larger_dims() {
        let dims = GradCheckDims {
            window: 5,
            d: 6,
            d_head: 3,
            heads: 2,
            factors: 4,
        };
        let report = grad_check(&dims, 0.7, 1e-3, 1e-3, 77, AblationFlags::default()).unwrap();
        assert!(report.passed(), "{}: {}", report.max_rel_err, report.worst);
    }
}
