//! Adam with bias correction, applied densely to every trainable matrix.

use ndarray::Array2;

use crate::model::ModelParams;

use super::backward::GradientSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    learning_rate: f64,
    hyper: AdamHyper,
    m: GradientSet,
    v: GradientSet,
}

fn update_tensor(
    theta: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    hyper: &AdamHyper,
    m_corr: f64,
    v_corr: f64,
) {
    for (((t, &g), m), v) in theta
        .iter_mut()
        .zip(g.iter())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let m_hat = *m / m_corr;
        let v_hat = *v / v_corr;
        *t -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
}

impl AdamState {
    pub fn new(params: &ModelParams, hyper: AdamHyper, learning_rate: f64) -> Self {
        AdamState {
            step: 0,
            learning_rate,
            hyper,
            m: GradientSet::zeros_like(params),
            v: GradientSet::zeros_like(params),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update: m and v decay toward the gradient and its square, then
    /// parameters move along the bias-corrected ratio.
    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientSet) {
        self.step += 1;
        let m_corr = 1.0 - self.hyper.beta1.powi(self.step as i32);
        let v_corr = 1.0 - self.hyper.beta2.powi(self.step as i32);
        let lr = self.learning_rate;
        let hyper = self.hyper;
        update_tensor(
            &mut params.x,
            &grads.x,
            &mut self.m.x,
            &mut self.v.x,
            lr,
            &hyper,
            m_corr,
            v_corr,
        );
        for ((pw, gw), (mw, vw)) in [
            (&mut params.gat1, &grads.gat1),
            (&mut params.gat2, &grads.gat2),
        ]
        .into_iter()
        .zip([
            (&mut self.m.gat1, &mut self.v.gat1),
            (&mut self.m.gat2, &mut self.v.gat2),
        ]) {
            for ((ph, gh), (mh, vh)) in pw
                .w_heads
                .iter_mut()
                .zip(&gw.w_heads)
                .zip(mw.w_heads.iter_mut().zip(vw.w_heads.iter_mut()))
            {
                update_tensor(ph, gh, mh, vh, lr, &hyper, m_corr, v_corr);
            }
            update_tensor(
                &mut pw.w_out,
                &gw.w_out,
                &mut mw.w_out,
                &mut vw.w_out,
                lr,
                &hyper,
                m_corr,
                v_corr,
            );
        }
        update_tensor(
            &mut params.w_assign,
            &grads.w_assign,
            &mut self.m.w_assign,
            &mut self.v.w_assign,
            lr,
            &hyper,
            m_corr,
            v_corr,
        );
    }
}
