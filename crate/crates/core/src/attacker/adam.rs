use super::{Mlp, ParamKind, TrainConfig};

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Mlp,
    pub v: Mlp,
    /// Steps taken so far; the next step uses `t + 1`.
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Mlp) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One Adam step with bias correction. Weight decay enters as the gradient
/// of `wd/2 * ||W||^2` on weight matrices only (classic L2, not AdamW).
pub fn adam_step(params: &mut Mlp, grads: &Mlp, state: &mut AdamState, cfg: &TrainConfig) {
    state.t += 1;
    let (b1, b2) = cfg.betas;
    let t = state.t as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let groups = params
        .params_mut()
        .into_iter()
        .zip(grads.params())
        .zip(state.m.params_mut())
        .zip(state.v.params_mut());
    for ((((kind, p), (_, g)), (_, m)), (_, v)) in groups {
        let decay = if kind == ParamKind::Weight { cfg.weight_decay } else { 0.0 };
        for i in 0..p.len() {
            let gi = g[i] + decay * p[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}
