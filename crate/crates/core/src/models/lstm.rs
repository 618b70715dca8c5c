use gaze_tensor::{Graph, ParamSet, Real, Tensor, Var};
use rand::Rng;

use super::{dense, LstmConfig, ModelError, SequenceModel};

/// Gate blocks are laid out `[input, forget, cell, output]` along the
/// `4 * units` axis.
pub(super) fn init<T: Real, R: Rng>(cfg: &LstmConfig, set: &mut ParamSet<T>, rng: &mut R) {
    let u = cfg.units;
    let mut input = cfg.l;
    for k in 0..cfg.layers {
        set.add_glorot(format!("lstm{k}/kernel"), &[input, 4 * u], input, 4 * u, rng);
        set.add_glorot(format!("lstm{k}/recurrent"), &[u, 4 * u], u, 4 * u, rng);
        let mut bias = vec![T::zero(); 4 * u];
        bias[u..2 * u].fill(T::one());
        set.add(format!("lstm{k}/bias"), Tensor::new(&[4 * u], bias).expect("bias shape"));
        input = u;
    }
    dense(set, "dense", u, cfg.c, rng);
}

pub(super) fn forward<T: Real>(
    model: &SequenceModel<T>,
    cfg: &LstmConfig,
    g: &Graph<T>,
    batch: &[T],
    n: usize,
) -> Result<Var, ModelError> {
    let (m, l, u) = (cfg.m, cfg.l, cfg.units);
    // time-major copy so each step's inputs are a contiguous row block
    let mut time_major = Vec::with_capacity(batch.len());
    for t in 0..m {
        for b in 0..n {
            let start = (b * m + t) * l;
            time_major.extend_from_slice(&batch[start..start + l]);
        }
    }
    let mut seq = g.input(Tensor::new(&[m * n, l], time_major)?);
    let mut h = seq;
    for k in 0..cfg.layers {
        let w = model.p(g, &format!("lstm{k}/kernel"));
        let r = model.p(g, &format!("lstm{k}/recurrent"));
        let bias = model.p(g, &format!("lstm{k}/bias"));
        let projected = g.add_tile(g.matmul(seq, w)?, bias)?;
        h = g.input(Tensor::zeros(&[n, u]));
        let mut c = g.input(Tensor::zeros(&[n, u]));
        let mut outputs = Vec::with_capacity(m);
        for t in 0..m {
            let z = g.add(g.slice(projected, 0, t * n, n)?, g.matmul(h, r)?)?;
            let i = g.sigmoid(g.slice(z, 1, 0, u)?);
            let f = g.sigmoid(g.slice(z, 1, u, u)?);
            let cand = g.tanh(g.slice(z, 1, 2 * u, u)?);
            let o = g.sigmoid(g.slice(z, 1, 3 * u, u)?);
            c = g.add(g.mul(f, c)?, g.mul(i, cand)?)?;
            h = g.mul(o, g.tanh(c))?;
            if k + 1 < cfg.layers {
                outputs.push(h);
            }
        }
        if k + 1 < cfg.layers {
            seq = g.concat(&outputs, 0)?;
        }
    }
    let logits = g.add_tile(g.matmul(h, model.p(g, "dense/kernel"))?, model.p(g, "dense/bias"))?;
    Ok(g.softmax(logits))
}
