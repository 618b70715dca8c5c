use gaze_tensor::{Graph, ParamSet, Real, Tensor, Var};
use rand::Rng;

use super::{dense, zeros_param, ModelError, SequenceModel, TransformerConfig};

const NORM_EPS: f64 = 1e-6;

pub(super) fn init<T: Real, R: Rng>(cfg: &TransformerConfig, set: &mut ParamSet<T>, rng: &mut R) {
    let (l, hd) = (cfg.l, cfg.heads * cfg.head_size);
    let table = (0..cfg.m * l)
        .map(|_| T::from_f64_lossy(rng.gen_range(-0.05..0.05)))
        .collect();
    set.add("pos_embedding", Tensor::new(&[cfg.m, l], table).expect("table shape"));
    for b in 0..cfg.blocks {
        for proj in ["query", "key", "value"] {
            dense(set, &format!("block{b}/attn/{proj}"), l, hd, rng);
        }
        dense(set, &format!("block{b}/attn/output"), hd, l, rng);
        for norm in ["norm1", "norm2"] {
            set.add(format!("block{b}/{norm}/gamma"), Tensor::filled(&[l], T::one()));
            zeros_param(set, format!("block{b}/{norm}/beta"), l);
        }
        dense(set, &format!("block{b}/ffn/hidden"), l, cfg.ffn_hidden, rng);
        dense(set, &format!("block{b}/ffn/output"), cfg.ffn_hidden, l, rng);
    }
    dense(set, "dense", l, cfg.c, rng);
}

fn linear<T: Real>(model: &SequenceModel<T>, g: &Graph<T>, x: Var, name: &str) -> Result<Var, ModelError> {
    let w = model.p(g, &format!("{name}/kernel"));
    let b = model.p(g, &format!("{name}/bias"));
    Ok(g.add_tile(g.matmul(x, w)?, b)?)
}

/// Multi-head self-attention over each example's `m` rows independently.
fn attention<T: Real>(
    model: &SequenceModel<T>,
    cfg: &TransformerConfig,
    g: &Graph<T>,
    x: Var,
    n: usize,
    block: usize,
) -> Result<Var, ModelError> {
    let (m, hs) = (cfg.m, cfg.head_size);
    let q = linear(model, g, x, &format!("block{block}/attn/query"))?;
    let k = linear(model, g, x, &format!("block{block}/attn/key"))?;
    let v = linear(model, g, x, &format!("block{block}/attn/value"))?;
    let scale = T::from_f64_lossy(1.0 / (hs as f64).sqrt());
    let mut per_example = Vec::with_capacity(n);
    for e in 0..n {
        let (qe, ke, ve) = (
            g.slice(q, 0, e * m, m)?,
            g.slice(k, 0, e * m, m)?,
            g.slice(v, 0, e * m, m)?,
        );
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = g.slice(qe, 1, h * hs, hs)?;
            let kh = g.slice(ke, 1, h * hs, hs)?;
            let vh = g.slice(ve, 1, h * hs, hs)?;
            let scores = g.scale(g.matmul_t(qh, false, kh, true)?, scale);
            heads.push(g.matmul(g.softmax(scores), vh)?);
        }
        per_example.push(g.concat(&heads, 1)?);
    }
    let merged = g.concat(&per_example, 0)?;
    linear(model, g, merged, &format!("block{block}/attn/output"))
}

pub(super) fn forward<T: Real>(
    model: &SequenceModel<T>,
    cfg: &TransformerConfig,
    g: &Graph<T>,
    batch: &[T],
    n: usize,
) -> Result<Var, ModelError> {
    let (m, l) = (cfg.m, cfg.l);
    let eps = T::from_f64_lossy(NORM_EPS);
    let raw = g.input(Tensor::new(&[n * m, l], batch.to_vec())?);
    let encoded = g.add_tile(raw, model.p(g, "pos_embedding"))?;
    let mut x = encoded;
    for b in 0..cfg.blocks {
        let attended = attention(model, cfg, g, x, n, b)?;
        x = g.layer_norm(
            g.add(x, attended)?,
            model.p(g, &format!("block{b}/norm1/gamma")),
            model.p(g, &format!("block{b}/norm1/beta")),
            eps,
        )?;
        let hidden = g.swish(linear(model, g, x, &format!("block{b}/ffn/hidden"))?);
        let ffn = linear(model, g, hidden, &format!("block{b}/ffn/output"))?;
        x = g.layer_norm(
            g.add(x, ffn)?,
            model.p(g, &format!("block{b}/norm2/gamma")),
            model.p(g, &format!("block{b}/norm2/beta")),
            eps,
        )?;
    }
    let skip = if cfg.skip_raw_input { raw } else { encoded };
    let pooled = g.global_max(g.add(x, skip)?, m)?;
    let logits = linear(model, g, pooled, "dense")?;
    Ok(g.softmax(logits))
}
