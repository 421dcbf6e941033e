//! The masked transformer encoder. Tokens are (x, y, is-query) triples with
//! no positional encoding; queries attend only to context tokens, so context
//! order is irrelevant and queries are conditionally independent given the
//! context. An optional third stream of "context-as-query" tokens re-predicts
//! each context point from the context points strictly below it in x.

use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::curve::{normalize_with_queries, Curve, NormalizationRecord};
use crate::error::{Error, Result};
use crate::pfn::bins::BinnedDistribution;
use crate::pfn::PfnModel;
use crate::tensor::{softmax_rows, NodeId, Tape, Tensor, MASK_OFF};

static FORWARD_PASSES: AtomicUsize = AtomicUsize::new(0);

/// Number of forward passes executed by this process so far.
pub fn forward_pass_count() -> usize {
    FORWARD_PASSES.load(Ordering::Relaxed)
}

struct LayerIds {
    ln1g: NodeId,
    ln1b: NodeId,
    wq: NodeId,
    bq: NodeId,
    wk: NodeId,
    bk: NodeId,
    wv: NodeId,
    bv: NodeId,
    wo: NodeId,
    bo: NodeId,
    ln2g: NodeId,
    ln2b: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
}

struct ParamIds {
    embed_w: NodeId,
    embed_b: NodeId,
    layers: Vec<LayerIds>,
    flng: NodeId,
    flnb: NodeId,
    headw: NodeId,
    headb: NodeId,
}

fn leaf_params(tape: &mut Tape, model: &PfnModel) -> (Vec<NodeId>, ParamIds) {
    let ids: Vec<NodeId> = model.params.iter().map(|p| tape.leaf(p.clone())).collect();
    let mut it = ids.iter().copied();
    let mut next = || it.next().expect("parameter list shorter than layout");
    let embed_w = next();
    let embed_b = next();
    let layers = (0..model.config.nlayers)
        .map(|_| LayerIds {
            ln1g: next(),
            ln1b: next(),
            wq: next(),
            bq: next(),
            wk: next(),
            bk: next(),
            wv: next(),
            bv: next(),
            wo: next(),
            bo: next(),
            ln2g: next(),
            ln2b: next(),
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        })
        .collect();
    let pids = ParamIds {
        embed_w,
        embed_b,
        layers,
        flng: next(),
        flnb: next(),
        headw: next(),
        headb: next(),
    };
    (ids, pids)
}

fn embed_tokens(
    tape: &mut Tape,
    pids: &ParamIds,
    xs: &[f64],
    ys: Option<&[f64]>,
) -> Result<NodeId> {
    let n = xs.len();
    let mut data = Vec::with_capacity(3 * n);
    for (i, &x) in xs.iter().enumerate() {
        data.push(x);
        data.push(ys.map_or(0.0, |ys| ys[i]));
        data.push(if ys.is_some() { 0.0 } else { 1.0 });
    }
    let tokens = tape.leaf(Tensor { shape: vec![n, 3], data });
    let e = tape.matmul(tokens, pids.embed_w)?;
    tape.add_bias(e, pids.embed_b)
}

/// One pre-norm transformer block applied to stream `s`, attending to the
/// provided split-head keys and values. `s_ln` is the stream's first layer
/// norm (precomputed by the caller when it doubles as the key/value source).
#[allow(clippy::too_many_arguments)]
fn block(
    tape: &mut Tape,
    s: NodeId,
    s_ln: NodeId,
    ids: &LayerIds,
    kh: NodeId,
    vh: NodeId,
    mask: Rc<Vec<f64>>,
    nheads: usize,
    scale: f64,
) -> Result<NodeId> {
    let q = tape.matmul(s_ln, ids.wq)?;
    let q = tape.add_bias(q, ids.bq)?;
    let qh = tape.split_heads(q, nheads)?;
    let probs = tape.attn_probs(qh, kh, scale, mask)?;
    let att = tape.bmm(probs, vh)?;
    let att = tape.merge_heads(att)?;
    let o = tape.matmul(att, ids.wo)?;
    let o = tape.add_bias(o, ids.bo)?;
    let s = tape.add(s, o)?;
    let m = tape.layer_norm(s, ids.ln2g, ids.ln2b)?;
    let h = tape.matmul(m, ids.w1)?;
    let h = tape.add_bias(h, ids.b1)?;
    let h = tape.gelu(h);
    let h = tape.matmul(h, ids.w2)?;
    let h = tape.add_bias(h, ids.b2)?;
    tape.add(s, h)
}

fn head(tape: &mut Tape, s: NodeId, pids: &ParamIds) -> Result<NodeId> {
    let n = tape.layer_norm(s, pids.flng, pids.flnb)?;
    let l = tape.matmul(n, pids.headw)?;
    tape.add_bias(l, pids.headb)
}

#[derive(Debug)]
pub struct ForwardOutput {
    pub tape: Tape,
    /// Leaf node for each parameter, in storage order.
    pub param_ids: Vec<NodeId>,
    /// [n_queries, nbins] logits for the query positions.
    pub target_logits: NodeId,
    /// [n_context, nbins] logits re-predicting each context point from the
    /// context strictly below it in x; present when requested.
    pub context_logits: Option<NodeId>,
}

/// Runs the network once over a normalized context and query set.
pub fn forward(
    model: &PfnModel,
    ctx_x: &[f64],
    ctx_y: &[f64],
    query_x: &[f64],
    with_context_queries: bool,
) -> Result<ForwardOutput> {
    if ctx_x.is_empty() {
        return Err(Error::invalid("empty context"));
    }
    if ctx_x.len() != ctx_y.len() {
        return Err(Error::invalid(format!(
            "context has {} xs but {} ys",
            ctx_x.len(),
            ctx_y.len()
        )));
    }
    if query_x.is_empty() {
        return Err(Error::invalid("no query positions"));
    }
    FORWARD_PASSES.fetch_add(1, Ordering::Relaxed);

    let cfg = &model.config;
    let m = ctx_x.len();
    let t = query_x.len();
    let nheads = cfg.nheads;
    let scale = 1.0 / ((cfg.nhidden / nheads) as f64).sqrt();

    let mut tape = Tape::new();
    let (param_ids, pids) = leaf_params(&mut tape, model);

    let mut ctx = embed_tokens(&mut tape, &pids, ctx_x, Some(ctx_y))?;
    let mut tgt = embed_tokens(&mut tape, &pids, query_x, None)?;
    let mut ctq = if with_context_queries {
        Some(embed_tokens(&mut tape, &pids, ctx_x, None)?)
    } else {
        None
    };

    let tgt_mask = Rc::new(vec![0.0; t * m]);
    let ctx_mask = Rc::new(vec![0.0; m * m]);
    let ctq_mask = if with_context_queries {
        let mut mk = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                if !(ctx_x[j] < ctx_x[i]) {
                    mk[i * m + j] = MASK_OFF;
                }
            }
        }
        Some(Rc::new(mk))
    } else {
        None
    };

    for l in 0..cfg.nlayers {
        let ids = &pids.layers[l];
        let ctx_ln = tape.layer_norm(ctx, ids.ln1g, ids.ln1b)?;
        let k = tape.matmul(ctx_ln, ids.wk)?;
        let k = tape.add_bias(k, ids.bk)?;
        let kh = tape.split_heads(k, nheads)?;
        let v = tape.matmul(ctx_ln, ids.wv)?;
        let v = tape.add_bias(v, ids.bv)?;
        let vh = tape.split_heads(v, nheads)?;

        let tgt_ln = tape.layer_norm(tgt, ids.ln1g, ids.ln1b)?;
        tgt = block(&mut tape, tgt, tgt_ln, ids, kh, vh, Rc::clone(&tgt_mask), nheads, scale)?;
        if let Some(cq) = ctq {
            let cq_ln = tape.layer_norm(cq, ids.ln1g, ids.ln1b)?;
            let mask = Rc::clone(ctq_mask.as_ref().unwrap());
            ctq = Some(block(&mut tape, cq, cq_ln, ids, kh, vh, mask, nheads, scale)?);
        }
        // The deepest context representation is only ever read through
        // k/v, so the final layer leaves the context stream untouched.
        if l + 1 < cfg.nlayers {
            ctx = block(&mut tape, ctx, ctx_ln, ids, kh, vh, Rc::clone(&ctx_mask), nheads, scale)?;
        }
    }

    let target_logits = head(&mut tape, tgt, &pids)?;
    let context_logits = match ctq {
        Some(cq) => Some(head(&mut tape, cq, &pids)?),
        None => None,
    };
    Ok(ForwardOutput {
        tape,
        param_ids,
        target_logits,
        context_logits,
    })
}

/// Posterior-predictive inference on a raw curve: normalizes internally,
/// runs one forward pass, and returns a binned distribution per query in
/// the normalized y space, together with the record for mapping point
/// summaries back to raw units.
pub fn predict_ppd(
    model: &PfnModel,
    context: &Curve,
    query_xs: &[f64],
) -> Result<(Vec<BinnedDistribution>, NormalizationRecord)> {
    let (ctx_n, q_n, record) = normalize_with_queries(context, query_xs)?;
    if query_xs.is_empty() {
        return Ok((Vec::new(), record));
    }
    let out = forward(model, &ctx_n.xs, &ctx_n.ys, &q_n, false)?;
    let logits = out.tape.value(out.target_logits);
    let nbins = model.config.nbins;
    let mut probs = logits.data.clone();
    softmax_rows(&mut probs, nbins);
    let dists = probs
        .chunks(nbins)
        .map(|row| BinnedDistribution::new(model.edges.clone(), row.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((dists, record))
}
