//! Training: streams fresh synthetic curves, splits each into context and
//! targets, and minimizes mean target cross-entropy plus (optionally) the
//! autoregressive context cross-entropy, averaged over the batch.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::curve::{normalize_with_queries, split_at_index, Curve};
use crate::error::{Error, Result};
use crate::pfn::bins::{bin_index, build_bins};
use crate::pfn::model::forward;
use crate::pfn::{init_model, ModelConfig, PfnModel};
use crate::prior::{make_interpolation_split, PriorConfig, PriorSampler};
use crate::tensor::{lr_at, Adam, Tensor};

/// A normalized training instance: model-space context and target arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveExample {
    pub ctx_x: Vec<f64>,
    pub ctx_y: Vec<f64>,
    pub tgt_x: Vec<f64>,
    pub tgt_y: Vec<f64>,
}

/// Splits a raw prior curve at its cutoff, optionally reveals a random
/// subset of targets into the context (the interpolation variant), and
/// normalizes everything into model space.
pub fn prepare_example<R: Rng + ?Sized>(
    curve: &Curve,
    cutoff: usize,
    interpolation: bool,
    rng: &mut R,
) -> Result<CurveExample> {
    let split = split_at_index(curve, cutoff)?;
    let (ctx, tgt) = if interpolation {
        let mixed = make_interpolation_split(&split, rng);
        (mixed.context, mixed.target)
    } else {
        (split.context, split.target)
    };
    let (ctx_n, tgt_xn, record) = normalize_with_queries(&ctx, &tgt.xs)?;
    let tgt_yn = tgt.ys.iter().map(|&y| y / record.y_scale).collect();
    Ok(CurveExample {
        ctx_x: ctx_n.xs,
        ctx_y: ctx_n.ys,
        tgt_x: tgt_xn,
        tgt_y: tgt_yn,
    })
}

/// The two cross-entropy components of the loss; `context_ce` is zero when
/// the autoregressive context term is disabled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub target_ce: f64,
    pub context_ce: f64,
}

/// Loss of one example, optionally with parameter gradients (in storage
/// order, zero-filled where a parameter is unused).
pub fn example_loss(
    model: &PfnModel,
    ex: &CurveExample,
    want_grads: bool,
) -> Result<(f64, LossParts, Option<Vec<Tensor>>)> {
    let out = forward(
        model,
        &ex.ctx_x,
        &ex.ctx_y,
        &ex.tgt_x,
        model.config.autoregressive_context,
    )?;
    let mut tape = out.tape;
    let tbins: Vec<usize> = ex.tgt_y.iter().map(|&y| bin_index(&model.edges, y)).collect();
    let ce_t = tape.cross_entropy_mean(out.target_logits, &tbins)?;
    let (loss_id, context_ce) = match out.context_logits {
        Some(cl) => {
            let cbins: Vec<usize> = ex.ctx_y.iter().map(|&y| bin_index(&model.edges, y)).collect();
            let ce_c = tape.cross_entropy_mean(cl, &cbins)?;
            let total = tape.add(ce_t, ce_c)?;
            (total, tape.value(ce_c).data[0])
        }
        None => (ce_t, 0.0),
    };
    let parts = LossParts {
        target_ce: tape.value(ce_t).data[0],
        context_ce,
    };
    let loss = tape.value(loss_id).data[0];
    let grads = if want_grads {
        let g = tape.backward(loss_id)?;
        Some(
            out.param_ids
                .iter()
                .enumerate()
                .map(|(i, &id)| match &g[id] {
                    Some(t) => t.clone(),
                    None => Tensor::zeros(model.params[i].shape.clone()),
                })
                .collect(),
        )
    } else {
        None
    };
    Ok((loss, parts, grads))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex digest identifying a prior configuration.
pub fn prior_digest(prior: &PriorConfig) -> String {
    let json = serde_json::to_string(prior).expect("prior config serializes");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    hex(&h.finalize())
}

fn batch_digest(curves: &[Curve]) -> String {
    let mut h = Sha256::new();
    for c in curves {
        h.update(c.name.as_bytes());
        for &v in c.xs.iter().chain(&c.ys) {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

/// Full training run; see [`train_with_limit`] for the early-stop variant.
pub fn train(
    prior: &PriorConfig,
    cfg: &ModelConfig,
    seed: u64,
    log: Option<&mut dyn Write>,
) -> Result<PfnModel> {
    train_with_limit(prior, cfg, seed, cfg.total_steps, log)
}

/// Trains for `min(steps, cfg.total_steps)` optimizer steps under the full
/// schedule, writing a `step,loss,lr` CSV to `log` when given. The run is a
/// pure function of (prior, cfg, seed).
pub fn train_with_limit(
    prior: &PriorConfig,
    cfg: &ModelConfig,
    seed: u64,
    steps: usize,
    mut log: Option<&mut dyn Write>,
) -> Result<PfnModel> {
    cfg.validate()?;
    prior.validate()?;
    let edges = build_bins(prior, 100 * cfg.nbins, cfg.nbins, cfg.y_support)?;
    let mut model = init_model(cfg, edges, prior_digest(prior), seed)?;
    let mut sampler = PriorSampler::new(prior.clone())?;
    let mut aux_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    let mut opt = Adam::new(&model.params);
    if let Some(w) = log.as_mut() {
        writeln!(w, "step,loss,lr")?;
    }
    let inv_batch = 1.0 / cfg.batch_size as f64;
    for step in 0..steps.min(cfg.total_steps) {
        let lr = lr_at(step, cfg.peak_lr, cfg.warmup, cfg.total_steps);
        let mut acc: Vec<Tensor> = model
            .params
            .iter()
            .map(|p| Tensor::zeros(p.shape.clone()))
            .collect();
        let mut batch_loss = 0.0;
        let mut batch_curves = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let sample = sampler.sample()?;
            let cutoff = sample.spec.cutoff_index;
            let ex = prepare_example(&sample.curve, cutoff, cfg.interpolation_variant, &mut aux_rng)?;
            let (loss, _, grads) = example_loss(&model, &ex, true)?;
            batch_loss += loss * inv_batch;
            for (a, g) in acc.iter_mut().zip(grads.expect("gradients requested")) {
                for (x, y) in a.data.iter_mut().zip(&g.data) {
                    *x += y * inv_batch;
                }
            }
            batch_curves.push(sample.curve);
        }
        if !batch_loss.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss {batch_loss} at step {step}; batch digest {}",
                batch_digest(&batch_curves)
            )));
        }
        let grad_refs: Vec<&Tensor> = acc.iter().collect();
        opt.step(&mut model.params, &grad_refs, lr);
        if let Some(w) = log.as_mut() {
            writeln!(w, "{step},{batch_loss},{lr}")?;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pfn::param_specs;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            nlayers: 2,
            nheads: 2,
            nhidden: 16,
            nbins: 10,
            batch_size: 2,
            ..ModelConfig::default()
        }
    }

    fn tiny_model(seed: u64) -> PfnModel {
        let cfg = tiny_config();
        let edges = (0..=10).map(|i| 0.15 * i as f64).collect();
        init_model(&cfg, edges, "test".into(), seed).unwrap()
    }

    fn demo_example() -> CurveExample {
        let xs: Vec<f64> = (1..=30).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 0.2 + x.powf(-0.4)).collect();
        let curve = Curve::new("demo", xs, ys).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        prepare_example(&curve, 18, false, &mut rng).unwrap()
    }

    #[test]
    fn bin_lookup_clamps_into_edge_bins() {
        let edges = [0.0, 0.5, 1.0, 1.5];
        assert_eq!(bin_index(&edges, -3.0), 0);
        assert_eq!(bin_index(&edges, 0.0), 0);
        assert_eq!(bin_index(&edges, 0.5), 1);
        assert_eq!(bin_index(&edges, 0.74), 1);
        assert_eq!(bin_index(&edges, 1.5), 2);
        assert_eq!(bin_index(&edges, 9.0), 2);
    }

    #[test]
    fn uniform_logits_cost_log_nbins_per_component() {
        let mut model = tiny_model(1);
        let n = model.params.len();
        model.params[n - 2].data.fill(0.0);
        model.params[n - 1].data.fill(0.0);
        let (loss, parts, _) = example_loss(&model, &demo_example(), false).unwrap();
        let want = (10f64).ln();
        assert!((parts.target_ce - want).abs() < 1e-9, "{}", parts.target_ce);
        assert!((parts.context_ce - want).abs() < 1e-9, "{}", parts.context_ce);
        assert!((loss - 2.0 * want).abs() < 1e-9);
    }

    #[test]
    fn disabling_the_context_term_leaves_the_target_term() {
        let with = tiny_model(2);
        let mut without = with.clone();
        without.config.autoregressive_context = false;
        let ex = demo_example();
        let (loss_with, parts_with, _) = example_loss(&with, &ex, false).unwrap();
        let (loss_without, parts_without, _) = example_loss(&without, &ex, false).unwrap();
        assert_eq!(loss_without, parts_with.target_ce, "pure target objective");
        assert_eq!(parts_without.context_ce, 0.0);
        assert!((loss_with - loss_without - parts_with.context_ce).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences_through_the_whole_model() {
        let model = tiny_model(3);
        let ex = demo_example();
        let (_, _, grads) = example_loss(&model, &ex, true).unwrap();
        let grads = grads.unwrap();
        let specs = param_specs(&model.config);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..20 {
            let p = rng.random_range(0..model.params.len());
            let i = rng.random_range(0..model.params[p].numel());
            let mut plus = model.clone();
            plus.params[p].data[i] += h;
            let mut minus = model.clone();
            minus.params[p].data[i] -= h;
            let (lp, _, _) = example_loss(&plus, &ex, false).unwrap();
            let (lm, _, _) = example_loss(&minus, &ex, false).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let an = grads[p].data[i];
            let denom = an.abs().max(fd.abs()).max(1e-6);
            assert!(
                (an - fd).abs() / denom < 1e-3,
                "{} [{i}]: analytic {an:.6e} vs fd {fd:.6e}",
                specs[p].0
            );
        }
    }

    #[test]
    fn training_is_deterministic() {
        let prior = PriorConfig {
            noise_sigma_override: Some(0.0),
            ..PriorConfig::default()
        };
        let cfg = ModelConfig {
            nlayers: 1,
            nheads: 2,
            nhidden: 8,
            nbins: 5,
            batch_size: 2,
            ..ModelConfig::default()
        };
        let run = || {
            let mut log = Vec::new();
            let model = train_with_limit(&prior, &cfg, 42, 3, Some(&mut log)).unwrap();
            (model, String::from_utf8(log).unwrap())
        };
        let (ma, la) = run();
        let (mb, lb) = run();
        assert_eq!(la, lb, "log rows must be reproducible");
        assert_eq!(ma.params, mb.params);
        assert_eq!(la.lines().count(), 4, "header plus three steps");
        assert!(la.starts_with("step,loss,lr\n"));
        let first_row: Vec<&str> = la.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(first_row[0], "0");
        assert_eq!(first_row[2], "0", "learning rate starts the warmup at zero");
    }

    #[test]
    fn runaway_learning_rate_aborts_with_diagnostics() {
        let prior = PriorConfig::default();
        let cfg = ModelConfig {
            nlayers: 1,
            nheads: 2,
            nhidden: 8,
            nbins: 5,
            batch_size: 2,
            peak_lr: f64::MAX,
            ..ModelConfig::default()
        };
        let err = train_with_limit(&prior, &cfg, 0, 6, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("step"), "{msg}");
        assert!(msg.contains("digest"), "{msg}");
    }
}
