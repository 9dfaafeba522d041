use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::MultiViewDataset;
use crate::diffcore::{adam_step, AdamState, Graph, Tensor};
use crate::error::{Error, Result};
use crate::losses::{lambda_schedule, one_hot, LossBreakdown};
use crate::networks::ModelParams;

use super::config::TrainConfig;
use super::model::{
    batch_inputs, discriminator_loss, forward, objective, ForwardOptions, ObjectiveWeights,
};

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub log: Vec<LossBreakdown>,
    /// Epoch at which patience ran out, if it did.
    pub stopped_at: Option<usize>,
}

/// Run one optimizer step on `rows` of `ds` and return the loss breakdown
/// measured before the step.
fn step(
    model: &mut ModelParams,
    adam: &mut AdamState,
    ds: &MultiViewDataset,
    rows: Option<&[usize]>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<LossBreakdown> {
    let lambda = lambda_schedule(epoch, cfg.anneal_epochs);
    let (views, labels): (Vec<Tensor>, Vec<usize>) = match rows {
        Some(r) => (
            ds.views().iter().map(|v| v.select_rows(r)).collect(),
            r.iter().map(|&i| ds.labels()[i]).collect(),
        ),
        None => (ds.views().to_vec(), ds.labels().to_vec()),
    };
    let mut g = Graph::new();
    let x = batch_inputs(&mut g, &views);
    let y = g.constant(one_hot(&labels, ds.classes()));
    let fwd = forward(&mut g, model, &x, ForwardOptions::from(cfg))?;
    let terms = objective(
        &mut g,
        model,
        &fwd,
        y,
        ObjectiveWeights::from_config(cfg, lambda),
    )?;
    let disc = discriminator_loss(&mut g, model, &fwd)?;
    let breakdown = terms.breakdown(&g, epoch, lambda, g.value(disc).item());
    if !breakdown.is_finite() {
        let dump = serde_json::to_string(&breakdown).unwrap_or_else(|_| format!("{breakdown:?}"));
        return Err(Error::NonFinite { epoch, dump });
    }
    let root = g.add(terms.overall, disc)?;
    let grads = g.backward(root)?;
    model.store.zero_grad();
    model.store.absorb(&g, &grads);
    adam_step(&mut model.store, adam)?;
    Ok(breakdown)
}

fn batch_mean(parts: &[(LossBreakdown, usize)]) -> LossBreakdown {
    let total: usize = parts.iter().map(|(_, n)| n).sum();
    let mut out = parts[0].0.clone();
    let avg = |f: fn(&LossBreakdown) -> f64| {
        parts.iter().map(|(b, n)| f(b) * *n as f64).sum::<f64>() / total as f64
    };
    out.adv = avg(|b| b.adv);
    out.cml = avg(|b| b.cml);
    out.com = avg(|b| b.com);
    out.spe = avg(|b| b.spe);
    out.h1 = avg(|b| b.h1);
    out.h2 = avg(|b| b.h2);
    out.con = avg(|b| b.con);
    out.overall = avg(|b| b.overall);
    out.discriminator = avg(|b| b.discriminator);
    out
}

/// Train a freshly initialized model on `ds`.
pub fn train(ds: &MultiViewDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let arch = cfg.architecture(ds.dims(), ds.classes());
    let model = ModelParams::new(arch, cfg.seed)?;
    train_from(model, ds, cfg)
}

/// Continue training `model` on `ds`.
pub fn train_from(
    mut model: ModelParams,
    ds: &MultiViewDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.arch().view_dims != ds.dims() || model.arch().classes != ds.classes() {
        return Err(Error::contract(format!(
            "model expects widths {:?} and {} classes, data has {:?} and {}",
            model.arch().view_dims,
            model.arch().classes,
            ds.dims(),
            ds.classes()
        )));
    }
    if ds.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let mut adam = AdamState::new(cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut stopped_at = None;

    for epoch in 0..cfg.epochs {
        let row = match cfg.batch_size {
            Some(b) if b < ds.len() => {
                order.shuffle(&mut rng);
                let mut parts = Vec::new();
                for chunk in order.chunks(b) {
                    let bd = step(&mut model, &mut adam, ds, Some(chunk), cfg, epoch)?;
                    parts.push((bd, chunk.len()));
                }
                batch_mean(&parts)
            }
            _ => step(&mut model, &mut adam, ds, None, cfg, epoch)?,
        };
        debug!(
            "epoch {epoch}: overall {:.6} h1 {:.6} h2 {:.6} disc {:.6}",
            row.overall, row.h1, row.h2, row.discriminator
        );
        let loss = row.overall;
        log.push(row);
        if let Some(patience) = cfg.patience {
            if loss < best - cfg.min_delta {
                best = loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    info!("early stop at epoch {epoch}");
                    stopped_at = Some(epoch);
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        stopped_at,
    })
}
