use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{inject_noise, split, standardize, MultiViewDataset, NoiseSpec, ViewSelection};
use crate::diffcore::gradcheck::{GradCheckEntry, GradCheckReport};
use crate::diffcore::{grad_check, relative_error, Graph, ParamId, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{
    ace_loss, adv_loss, cml_loss, h1_loss, h2_loss, kl_loss, lambda_schedule, one_hot, spe_loss,
    IntraViewAlphas,
};
use crate::networks::ModelParams;

use super::config::{TrainConfig, Variant};
use super::evaluate::{evaluate, mean};
use super::model::{
    batch_inputs, discriminator_loss, forward, objective, ForwardOptions, ObjectiveWeights,
};
use super::train::train;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub accuracy: f64,
    pub mean_uncertainty: f64,
}

/// Evaluate on independently corrupted copies of `test`, one per sigma.
/// Every sigma reuses `seed`, so the same instances and views are hit.
pub fn run_noise_sweep(
    model: &ModelParams,
    cfg: &TrainConfig,
    test: &MultiViewDataset,
    sigmas: &[f64],
    fraction: f64,
    views: ViewSelection,
    seed: u64,
) -> Result<Vec<NoiseRow>> {
    sigmas
        .iter()
        .map(|&sigma| {
            let spec = NoiseSpec {
                fraction,
                sigma,
                views: views.clone(),
                seed,
            };
            let (noisy, mask) = inject_noise(test, &spec)?;
            let report = evaluate(model, &noisy, Some(&mask), ForwardOptions::from(cfg))?;
            Ok(NoiseRow {
                sigma,
                accuracy: report.accuracy,
                mean_uncertainty: report.mean_joint_uncertainty(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LearningRateRow {
    pub learning_rate: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Stratified fold assignment: within each class, shuffled members are
/// dealt round-robin to folds.
pub fn fold_assignment(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![0; labels.len()];
    let mut next = 0usize;
    for k in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        members.shuffle(&mut rng);
        for i in members {
            out[i] = next % folds;
            next += 1;
        }
    }
    out
}

/// k-fold cross-validated accuracy for each learning rate.
pub fn learning_rate_sweep(
    ds: &MultiViewDataset,
    cfg: &TrainConfig,
    grid: &[f64],
    folds: usize,
) -> Result<Vec<LearningRateRow>> {
    if folds < 2 || folds > ds.len() {
        return Err(Error::contract(format!(
            "need 2 <= folds <= n, got {folds}"
        )));
    }
    let assignment = fold_assignment(ds.labels(), folds, cfg.seed);
    let mut rows = Vec::with_capacity(grid.len());
    for &lr in grid {
        let run_cfg = TrainConfig {
            learning_rate: lr,
            ..cfg.clone()
        };
        let mut accs = Vec::with_capacity(folds);
        for f in 0..folds {
            let tr: Vec<usize> = (0..ds.len()).filter(|&i| assignment[i] != f).collect();
            let va: Vec<usize> = (0..ds.len()).filter(|&i| assignment[i] == f).collect();
            let (tr, va, _) = standardize(&ds.select(&tr), &ds.select(&va))?;
            let out = train(&tr, &run_cfg)?;
            accs.push(evaluate(&out.model, &va, None, ForwardOptions::from(&run_cfg))?.accuracy);
        }
        let m = mean(&accs);
        let var = accs.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / accs.len() as f64;
        rows.push(LearningRateRow {
            learning_rate: lr,
            mean_accuracy: m,
            std_accuracy: var.sqrt(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub accuracy: f64,
    /// `accuracy - baseline accuracy`.
    pub delta: f64,
    pub final_loss: f64,
    /// `delta` and `eta` as actually used, to confirm the switch took effect.
    pub loss_delta: f64,
    pub loss_eta: f64,
}

/// Train the full model and each requested variant with identical seeds.
/// The baseline row always comes first.
pub fn ablate(
    train_ds: &MultiViewDataset,
    test_ds: &MultiViewDataset,
    cfg: &TrainConfig,
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    let mut list = vec![Variant::Full];
    list.extend(variants.iter().copied().filter(|v| *v != Variant::Full));
    let mut rows: Vec<AblationRow> = Vec::with_capacity(list.len());
    for variant in list {
        let run = variant.apply(cfg);
        let out = train(train_ds, &run)?;
        let acc = evaluate(&out.model, test_ds, None, ForwardOptions::from(&run))?.accuracy;
        let base = rows.first().map_or(acc, |r| r.accuracy);
        rows.push(AblationRow {
            variant,
            accuracy: acc,
            delta: acc - base,
            final_loss: out.log.last().map_or(f64::NAN, |b| b.overall),
            loss_delta: run.delta,
            loss_eta: run.eta,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Repeat split, standardization, training and evaluation with seeds
/// `cfg.seed, cfg.seed + 1, ...`.
pub fn run_trials(
    ds: &MultiViewDataset,
    cfg: &TrainConfig,
    train_fraction: f64,
    trials: usize,
) -> Result<TrialSummary> {
    if trials == 0 {
        return Err(Error::contract("need at least one trial"));
    }
    let seeds: Vec<u64> = (0..trials as u64).map(|k| cfg.seed + k).collect();
    let mut accuracies = Vec::with_capacity(trials);
    for &seed in &seeds {
        let run = TrainConfig {
            seed,
            ..cfg.clone()
        };
        let parts = split(ds, train_fraction, seed)?;
        let (tr, te, _) = standardize(&parts.train, &parts.test)?;
        let out = train(&tr, &run)?;
        accuracies.push(evaluate(&out.model, &te, None, ForwardOptions::from(&run))?.accuracy);
    }
    let m = mean(&accuracies);
    let std = (accuracies.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / trials as f64).sqrt();
    Ok(TrialSummary {
        seeds,
        accuracies,
        mean: m,
        std,
    })
}

/// Worst relative error of each objective term across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheckRow {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub seeds: usize,
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("sizes match by construction")
}

fn labels(rng: &mut ChaCha8Rng, n: usize, q: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..q)).collect()
}

/// Central-difference check of `loss` with respect to model parameters
/// `ids`, perturbing the stored values in place.
pub fn model_grad_check<F>(
    model: &ModelParams,
    ids: &[ParamId],
    loss: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ModelParams) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = loss(&mut g, model)?;
    let grads = g.backward(root)?;
    let mut probe = model.clone();
    probe.store.zero_grad();
    probe.store.absorb(&g, &grads);
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| {
            probe
                .store
                .get(id)
                .grad
                .clone()
                .expect("absorb fills every gradient")
        })
        .collect();
    probe.store.zero_grad();

    let eval = |m: &ModelParams| -> Result<f64> {
        let mut g = Graph::new();
        let r = loss(&mut g, m)?;
        Ok(g.value(r).item())
    };
    let mut entries = Vec::with_capacity(ids.len());
    for (k, &id) in ids.iter().enumerate() {
        let base = model.store.value(id).clone();
        let mut max_rel = 0.0_f64;
        let mut max_abs = 0.0_f64;
        for i in 0..base.len() {
            let mut t = base.clone();
            t.data_mut()[i] = base.data()[i] + h;
            probe.store.set_value(id, t.clone())?;
            let up = eval(&probe)?;
            t.data_mut()[i] = base.data()[i] - h;
            probe.store.set_value(id, t)?;
            let down = eval(&probe)?;
            probe.store.set_value(id, base.clone())?;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k].data()[i];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        entries.push(GradCheckEntry {
            input: k,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    Ok(GradCheckReport {
        entries,
        tolerance: tol,
    })
}

/// Per-term gradient checks on small random problems, one per seed.
///
/// Loss terms are checked against their direct inputs. The overall
/// objective is checked against every parameter except the discriminator's,
/// which it holds constant; the discriminator's own cross-entropy is checked
/// against those.
pub fn gradient_suite(seeds: &[u64]) -> Result<Vec<GradientCheckRow>> {
    let names = [
        "adv",
        "cml",
        "spe",
        "ace",
        "kl",
        "h1",
        "h2",
        "overall",
        "discriminator",
    ];
    let mut worst = vec![0.0_f64; names.len()];
    let (h, tol) = (GRADCHECK_STEP, GRADCHECK_TOLERANCE);
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, q, v, l) = (5, 3, 3, 4);
        let y_idx = labels(&mut rng, n, q);
        let y = one_hot(&y_idx, q);
        let mut results = Vec::with_capacity(names.len());

        let logits: Vec<Tensor> = (0..v).map(|_| uniform(&mut rng, n, v, -2.0, 2.0)).collect();
        results.push(grad_check(
            |g, x| {
                let probs: Vec<Var> = x.iter().map(|&z| g.softmax_rows(z)).collect();
                adv_loss(g, &probs)
            },
            &logits,
            h,
            tol,
        )?);

        let yc = y.clone();
        let pred: Vec<Tensor> = (0..v).map(|_| uniform(&mut rng, n, q, -3.0, 3.0)).collect();
        results.push(grad_check(
            move |g, x| {
                let yv = g.constant(yc.clone());
                let p: Vec<Var> = x.iter().map(|&z| g.sigmoid(z)).collect();
                cml_loss(g, &p, yv)
            },
            &pred,
            h,
            tol,
        )?);

        let mut reps: Vec<Tensor> = (0..v).map(|_| uniform(&mut rng, n, l, -1.0, 1.0)).collect();
        reps.push(uniform(&mut rng, n, l, -1.0, 1.0));
        results.push(grad_check(
            |g, x| spe_loss(g, &x[..v], x[v]),
            &reps,
            h,
            tol,
        )?);

        let alpha = vec![uniform(&mut rng, n, q, 1.05, 6.0)];
        let yc = y.clone();
        results.push(grad_check(
            move |g, x| {
                let yv = g.constant(yc.clone());
                ace_loss(g, x[0], yv)
            },
            &alpha,
            h,
            tol,
        )?);
        let yc = y.clone();
        results.push(grad_check(
            move |g, x| {
                let yv = g.constant(yc.clone());
                kl_loss(g, x[0], yv)
            },
            &alpha,
            h,
            tol,
        )?);

        // evidence tensors, kept away from zero so Dirichlet parameters stay > 1
        let ev: Vec<Tensor> = (0..2 * v + 1)
            .map(|_| uniform(&mut rng, n, q, 0.1, 5.0))
            .collect();
        let gamma = rng.random_range(0.5..2.0);
        let yc = y.clone();
        results.push(grad_check(
            move |g, x| {
                let yv = g.constant(yc.clone());
                let a: Vec<Var> = x.iter().map(|&e| g.offset(e, 1.0)).collect();
                let alphas = IntraViewAlphas {
                    fused: a[..v].to_vec(),
                    common: a[v],
                    specific: a[v + 1..].to_vec(),
                };
                h1_loss(g, &alphas, yv, gamma)
            },
            &ev,
            h,
            tol,
        )?);
        let lambda = rng.random_range(0.0..1.0);
        let yc = y.clone();
        results.push(grad_check(
            move |g, x| {
                let yv = g.constant(yc.clone());
                let a: Vec<Var> = x.iter().map(|&e| g.offset(e, 1.0)).collect();
                h2_loss(g, a[2 * v], &a[..v], &a[v..2 * v], yv, lambda, gamma)
            },
            &ev,
            h,
            tol,
        )?);

        let cfg = TrainConfig {
            l,
            head_hidden: 4,
            disc_hidden: 4,
            ..TrainConfig::default()
        };
        let dims = [3, 2, 4];
        let views: Vec<Tensor> = dims
            .iter()
            .map(|&d| uniform(&mut rng, n, d, -1.5, 1.5))
            .collect();
        let mut model = ModelParams::new(cfg.architecture(dims.to_vec(), q), seed)?;
        // The identity start makes Q^i = F^i; two sparse ReLU feature rows with
        // disjoint support then score exactly 0, on the ReLU kink. Check at a
        // generic point instead.
        for id in [
            model.attention.query,
            model.attention.key,
            model.attention.value,
        ] {
            model
                .store
                .set_value(id, uniform(&mut rng, v, v, -1.0, 1.0))?;
        }
        let disc_ids = model.discriminator_params();
        let others: Vec<ParamId> = model
            .store
            .iter()
            .map(|(id, _)| id)
            .filter(|id| !disc_ids.contains(id))
            .collect();
        let weights = ObjectiveWeights::from_config(&cfg, lambda_schedule(25, cfg.anneal_epochs));
        let opts = ForwardOptions::from(&cfg);
        let (vc, yc) = (views.clone(), y.clone());
        results.push(model_grad_check(
            &model,
            &others,
            move |g, m| {
                let x = batch_inputs(g, &vc);
                let yv = g.constant(yc.clone());
                let fwd = forward(g, m, &x, opts)?;
                Ok(objective(g, m, &fwd, yv, weights)?.overall)
            },
            h,
            tol,
        )?);
        results.push(model_grad_check(
            &model,
            &disc_ids,
            move |g, m| {
                let x = batch_inputs(g, &views);
                let fwd = forward(g, m, &x, opts)?;
                discriminator_loss(g, m, &fwd)
            },
            h,
            tol,
        )?);

        for (w, r) in worst.iter_mut().zip(&results) {
            *w = w.max(r.max_rel_error());
        }
    }
    Ok(names
        .iter()
        .zip(worst)
        .map(|(&name, max_rel_error)| GradientCheckRow {
            name,
            max_rel_error,
            seeds: seeds.len(),
        })
        .collect())
}
