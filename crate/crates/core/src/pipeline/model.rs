//! One forward pass of the full model over a batch, and the training
//! objective built on it.

use crate::aggregation::{
    attend_batch, intra_view_batch, joint_evidence_batch, AttentionOutput, AttentionVars,
};
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{
    ace_loss, adv_loss, cml_loss, com_loss, con_loss, h1_loss, h2_loss, overall_loss, spe_loss,
    view_cross_entropy, IntraViewAlphas, LossTerms,
};
use crate::networks::{Head, ModelParams};
use crate::opinions::FoldPolicy;

use super::config::TrainConfig;

/// Structural switches that change the forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub intra_view: bool,
    pub attention: bool,
    pub fold: FoldPolicy,
    pub epsilon: f64,
}

impl From<&TrainConfig> for ForwardOptions {
    fn from(cfg: &TrainConfig) -> Self {
        Self {
            intra_view: cfg.intra_view,
            attention: cfg.attention,
            fold: cfg.fold,
            epsilon: cfg.epsilon,
        }
    }
}

/// Graph handles for every intermediate quantity of one batch.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `c^i`, one `n x l` node per view.
    pub common: Vec<Var>,
    /// `s^i`.
    pub specific: Vec<Var>,
    /// `c = (1/v) sum_i c^i`.
    pub common_mean: Var,
    /// `H_cml(c^i)`.
    pub predictions: Vec<Var>,
    pub e_common: Var,
    pub e_specific: Vec<Var>,
    /// Intra-view fused evidence `e^i`.
    pub e_fused: Vec<Var>,
    pub attention: AttentionOutput,
    pub e_joint: Var,
}

impl Forward {
    pub fn views(&self) -> usize {
        self.common.len()
    }
}

pub fn forward(
    g: &mut Graph,
    model: &ModelParams,
    x: &[Var],
    opts: ForwardOptions,
) -> Result<Forward> {
    let v = model.arch().views();
    if x.len() != v {
        return Err(Error::contract(format!(
            "model has {v} views, batch has {}",
            x.len()
        )));
    }
    let mut common = Vec::with_capacity(v);
    let mut specific = Vec::with_capacity(v);
    for (i, &xi) in x.iter().enumerate() {
        common.push(model.encode_common(g, xi, i)?);
        specific.push(model.encode_specific(g, xi, i)?);
    }
    let mut sum = common[0];
    for &c in &common[1..] {
        sum = g.add(sum, c)?;
    }
    let common_mean = g.scale(sum, 1.0 / v as f64);
    let predictions = common
        .iter()
        .map(|&c| model.predict_common(g, c))
        .collect::<Result<Vec<_>>>()?;

    let e_common = model.evidence_head(g, common_mean, Head::Common)?;
    let e_specific = specific
        .iter()
        .enumerate()
        .map(|(i, &s)| model.evidence_head(g, s, Head::Specific(i)))
        .collect::<Result<Vec<_>>>()?;
    let e_fused = if opts.intra_view {
        e_specific
            .iter()
            .map(|&es| intra_view_batch(g, e_common, es))
            .collect::<Result<Vec<_>>>()?
    } else {
        e_specific.clone()
    };

    let features = specific
        .iter()
        .map(|&s| g.add(common_mean, s))
        .collect::<Result<Vec<_>>>()?;
    let params = AttentionVars {
        query: g.param(&model.store, model.attention.query),
        key: g.param(&model.store, model.attention.key),
        value: g.param(&model.store, model.attention.value),
    };
    let attention = attend_batch(
        g,
        &features,
        &e_fused,
        params,
        opts.epsilon,
        !opts.attention,
    )?;
    let e_joint = joint_evidence_batch(g, &attention.attended, opts.fold)?;
    Ok(Forward {
        common,
        specific,
        common_mean,
        predictions,
        e_common,
        e_specific,
        e_fused,
        attention,
        e_joint,
    })
}

/// Loss weights and switches that enter the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
    pub lambda: f64,
    pub intra_view: bool,
}

impl ObjectiveWeights {
    pub fn from_config(cfg: &TrainConfig, lambda: f64) -> Self {
        Self {
            gamma: cfg.gamma,
            delta: cfg.delta,
            eta: cfg.eta,
            lambda,
            intra_view: cfg.intra_view,
        }
    }
}

fn alpha(g: &mut Graph, e: Var) -> Var {
    g.offset(e, 1.0)
}

/// Every term of the overall objective, with the discriminator frozen
/// inside `L_adv`.
pub fn objective(
    g: &mut Graph,
    model: &ModelParams,
    fwd: &Forward,
    y: Var,
    w: ObjectiveWeights,
) -> Result<LossTerms> {
    let frozen = fwd
        .common
        .iter()
        .map(|&c| model.discriminate(g, c, true))
        .collect::<Result<Vec<_>>>()?;
    let adv = adv_loss(g, &frozen)?;
    let cml = cml_loss(g, &fwd.predictions, y)?;
    let com = com_loss(g, adv, cml)?;
    let spe = spe_loss(g, &fwd.specific, fwd.common_mean)?;

    let fused: Vec<Var> = fwd.e_fused.iter().map(|&e| alpha(g, e)).collect();
    let h1 = if w.intra_view {
        let alphas = IntraViewAlphas {
            fused: fused.clone(),
            common: alpha(g, fwd.e_common),
            specific: fwd.e_specific.iter().map(|&e| alpha(g, e)).collect(),
        };
        h1_loss(g, &alphas, y, w.gamma)?
    } else {
        // without the intra-view stage only the per-view classification terms remain
        let terms = fused
            .iter()
            .map(|&a| ace_loss(g, a, y))
            .collect::<Result<Vec<_>>>()?;
        let mut s = terms[0];
        for &t in &terms[1..] {
            s = g.add(s, t)?;
        }
        g.scale(s, 1.0 / terms.len() as f64)
    };
    let joint = alpha(g, fwd.e_joint);
    let attended: Vec<Var> = fwd
        .attention
        .attended
        .iter()
        .map(|&e| alpha(g, e))
        .collect();
    let h2 = h2_loss(g, joint, &attended, &fused, y, w.lambda, w.gamma)?;
    let con = con_loss(g, &fused)?;
    let overall = overall_loss(g, h1, h2, com, spe, w.delta, w.eta)?;
    Ok(LossTerms {
        adv,
        cml,
        com,
        spe,
        h1,
        h2,
        con,
        overall,
    })
}

/// Cross-entropy the discriminator minimizes, on detached common
/// representations so it does not move the encoders.
pub fn discriminator_loss(g: &mut Graph, model: &ModelParams, fwd: &Forward) -> Result<Var> {
    let probs = fwd
        .common
        .iter()
        .map(|&c| {
            let c = g.detach(c);
            model.discriminate(g, c, false)
        })
        .collect::<Result<Vec<_>>>()?;
    view_cross_entropy(g, &probs)
}

/// View matrices as graph constants.
pub fn batch_inputs(g: &mut Graph, views: &[Tensor]) -> Vec<Var> {
    views.iter().map(|t| g.constant(t.clone())).collect()
}
