//! Intra-view fusion of common and specific evidence, then evidence-level
//! attention across views and the joint opinion.
//!
//! Every operation exists twice: a per-sample version over plain vectors,
//! used at evaluation time and as the reference in tests, and a batched
//! graph version used for training.
//!
//! Note on attention: `W^Q`, `W^K` and `W^V` are `v x v` and multiply the
//! stacked view rows from the left, so they mix views rather than feature
//! dimensions. This differs from the usual transformer layout on purpose.

use serde::Serialize;

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::opinions::{
    aggregate_pair, aggregate_with, conflict_degree, evidence_to_opinion, opinion_to_evidence,
    BaseRate, EvidenceVector, FoldPolicy, Opinion,
};

/// Default additive constant in the attention normalizer.
pub const ATTENTION_EPSILON: f64 = 1e-8;

/// Fuse a view's common and specific evidence.
pub fn intra_view_aggregate(
    common: &EvidenceVector,
    specific: &EvidenceVector,
) -> Result<(EvidenceVector, Opinion)> {
    let fused = aggregate_pair(&evidence_to_opinion(common), &evidence_to_opinion(specific))?;
    let evidence = opinion_to_evidence(&fused)?;
    Ok((evidence, fused))
}

/// Inputs of the attention step for one sample.
#[derive(Debug, Clone)]
pub struct AttentionContext {
    /// `v x l`, row `i` is `c + s^i`.
    pub features: Tensor,
    /// `v x q`, row `i` is the fused evidence `e^i`.
    pub evidence: Tensor,
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub epsilon: f64,
}

impl AttentionContext {
    pub fn new(
        features: Tensor,
        evidence: Tensor,
        query: Tensor,
        key: Tensor,
        value: Tensor,
        epsilon: f64,
    ) -> Result<Self> {
        let v = features.rows();
        if evidence.rows() != v {
            return Err(Error::contract(format!(
                "attention needs one evidence row per view: {} features, {} evidence",
                v,
                evidence.rows()
            )));
        }
        for (name, w) in [("query", &query), ("key", &key), ("value", &value)] {
            if w.shape() != [v, v] {
                return Err(Error::contract(format!(
                    "{name} matrix must be {v}x{v}, got {:?}",
                    w.shape()
                )));
            }
        }
        if !(epsilon > 0.0) {
            return Err(Error::contract("attention epsilon must be positive"));
        }
        Ok(Self {
            features,
            evidence,
            query,
            key,
            value,
            epsilon,
        })
    }

    pub fn views(&self) -> usize {
        self.features.rows()
    }

    pub fn latent(&self) -> usize {
        self.features.cols()
    }
}

/// Normalized `ReLU(Q^i K^T / sqrt(l)) + eps` over views.
pub fn attention_weights(ctx: &AttentionContext, view: usize) -> Result<Vec<f64>> {
    let v = ctx.views();
    if view >= v {
        return Err(Error::contract(format!(
            "view {view} out of range for {v} views"
        )));
    }
    let q = ctx.query.matmul(&ctx.features)?;
    let k = ctx.key.matmul(&ctx.features)?;
    let scale = 1.0 / (ctx.latent() as f64).sqrt();
    let qi = q.row_slice(view);
    let raw: Vec<f64> = (0..v)
        .map(|j| {
            let score: f64 = qi
                .iter()
                .zip(k.row_slice(j))
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * scale;
            score.max(0.0) + ctx.epsilon
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / total).collect())
}

/// `ReLU(sum_j w_j V^j)` with `V = W^V E`, for the given weights.
pub fn attend_with_weights(ctx: &AttentionContext, weights: &[f64]) -> Result<EvidenceVector> {
    if weights.len() != ctx.views() {
        return Err(Error::contract("one attention weight per view required"));
    }
    let values = ctx.value.matmul(&ctx.evidence)?;
    let mut out = vec![0.0; values.cols()];
    for (j, w) in weights.iter().enumerate() {
        for (o, x) in out.iter_mut().zip(values.row_slice(j)) {
            *o += w * x;
        }
    }
    EvidenceVector::new(out.into_iter().map(|x| x.max(0.0)).collect())
}

pub fn attend_evidence(ctx: &AttentionContext, view: usize) -> Result<EvidenceVector> {
    let w = attention_weights(ctx, view)?;
    attend_with_weights(ctx, &w)
}

/// Joint opinion of the attended opinions and its Dirichlet parameters.
pub fn inter_view_aggregate(attended: &[Opinion], fold: FoldPolicy) -> Result<(Opinion, Vec<f64>)> {
    let joint = aggregate_with(attended, fold)?;
    let alpha = opinion_to_evidence(&joint)?.alpha();
    Ok((joint, alpha))
}

/// Decision (argmax belief, lowest index on ties) and its uncertainty.
pub fn predict(joint: &Opinion) -> (usize, f64) {
    (joint.decision(), joint.uncertainty())
}

/// Per-sample evidence at every stage of the hierarchy.
#[derive(Debug, Clone, Serialize)]
pub struct ViewBundle {
    pub common: EvidenceVector,
    pub specific: Vec<EvidenceVector>,
    pub fused: Vec<EvidenceVector>,
    pub attended: Vec<EvidenceVector>,
    pub weights: Vec<Vec<f64>>,
    pub joint: EvidenceVector,
}

impl ViewBundle {
    pub fn views(&self) -> usize {
        self.fused.len()
    }

    pub fn common_opinion(&self) -> Opinion {
        self.common.to_opinion()
    }

    pub fn specific_opinions(&self) -> Vec<Opinion> {
        self.specific
            .iter()
            .map(EvidenceVector::to_opinion)
            .collect()
    }

    pub fn fused_opinions(&self) -> Vec<Opinion> {
        self.fused.iter().map(EvidenceVector::to_opinion).collect()
    }

    pub fn attended_opinions(&self) -> Vec<Opinion> {
        self.attended
            .iter()
            .map(EvidenceVector::to_opinion)
            .collect()
    }

    pub fn joint_opinion(&self) -> Opinion {
        self.joint.to_opinion()
    }

    /// Uncertainty of each view after intra-view fusion.
    pub fn local_uncertainty(&self) -> Vec<f64> {
        self.fused
            .iter()
            .map(|e| e.to_opinion().uncertainty())
            .collect()
    }

    /// Symmetric `v x v` conflict between the fused view opinions.
    pub fn conflict_matrix(&self) -> Result<Vec<Vec<f64>>> {
        let ops = self.fused_opinions();
        let v = ops.len();
        let rate = BaseRate::uniform(self.joint.class_count());
        let mut m = vec![vec![0.0; v]; v];
        for p in 0..v {
            for q in p + 1..v {
                let c = conflict_degree(&ops[p], &ops[q], &rate)?;
                m[p][q] = c;
                m[q][p] = c;
            }
        }
        Ok(m)
    }
}

/// Batched intra-view fusion: `(e_c + e_s) / 2`.
pub fn intra_view_batch(g: &mut Graph, common: Var, specific: Var) -> Result<Var> {
    let s = g.add(common, specific)?;
    Ok(g.scale(s, 0.5))
}

/// Attention weight matrices as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

/// Batched attention output.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `weights[i][j]` is an `n x 1` column: weight of view `j` for view `i`.
    pub weights: Vec<Vec<Var>>,
    /// `attended[i]` is `n x q`.
    pub attended: Vec<Var>,
}

fn weighted_sum(g: &mut Graph, w: Var, rows: &[Var], i: usize) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (m, &x) in rows.iter().enumerate() {
        let coef = g.element(w, i, m)?;
        let term = g.mul(coef, x)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::contract("attention over zero views"))
}

/// Row-wise attention for a batch. `features[i]` is `n x l`, `evidence[i]`
/// is `n x q`. With `uniform` set, every weight is `1/v` and the query/key
/// path is skipped.
pub fn attend_batch(
    g: &mut Graph,
    features: &[Var],
    evidence: &[Var],
    params: AttentionVars,
    epsilon: f64,
    uniform: bool,
) -> Result<AttentionOutput> {
    let v = features.len();
    if v == 0 || evidence.len() != v {
        return Err(Error::contract(
            "attention needs matching features and evidence per view",
        ));
    }
    let n = g.shape(features[0])[0];
    let values = (0..v)
        .map(|j| weighted_sum(g, params.value, evidence, j))
        .collect::<Result<Vec<_>>>()?;

    let weights: Vec<Vec<Var>> = if uniform {
        let w = g.constant(Tensor::full(n, 1, 1.0 / v as f64));
        vec![vec![w; v]; v]
    } else {
        let queries = (0..v)
            .map(|i| weighted_sum(g, params.query, features, i))
            .collect::<Result<Vec<_>>>()?;
        let keys = (0..v)
            .map(|i| weighted_sum(g, params.key, features, i))
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / (g.shape(features[0])[1] as f64).sqrt();
        let mut all = Vec::with_capacity(v);
        for &qi in &queries {
            let mut raw = Vec::with_capacity(v);
            for &kj in &keys {
                let s = g.dot(qi, kj)?;
                let s = g.scale(s, scale);
                let s = g.relu(s);
                raw.push(g.offset(s, epsilon));
            }
            let mut total = raw[0];
            for &r in &raw[1..] {
                total = g.add(total, r)?;
            }
            all.push(
                raw.into_iter()
                    .map(|r| g.div(r, total))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        all
    };

    let mut attended = Vec::with_capacity(v);
    for row in &weights {
        let mut acc = g.mul(row[0], values[0])?;
        for j in 1..v {
            let t = g.mul(row[j], values[j])?;
            acc = g.add(acc, t)?;
        }
        attended.push(g.relu(acc));
    }
    Ok(AttentionOutput { weights, attended })
}

/// Batched joint evidence under the given fold policy.
pub fn joint_evidence_batch(g: &mut Graph, attended: &[Var], fold: FoldPolicy) -> Result<Var> {
    let (first, rest) = attended
        .split_first()
        .ok_or_else(|| Error::contract("cannot aggregate zero views"))?;
    let mut acc = *first;
    match fold {
        FoldPolicy::Mean => {
            for &e in rest {
                acc = g.add(acc, e)?;
            }
            Ok(g.scale(acc, 1.0 / attended.len() as f64))
        }
        FoldPolicy::Sequential => {
            for &e in rest {
                acc = intra_view_batch(g, acc, e)?;
            }
            Ok(acc)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev(x: &[f64]) -> EvidenceVector {
        EvidenceVector::new(x.to_vec()).unwrap()
    }

    fn identity_ctx(features: Vec<Vec<f64>>, evidence: Vec<Vec<f64>>) -> AttentionContext {
        let v = features.len();
        AttentionContext::new(
            Tensor::from_rows(&features).unwrap(),
            Tensor::from_rows(&evidence).unwrap(),
            Tensor::identity(v),
            Tensor::identity(v),
            Tensor::identity(v),
            ATTENTION_EPSILON,
        )
        .unwrap()
    }

    #[test]
    fn intra_view_examples() {
        let (e, _) = intra_view_aggregate(&ev(&[3.0, 1.0]), &ev(&[3.0, 1.0])).unwrap();
        assert_abs_diff_eq!(e.values()[0], 3.0, epsilon = 1e-12);
        let (e, w) = intra_view_aggregate(&ev(&[8.0, 0.0]), &ev(&[0.0, 8.0])).unwrap();
        assert_abs_diff_eq!(e.values()[0], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values()[1], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.uncertainty(), 0.2, epsilon = 1e-12);
        let (e, w) = intra_view_aggregate(&ev(&[0.0, 0.0]), &ev(&[6.0, 2.0])).unwrap();
        assert_abs_diff_eq!(e.values()[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values()[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.uncertainty(), 2.0 / 6.0, epsilon = 1e-12);
        assert!(intra_view_aggregate(&ev(&[1.0, 1.0]), &ev(&[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn non_positive_scores_give_uniform_weights() {
        // opposed feature rows: the cross-view score is negative and clipped
        let ctx = identity_ctx(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            vec![vec![2.0, 0.0], vec![0.0, 4.0]],
        );
        let w = attention_weights(&ctx, 0).unwrap();
        assert!(w[0] > 0.99);
        let ctx = identity_ctx(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![vec![2.0, 0.0], vec![0.0, 4.0]],
        );
        let w = attention_weights(&ctx, 1).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        let e = attend_evidence(&ctx, 1).unwrap();
        assert_abs_diff_eq!(e.values()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values()[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn scores_two_and_zero() {
        // l = 1, Q^0 K^0 = 2, Q^0 K^1 = 0
        let ctx = identity_ctx(
            vec![vec![2.0_f64.sqrt()], vec![0.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        );
        let w = attention_weights(&ctx, 0).unwrap();
        let eps = ATTENTION_EPSILON;
        assert_abs_diff_eq!(w[0], (2.0 + eps) / (2.0 + 2.0 * eps), epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], eps / (2.0 + 2.0 * eps), epsilon = 1e-20);
    }

    #[test]
    fn single_view_attention() {
        let ctx = AttentionContext::new(
            Tensor::row(&[0.3, -0.2]),
            Tensor::row(&[2.0, 5.0]),
            Tensor::scalar(1.0),
            Tensor::scalar(1.0),
            Tensor::scalar(-0.5),
            ATTENTION_EPSILON,
        )
        .unwrap();
        assert_eq!(attention_weights(&ctx, 0).unwrap(), vec![1.0]);
        let e = attend_evidence(&ctx, 0).unwrap();
        assert_eq!(e.values(), &[0.0, 0.0]);
    }

    #[test]
    fn inter_view_examples() {
        let ops: Vec<Opinion> = [[3.0, 0.0], [0.0, 3.0], [3.0, 3.0]]
            .iter()
            .map(|e| ev(e).to_opinion())
            .collect();
        let (joint, alpha) = inter_view_aggregate(&ops, FoldPolicy::Mean).unwrap();
        assert_abs_diff_eq!(alpha[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha[1], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(joint.uncertainty(), 1.0 / 3.0, epsilon = 1e-12);
        let reversed: Vec<Opinion> = ops.iter().rev().cloned().collect();
        assert_eq!(
            inter_view_aggregate(&reversed, FoldPolicy::Mean).unwrap().0,
            joint
        );
        assert!(inter_view_aggregate(&[], FoldPolicy::Mean).is_err());
    }

    #[test]
    fn predict_examples() {
        let w = Opinion::new(vec![0.7, 0.1], 0.2).unwrap();
        assert_eq!(predict(&w), (0, 0.2));
        assert_eq!(predict(&Opinion::vacuous(3).unwrap()), (0, 1.0));
        let a = ev(&[1.0, 4.0, 2.0]).to_opinion();
        let b = ev(&[10.0, 40.0, 20.0]).to_opinion();
        assert_eq!(predict(&a).0, predict(&b).0);
    }

    #[test]
    fn conflict_matrix_shape() {
        let bundle = ViewBundle {
            common: ev(&[1.0, 1.0]),
            specific: vec![ev(&[1.0, 1.0]); 3],
            fused: vec![ev(&[8.0, 0.0]), ev(&[0.0, 8.0]), ev(&[8.0, 0.0])],
            attended: vec![ev(&[1.0, 1.0]); 3],
            weights: vec![vec![1.0 / 3.0; 3]; 3],
            joint: ev(&[1.0, 1.0]),
        };
        let m = bundle.conflict_matrix().unwrap();
        assert_eq!(m[0][0], 0.0);
        assert_abs_diff_eq!(m[0][1], 0.512, epsilon = 1e-12);
        assert_eq!(m[0][2], 0.0);
        assert_eq!(m[1][2], m[2][1]);
    }

    fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn batched_attention_matches_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, v, l, q) = (6, 3, 4, 3);
        let feats: Vec<Tensor> = (0..v)
            .map(|_| random_tensor(&mut rng, n, l, -1.0, 1.0))
            .collect();
        let evid: Vec<Tensor> = (0..v)
            .map(|_| random_tensor(&mut rng, n, q, 0.0, 5.0))
            .collect();
        let [wq, wk, wv] = [0; 3].map(|_| random_tensor(&mut rng, v, v, -1.0, 1.0));
        for uniform in [false, true] {
            let mut g = Graph::new();
            let fv: Vec<Var> = feats.iter().map(|t| g.constant(t.clone())).collect();
            let ev_: Vec<Var> = evid.iter().map(|t| g.constant(t.clone())).collect();
            let params = AttentionVars {
                query: g.constant(wq.clone()),
                key: g.constant(wk.clone()),
                value: g.constant(wv.clone()),
            };
            let out = attend_batch(&mut g, &fv, &ev_, params, ATTENTION_EPSILON, uniform).unwrap();
            for s in 0..n {
                let ctx = AttentionContext::new(
                    Tensor::from_rows(
                        &feats
                            .iter()
                            .map(|t| t.row_slice(s).to_vec())
                            .collect::<Vec<_>>(),
                    )
                    .unwrap(),
                    Tensor::from_rows(
                        &evid
                            .iter()
                            .map(|t| t.row_slice(s).to_vec())
                            .collect::<Vec<_>>(),
                    )
                    .unwrap(),
                    wq.clone(),
                    wk.clone(),
                    wv.clone(),
                    ATTENTION_EPSILON,
                )
                .unwrap();
                for i in 0..v {
                    let w = if uniform {
                        vec![1.0 / v as f64; v]
                    } else {
                        attention_weights(&ctx, i).unwrap()
                    };
                    for j in 0..v {
                        assert_abs_diff_eq!(
                            g.value(out.weights[i][j]).get(s, 0),
                            w[j],
                            epsilon = 1e-12
                        );
                    }
                    let e = attend_with_weights(&ctx, &w).unwrap();
                    for k in 0..q {
                        assert_abs_diff_eq!(
                            g.value(out.attended[i]).get(s, k),
                            e.values()[k],
                            epsilon = 1e-12
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn sequential_fold_matches_pairwise_rule() {
        let rows = [[3.0, 0.0], [0.0, 3.0], [3.0, 3.0]];
        let mut g = Graph::new();
        let vars: Vec<Var> = rows.iter().map(|r| g.constant(Tensor::row(r))).collect();
        let joint = joint_evidence_batch(&mut g, &vars, FoldPolicy::Sequential).unwrap();
        let ops: Vec<Opinion> = rows.iter().map(|r| ev(r).to_opinion()).collect();
        let (_, alpha) = inter_view_aggregate(&ops, FoldPolicy::Sequential).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!(g.value(joint).get(0, k) + 1.0, alpha[k], epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn weights_form_positive_distribution(seed in 0u64..500, v in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ctx = AttentionContext::new(
                random_tensor(&mut rng, v, 3, -2.0, 2.0),
                random_tensor(&mut rng, v, 2, 0.0, 4.0),
                random_tensor(&mut rng, v, v, -1.0, 1.0),
                random_tensor(&mut rng, v, v, -1.0, 1.0),
                random_tensor(&mut rng, v, v, -1.0, 1.0),
                ATTENTION_EPSILON,
            ).unwrap();
            for i in 0..v {
                let w = attention_weights(&ctx, i).unwrap();
                prop_assert!(w.iter().all(|x| *x > 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let e = attend_evidence(&ctx, i).unwrap();
                prop_assert!(e.values().iter().all(|x| *x >= 0.0));
            }
        }

        #[test]
        fn fused_uncertainty_with_vacuous_common(e in proptest::collection::vec(0.0f64..20.0, 2..6)) {
            prop_assume!(e.iter().sum::<f64>() > 1e-6);
            let q = e.len() as f64;
            let spec = EvidenceVector::new(e.clone()).unwrap();
            let common = EvidenceVector::new(vec![0.0; e.len()]).unwrap();
            let (_, w) = intra_view_aggregate(&common, &spec).unwrap();
            let s_c = q;
            let s_s = e.iter().sum::<f64>() + q;
            prop_assert!((w.uncertainty() - 2.0 * q / (s_c + s_s)).abs() < 1e-12);
            prop_assert!(w.uncertainty() < 1.0);
            prop_assert!(w.uncertainty() > spec.to_opinion().uncertainty());
        }
    }
}
