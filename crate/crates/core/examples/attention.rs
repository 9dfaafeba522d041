//! Per-sample evidence attention across three views, compared with the
//! uniform weighting used when attention is switched off.
//!
//! cargo run --example attention

use trustmv::aggregation::{
    attend_with_weights, attention_weights, inter_view_aggregate, intra_view_aggregate, predict,
    AttentionContext, ATTENTION_EPSILON,
};
use trustmv::diffcore::Tensor;
use trustmv::opinions::{EvidenceVector, FoldPolicy};

fn main() -> trustmv::error::Result<()> {
    // per-view common and specific evidence for one sample, q = 3
    let common = EvidenceVector::new(vec![6.0, 1.0, 0.0])?;
    let specific = [
        vec![8.0, 0.0, 1.0],
        vec![5.0, 2.0, 0.0],
        vec![0.0, 0.0, 9.0],
    ];
    let mut fused = Vec::new();
    for s in &specific {
        let (e, w) = intra_view_aggregate(&common, &EvidenceVector::new(s.clone())?)?;
        println!(
            "fused evidence {:?}  u = {:.3}",
            e.values(),
            w.uncertainty()
        );
        fused.extend_from_slice(e.values());
    }

    // latent features c + s^i; the third view points away from the others
    let features = Tensor::new(3, 2, vec![1.0, 0.2, 0.9, 0.3, -0.8, 1.0])?;
    let identity = Tensor::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])?;
    let ctx = AttentionContext::new(
        features,
        Tensor::new(3, 3, fused)?,
        identity.clone(),
        identity.clone(),
        identity,
        ATTENTION_EPSILON,
    )?;

    let mut attended = Vec::new();
    for i in 0..3 {
        let w = attention_weights(&ctx, i)?;
        let e = attend_with_weights(&ctx, &w)?;
        println!("view {i} weights {:.3?} -> evidence {:.3?}", w, e.values());
        attended.push(e.to_opinion());
    }
    let (joint, alpha) = inter_view_aggregate(&attended, FoldPolicy::Mean)?;
    let (class, u) = predict(&joint);
    println!("attention: class {class}, u = {u:.3}, alpha = {alpha:.3?}");

    let uniform = [1.0 / 3.0; 3];
    let flat: Vec<_> = (0..3)
        .map(|_| attend_with_weights(&ctx, &uniform).map(|e| e.to_opinion()))
        .collect::<Result<_, _>>()?;
    let (joint, _) = inter_view_aggregate(&flat, FoldPolicy::Mean)?;
    let (class, u) = predict(&joint);
    println!("uniform:   class {class}, u = {u:.3}");
    Ok(())
}
