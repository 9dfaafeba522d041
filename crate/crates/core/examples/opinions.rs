//! Evidence, opinions, aggregation and conflict on hand-picked vectors.
//!
//! cargo run --example opinions

use trustmv::opinions::{
    aggregate_all, aggregate_pair, conflict_degree, projected_probability, BaseRate,
    EvidenceVector, Opinion,
};

fn show(label: &str, w: &Opinion) {
    let b: Vec<String> = w.beliefs().iter().map(|x| format!("{x:.3}")).collect();
    println!(
        "{label:<28} b = [{}]  u = {:.3}",
        b.join(", "),
        w.uncertainty()
    );
}

fn main() -> trustmv::error::Result<()> {
    let confident = EvidenceVector::new(vec![19.0, 1.0, 1.0])?.to_opinion();
    let flat = EvidenceVector::new(vec![1.0, 1.0, 1.0])?.to_opinion();
    let vacuous = Opinion::vacuous(3)?;
    show("evidence (19, 1, 1)", &confident);
    show("evidence (1, 1, 1)", &flat);
    show("vacuous", &vacuous);

    // aggregation averages evidence, so a vacuous partner halves it
    show(
        "confident + vacuous",
        &aggregate_pair(&confident, &vacuous)?,
    );

    let a = EvidenceVector::new(vec![8.0, 0.0, 0.0])?.to_opinion();
    let b = EvidenceVector::new(vec![0.0, 8.0, 0.0])?.to_opinion();
    let c = EvidenceVector::new(vec![4.0, 4.0, 0.0])?.to_opinion();
    show(
        "joint of three views",
        &aggregate_all(&[a.clone(), b.clone(), c])?,
    );

    let rate = BaseRate::uniform(3);
    println!(
        "projected probability of (19, 1, 1): {:?}",
        projected_probability(&confident, &rate)
    );
    println!(
        "conflict between opposed views:      {:.4}",
        conflict_degree(&a, &b, &rate)?
    );
    println!(
        "conflict with a vacuous view:        {:.4}",
        conflict_degree(&a, &vacuous, &rate)?
    );
    Ok(())
}
