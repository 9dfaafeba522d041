//! Compare uncertainty of clean and noisy test instances, and of the joint
//! opinion against the per-view opinions it was built from.
//!
//! cargo run --example uncertainty_shift [epochs] [sigma]

use trustmv::data::{
    inject_noise, split, standardize, synthesize, NoiseSpec, SynthSpec, ViewSelection,
};
use trustmv::pipeline::{evaluate, mann_whitney_less, median, train, ForwardOptions, TrainConfig};

fn main() -> trustmv::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let sigma = args.next().and_then(|a| a.parse().ok()).unwrap_or(10.0);
    let ds = synthesize(&SynthSpec::default())?;
    let parts = split(&ds, 0.8, 0)?;
    let (train_ds, test, _) = standardize(&parts.train, &parts.test)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let model = train(&train_ds, &cfg)?.model;

    let spec = NoiseSpec {
        fraction: 0.5,
        sigma,
        views: ViewSelection::RandomHalf,
        seed: 7,
    };
    let (noisy, mask) = inject_noise(&test, &spec)?;
    let r = evaluate(&model, &noisy, Some(&mask), ForwardOptions::from(&cfg))?;
    println!(
        "accuracy clean {:.3}, corrupted {:.3}",
        r.clean_accuracy.unwrap_or(f64::NAN),
        r.corrupted_accuracy.unwrap_or(f64::NAN)
    );
    println!(
        "median joint u: clean {:.4}, corrupted {:.4}",
        median(&r.joint_uncertainty_where(false)),
        median(&r.joint_uncertainty_where(true))
    );
    println!(
        "median per-view u: clean {:.4}, corrupted {:.4}",
        median(&r.local_uncertainty_where(false)),
        median(&r.local_uncertainty_where(true))
    );
    let local: Vec<f64> = r.local_uncertainty.iter().flatten().copied().collect();
    let test = mann_whitney_less(&r.joint_uncertainty, &local)?;
    println!(
        "joint below per-view: z = {:.2}, one-sided p = {:.2e}",
        test.z, test.p_value
    );

    let h = &r.histograms;
    println!("{:>12}  {:>8}  {:>8}", "bin", "clean", "noisy");
    for b in 0..h.overall_clean.len() {
        println!(
            "[{:.2}, {:.2})  {:>8.3}  {:>8.3}",
            h.edges[b],
            h.edges[b + 1],
            h.overall_clean[b],
            h.overall_corrupted[b]
        );
    }
    Ok(())
}
