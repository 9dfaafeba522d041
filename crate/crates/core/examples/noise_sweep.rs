//! Accuracy and uncertainty as Gaussian noise of growing scale hits half the
//! views of every test instance.
//!
//! cargo run --example noise_sweep [epochs]

use trustmv::data::{split, standardize, synthesize, SynthSpec, ViewSelection};
use trustmv::pipeline::{run_noise_sweep, train, TrainConfig};

fn main() -> trustmv::error::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(200);
    let ds = synthesize(&SynthSpec::default())?;
    let parts = split(&ds, 0.8, 0)?;
    let (train_ds, test, _) = standardize(&parts.train, &parts.test)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let model = train(&train_ds, &cfg)?.model;

    let sigmas: Vec<f64> = (0..=8).map(|k| 10f64.powi(k)).collect();
    let sigmas: Vec<f64> = std::iter::once(0.0).chain(sigmas).collect();
    println!("{:>8}  {:>8}  {:>8}", "sigma", "accuracy", "mean u");
    for row in run_noise_sweep(
        &model,
        &cfg,
        &test,
        &sigmas,
        1.0,
        ViewSelection::RandomHalf,
        0,
    )? {
        println!(
            "{:>8.0e}  {:>8.3}  {:>8.4}",
            row.sigma, row.accuracy, row.mean_uncertainty
        );
    }
    Ok(())
}
