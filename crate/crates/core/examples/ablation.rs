//! Train the full model and each ablated variant with the same seed.
//!
//! cargo run --example ablation [epochs]

use trustmv::data::{split, standardize, synthesize, SynthSpec};
use trustmv::pipeline::{ablate, TrainConfig, Variant};

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

    println!(
        "{:<18} {:>8} {:>8} {:>10}",
        "variant", "accuracy", "delta", "final loss"
    );
    for row in ablate(&train_ds, &test, &cfg, &Variant::ABLATIONS)? {
        println!(
            "{:<18} {:>8.3} {:>+8.3} {:>10.4}",
            row.variant, row.accuracy, row.delta, row.final_loss
        );
    }
    Ok(())
}
