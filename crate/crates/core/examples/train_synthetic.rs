//! Train on the default synthetic dataset and evaluate on the held-out 20%.
//!
//! cargo run --example train_synthetic [epochs]

use std::time::Instant;

use trustmv::data::{split, standardize, synthesize, SynthSpec};
use trustmv::pipeline::{evaluate, train, ForwardOptions, TrainConfig};

fn main() -> trustmv::error::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(200);
    let ds = synthesize(&SynthSpec::default())?;
    let parts = split(&ds, 0.8, 0)?;
    let (train_ds, test, _) = standardize(&parts.train, &parts.test)?;
    println!(
        "{} train / {} test, view widths {:?}",
        train_ds.len(),
        test.len(),
        train_ds.dims()
    );

    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(&train_ds, &cfg)?;
    println!(
        "trained {} epochs in {:.1?}",
        out.log.len(),
        start.elapsed()
    );
    for row in out.log.iter().step_by((epochs / 8).max(1)) {
        println!(
            "epoch {:>3}  overall {:.4}  h1 {:.4}  h2 {:.4}  adv {:.4}  disc {:.4}",
            row.epoch, row.overall, row.h1, row.h2, row.adv, row.discriminator
        );
    }

    let report = evaluate(&out.model, &test, None, ForwardOptions::from(&cfg))?;
    println!(
        "test accuracy {:.4}, mean uncertainty {:.4}",
        report.accuracy,
        report.mean_joint_uncertainty()
    );
    Ok(())
}
