//! Misalign one view on half the test set and read the mean pairwise
//! conflict between views.
//!
//! cargo run --example conflict_localization [epochs]

use trustmv::data::{inject_conflict, split, standardize, synthesize, ConflictSpec, SynthSpec};
use trustmv::pipeline::{evaluate, train, ForwardOptions, TrainConfig};

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
    let opts = ForwardOptions::from(&cfg);

    for view in [None, Some(0), Some(2)] {
        let (data, mask) = match view {
            Some(v) => inject_conflict(
                &test,
                &ConflictSpec {
                    fraction: 0.5,
                    view: Some(v),
                    seed: 1,
                },
            )?,
            None => (
                test.clone(),
                trustmv::data::CorruptionMask::clean(test.len()),
            ),
        };
        let report = evaluate(&model, &data, Some(&mask), opts)?;
        match view {
            Some(v) => println!("view {v} misaligned, accuracy {:.3}", report.accuracy),
            None => println!("clean, accuracy {:.3}", report.accuracy),
        }
        for row in &report.conflict_matrix {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.4}")).collect();
            println!("  {}", cells.join("  "));
        }
    }
    Ok(())
}
