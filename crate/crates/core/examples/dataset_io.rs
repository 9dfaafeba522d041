//! Write a synthetic dataset to disk, read it back, and corrupt a copy.
//!
//! cargo run --example dataset_io [dir]

use std::path::PathBuf;

use trustmv::data::{
    inject_conflict, inject_noise, load_dataset, save_dataset, synthesize, ConflictSpec, NoiseSpec,
    SynthSpec, ViewSelection,
};

fn main() -> trustmv::error::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trustmv-demo"));
    let ds = synthesize(&SynthSpec {
        samples: 40,
        ..SynthSpec::default()
    })?;
    let manifest = save_dataset(&ds, &dir)?;
    println!("wrote {}", manifest.display());
    println!("{}", std::fs::read_to_string(&manifest).unwrap_or_default());

    let back = load_dataset(&manifest)?;
    println!(
        "reloaded {} instances, widths {:?}, identical: {}",
        back.len(),
        back.dims(),
        back == ds
    );

    let (_, noise) = inject_noise(
        &back,
        &NoiseSpec {
            fraction: 0.25,
            sigma: 5.0,
            views: ViewSelection::RandomHalf,
            seed: 1,
        },
    )?;
    println!(
        "noise touched {} instances:\n{}",
        noise.corrupted_count(),
        noise.to_tsv()
    );
    let (_, conflict) = inject_conflict(
        &back,
        &ConflictSpec {
            fraction: 0.1,
            view: Some(1),
            seed: 2,
        },
    )?;
    println!("conflict donors:\n{}", conflict.to_tsv());
    Ok(())
}
