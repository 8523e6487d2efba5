//! Run the staged experiment pipeline from a TOML config and print the result
//! table. Defaults to the small smoke config next to this file.
//!
//!     cargo run --release --example pipeline -- examples/configs/smoke.toml

use std::path::PathBuf;

use deepim::harness::{ExperimentConfig, Pipeline};

fn main() -> deepim::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/smoke.toml")));
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(out) = std::env::args().nth(2) {
        cfg.out = out.into();
    }
    let pipeline = Pipeline::new(cfg)?.with_progress(|m| eprintln!("{m}"));
    let table = pipeline.run_all()?;
    print!("{}", table.to_text());
    println!("artifacts in {}", pipeline.workspace().root().display());
    Ok(())
}
