//! Regenerates the synthetic fixtures shipped under `fixtures/`.
//!
//! Usage: `cargo run -p bbs-core --example make_fixtures [-- <fixtures dir>]`

use std::path::PathBuf;

use bbs_core::synth::write_fixtures;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    write_fixtures(&root)?;
    println!("wrote fixtures to {}", root.display());
    Ok(())
}
