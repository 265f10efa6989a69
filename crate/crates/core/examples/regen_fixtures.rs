//! Writes the committed fixture pools from their specs.
//!
//! `cargo run -p dkbo-core --example regen_fixtures [dir]`

use std::path::PathBuf;

use dkbo::store::{save_pool, PoolFormat};
use dkbo::synth::{generate, SyntheticSpec};

fn main() -> dkbo::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    std::fs::create_dir_all(&dir)?;
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let spec: SyntheticSpec = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            let out = path.with_extension("bin");
            save_pool(&generate(&spec)?, &out, PoolFormat::Binary)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}
