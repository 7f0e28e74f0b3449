//! Rewrites the bundled feeder files from their builders.
//!
//! cargo run -p voltzone --example regenerate_fixtures

use std::fs;
use std::path::Path;

fn main() -> std::io::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    fs::write(
        dir.join("feeder13.json"),
        voltzone::fixtures::build_feeder13().to_json() + "\n",
    )?;
    fs::write(
        dir.join("pv_feeder.json"),
        voltzone::fixtures::build_pv_feeder().to_json() + "\n",
    )?;
    Ok(())
}
