//! Writes the toy-world fixture files.
//!
//! Usage: `cargo run -p hubtext-core --example make_fixtures -- <out-dir>`

use hubtext_core::toyworld::{ToyWorld, ToyWorldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "fixtures/toy".into());
    let world = ToyWorld::generate(ToyWorldConfig::default())?;
    world.write_fixtures(&out)?;
    println!(
        "wrote fixtures to {out} (planted hub: {})",
        world.planted_hub_text()
    );
    Ok(())
}
