//! Write a seeded two-country study area and print the config to run the CLI on.
//!
//!     cargo run --example synthetic_study_area -- /tmp/study
//!     cargo run --bin cropeval -- assess --config /tmp/study/config.json

use cropeval::synthetic::{build_fixture, FixtureOptions};

fn main() -> cropeval::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "study_area".into());
    let fx = build_fixture(&dir, &FixtureOptions::default())?;
    for (country, truth) in &fx.truth {
        println!("{country}: {:.1}% crop in the truth field", 100.0 * truth.crop_fraction().unwrap_or(0.0));
    }
    println!("config: {}", fx.config_path.display());
    Ok(())
}
