//! Turn native product legends into crop masks with the bundled registry rules.

use cropeval::grid::{CategoricalRaster, GridSpec};
use cropeval::productmap::{binarize, default_registry};

fn main() -> cropeval::Result<()> {
    let grid = GridSpec::new(0.0, 30.0, 10.0, 10.0, 3, 3, "")?;
    // one raster per legend style: class codes, a probability, a crop percentage
    let samples = [
        ("WorldCover", vec![10, 40, 40, 30, 40, 80, 255, 40, 50]),
        ("GLAD", vec![0, 1, 1, 0, 0, 1, 255, 1, 0]),
        ("ASAP", vec![0, 3, 5, 50, 95, 96, 100, 255, 20]),
    ];
    let registry = default_registry();
    for (name, values) in samples {
        let spec = registry.iter().find(|s| s.name == name).expect("bundled product");
        let mask = binarize(&CategoricalRaster::new(grid.clone(), values.clone(), 255)?, &spec.rule)?;
        println!("{name:>10} {:?}\n{:>10} {:?}  crop fraction {:.2}", values, "->", mask.values(), mask.crop_fraction().unwrap_or(0.0));
    }
    Ok(())
}
