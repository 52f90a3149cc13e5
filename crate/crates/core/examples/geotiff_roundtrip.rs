//! Write a small categorical raster as GeoTIFF, read it back, and move it onto
//! a coarser grid: nearest neighbour for the legend, majority for the crop mask.

use cropeval::productmap::{binarize, BinarizeRule};
use cropeval::grid::{read_geotiff, resample_mode, resample_nearest, write_geotiff, CategoricalRaster, GridSpec};

fn main() -> cropeval::Result<()> {
    let grid = GridSpec::new(500_000.0, 9_000_100.0, 10.0, 10.0, 4, 4, "EPSG:32636")?;
    #[rustfmt::skip]
    let values = vec![
        40, 40, 10, 10,
        40, 40, 10, 10,
        40, 50, 50, 255,
        10, 50, 255, 255,
    ];
    let raster = CategoricalRaster::new(grid, values, 255)?;

    let path = std::env::temp_dir().join("cropeval_roundtrip.tif");
    write_geotiff(&raster, &path)?;
    let back = read_geotiff(&path, -1)?;
    assert_eq!(back, raster);
    println!("read {}x{} raster, crs {}, nodata {}", back.width(), back.height(), back.grid().crs_id, back.nodata());

    let coarse = GridSpec::new(500_000.0, 9_000_100.0, 20.0, 20.0, 2, 2, "EPSG:32636")?;
    println!("nearest 20 m legend: {:?}", resample_nearest(&back, &coarse)?.values());
    let crop = binarize(&back, &BinarizeRule::ClassSet { classes: [40].into() })?;
    println!("modal 20 m crop mask: {:?}", resample_mode(&crop, &coarse)?.values());
    Ok(())
}
