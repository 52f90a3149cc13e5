//! Consolidate multi-interpreter labels, then draw new uniform and stratified
//! sample locations with a fixed seed.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use cropeval::grid::{CategoricalRaster, GridSpec, RegionPolygon};
use cropeval::reference::{consolidate, stratified_sample, uniform_sample, RawLabeledPoint};

fn main() -> cropeval::Result<()> {
    let day = |m, d| NaiveDate::from_ymd_opt(2019, m, d).unwrap();
    let raw: Vec<RawLabeledPoint> = [vec![1, 1], vec![1, 0], vec![0, 0, 0], vec![1]]
        .into_iter()
        .enumerate()
        .map(|(i, labels)| RawLabeledPoint {
            x: i as f64,
            y: 0.0,
            labels,
            country: "Example".into(),
            validity_start: day(4, 1),
            validity_end: NaiveDate::from_ymd_opt(2020, 3, 31).unwrap(),
        })
        .collect();
    let ds = consolidate(&raw)?;
    let c = ds.counts();
    println!("kept {} of {} points ({} crop, {} non-crop)", c.total, raw.len(), c.crop, c.non_crop);

    let region = RegionPolygon::rectangle(0.0, 0.0, 1000.0, 500.0)?;
    for (x, y) in uniform_sample(&region, 3, 42)? {
        println!("uniform    ({x:.1}, {y:.1})");
    }

    let grid = GridSpec::new(0.0, 40.0, 10.0, 10.0, 4, 4, "")?;
    let strata = CategoricalRaster::new(grid, (0..16).map(|i| 1 + (i % 4 >= 2) as i32).collect(), 0)?;
    for (x, y, s) in stratified_sample(&strata, &BTreeMap::from([(1, 2), (2, 1)]), 42)? {
        println!("stratum {s}  ({x}, {y})");
    }
    Ok(())
}
