//! Mean index value under a crop mask, per date, inside a region. The mask is
//! aggregated by majority onto the coarser index grid first.

use chrono::NaiveDate;
use cropeval::analysis::masked_timeseries;
use cropeval::grid::{resample_mask, BinaryMask, CategoricalRaster, GridSpec};

fn main() -> cropeval::Result<()> {
    let fine = GridSpec::new(0.0, 40.0, 10.0, 10.0, 4, 4, "")?;
    let coarse = GridSpec::new(0.0, 40.0, 20.0, 20.0, 2, 2, "")?;
    // crop in the top half at 10 m
    let mask = BinaryMask::from_bools(fine, &(0..16).map(|i| i < 8).collect::<Vec<_>>())?;
    let mask = resample_mask(&mask, &coarse)?;
    let region = BinaryMask::from_bools(coarse.clone(), &[true; 4])?;

    let frames: Vec<(NaiveDate, CategoricalRaster)> = [(3, [2100, 2300, 3000, 3100]), (7, [6200, 6800, 3200, -1]), (10, [3500, 3300, 3000, 2900])]
        .into_iter()
        .map(|(m, v)| Ok((NaiveDate::from_ymd_opt(2019, m, 1).unwrap(), CategoricalRaster::new(coarse.clone(), v.to_vec(), -1)?)))
        .collect::<cropeval::Result<_>>()?;

    let ts = masked_timeseries(&frames, &mask, &region, "example", "whole area")?.scaled(1e-4);
    for e in &ts.entries {
        println!("{}  mean {:?} over {} pixels", e.date, e.mean, e.count);
    }
    Ok(())
}
