use rayon::prelude::*;

use super::{BinaryMask, CategoricalRaster, GridSpec};
use crate::error::{Error, Result};

/// Nearest-neighbour resampling onto `target`.
///
/// Each target pixel takes the value of the source pixel containing its center
/// (on a regular grid that is the source pixel with the nearest center). Target
/// centers outside the source extent become nodata.
pub fn resample_nearest(src: &CategoricalRaster, target: &GridSpec) -> Result<CategoricalRaster> {
    let sg = src.grid();
    sg.ensure_same_crs(target)?;
    target.validate()?;

    let cols: Vec<Option<usize>> = (0..target.width)
        .map(|c| sg.col_of(target.pixel_center(c, 0).0))
        .collect();
    let nodata = src.nodata();
    let mut out = vec![nodata; target.len()];
    out.par_chunks_mut(target.width)
        .enumerate()
        .for_each(|(r, row)| {
            let Some(sr) = sg.row_of(target.pixel_center(0, r).1) else {
                return;
            };
            let src_row = src.row(sr);
            for (dst, sc) in row.iter_mut().zip(&cols) {
                if let Some(sc) = sc {
                    *dst = src_row[*sc];
                }
            }
        });
    CategoricalRaster::new(target.clone(), out, nodata)
}

/// Modal aggregation of a mask onto a coarser grid.
///
/// A target pixel takes the majority class of the valid source pixels whose
/// centers fall inside it; ties go to 0 (non-crop). Cells that contain no valid
/// source center are nodata.
pub fn resample_mode(src: &BinaryMask, target: &GridSpec) -> Result<BinaryMask> {
    let sg = src.grid();
    sg.ensure_same_crs(target)?;
    target.validate()?;
    if target.pixel_area() < sg.pixel_area() {
        return Err(Error::invalid(format!(
            "mode resampling needs a target pixel at least as large as the source ({} < {})",
            target.pixel_area(),
            sg.pixel_area()
        )));
    }

    let col_map: Vec<Option<usize>> = (0..sg.width)
        .map(|c| target.col_of(sg.pixel_center(c, 0).0))
        .collect();
    let row_map: Vec<Option<usize>> = (0..sg.height)
        .map(|r| target.row_of(sg.pixel_center(0, r).1))
        .collect();

    let nodata = src.nodata();
    let mut out = vec![nodata; target.len()];
    out.par_chunks_mut(target.width)
        .enumerate()
        .for_each(|(tr, row)| {
            // (zeros, ones) per target column
            let mut counts = vec![(0u32, 0u32); target.width];
            for (sr, _) in row_map.iter().enumerate().filter(|(_, m)| **m == Some(tr)) {
                for (v, tc) in src.row(sr).iter().zip(&col_map) {
                    let Some(tc) = tc else { continue };
                    match *v {
                        0 => counts[*tc].0 += 1,
                        1 => counts[*tc].1 += 1,
                        _ => {}
                    }
                }
            }
            for (dst, (zeros, ones)) in row.iter_mut().zip(counts) {
                if zeros + ones > 0 {
                    *dst = (ones > zeros) as i32;
                }
            }
        });
    Ok(BinaryMask::from_raster_unchecked(CategoricalRaster::new(
        target.clone(),
        out,
        nodata,
    )?))
}

/// Bring a mask onto `target`: modal aggregation when the target is coarser,
/// nearest neighbour otherwise.
pub fn resample_mask(src: &BinaryMask, target: &GridSpec) -> Result<BinaryMask> {
    if src.grid() == target {
        return Ok(src.clone());
    }
    if target.pixel_area() >= src.grid().pixel_area() {
        resample_mode(src, target)
    } else {
        Ok(BinaryMask::from_raster_unchecked(resample_nearest(
            src.as_raster(),
            target,
        )?))
    }
}
