use rayon::prelude::*;

use super::{BinaryMask, CategoricalRaster, GridSpec, RegionPolygon, MASK_NODATA};
use crate::error::Result;

/// Burn a polygon into a 0/1 mask on `grid` by pixel-center inclusion
/// (even-odd rule, holes subtract). The output has no nodata pixels.
pub fn rasterize_polygon(poly: &RegionPolygon, grid: &GridSpec) -> Result<BinaryMask> {
    grid.validate()?;
    let edges: Vec<((f64, f64), (f64, f64))> = poly
        .rings()
        .iter()
        .flat_map(|ring| {
            let n = ring.len();
            (0..n).map(move |i| (ring[i], ring[(i + n - 1) % n]))
        })
        .collect();

    let mut out = vec![0i32; grid.len()];
    out.par_chunks_mut(grid.width)
        .enumerate()
        .for_each(|(r, row)| {
            let y = grid.pixel_center(0, r).1;
            let mut xs: Vec<f64> = edges
                .iter()
                .filter(|((_, y0), (_, y1))| (*y0 > y) != (*y1 > y))
                .map(|((x0, y0), (x1, y1))| x0 + (y - y0) * (x1 - x0) / (y1 - y0))
                .collect();
            xs.sort_by(f64::total_cmp);
            // a center at px is inside iff an odd number of crossings lie strictly
            // right of it, i.e. px in [xs[2k], xs[2k+1])
            for span in xs.chunks_exact(2) {
                let first = ((span[0] - grid.origin_x) / grid.pixel_w - 0.5).ceil() - 1.0;
                let mut c = first.max(0.0) as usize;
                while c < grid.width {
                    let cx = grid.pixel_center(c, r).0;
                    if cx >= span[1] {
                        break;
                    }
                    if cx >= span[0] {
                        row[c] ^= 1;
                    }
                    c += 1;
                }
            }
        });
    Ok(BinaryMask::from_raster_unchecked(CategoricalRaster::new(
        grid.clone(),
        out,
        MASK_NODATA,
    )?))
}

/// Set pixels outside `region` (region = 0) to the raster's nodata code.
/// Region nodata also yields nodata.
pub fn clip(raster: &CategoricalRaster, region: &BinaryMask) -> Result<CategoricalRaster> {
    raster.grid().ensure_coregistered(region.grid())?;
    let nodata = raster.nodata();
    let values = raster
        .values()
        .par_iter()
        .zip(region.values().par_iter())
        .map(|(&v, &m)| if m == 1 { v } else { nodata })
        .collect();
    CategoricalRaster::new(raster.grid().clone(), values, nodata)
}

pub fn clip_mask(mask: &BinaryMask, region: &BinaryMask) -> Result<BinaryMask> {
    Ok(BinaryMask::from_raster_unchecked(clip(mask.as_raster(), region)?))
}
