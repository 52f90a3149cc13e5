//! Georeferenced rasters and the pixel geometry shared by every other module.
//!
//! Pixel membership is always decided by the pixel center: a pixel belongs to a
//! polygon, a target cell or a sampling stratum iff its center does. Point lookup
//! uses half-open pixel footprints, so a point on a shared edge belongs to the
//! pixel to its right (columns) or below it (rows).

mod geojson;
mod geotiff;
mod rasterize;
mod resample;

use std::collections::BTreeSet;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::geojson::{parse_geojson_regions, read_geojson_region, read_geojson_regions, NamedRegion};
pub use self::geotiff::{read_geotiff, write_geotiff};
pub use self::rasterize::{clip, clip_mask, rasterize_polygon};
pub use self::resample::{resample_mask, resample_mode, resample_nearest};

/// Nodata code used for masks produced by this crate.
pub const MASK_NODATA: i32 = 255;

/// Placement and size of a north-up raster grid.
///
/// `origin_x`/`origin_y` are the outer (top-left) corner of pixel (0, 0).
/// `pixel_h` is stored positive; rows increase downward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_w: f64,
    pub pixel_h: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub crs_id: String,
}

impl GridSpec {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        pixel_w: f64,
        pixel_h: f64,
        width: usize,
        height: usize,
        crs_id: impl Into<String>,
    ) -> Result<Self> {
        let grid = GridSpec {
            origin_x,
            origin_y,
            pixel_w,
            pixel_h,
            width,
            height,
            crs_id: crs_id.into(),
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_w > 0.0 && self.pixel_h > 0.0) {
            return Err(Error::invalid(format!(
                "pixel size must be positive, got {}x{}",
                self.pixel_w, self.pixel_h
            )));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!(
                "grid must have at least one pixel, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_area(&self) -> f64 {
        self.pixel_w * self.pixel_h
    }

    /// Map coordinates of the center of pixel (`col`, `row`).
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_w,
            self.origin_y - (row as f64 + 0.5) * self.pixel_h,
        )
    }

    /// Column containing map x, if inside the extent.
    pub fn col_of(&self, x: f64) -> Option<usize> {
        let f = ((x - self.origin_x) / self.pixel_w).floor();
        (f >= 0.0 && f < self.width as f64).then_some(f as usize)
    }

    /// Row containing map y, if inside the extent.
    pub fn row_of(&self, y: f64) -> Option<usize> {
        let f = ((self.origin_y - y) / self.pixel_h).floor();
        (f >= 0.0 && f < self.height as f64).then_some(f as usize)
    }

    /// Pixel (`col`, `row`) containing the map point, if any.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        Some((self.col_of(x)?, self.row_of(y)?))
    }

    /// `(xmin, ymin, xmax, ymax)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y - self.height as f64 * self.pixel_h,
            self.origin_x + self.width as f64 * self.pixel_w,
            self.origin_y,
        )
    }

    pub fn is_coregistered(&self, other: &GridSpec) -> bool {
        self == other
    }

    pub fn ensure_coregistered(&self, other: &GridSpec) -> Result<()> {
        if self.is_coregistered(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{}x{} @ ({}, {}) px {}x{} [{}] vs {}x{} @ ({}, {}) px {}x{} [{}]",
                self.width,
                self.height,
                self.origin_x,
                self.origin_y,
                self.pixel_w,
                self.pixel_h,
                self.crs_id,
                other.width,
                other.height,
                other.origin_x,
                other.origin_y,
                other.pixel_w,
                other.pixel_h,
                other.crs_id
            )))
        }
    }

    pub fn ensure_same_crs(&self, other: &GridSpec) -> Result<()> {
        if self.crs_id == other.crs_id {
            Ok(())
        } else {
            Err(Error::CrsMismatch {
                left: self.crs_id.clone(),
                right: other.crs_id.clone(),
            })
        }
    }
}

/// A grid of integer class codes with a nodata sentinel.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalRaster {
    grid: GridSpec,
    values: Vec<i32>,
    nodata: i32,
}

impl CategoricalRaster {
    pub fn new(grid: GridSpec, values: Vec<i32>, nodata: i32) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "raster has {} values but grid is {}x{}",
                values.len(),
                grid.width,
                grid.height
            )));
        }
        Ok(CategoricalRaster {
            grid,
            values,
            nodata,
        })
    }

    pub fn filled(grid: GridSpec, value: i32, nodata: i32) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![value; n], nodata)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn nodata(&self) -> i32 {
        self.nodata
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn get(&self, col: usize, row: usize) -> i32 {
        self.values[row * self.grid.width + col]
    }

    /// Value of the pixel containing the map point; `None` outside the extent.
    pub fn sample(&self, x: f64, y: f64) -> Option<i32> {
        self.grid.locate(x, y).map(|(c, r)| self.get(c, r))
    }

    pub fn is_nodata(&self, v: i32) -> bool {
        v == self.nodata
    }

    pub fn row(&self, row: usize) -> &[i32] {
        let w = self.grid.width;
        &self.values[row * w..(row + 1) * w]
    }

    /// Sorted set of non-nodata codes present.
    pub fn classes(&self) -> BTreeSet<i32> {
        self.values
            .iter()
            .copied()
            .filter(|&v| v != self.nodata)
            .collect()
    }

    pub fn into_values(self) -> Vec<i32> {
        self.values
    }

    /// Replace the grid's CRS label without touching pixels.
    pub fn with_crs(mut self, crs_id: impl Into<String>) -> Self {
        self.grid.crs_id = crs_id.into();
        self
    }
}

/// A raster whose pixels are 0 (non-crop), 1 (crop) or nodata.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask(CategoricalRaster);

impl BinaryMask {
    pub fn from_raster(raster: CategoricalRaster) -> Result<Self> {
        let nodata = raster.nodata;
        if nodata == 0 || nodata == 1 {
            return Err(Error::invalid("mask nodata code must not be 0 or 1"));
        }
        if let Some(bad) = raster
            .values
            .iter()
            .find(|&&v| v != 0 && v != 1 && v != nodata)
        {
            return Err(Error::invalid(format!(
                "mask pixel value {bad} is not 0, 1 or nodata ({nodata})"
            )));
        }
        Ok(BinaryMask(raster))
    }

    pub fn new(grid: GridSpec, values: Vec<i32>, nodata: i32) -> Result<Self> {
        Self::from_raster(CategoricalRaster::new(grid, values, nodata)?)
    }

    /// Build from booleans; no nodata pixels.
    pub fn from_bools(grid: GridSpec, crop: &[bool]) -> Result<Self> {
        let values = crop.iter().map(|&b| b as i32).collect();
        Self::new(grid, values, MASK_NODATA)
    }

    // Callers guarantee the {0, 1, nodata} invariant.
    pub(crate) fn from_raster_unchecked(raster: CategoricalRaster) -> Self {
        debug_assert!(raster
            .values
            .iter()
            .all(|&v| v == 0 || v == 1 || v == raster.nodata));
        BinaryMask(raster)
    }

    pub fn as_raster(&self) -> &CategoricalRaster {
        &self.0
    }

    pub fn into_raster(self) -> CategoricalRaster {
        self.0
    }

    /// Fraction of valid pixels that are crop; `None` when no pixel is valid.
    pub fn crop_fraction(&self) -> Option<f64> {
        let (mut crop, mut valid) = (0usize, 0usize);
        for &v in self.0.values() {
            if v != self.0.nodata {
                valid += 1;
                crop += (v == 1) as usize;
            }
        }
        (valid > 0).then(|| crop as f64 / valid as f64)
    }
}

impl Deref for BinaryMask {
    type Target = CategoricalRaster;

    fn deref(&self) -> &CategoricalRaster {
        &self.0
    }
}

/// Polygon with optional holes, in the map units of the grids it is used with.
/// Membership follows the even-odd rule over all rings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPolygon {
    rings: Vec<Vec<(f64, f64)>>,
}

impl RegionPolygon {
    pub fn new(rings: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::invalid("polygon has no rings"));
        }
        for (i, ring) in rings.iter().enumerate() {
            if ring.len() < 3 {
                return Err(Error::invalid(format!(
                    "ring {i} has {} vertices, need at least 3",
                    ring.len()
                )));
            }
            if ring.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(Error::invalid(format!("ring {i} has non-finite vertices")));
            }
        }
        Ok(RegionPolygon { rings })
    }

    /// Axis-aligned rectangle.
    pub fn rectangle(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        Self::new(vec![vec![(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)]])
    }

    pub fn rings(&self) -> &[Vec<(f64, f64)>] {
        &self.rings
    }

    /// Even-odd point-in-polygon test (ray cast toward +x).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            let n = ring.len();
            let mut j = n - 1;
            for i in 0..n {
                let (xi, yi) = ring[i];
                let (xj, yj) = ring[j];
                if (yi > y) != (yj > y) {
                    let x_cross = xi + (y - yi) * (xj - xi) / (yj - yi);
                    if x < x_cross {
                        inside = !inside;
                    }
                }
                j = i;
            }
        }
        inside
    }

    /// `(xmin, ymin, xmax, ymax)` over all vertices.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in self.rings.iter().flatten() {
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
        }
        b
    }

    /// Sum of the absolute ring areas. Zero means the polygon is degenerate.
    pub fn ring_area_sum(&self) -> f64 {
        self.rings
            .iter()
            .map(|ring| {
                let n = ring.len();
                let twice: f64 = (0..n)
                    .map(|i| {
                        let (x0, y0) = ring[i];
                        let (x1, y1) = ring[(i + 1) % n];
                        x0 * y1 - x1 * y0
                    })
                    .sum();
                twice.abs() / 2.0
            })
            .sum()
    }

    /// Merge several polygons into one even-odd region.
    pub fn union_disjoint(polys: impl IntoIterator<Item = RegionPolygon>) -> Result<Self> {
        let rings: Vec<_> = polys.into_iter().flat_map(|p| p.rings).collect();
        Self::new(rings)
    }
}
