//! Seeded synthetic study areas: a truth field, product rasters in their
//! native legends, reference points and a ready-to-run config.
//!
//! Used by the examples and tests; nothing here is needed for real data.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::grid::{write_geotiff, BinaryMask, CategoricalRaster, GridSpec, RegionPolygon};
use crate::productmap::{default_registry, BinarizeRule, ProductSpec};
use crate::reference::{uniform_sample, write_reference_csv, ReferenceDataset, ReferencePoint};

pub const FIXTURE_CRS: &str = "EPSG:32636";
/// Stored index value = index × this.
pub const INDEX_SCALE: f64 = 10_000.0;
const TRUTH_RES: f64 = 10.0;
const INDEX_RES: f64 = 50.0;
const PRODUCT_NODATA: i32 = 255;

#[derive(Clone, Debug)]
pub struct FixtureOptions {
    pub countries: Vec<String>,
    /// Truth grid side in 10 m pixels.
    pub size: usize,
    /// Label flip probability per product pixel, by product name.
    pub noise: BTreeMap<String, f64>,
    pub default_noise: f64,
    /// Products whose labels are flipped wholesale.
    pub inverted: BTreeSet<String>,
    /// Write products at their registry resolutions; otherwise all at 10 m.
    pub native_resolution: bool,
    pub reference_points: usize,
    /// Also write index frames, regions, strata and their config entries.
    pub extras: bool,
    pub seed: u64,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions {
            countries: vec!["Kenya".into(), "Mali".into()],
            size: 200,
            noise: BTreeMap::new(),
            default_noise: 0.1,
            inverted: BTreeSet::new(),
            native_resolution: true,
            reference_points: 300,
            extras: true,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub root: PathBuf,
    pub config_path: PathBuf,
    pub truth: BTreeMap<String, BinaryMask>,
    pub validity: (NaiveDate, NaiveDate),
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid fixture date")
}

/// Rectangular fields scattered over the grid, roughly 40% crop.
fn truth_field(grid: &GridSpec, rng: &mut ChaCha20Rng) -> Result<BinaryMask> {
    let (w, h) = (grid.width, grid.height);
    let mut crop = vec![false; w * h];
    let target = (w * h) * 2 / 5;
    let mut covered = 0;
    while covered < target {
        let fw = rng.random_range(3..=(w / 4).max(4));
        let fh = rng.random_range(3..=(h / 4).max(4));
        let c0 = rng.random_range(0..w);
        let r0 = rng.random_range(0..h);
        for r in r0..(r0 + fh).min(h) {
            for c in c0..(c0 + fw).min(w) {
                if !crop[r * w + c] {
                    crop[r * w + c] = true;
                    covered += 1;
                }
            }
        }
    }
    BinaryMask::from_bools(grid.clone(), &crop)
}

/// Native codes (crop, non-crop) that the product's rule maps to 1 and 0.
fn legend_codes(rule: &BinarizeRule) -> (i32, i32) {
    match rule {
        BinarizeRule::ClassSet { classes } => {
            let crop = *classes.iter().next().expect("validated: non-empty");
            let other = (1..).find(|c| !classes.contains(c) && *c != PRODUCT_NODATA).expect("free code");
            (crop, other)
        }
        BinarizeRule::ThresholdGt { threshold, scale } => {
            let t = threshold * scale;
            (t.floor() as i32 + 1, t.floor() as i32)
        }
        BinarizeRule::FractionRange { range: [lo, hi] } => {
            (((lo + hi) / 2.0).round() as i32, (lo.floor() as i32 - 1).max(0))
        }
    }
}

/// Majority of `truth` over each product cell (ties crop), sampled at the
/// product cell center footprint.
fn aggregate_truth(truth: &BinaryMask, grid: &GridSpec) -> Vec<bool> {
    let t = truth.grid();
    let k = (grid.pixel_w / t.pixel_w).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(grid.len());
    for r in 0..grid.height {
        for c in 0..grid.width {
            let (mut crop, mut all) = (0, 0);
            for rr in r * k..((r + 1) * k).min(t.height) {
                for cc in c * k..((c + 1) * k).min(t.width) {
                    all += 1;
                    crop += (truth.get(cc, rr) == 1) as usize;
                }
            }
            out.push(all > 0 && 2 * crop >= all);
        }
    }
    out
}

/// A product raster derived from `truth` with flipped labels.
fn product_raster(
    spec: &ProductSpec,
    truth: &BinaryMask,
    grid: &GridSpec,
    noise: f64,
    inverted: bool,
    rng: &mut ChaCha20Rng,
) -> Result<CategoricalRaster> {
    let (crop, other) = legend_codes(&spec.rule);
    let values = aggregate_truth(truth, grid)
        .into_iter()
        .map(|t| {
            let label = t ^ inverted ^ rng.random_bool(noise);
            if label { crop } else { other }
        })
        .collect();
    CategoricalRaster::new(grid.clone(), values, PRODUCT_NODATA)
}

fn product_grid(truth: &GridSpec, res: f64) -> Result<GridSpec> {
    let k = (res / TRUTH_RES).round().max(1.0);
    let n = |px: usize| ((px as f64 / k).ceil() as usize).max(1);
    GridSpec::new(
        truth.origin_x,
        truth.origin_y,
        k * TRUTH_RES,
        k * TRUTH_RES,
        n(truth.width),
        n(truth.height),
        truth.crs_id.clone(),
    )
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ring_json(p: &RegionPolygon) -> serde_json::Value {
    json!(p.rings().iter().map(|ring| {
        let mut pts: Vec<[f64; 2]> = ring.iter().map(|&(x, y)| [x, y]).collect();
        pts.push(pts[0]);
        pts
    }).collect::<Vec<_>>())
}

fn write_regions(path: &Path, regions: &[(&str, &RegionPolygon)]) -> Result<()> {
    let features: Vec<_> = regions
        .iter()
        .map(|(name, p)| {
            json!({
                "type": "Feature",
                "properties": {"name": name},
                "geometry": {"type": "Polygon", "coordinates": ring_json(p)},
            })
        })
        .collect();
    write_json(path, &json!({"type": "FeatureCollection", "features": features}))
}

/// Seasonal index curve: crops green up mid-year, other cover stays flat.
fn index_value(crop: bool, day_of_year: u32, jitter: f64) -> i32 {
    let season = (-((day_of_year as f64 - 200.0) / 45.0).powi(2)).exp();
    let v = if crop { 0.2 + 0.55 * season } else { 0.3 + 0.05 * season };
    ((v + jitter) * INDEX_SCALE).round() as i32
}

/// Write a complete study area under `dir` and return where everything is.
pub fn build_fixture(dir: impl AsRef<Path>, opts: &FixtureOptions) -> Result<Fixture> {
    let root = dir.as_ref().to_path_buf();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    if opts.countries.is_empty() || opts.size < 20 {
        return Err(Error::invalid("fixture needs a country and at least 20 pixels per side"));
    }
    let validity = (date(2019, 1, 1), date(2019, 12, 31));
    let registry = default_registry();
    let mut truth_by_country = BTreeMap::new();
    let mut country_cfgs = Vec::new();

    for (ci, country) in opts.countries.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(opts.seed.wrapping_mul(1_000_003).wrapping_add(ci as u64));
        let slug = crate::cli::commands::slug(country);
        let cdir = root.join(&slug);
        std::fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;

        let ox = 500_000.0 + 100_000.0 * ci as f64;
        let oy = 100_000.0 + opts.size as f64 * TRUTH_RES;
        let grid = GridSpec::new(ox, oy, TRUTH_RES, TRUTH_RES, opts.size, opts.size, FIXTURE_CRS)?;
        let truth = truth_field(&grid, &mut rng)?;
        let side = opts.size as f64 * TRUTH_RES;
        let inset = side * 0.05;
        let (xmin, ymin, xmax, ymax) = (ox + inset, oy - side + inset, ox + side - inset, oy - inset);
        let boundary = RegionPolygon::rectangle(xmin, ymin, xmax, ymax)?;
        write_regions(&cdir.join("boundary.geojson"), &[(country.as_str(), &boundary)])?;

        let coords = uniform_sample(&boundary, opts.reference_points, opts.seed.wrapping_add(ci as u64))?;
        let points = coords
            .into_iter()
            .map(|(x, y)| ReferencePoint { x, y, label: truth.sample(x, y).unwrap_or(0) as u8 })
            .collect();
        let ds = ReferenceDataset::new(country.clone(), validity.0, validity.1, points)?;
        write_reference_csv(&ds, cdir.join("reference.csv"))?;

        let mut maps = serde_json::Map::new();
        for spec in &registry {
            let noise = *opts.noise.get(&spec.name).unwrap_or(&opts.default_noise);
            let inverted = opts.inverted.contains(&spec.name);
            let res = if opts.native_resolution { spec.resolution_m } else { TRUTH_RES };
            let pgrid = product_grid(&grid, res)?;
            let file = |suffix: &str| format!("{}{suffix}.tif", crate::cli::commands::slug(&spec.name));
            if spec.composite {
                // one frame before the validity period that must be ignored
                let mut frames = Vec::new();
                for (i, d) in [date(2018, 6, 1), date(2019, 3, 1), date(2019, 6, 1), date(2019, 9, 1)].into_iter().enumerate() {
                    let out_of_period = i == 0;
                    let r = product_raster(spec, &truth, &pgrid, if out_of_period { 0.5 } else { noise }, inverted, &mut rng)?;
                    let name = file(&format!("_{}", d.format("%Y%m%d")));
                    write_geotiff(&r, cdir.join(&name))?;
                    frames.push(json!({"date": d, "path": format!("{slug}/{name}")}));
                }
                maps.insert(spec.name.clone(), json!({"frames": frames}));
            } else {
                let r = product_raster(spec, &truth, &pgrid, noise, inverted, &mut rng)?;
                write_geotiff(&r, cdir.join(file("")))?;
                let path = format!("{slug}/{}", file(""));
                if spec.years.len() > 1 {
                    let year = spec.year_for(validity.0.year());
                    maps.insert(spec.name.clone(), json!({"path": path, "year": year}));
                } else {
                    maps.insert(spec.name.clone(), json!(path));
                }
            }
        }

        let mut cfg = json!({
            "name": country,
            "boundary": format!("{slug}/boundary.geojson"),
            "reference": format!("{slug}/reference.csv"),
            "maps": maps,
            "grid": grid,
            "sample_size": 50,
        });

        if opts.extras {
            // index frames on a coarser grid
            let igrid = product_grid(&grid, INDEX_RES)?;
            let coarse_truth = aggregate_truth(&truth, &igrid);
            let mut manifest = String::from("date,path\n");
            let mut d = date(2019, 1, 15);
            while d.year() == 2019 {
                let values = coarse_truth
                    .iter()
                    .map(|&t| {
                        if rng.random_bool(0.02) {
                            -32768
                        } else {
                            index_value(t, d.ordinal(), rng.random_range(-0.02..0.02))
                        }
                    })
                    .collect();
                let frame = CategoricalRaster::new(igrid.clone(), values, -32768)?;
                let name = format!("ndvi_{}.tif", d.format("%Y%m%d"));
                write_geotiff(&frame, cdir.join(&name))?;
                manifest.push_str(&format!("{d},{name}\n"));
                d += Duration::days(32);
            }
            let mpath = cdir.join("ndvi_manifest.csv");
            std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;

            let ymid = (ymin + ymax) / 2.0;
            let north = RegionPolygon::rectangle(xmin, ymid, xmax, ymax)?;
            let south = RegionPolygon::rectangle(xmin, ymin, xmax, ymid)?;
            write_regions(&cdir.join("regions.geojson"), &[("North", &north), ("South", &south)])?;

            // two strata: truth crop (1) and everything else (2), on the index grid
            let strata = CategoricalRaster::new(
                igrid.clone(),
                coarse_truth.iter().map(|&t| if t { 1 } else { 2 }).collect(),
                0,
            )?;
            write_geotiff(&strata, cdir.join("strata.tif"))?;

            cfg["ndvi"] = json!({"manifest": format!("{slug}/ndvi_manifest.csv"), "scale": 1.0 / INDEX_SCALE, "nodata": -32768});
            cfg["regions"] = json!(format!("{slug}/regions.geojson"));
            cfg["strata"] = json!(format!("{slug}/strata.tif"));
            cfg["allocation"] = json!({"1": 20, "2": 20});
        }
        country_cfgs.push(cfg);
        truth_by_country.insert(country.clone(), truth);
    }

    let config_path = root.join("config.json");
    write_json(
        &config_path,
        &json!({"output_dir": "out", "seed": opts.seed, "countries": country_cfgs}),
    )?;
    Ok(Fixture { root, config_path, truth: truth_by_country, validity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::load_config;
    use crate::productmap::binarize;

    #[test]
    fn legend_codes_binarize_as_intended() {
        for spec in default_registry() {
            let (crop, other) = legend_codes(&spec.rule);
            assert!(spec.rule.is_crop(crop), "{}", spec.name);
            assert!(!spec.rule.is_crop(other), "{}", spec.name);
        }
    }

    #[test]
    fn fixture_config_validates_and_perfect_product_matches_truth() {
        let dir = tempfile::tempdir().unwrap();
        let opts = FixtureOptions {
            countries: vec!["Togo".into()],
            size: 40,
            default_noise: 0.0,
            native_resolution: false,
            extras: false,
            ..Default::default()
        };
        let fx = build_fixture(dir.path(), &opts).unwrap();
        let cfg = load_config(&fx.config_path).unwrap();
        assert_eq!(cfg.config.countries[0].maps.len(), 11);
        let dea = crate::grid::read_geotiff(dir.path().join("togo/dea.tif"), 255).unwrap();
        let mask = binarize(&dea, &default_registry()[0].rule).unwrap();
        assert_eq!(mask.values(), fx.truth["Togo"].values());
    }
}
