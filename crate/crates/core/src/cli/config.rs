use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::productmap::{find_product, load_product_registry, default_registry, ProductSpec};

/// Top-level run configuration. Relative paths resolve against the
/// directory holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Product registry; the bundled one when absent.
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub countries: Vec<CountryConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountryConfig {
    pub name: String,
    /// GeoJSON with the country outline (all polygons are merged).
    #[serde(default)]
    pub boundary: Option<PathBuf>,
    /// Consolidated reference CSV.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    /// Product name → raster source.
    #[serde(default)]
    pub maps: BTreeMap<String, MapSource>,
    /// Common grid for consensus work; the grid of the first listed product
    /// (registry order) when absent.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub ndvi: Option<NdviConfig>,
    /// GeoJSON of named sub-national regions.
    #[serde(default)]
    pub regions: Option<PathBuf>,
    /// Categorical raster of sampling strata and the points wanted per stratum.
    #[serde(default)]
    pub strata: Option<PathBuf>,
    #[serde(default)]
    pub allocation: BTreeMap<i32, usize>,
    /// Points for uniform sampling when `--n` is not given.
    #[serde(default)]
    pub sample_size: Option<usize>,
    /// Composite window for per-date products; the reference validity period when absent.
    #[serde(default)]
    pub composite_period: Option<(NaiveDate, NaiveDate)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSource {
    Path(PathBuf),
    Edition { path: PathBuf, year: i32 },
    Frames { frames: Vec<FrameRef> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRef {
    pub date: NaiveDate,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NdviConfig {
    /// CSV with `date,path` rows, one single-band integer raster per date.
    pub manifest: PathBuf,
    /// Multiplier turning stored integers into index values.
    #[serde(default = "unit_scale")]
    pub scale: f64,
    /// Nodata code for frames without a nodata tag.
    #[serde(default = "frame_nodata")]
    pub nodata: i32,
}

fn unit_scale() -> f64 {
    1.0
}

fn frame_nodata() -> i32 {
    i32::MIN
}

/// A parsed config with everything needed to resolve it.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub registry: Vec<ProductSpec>,
    /// Hex SHA-256 of the config file bytes.
    pub digest: String,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::schema(format!("config: {e}")))
}

/// Read, parse and validate a config file and its registry.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Error::schema(format!("{} is not UTF-8", path.display())))?;
    let config = parse_config(&text)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut loaded = LoadedConfig {
        registry: Vec::new(),
        config,
        base_dir,
        digest: sha256_hex(&bytes),
    };
    loaded.registry = match &loaded.config.registry {
        Some(p) => load_product_registry(loaded.resolve(p))?,
        None => default_registry(),
    };
    validate(&loaded)?;
    Ok(loaded)
}

fn validate(cfg: &LoadedConfig) -> Result<()> {
    if cfg.config.countries.is_empty() {
        return Err(Error::schema("no countries configured"));
    }
    let mut names = std::collections::BTreeSet::new();
    for c in &cfg.config.countries {
        if !names.insert(&c.name) {
            return Err(Error::schema(format!("country {:?} listed twice", c.name)));
        }
        if let Some(g) = &c.grid {
            g.validate()?;
        }
        for (map, src) in &c.maps {
            let spec = find_product(&cfg.registry, map).ok_or_else(|| {
                Error::schema(format!("{}: map {map:?} is not in the product registry", c.name))
            })?;
            match src {
                MapSource::Frames { frames } if !spec.composite => {
                    return Err(Error::schema(format!(
                        "{}: {map} is not a composited product but was given frames ({} listed)",
                        c.name,
                        frames.len()
                    )));
                }
                MapSource::Path(_) | MapSource::Edition { .. } if spec.composite => {
                    return Err(Error::schema(format!(
                        "{}: {map} is composited from dated frames; give {{\"frames\": [...]}}",
                        c.name
                    )));
                }
                MapSource::Path(_) if spec.years.len() > 1 => {
                    return Err(Error::schema(format!(
                        "{}: {map} has several editions ({:?}); give {{\"path\": ..., \"year\": ...}}",
                        c.name, spec.years
                    )));
                }
                MapSource::Edition { year, .. } if !spec.years.contains(year) => {
                    return Err(Error::schema(format!(
                        "{}: {map} has no {year} edition (available: {:?})",
                        c.name, spec.years
                    )));
                }
                _ => {}
            }
        }
    }
    Ok(())
}
