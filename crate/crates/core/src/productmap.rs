//! Map products and the rules that turn their native legends into crop masks.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, CategoricalRaster, MASK_NODATA};

/// How a product's pixel values map to crop (1) / non-crop (0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum BinarizeRule {
    /// Crop iff the code is in the set.
    ClassSet { classes: BTreeSet<i32> },
    /// Crop iff `value > threshold * scale`. `scale` covers products that store
    /// a probability as an integer percentage or similar.
    ThresholdGt {
        threshold: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Crop iff `lo <= value <= hi` (both ends inclusive).
    FractionRange { range: [f64; 2] },
}

fn one() -> f64 {
    1.0
}

impl BinarizeRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            BinarizeRule::ClassSet { classes } if classes.is_empty() => {
                Err(Error::schema("class_set rule needs at least one class"))
            }
            BinarizeRule::ThresholdGt { threshold, scale }
                if !threshold.is_finite() || !scale.is_finite() || *scale <= 0.0 =>
            {
                Err(Error::schema("threshold_gt needs a finite threshold and a positive scale"))
            }
            BinarizeRule::FractionRange { range: [lo, hi] } if !(lo <= hi) => Err(Error::schema(
                format!("fraction_range lower bound {lo} exceeds upper bound {hi}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_crop(&self, v: i32) -> bool {
        match self {
            BinarizeRule::ClassSet { classes } => classes.contains(&v),
            BinarizeRule::ThresholdGt { threshold, scale } => v as f64 > threshold * scale,
            BinarizeRule::FractionRange { range: [lo, hi] } => {
                let v = v as f64;
                *lo <= v && v <= *hi
            }
        }
    }
}

/// Year a product is attributed to when measuring temporal mismatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapYear {
    Fixed(i32),
    /// Follows the reference data (products composited or selected per country).
    Matched(MatchedYear),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchedYear {
    Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductSpec {
    pub name: String,
    #[serde(default)]
    pub long_name: String,
    pub years: Vec<i32>,
    pub resolution_m: f64,
    pub model_scale: String,
    pub rule: BinarizeRule,
    #[serde(default)]
    pub composite: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_year: Option<MapYear>,
}

impl ProductSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::schema("product without a name"));
        }
        if self.years.is_empty() {
            return Err(Error::schema(format!("{}: years must not be empty", self.name)));
        }
        if !(self.resolution_m > 0.0 && self.resolution_m.is_finite()) {
            return Err(Error::schema(format!("{}: resolution_m must be positive", self.name)));
        }
        self.rule.validate()
    }

    /// Year used for the temporal-mismatch analysis against `reference_year`.
    ///
    /// An explicit year wins. Otherwise the nominal year closest to the reference
    /// year is chosen (earlier year on ties), which for single-year products is
    /// simply that year.
    pub fn year_for(&self, reference_year: i32) -> i32 {
        match self.map_year {
            Some(MapYear::Fixed(y)) => y,
            _ => *self
                .years
                .iter()
                .min_by_key(|&&y| ((y - reference_year).abs(), y))
                .expect("validated: years non-empty"),
        }
    }
}

/// Apply `rule` pixel by pixel. Nodata pixels stay nodata (as [`MASK_NODATA`]).
pub fn binarize(raster: &CategoricalRaster, rule: &BinarizeRule) -> Result<BinaryMask> {
    rule.validate()?;
    let nodata = raster.nodata();
    if let BinarizeRule::ClassSet { classes } = rule {
        if classes.contains(&nodata) {
            return Err(Error::invalid(format!(
                "class_set contains the raster's nodata code {nodata}"
            )));
        }
    }
    let values = raster
        .values()
        .par_iter()
        .map(|&v| {
            if v == nodata {
                MASK_NODATA
            } else {
                rule.is_crop(v) as i32
            }
        })
        .collect();
    Ok(BinaryMask::from_raster_unchecked(CategoricalRaster::new(
        raster.grid().clone(),
        values,
        MASK_NODATA,
    )?))
}

/// Per-pixel most frequent class across dated frames.
///
/// Each frame's own nodata code marks missing observations; the output uses the
/// first frame's nodata code. Ties go to the smallest class code, so the result
/// does not depend on frame order.
pub fn mode_composite(frames: &[(NaiveDate, CategoricalRaster)]) -> Result<CategoricalRaster> {
    let (_, first) = frames.first().ok_or(Error::Empty("mode_composite needs at least one frame"))?;
    let grid = first.grid();
    for (_, f) in &frames[1..] {
        grid.ensure_coregistered(f.grid())?;
    }
    let nodata = first.nodata();
    if let Some((d, _)) = frames
        .iter()
        .find(|(_, f)| f.nodata() != nodata && f.values().contains(&nodata))
    {
        return Err(Error::invalid(format!(
            "frame {d} uses code {nodata} as a class, which is the composite's nodata"
        )));
    }

    let mut out = vec![nodata; grid.len()];
    out.par_chunks_mut(grid.width)
        .enumerate()
        .for_each(|(r, row)| {
            let mut counts: Vec<(i32, u32)> = Vec::with_capacity(frames.len());
            for (c, dst) in row.iter_mut().enumerate() {
                counts.clear();
                for (_, f) in frames {
                    let v = f.get(c, r);
                    if v == f.nodata() {
                        continue;
                    }
                    match counts.iter_mut().find(|(k, _)| *k == v) {
                        Some(e) => e.1 += 1,
                        None => counts.push((v, 1)),
                    }
                }
                if let Some(&(code, _)) = counts
                    .iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                {
                    *dst = code;
                }
            }
        });
    CategoricalRaster::new(grid.clone(), out, nodata)
}

/// Value of the pixel containing each point; the raster's nodata outside the extent.
pub fn extract_values(raster: &CategoricalRaster, points: &[(f64, f64)]) -> Vec<i32> {
    points
        .iter()
        .map(|&(x, y)| raster.sample(x, y).unwrap_or(raster.nodata()))
        .collect()
}

pub fn parse_product_registry(text: &str) -> Result<Vec<ProductSpec>> {
    let specs: Vec<ProductSpec> =
        serde_json::from_str(text).map_err(|e| Error::schema(format!("product registry: {e}")))?;
    let mut seen = BTreeSet::new();
    for s in &specs {
        s.validate()?;
        if !seen.insert(s.name.as_str()) {
            return Err(Error::schema(format!("duplicate product name {:?}", s.name)));
        }
    }
    Ok(specs)
}

pub fn load_product_registry(path: impl AsRef<Path>) -> Result<Vec<ProductSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_product_registry(&text)
}

/// The eleven products shipped with the crate, finest to coarsest resolution.
pub fn default_registry() -> Vec<ProductSpec> {
    parse_product_registry(DEFAULT_REGISTRY).expect("bundled registry is valid")
}

pub const DEFAULT_REGISTRY: &str = include_str!("../data/registry.json");

pub fn find_product<'a>(specs: &'a [ProductSpec], name: &str) -> Option<&'a ProductSpec> {
    specs.iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn grid(w: usize, h: usize) -> GridSpec {
        GridSpec::new(0.0, h as f64 * 10.0, 10.0, 10.0, w, h, "EPSG:32636").unwrap()
    }

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 1, d).unwrap()
    }

    #[test]
    fn fraction_range_is_inclusive() {
        let rule = BinarizeRule::FractionRange { range: [5.0, 95.0] };
        let r = CategoricalRaster::new(grid(5, 1), vec![4, 5, 50, 95, 96], -1).unwrap();
        assert_eq!(binarize(&r, &rule).unwrap().values(), &[0, 1, 1, 1, 0]);
    }

    #[test]
    fn threshold_is_strict() {
        let rule = BinarizeRule::ThresholdGt { threshold: 0.5, scale: 100.0 };
        let r = CategoricalRaster::new(grid(3, 1), vec![50, 51, 49], -1).unwrap();
        assert_eq!(binarize(&r, &rule).unwrap().values(), &[0, 1, 0]);
    }

    #[test]
    fn class_set_keeps_nodata() {
        let rule = BinarizeRule::ClassSet { classes: [40].into() };
        let r = CategoricalRaster::new(grid(3, 1), vec![40, 10, 0], 0).unwrap();
        let m = binarize(&r, &rule).unwrap();
        assert_eq!(m.values(), &[1, 0, MASK_NODATA]);
        let bad = BinarizeRule::ClassSet { classes: [0].into() };
        assert!(binarize(&r, &bad).is_err());
    }

    #[test]
    fn rule_validation() {
        assert!(BinarizeRule::ClassSet { classes: BTreeSet::new() }.validate().is_err());
        assert!(BinarizeRule::FractionRange { range: [9.0, 1.0] }.validate().is_err());
    }

    #[test]
    fn composite_single_frame_is_identity() {
        let r = CategoricalRaster::new(grid(2, 2), vec![1, 2, 0, 4], 0).unwrap();
        assert_eq!(mode_composite(&[(day(1), r.clone())]).unwrap(), r);
    }

    #[test]
    fn composite_counts_and_ties() {
        let f = |v: Vec<i32>| CategoricalRaster::new(grid(3, 1), v, 0).unwrap();
        let frames = vec![
            (day(1), f(vec![4, 2, 0])),
            (day(17), f(vec![4, 7, 0])),
            (day(30), f(vec![1, 0, 0])),
        ];
        assert_eq!(mode_composite(&frames).unwrap().values(), &[4, 2, 0]);
        assert!(mode_composite(&[]).is_err());
        let other = CategoricalRaster::new(grid(1, 3), vec![1, 1, 1], 0).unwrap();
        assert!(mode_composite(&[(day(1), f(vec![1, 1, 1])), (day(2), other)]).is_err());
    }

    #[test]
    fn composite_of_boolean_frames_is_majority() {
        // three boolean frames: mode is 1 iff at least two frames say 1
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let frames: Vec<_> = (0..3)
            .map(|i| {
                let v = (0..64).map(|_| rng.random_range(0..2)).collect();
                (day(i + 1), CategoricalRaster::new(grid(8, 8), v, MASK_NODATA).unwrap())
            })
            .collect();
        let out = mode_composite(&frames).unwrap();
        for p in 0..64 {
            let votes: i32 = frames.iter().map(|(_, f)| f.values()[p]).sum();
            assert_eq!(out.values()[p], (votes >= 2) as i32);
        }
    }

    #[test]
    fn extract_center_and_outside() {
        let r = CategoricalRaster::new(grid(2, 2), vec![1, 2, 3, 4], 9).unwrap();
        assert_eq!(extract_values(&r, &[(5.0, 15.0), (-1.0, 5.0), (15.0, 5.0)]), vec![1, 9, 4]);
    }

    #[test]
    fn extract_matches_index_arithmetic() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(8);
        let g = GridSpec::new(300.0, 900.0, 30.0, 30.0, 8, 8, "EPSG:32636").unwrap();
        let r = CategoricalRaster::new(g, (0..64).map(|_| rng.random_range(0..10)).collect(), -1)
            .unwrap();
        let pts: Vec<(f64, f64)> = (0..100)
            .map(|_| (rng.random_range(290.0..550.0), rng.random_range(650.0..910.0)))
            .collect();
        for (&(x, y), v) in pts.iter().zip(extract_values(&r, &pts)) {
            let c = ((x - 300.0) / 30.0).floor();
            let row = ((900.0 - y) / 30.0).floor();
            let expect = if (0.0..8.0).contains(&c) && (0.0..8.0).contains(&row) {
                r.values()[row as usize * 8 + c as usize]
            } else {
                -1
            };
            assert_eq!(v, expect);
        }
    }

    #[test]
    fn default_registry_contents() {
        let reg = default_registry();
        assert_eq!(reg.len(), 11);
        assert_eq!(find_product(&reg, "ASAP").unwrap().resolution_m, 1000.0);
        assert_eq!(
            find_product(&reg, "GLAD").unwrap().rule,
            BinarizeRule::ThresholdGt { threshold: 0.5, scale: 1.0 }
        );
        assert!(find_product(&reg, "Dynamic World").unwrap().composite);
        let res: Vec<f64> = reg.iter().map(|p| p.resolution_m).collect();
        assert!(res.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn registry_schema_errors() {
        let bad = r#"[{"name":"X","years":[2019],"resolution_m":10,"model_scale":"g",
                       "rule":{"variant":"foo","classes":[1]}}]"#;
        assert!(matches!(parse_product_registry(bad), Err(Error::Schema(_))));
        let missing = r#"[{"name":"X","years":[2019],"model_scale":"g",
                       "rule":{"variant":"class_set","classes":[1]}}]"#;
        assert!(matches!(parse_product_registry(missing), Err(Error::Schema(_))));
    }

    #[test]
    fn year_attribution() {
        let reg = default_registry();
        assert_eq!(find_product(&reg, "GFSAD").unwrap().year_for(2020), 2015);
        assert_eq!(find_product(&reg, "Esri").unwrap().year_for(2020), 2020);
        assert_eq!(find_product(&reg, "WorldCover").unwrap().year_for(2019), 2020);
        assert_eq!(find_product(&reg, "GlobCover").unwrap().year_for(2019), 2009);
    }

    proptest! {
        #[test]
        fn binarize_codes_and_nodata_positions(vals in proptest::collection::vec(-3i32..8, 1..80),
                                               classes in proptest::collection::btree_set(0i32..8, 1..4)) {
            let g = GridSpec::new(0.0, 0.0, 1.0, 1.0, vals.len(), 1, "").unwrap();
            let r = CategoricalRaster::new(g, vals.clone(), -1).unwrap();
            let m = binarize(&r, &BinarizeRule::ClassSet { classes }).unwrap();
            for (v, o) in vals.iter().zip(m.values()) {
                prop_assert!(*o == 0 || *o == 1 || *o == MASK_NODATA);
                prop_assert_eq!(*v == -1, *o == MASK_NODATA);
            }
        }

        #[test]
        fn binarize_saturates_on_all_classes(vals in proptest::collection::vec(-3i32..8, 1..80)) {
            let g = GridSpec::new(0.0, 0.0, 1.0, 1.0, vals.len(), 1, "").unwrap();
            let r = CategoricalRaster::new(g, vals, -1).unwrap();
            let classes = r.classes();
            prop_assume!(!classes.is_empty());
            let m = binarize(&r, &BinarizeRule::ClassSet { classes }).unwrap();
            prop_assert!(m.values().iter().all(|&v| v == 1 || v == MASK_NODATA));
        }

        #[test]
        fn composite_is_permutation_invariant(seed in any::<u64>(), k in 1usize..6) {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let mut frames: Vec<_> = (0..k)
                .map(|i| {
                    let v = (0..30).map(|_| rng.random_range(0..5)).collect();
                    (day(i as u32 + 1), CategoricalRaster::new(grid(6, 5), v, 0).unwrap())
                })
                .collect();
            let a = mode_composite(&frames).unwrap();
            frames.reverse();
            frames.swap(0, k / 2);
            prop_assert_eq!(mode_composite(&frames).unwrap(), a);
        }
    }
}
