//! Relating map performance to resolution and map age, and index time series
//! gated by crop masks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::Deserialize;

use crate::assess::METRIC_NAMES;
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, CategoricalRaster};
use crate::productmap::{find_product, ProductSpec};
use crate::report::MetricRecord;

/// Map name used for the majority-vote ensemble in metric tables.
pub const ENSEMBLE_NAME: &str = "Majority Vote";
/// Country / map name used for mean rows and columns in metric tables.
pub const MEAN_NAME: &str = "Mean";

/// Per-country metrics of the eleven bundled products plus the ensemble, with
/// country and map means, in the metrics CSV schema.
pub const BUNDLED_METRICS: &str = include_str!("../data/table2_metrics.csv");
/// Reference-sample totals and label validity periods per country.
pub const BUNDLED_REFERENCE_SUMMARY: &str = include_str!("../data/reference_summary.csv");

/// Sample Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "{} x values for {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("x values are constant"));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("y values are constant"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationResult {
    pub metric: String,
    pub r: f64,
    pub n_points: usize,
    pub excluded: Vec<String>,
    /// The (x, y, label) points the coefficient was computed from.
    pub points: Vec<(f64, f64, String)>,
}

fn correlate(metric: &str, points: Vec<(f64, f64, String)>, excluded: &BTreeSet<String>) -> Result<CorrelationResult> {
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    Ok(CorrelationResult {
        metric: metric.to_string(),
        r: pearson(&xs, &ys)?,
        n_points: points.len(),
        excluded: excluded.iter().cloned().collect(),
        points,
    })
}

fn check_maps(table: &[MetricRecord], specs: &[ProductSpec]) -> Result<()> {
    if let Some(rec) = table.iter().find(|r| {
        r.map != ENSEMBLE_NAME && r.map != MEAN_NAME && find_product(specs, &r.map).is_none()
    }) {
        return Err(Error::invalid(format!(
            "map {:?} in the metric table has no product spec",
            rec.map
        )));
    }
    Ok(())
}

/// Cross-country value of `metric` for `map`: the table's Mean row when
/// present, otherwise the average over the per-country rows.
fn country_mean(table: &[MetricRecord], map: &str, metric: &str) -> Option<f64> {
    let rows = || table.iter().filter(|r| r.map == map && r.metric == metric);
    if let Some(r) = rows().find(|r| r.country == MEAN_NAME) {
        return Some(r.value);
    }
    let vals: Vec<f64> = rows().map(|r| r.value).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Correlation of each metric's cross-country mean with native resolution.
///
/// The ensemble and mean columns never enter; products named in `exclude` are
/// dropped as well. Products without rows in the table are skipped.
pub fn metric_vs_resolution(
    table: &[MetricRecord],
    specs: &[ProductSpec],
    exclude: &BTreeSet<String>,
) -> Result<Vec<CorrelationResult>> {
    check_maps(table, specs)?;
    METRIC_NAMES
        .iter()
        .map(|&metric| {
            let points = specs
                .iter()
                .filter(|s| !exclude.contains(&s.name))
                .filter_map(|s| {
                    country_mean(table, &s.name, metric).map(|v| (s.resolution_m, v, s.name.clone()))
                })
                .collect();
            correlate(metric, points, exclude)
        })
        .collect()
}

/// Years between a map and the reference data it is scored against.
pub fn temporal_mismatch(map_year: i32, reference_year: i32) -> u32 {
    map_year.abs_diff(reference_year)
}

/// Year reference labels are attributed to: the year their validity period starts.
pub fn reference_year(validity_start: NaiveDate) -> i32 {
    validity_start.year()
}

/// Correlation of each metric with temporal mismatch, one point per (map, country).
pub fn metric_vs_mismatch(
    table: &[MetricRecord],
    specs: &[ProductSpec],
    reference_years: &BTreeMap<String, i32>,
    exclude: &BTreeSet<String>,
) -> Result<Vec<CorrelationResult>> {
    check_maps(table, specs)?;
    METRIC_NAMES
        .iter()
        .map(|&metric| {
            let mut points = Vec::new();
            for r in table.iter().filter(|r| r.metric == metric && r.country != MEAN_NAME) {
                if exclude.contains(&r.map) {
                    continue;
                }
                let Some(spec) = find_product(specs, &r.map) else {
                    continue;
                };
                let ref_year = *reference_years.get(&r.country).ok_or_else(|| {
                    Error::invalid(format!("no reference year for country {:?}", r.country))
                })?;
                let gap = temporal_mismatch(spec.year_for(ref_year), ref_year);
                points.push((gap as f64, r.value, format!("{} / {}", r.map, r.country)));
            }
            correlate(metric, points, exclude)
        })
        .collect()
}

#[derive(Deserialize)]
struct PeriodRow {
    country: String,
    validity_start: NaiveDate,
    validity_end: NaiveDate,
}

/// Country → (validity start, validity end) from a CSV with at least
/// `country,validity_start,validity_end` columns.
pub fn parse_reference_periods(text: &str) -> Result<BTreeMap<String, (NaiveDate, NaiveDate)>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize::<PeriodRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::schema(format!("reference periods: {e}")))?;
            Ok((row.country, (row.validity_start, row.validity_end)))
        })
        .collect()
}

pub fn read_reference_periods(path: impl AsRef<Path>) -> Result<BTreeMap<String, (NaiveDate, NaiveDate)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_reference_periods(&text)
}

pub fn reference_years(periods: &BTreeMap<String, (NaiveDate, NaiveDate)>) -> BTreeMap<String, i32> {
    periods
        .iter()
        .map(|(c, (start, _))| (c.clone(), reference_year(*start)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeSeriesEntry {
    pub date: NaiveDate,
    /// `None` when no pixel was selected.
    pub mean: Option<f64>,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub mask_name: String,
    pub region_name: String,
    pub entries: Vec<TimeSeriesEntry>,
}

impl TimeSeries {
    /// Multiply every mean by `factor` (e.g. to undo integer scaling of an index).
    pub fn scaled(mut self, factor: f64) -> Self {
        for e in &mut self.entries {
            e.mean = e.mean.map(|m| m * factor);
        }
        self
    }
}

/// Per-frame mean of pixels selected by `mask` = 1 and `region` = 1 that are
/// not nodata in the frame. Sums are exact integers, so the result does not
/// depend on how rows are split across threads.
pub fn masked_timeseries(
    frames: &[(NaiveDate, CategoricalRaster)],
    mask: &BinaryMask,
    region: &BinaryMask,
    mask_name: &str,
    region_name: &str,
) -> Result<TimeSeries> {
    mask.grid().ensure_coregistered(region.grid())?;
    for (_, f) in frames {
        mask.grid().ensure_coregistered(f.grid())?;
    }
    let mut order: Vec<&(NaiveDate, CategoricalRaster)> = frames.iter().collect();
    order.sort_by_key(|(d, _)| *d);
    if let Some(w) = order.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid(format!("two frames share the date {}", w[0].0)));
    }
    let selected: Vec<bool> = mask
        .values()
        .par_iter()
        .zip(region.values().par_iter())
        .map(|(&m, &r)| m == 1 && r == 1)
        .collect();
    let entries = order
        .par_iter()
        .map(|(date, frame)| {
            let nodata = frame.nodata();
            let (sum, count) = frame
                .values()
                .par_chunks(frame.width().max(1))
                .zip(selected.par_chunks(frame.width().max(1)))
                .map(|(vals, sel)| {
                    vals.iter().zip(sel).fold((0i128, 0u64), |(s, c), (&v, &ok)| {
                        if ok && v != nodata {
                            (s + v as i128, c + 1)
                        } else {
                            (s, c)
                        }
                    })
                })
                .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
            TimeSeriesEntry {
                date: *date,
                mean: (count > 0).then(|| sum as f64 / count as f64),
                count,
            }
        })
        .collect();
    Ok(TimeSeries {
        mask_name: mask_name.to_string(),
        region_name: region_name.to_string(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, MASK_NODATA};
    use crate::productmap::default_registry;
    use crate::report::parse_metrics_csv;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn pearson_exact_lines() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &up).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&xs, &down).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn pearson_on_printed_means() {
        let res = [10.0, 10.0, 10.0, 10.0, 20.0, 30.0, 30.0, 30.0, 100.0, 300.0, 1000.0];
        let acc = [0.88, 0.85, 0.88, 0.92, 0.82, 0.86, 0.87, 0.90, 0.87, 0.74, 0.72];
        assert!((pearson(&res, &acc).unwrap() + 0.81).abs() < 0.01);
    }

    #[test]
    fn resolution_correlation_on_bundled_table() {
        let table = parse_metrics_csv(BUNDLED_METRICS).unwrap();
        let specs = default_registry();
        let out = metric_vs_resolution(&table, &specs, &BTreeSet::new()).unwrap();
        let acc = out.iter().find(|c| c.metric == "accuracy").unwrap();
        assert_eq!(acc.n_points, 11);
        assert!((acc.r + 0.81).abs() < 0.01, "{}", acc.r);
        let prec = out.iter().find(|c| c.metric == "precision").unwrap();
        assert!((prec.r + 0.70).abs() < 0.02, "{}", prec.r);
    }

    #[test]
    fn same_resolution_is_undefined() {
        let mut specs = default_registry();
        specs.iter_mut().for_each(|s| s.resolution_m = 10.0);
        let table = parse_metrics_csv(BUNDLED_METRICS).unwrap();
        assert!(matches!(
            metric_vs_resolution(&table, &specs, &BTreeSet::new()),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn mismatch_values() {
        assert_eq!(temporal_mismatch(2019, 2019), 0);
        assert_eq!(temporal_mismatch(2009, 2019), 10);
        let periods = parse_reference_periods(BUNDLED_REFERENCE_SUMMARY).unwrap();
        let years = reference_years(&periods);
        let gfsad = find_product(&default_registry(), "GFSAD").unwrap().year_for(years["Malawi"]);
        assert_eq!(temporal_mismatch(gfsad, years["Malawi"]), 5);
    }

    fn rec(country: &str, map: &str, metric: &str, value: f64) -> MetricRecord {
        MetricRecord {
            country: country.into(),
            map: map.into(),
            metric: metric.into(),
            value,
            stderr: 0.0,
            n: 100,
            excluded: 0,
        }
    }

    #[test]
    fn constructed_linear_mismatch() {
        let specs = default_registry();
        let years = BTreeMap::from([("A".to_string(), 2019), ("B".to_string(), 2020)]);
        let mut table = Vec::new();
        for c in ["A", "B"] {
            for s in &specs {
                let gap = temporal_mismatch(s.year_for(years[c]), years[c]) as f64;
                for m in METRIC_NAMES {
                    table.push(rec(c, &s.name, m, 1.0 - 0.1 * gap));
                }
            }
        }
        for c in metric_vs_mismatch(&table, &specs, &years, &BTreeSet::new()).unwrap() {
            assert!((c.r + 1.0).abs() < 1e-12);
            assert_eq!(c.n_points, 22);
        }
    }

    #[test]
    fn equal_mismatch_is_undefined() {
        let specs: Vec<_> = default_registry().into_iter().filter(|s| s.name == "DEA").collect();
        let years = BTreeMap::from([("A".to_string(), 2019), ("B".to_string(), 2019)]);
        let table: Vec<_> = METRIC_NAMES
            .iter()
            .flat_map(|m| [rec("A", "DEA", m, 0.5), rec("B", "DEA", m, 0.7)])
            .collect();
        assert!(metric_vs_mismatch(&table, &specs, &years, &BTreeSet::new()).is_err());
    }

    #[test]
    fn mismatch_on_bundled_table_is_negative_for_accuracy() {
        let table = parse_metrics_csv(BUNDLED_METRICS).unwrap();
        let years = reference_years(&parse_reference_periods(BUNDLED_REFERENCE_SUMMARY).unwrap());
        let out = metric_vs_mismatch(&table, &default_registry(), &years, &BTreeSet::new()).unwrap();
        let acc = out.iter().find(|c| c.metric == "accuracy").unwrap();
        assert!(acc.r < 0.0);
        assert_eq!(acc.n_points, 88);
    }

    fn grid(w: usize, h: usize) -> GridSpec {
        GridSpec::new(0.0, h as f64, 1.0, 1.0, w, h, "EPSG:32636").unwrap()
    }

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 1, d).unwrap()
    }

    #[test]
    fn constant_frames_give_constant_means() {
        let g = grid(4, 4);
        let frames: Vec<_> = (1..4)
            .map(|d| (day(d), CategoricalRaster::filled(g.clone(), 6200, -3000).unwrap()))
            .collect();
        let mask = BinaryMask::new(g.clone(), (0..16).map(|i| i % 2).collect(), MASK_NODATA).unwrap();
        let region = BinaryMask::from_bools(g.clone(), &[true; 16]).unwrap();
        let ts = masked_timeseries(&frames, &mask, &region, "m", "r").unwrap();
        assert!(ts.entries.iter().all(|e| e.mean == Some(6200.0) && e.count == 8));

        let disjoint = BinaryMask::new(g.clone(), (0..16).map(|i| 1 - i % 2).collect(), MASK_NODATA).unwrap();
        let ts = masked_timeseries(&frames, &mask, &disjoint, "m", "r").unwrap();
        assert!(ts.entries.iter().all(|e| e.mean.is_none() && e.count == 0));
    }

    #[test]
    fn timeseries_sorted_and_checked() {
        let g = grid(2, 1);
        let f = |v| CategoricalRaster::filled(g.clone(), v, -1).unwrap();
        let ones = BinaryMask::from_bools(g.clone(), &[true, true]).unwrap();
        let ts = masked_timeseries(&[(day(9), f(9)), (day(2), f(2))], &ones, &ones, "m", "r").unwrap();
        assert_eq!(ts.entries[0].date, day(2));
        assert!(masked_timeseries(&[(day(2), f(9)), (day(2), f(2))], &ones, &ones, "m", "r").is_err());
        let other = CategoricalRaster::filled(grid(1, 2), 1, -1).unwrap();
        assert!(masked_timeseries(&[(day(1), other)], &ones, &ones, "m", "r").is_err());
    }

    fn brute_mean(frame: &CategoricalRaster, mask: &BinaryMask, region: &BinaryMask) -> Option<f64> {
        let mut vals = Vec::new();
        for i in 0..frame.values().len() {
            let v = frame.values()[i];
            if mask.values()[i] == 1 && region.values()[i] == 1 && v != frame.nodata() {
                vals.push(v as f64);
            }
        }
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    proptest! {
        #[test]
        fn timeseries_matches_brute_force(seed in any::<u64>(), w in 1usize..20, h in 1usize..20) {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let g = grid(w, h);
            let n = w * h;
            let frames: Vec<_> = (1..4)
                .map(|d| {
                    let v = (0..n).map(|_| if rng.random_bool(0.1) { -3000 } else { rng.random_range(-2000..10000) }).collect();
                    (day(d), CategoricalRaster::new(g.clone(), v, -3000).unwrap())
                })
                .collect();
            let mask = BinaryMask::new(g.clone(), (0..n).map(|_| [0, 1, MASK_NODATA][rng.random_range(0..3)]).collect(), MASK_NODATA).unwrap();
            let region = BinaryMask::new(g.clone(), (0..n).map(|_| rng.random_range(0..2)).collect(), MASK_NODATA).unwrap();
            let ts = masked_timeseries(&frames, &mask, &region, "m", "r").unwrap();
            for (e, (_, f)) in ts.entries.iter().zip(&frames) {
                let expect = brute_mean(f, &mask, &region);
                match (e.mean, expect) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0)),
                    (None, None) => {}
                    other => prop_assert!(false, "{:?}", other),
                }
                if let Some(m) = e.mean {
                    let sel: Vec<i32> = (0..n)
                        .filter(|&i| mask.values()[i] == 1 && region.values()[i] == 1 && f.values()[i] != -3000)
                        .map(|i| f.values()[i])
                        .collect();
                    prop_assert!(m >= *sel.iter().min().unwrap() as f64 && m <= *sel.iter().max().unwrap() as f64);
                }
            }
        }

        #[test]
        fn pearson_affine_invariance(xs in proptest::collection::vec(-100.0f64..100.0, 3..30),
                                     a in 0.1f64..10.0, b in -50.0f64..50.0, seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let ys: Vec<f64> = xs.iter().map(|x| x + rng.random_range(-30.0..30.0)).collect();
            let Ok(r) = pearson(&xs, &ys) else { return Ok(()); };
            let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let flipped: Vec<f64> = xs.iter().map(|x| -a * x + b).collect();
            prop_assert!((pearson(&scaled, &ys).unwrap() - r).abs() < 1e-9);
            prop_assert!((pearson(&flipped, &ys).unwrap() + r).abs() < 1e-9);
        }
    }
}
