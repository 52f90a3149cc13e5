//! Reference points: multi-interpreter consolidation, sampling designs and CSV exchange.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CategoricalRaster, RegionPolygon};

/// Name of the random generator behind every seeded draw, for run metadata.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.9, seed_from_u64)";

pub const REFERENCE_HEADER: &str = "x,y,label,country,validity_start,validity_end";
pub const RAW_REFERENCE_HEADER: &str = "x,y,labels,country,validity_start,validity_end";

/// A location with one 0/1 label per interpreter.
#[derive(Clone, Debug, PartialEq)]
pub struct RawLabeledPoint {
    pub x: f64,
    pub y: f64,
    pub labels: Vec<u8>,
    pub country: String,
    pub validity_start: NaiveDate,
    pub validity_end: NaiveDate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferencePoint {
    pub x: f64,
    pub y: f64,
    /// 1 = crop, 0 = non-crop.
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Counts {
    pub total: usize,
    pub crop: usize,
    pub non_crop: usize,
}

/// Consolidated single-label points for one country and validity period.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceDataset {
    country: String,
    validity_start: NaiveDate,
    validity_end: NaiveDate,
    points: Vec<ReferencePoint>,
}

impl ReferenceDataset {
    pub fn new(
        country: impl Into<String>,
        validity_start: NaiveDate,
        validity_end: NaiveDate,
        points: Vec<ReferencePoint>,
    ) -> Result<Self> {
        if validity_end < validity_start {
            return Err(Error::invalid(format!(
                "validity period ends ({validity_end}) before it starts ({validity_start})"
            )));
        }
        if let Some(p) = points.iter().find(|p| p.label > 1) {
            return Err(Error::schema(format!("label {} is not 0 or 1", p.label)));
        }
        Ok(ReferenceDataset {
            country: country.into(),
            validity_start,
            validity_end,
            points,
        })
    }

    pub fn country(&self) -> &str {
        &self.country
    }

    pub fn validity(&self) -> (NaiveDate, NaiveDate) {
        (self.validity_start, self.validity_end)
    }

    pub fn points(&self) -> &[ReferencePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.x, p.y)).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.points.iter().map(|p| p.label).collect()
    }

    pub fn counts(&self) -> Counts {
        let crop = self.points.iter().filter(|p| p.label == 1).count();
        Counts {
            total: self.points.len(),
            crop,
            non_crop: self.points.len() - crop,
        }
    }

    /// Year the labels are attributed to: the year the validity period starts.
    pub fn reference_year(&self) -> i32 {
        self.validity_start.year()
    }
}

/// Keep the points all interpreters agreed on.
pub fn consolidate(raw: &[RawLabeledPoint]) -> Result<ReferenceDataset> {
    let first = raw.first().ok_or(Error::Empty("no raw reference points"))?;
    let mut points = Vec::with_capacity(raw.len());
    for (i, p) in raw.iter().enumerate() {
        if p.country != first.country
            || p.validity_start != first.validity_start
            || p.validity_end != first.validity_end
        {
            return Err(Error::invalid(format!(
                "point {i} belongs to {} {}..{}, expected {} {}..{}",
                p.country,
                p.validity_start,
                p.validity_end,
                first.country,
                first.validity_start,
                first.validity_end
            )));
        }
        let Some(&label) = p.labels.first() else {
            return Err(Error::invalid(format!("point {i} has no labels")));
        };
        if let Some(bad) = p.labels.iter().find(|&&l| l > 1) {
            return Err(Error::schema(format!("point {i}: label {bad} is not 0 or 1")));
        }
        if p.labels.iter().all(|&l| l == label) {
            points.push(ReferencePoint { x: p.x, y: p.y, label });
        }
    }
    ReferenceDataset::new(
        first.country.clone(),
        first.validity_start,
        first.validity_end,
        points,
    )
}

/// `n` points uniform over the polygon (rejection sampling from its bounding box).
pub fn uniform_sample(region: &RegionPolygon, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let (xmin, ymin, xmax, ymax) = region.bbox();
    if !(xmax > xmin && ymax > ymin) || region.ring_area_sum() == 0.0 {
        return Err(Error::invalid("cannot sample a zero-area region"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let max_attempts = 1_000_000usize.saturating_add(n.saturating_mul(10_000));
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        if attempts == max_attempts {
            return Err(Error::invalid(format!(
                "only {} of {n} points accepted after {attempts} draws; region covers almost none of its bounding box",
                out.len()
            )));
        }
        attempts += 1;
        let x = rng.random_range(xmin..xmax);
        let y = rng.random_range(ymin..ymax);
        if region.contains(x, y) {
            out.push((x, y));
        }
    }
    Ok(out)
}

/// Pixel centers drawn without replacement per stratum.
///
/// Strata are visited in ascending code order from one random stream; within a
/// stratum the chosen pixels are returned in raster order.
pub fn stratified_sample(
    strata: &CategoricalRaster,
    allocation: &BTreeMap<i32, usize>,
    seed: u64,
) -> Result<Vec<(f64, f64, i32)>> {
    let mut members: BTreeMap<i32, Vec<usize>> =
        allocation.keys().map(|&k| (k, Vec::new())).collect();
    for (i, v) in strata.values().iter().enumerate() {
        if let Some(m) = members.get_mut(v) {
            m.push(i);
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let grid = strata.grid();
    let mut out = Vec::with_capacity(allocation.values().sum());
    for (&code, &want) in allocation {
        let pool = &members[&code];
        if code == strata.nodata() || pool.is_empty() {
            return Err(Error::invalid(format!("stratum {code} does not occur in the raster")));
        }
        if want > pool.len() {
            return Err(Error::invalid(format!(
                "stratum {code}: {want} points requested but it has only {} pixels",
                pool.len()
            )));
        }
        let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), want)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| {
            let (x, y) = grid.pixel_center(i % grid.width, i / grid.width);
            (x, y, code)
        }));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Row {
    x: f64,
    y: f64,
    label: u8,
    country: String,
    validity_start: NaiveDate,
    validity_end: NaiveDate,
}

#[derive(Serialize, Deserialize)]
struct RawRow {
    x: f64,
    y: f64,
    labels: String,
    country: String,
    validity_start: NaiveDate,
    validity_end: NaiveDate,
}

fn check_header(rdr: &mut csv::Reader<std::fs::File>, expected: &str, path: &Path) -> Result<()> {
    let got = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if got != expected {
        return Err(Error::schema(format!(
            "{}: header {got:?}, expected {expected:?}",
            path.display()
        )));
    }
    Ok(())
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

pub fn read_reference_csv(path: impl AsRef<Path>) -> Result<ReferenceDataset> {
    let path = path.as_ref();
    let mut rdr = open_csv(path)?;
    check_header(&mut rdr, REFERENCE_HEADER, path)?;
    let mut meta: Option<(String, NaiveDate, NaiveDate)> = None;
    let mut points = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::schema(format!("{} row {}: {e}", path.display(), i + 1)))?;
        if row.label > 1 {
            return Err(Error::schema(format!(
                "{} row {}: label {} is not 0 or 1",
                path.display(),
                i + 1,
                row.label
            )));
        }
        match &meta {
            None => meta = Some((row.country.clone(), row.validity_start, row.validity_end)),
            Some((c, s, e)) if *c != row.country || *s != row.validity_start || *e != row.validity_end => {
                return Err(Error::schema(format!(
                    "{} row {}: mixes countries or validity periods",
                    path.display(),
                    i + 1
                )));
            }
            _ => {}
        }
        points.push(ReferencePoint { x: row.x, y: row.y, label: row.label });
    }
    let (country, start, end) =
        meta.ok_or_else(|| Error::schema(format!("{}: no reference rows", path.display())))?;
    ReferenceDataset::new(country, start, end, points)
}

pub fn write_reference_csv(ds: &ReferenceDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    if ds.is_empty() {
        w.write_record(REFERENCE_HEADER.split(','))?;
    }
    for p in &ds.points {
        w.serialize(Row {
            x: p.x,
            y: p.y,
            label: p.label,
            country: ds.country.clone(),
            validity_start: ds.validity_start,
            validity_end: ds.validity_end,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_raw_reference_csv(path: impl AsRef<Path>) -> Result<Vec<RawLabeledPoint>> {
    let path = path.as_ref();
    let mut rdr = open_csv(path)?;
    check_header(&mut rdr, RAW_REFERENCE_HEADER, path)?;
    rdr.deserialize::<RawRow>()
        .enumerate()
        .map(|(i, row)| {
            let row =
                row.map_err(|e| Error::schema(format!("{} row {}: {e}", path.display(), i + 1)))?;
            let labels = row
                .labels
                .split('|')
                .map(|s| match s.trim() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(Error::schema(format!(
                        "{} row {}: label {other:?} is not 0 or 1",
                        path.display(),
                        i + 1
                    ))),
                })
                .collect::<Result<Vec<u8>>>()?;
            Ok(RawLabeledPoint {
                x: row.x,
                y: row.y,
                labels,
                country: row.country,
                validity_start: row.validity_start,
                validity_end: row.validity_end,
            })
        })
        .collect()
}

pub fn write_raw_reference_csv(raw: &[RawLabeledPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    if raw.is_empty() {
        w.write_record(RAW_REFERENCE_HEADER.split(','))?;
    }
    for p in raw {
        let labels = p.labels.iter().map(u8::to_string).collect::<Vec<_>>().join("|");
        w.serialize(RawRow {
            x: p.x,
            y: p.y,
            labels,
            country: p.country.clone(),
            validity_start: p.validity_start,
            validity_end: p.validity_end,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write sampled locations as `x,y,stratum`; `stratum` is empty for uniform draws.
pub fn write_points_csv(points: &[(f64, f64, Option<i32>)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "stratum"])?;
    for (x, y, s) in points {
        w.write_record([x.to_string(), y.to_string(), s.map(|s| s.to_string()).unwrap_or_default()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::productmap::extract_values;
    use proptest::prelude::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn raw(x: f64, labels: &[u8]) -> RawLabeledPoint {
        RawLabeledPoint {
            x,
            y: -x,
            labels: labels.to_vec(),
            country: "Testland".into(),
            validity_start: date(2019, 1, 1),
            validity_end: date(2019, 12, 31),
        }
    }

    #[test]
    fn consolidate_unanimous_only() {
        let ds = consolidate(&[raw(0.0, &[1, 1]), raw(1.0, &[1, 0]), raw(2.0, &[0, 0, 0])]).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.points()[0], ReferencePoint { x: 0.0, y: -0.0, label: 1 });
        assert_eq!(ds.points()[1].label, 0);
        assert_eq!(ds.counts(), Counts { total: 2, crop: 1, non_crop: 1 });
        assert!(consolidate(&[]).is_err());
    }

    #[test]
    fn consolidate_ten_with_three_discordant() {
        let labels: [&[u8]; 10] = [
            &[1, 1], &[0, 0], &[0, 1], &[1, 1], &[0, 0],
            &[1, 0], &[0, 0], &[1, 1], &[1, 0, 1], &[0, 0],
        ];
        let pts: Vec<_> = labels.iter().enumerate().map(|(i, l)| raw(i as f64, l)).collect();
        let ds = consolidate(&pts).unwrap();
        assert_eq!(ds.counts(), Counts { total: 7, crop: 3, non_crop: 4 });
        let kept: Vec<f64> = ds.points().iter().map(|p| p.x).collect();
        assert_eq!(kept, vec![0.0, 1.0, 3.0, 4.0, 6.0, 7.0, 9.0]);
    }

    #[test]
    fn consolidate_rejects_mixed_periods() {
        let mut b = raw(1.0, &[1]);
        b.validity_end = date(2020, 1, 1);
        assert!(consolidate(&[raw(0.0, &[1]), b]).is_err());
    }

    #[test]
    fn uniform_points_inside_and_deterministic() {
        let tri = RegionPolygon::new(vec![vec![(0.0, 0.0), (10.0, 0.0), (0.0, 5.0)]]).unwrap();
        let a = uniform_sample(&tri, 500, 42).unwrap();
        assert!(a.iter().all(|&(x, y)| tri.contains(x, y)));
        assert_eq!(a, uniform_sample(&tri, 500, 42).unwrap());
        assert_ne!(a, uniform_sample(&tri, 500, 43).unwrap());
    }

    #[test]
    fn uniform_rejects_zero_area() {
        let line = RegionPolygon::new(vec![vec![(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]]).unwrap();
        assert!(uniform_sample(&line, 10, 1).is_err());
    }

    #[test]
    fn uniform_quadrants_within_three_sigma() {
        let sq = RegionPolygon::rectangle(0.0, 0.0, 1.0, 1.0).unwrap();
        let pts = uniform_sample(&sq, 10_000, 7).unwrap();
        let mut q = [0usize; 4];
        for (x, y) in pts {
            q[(x >= 0.5) as usize + 2 * (y >= 0.5) as usize] += 1;
        }
        // binomial sd = sqrt(10000 * 0.25 * 0.75) ≈ 43.3
        assert!(q.iter().all(|&c| c.abs_diff(2500) <= 150), "{q:?}");
    }

    #[test]
    fn uniform_chi_square_on_holed_square() {
        // 4x4 square minus the unit cell [1,2]x[1,2]: 15 equal-area cells
        let region = RegionPolygon::new(vec![
            vec![(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)],
            vec![(1.0, 1.0), (2.0, 1.0), (2.0, 2.0), (1.0, 2.0)],
        ])
        .unwrap();
        let n = 100_000;
        let pts = uniform_sample(&region, n, 2024).unwrap();
        let mut cells = [0usize; 16];
        for (x, y) in pts {
            cells[(x.floor() as usize).min(3) + 4 * (y.floor() as usize).min(3)] += 1;
        }
        assert_eq!(cells[1 + 4], 0);
        let expected = n as f64 / 15.0;
        let chi2: f64 = cells
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 5)
            .map(|(_, &c)| (c as f64 - expected).powi(2) / expected)
            .sum();
        // upper 0.1% point of chi-square with 14 degrees of freedom
        assert!(chi2 < 36.123, "chi2 = {chi2}");
    }

    fn strata() -> CategoricalRaster {
        let g = GridSpec::new(0.0, 60.0, 10.0, 10.0, 6, 6, "EPSG:32636").unwrap();
        let v = (0..36).map(|i| (i % 3 + i / 12) as i32 % 3 + 1).collect();
        CategoricalRaster::new(g, v, 0).unwrap()
    }

    #[test]
    fn stratified_exhaustive_draw() {
        let s = strata();
        let n1 = s.values().iter().filter(|&&v| v == 1).count();
        let pts = stratified_sample(&s, &BTreeMap::from([(1, n1)]), 5).unwrap();
        let expect: Vec<(f64, f64, i32)> = (0..36)
            .filter(|&i| s.values()[i] == 1)
            .map(|i| {
                let (x, y) = s.grid().pixel_center(i % 6, i / 6);
                (x, y, 1)
            })
            .collect();
        assert_eq!(pts, expect);
    }

    #[test]
    fn stratified_allocation_respected() {
        let s = strata();
        let alloc = BTreeMap::from([(1, 5), (2, 5)]);
        let pts = stratified_sample(&s, &alloc, 9).unwrap();
        assert_eq!(pts, stratified_sample(&s, &alloc, 9).unwrap());
        let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1)).collect();
        let vals = extract_values(&s, &xy);
        assert_eq!(vals.iter().filter(|&&v| v == 1).count(), 5);
        assert_eq!(vals.iter().filter(|&&v| v == 2).count(), 5);
        for (p, v) in pts.iter().zip(vals) {
            assert_eq!(p.2, v);
        }
        let mut uniq = xy.clone();
        uniq.sort_by(|a, b| a.partial_cmp(b).unwrap());
        uniq.dedup();
        assert_eq!(uniq.len(), 10);
    }

    #[test]
    fn stratified_errors() {
        let s = strata();
        assert!(stratified_sample(&s, &BTreeMap::from([(1, 1000)]), 1).is_err());
        assert!(stratified_sample(&s, &BTreeMap::from([(7, 1)]), 1).is_err());
    }

    #[test]
    fn reference_csv_round_trip_and_label_check() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ReferenceDataset::new(
            "Malawi",
            date(2020, 9, 1),
            date(2021, 8, 31),
            vec![
                ReferencePoint { x: 33.123456789, y: -13.5, label: 1 },
                ReferencePoint { x: 34.0, y: -14.000000001, label: 0 },
            ],
        )
        .unwrap();
        let p = dir.path().join("ref.csv");
        write_reference_csv(&ds, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(REFERENCE_HEADER));
        assert_eq!(read_reference_csv(&p).unwrap(), ds);
        assert_eq!(ds.reference_year(), 2020);

        std::fs::write(&p, format!("{REFERENCE_HEADER}\n1,2,2,X,2019-01-01,2019-12-31\n")).unwrap();
        assert!(matches!(read_reference_csv(&p), Err(Error::Schema(_))));
        std::fs::write(&p, "x,y,lbl,country,validity_start,validity_end\n").unwrap();
        assert!(matches!(read_reference_csv(&p), Err(Error::Schema(_))));
    }

    #[test]
    fn raw_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("raw.csv");
        let pts = vec![raw(1.5, &[1, 1, 0]), raw(2.5, &[0])];
        write_raw_reference_csv(&pts, &p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("1|1|0"));
        assert_eq!(read_raw_reference_csv(&p).unwrap(), pts);
    }

    #[test]
    fn togo_fixture_counts() {
        let ds = read_reference_csv(concat!(env!("CARGO_MANIFEST_DIR"), "/data/togo_reference.csv"))
            .unwrap();
        assert_eq!(ds.counts(), Counts { total: 182, crop: 51, non_crop: 131 });
    }

    proptest! {
        #[test]
        fn consolidate_matches_filter(seed in any::<u64>(), n in 1usize..60) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let pts: Vec<_> = (0..n)
                .map(|i| {
                    let k = rng.random_range(1..5);
                    let labels: Vec<u8> = (0..k).map(|_| rng.random_range(0..2)).collect();
                    raw(i as f64, &labels)
                })
                .collect();
            let ds = consolidate(&pts).unwrap();
            let expect: Vec<ReferencePoint> = pts
                .iter()
                .filter(|p| p.labels.iter().all(|&l| l == p.labels[0]))
                .map(|p| ReferencePoint { x: p.x, y: p.y, label: p.labels[0] })
                .collect();
            prop_assert_eq!(ds.len() == pts.len(), pts.iter().all(|p| p.labels.iter().all(|&l| l == p.labels[0])));
            prop_assert_eq!(ds.points(), &expect[..]);
        }
    }
}
