use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;

use super::config::{sha256_hex, CountryConfig, LoadedConfig, MapSource};
use crate::analysis::{
    masked_timeseries, metric_vs_mismatch, metric_vs_resolution, parse_reference_periods,
    reference_years, CorrelationResult, TimeSeries, BUNDLED_METRICS, BUNDLED_REFERENCE_SUMMARY,
    ENSEMBLE_NAME, MEAN_NAME,
};
use crate::assess::{aggregate_mean, evaluate_map, ErrorMatrix, Evaluation, MetricSet};
use crate::consensus::{
    majority_vote, mean_and_rank, pairwise_agreement, render_consensus_png, summarize_votes,
    vote_count, AgreementMatrix, AgreementSummary, MaskStack,
};
use crate::error::{Error, Result};
use crate::grid::{
    clip_mask, rasterize_polygon, read_geojson_region, read_geojson_regions, read_geotiff,
    resample_mask, write_geotiff, BinaryMask, CategoricalRaster, GridSpec, RegionPolygon,
};
use crate::productmap::{binarize, load_product_registry, default_registry, mode_composite, ProductSpec};
use crate::reference::{
    read_reference_csv, stratified_sample, uniform_sample, write_points_csv, ReferenceDataset,
    RNG_ALGORITHM,
};
use crate::report::{
    line_svg, parse_metrics_csv, scatter_svg, write_agreement_csv, write_correlation_csv,
    write_error_matrix_csv, write_failures_csv, write_meta, write_metrics_csv,
    write_metrics_table_csv, write_rank_csv, write_summary_csv, write_text, write_timeseries_csv,
    Failure, MetricRecord, RunMeta,
};

/// Nodata assumed for product rasters that carry no nodata tag.
pub const UNTAGGED_NODATA: i32 = i32::MIN;

/// Estimator and convention choices recorded in every metadata sidecar.
pub const ESTIMATORS: [&str; 8] = [
    "accuracy/precision/recall standard errors: simple-random-sampling binomial",
    "F1 standard error: first-order propagation, numerator and denominator errors fully correlated",
    "mean rows/columns: arithmetic mean, standard error sqrt(sum se^2)/k",
    "majority vote: crop iff votes > N/2 over the maps that loaded; even-N ties are non-crop",
    "resampling: modal aggregation (ties non-crop) onto coarser grids, nearest neighbour otherwise",
    "clipping and rasterization: pixel-center inclusion, even-odd rule",
    "consensus: pixels with nodata in any mask are excluded",
    "reference year: calendar year in which the label validity period starts",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some work items failed; see the failures CSV.
    Partial,
    /// No work item succeeded.
    Total,
}

impl Outcome {
    fn from_counts(ok: usize, failed: usize) -> Self {
        match (ok, failed) {
            (0, _) => Outcome::Total,
            (_, 0) => Outcome::Success,
            _ => Outcome::Partial,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 2,
            Outcome::Total => 3,
        }
    }
}

/// Everything a config-driven command needs.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub cfg: LoadedConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub exclude: BTreeSet<String>,
    /// Restrict to one country.
    pub country: Option<String>,
}

impl RunContext {
    fn countries(&self) -> Result<Vec<&CountryConfig>> {
        let all = &self.cfg.config.countries;
        match &self.country {
            None => Ok(all.iter().collect()),
            Some(name) => {
                let c = all.iter().find(|c| &c.name == name).ok_or_else(|| {
                    let names: Vec<&str> = all.iter().map(|c| c.name.as_str()).collect();
                    Error::schema(format!("unknown country {name:?}; configured: {names:?}"))
                })?;
                Ok(vec![c])
            }
        }
    }

    /// Products of a country in registry order, minus exclusions.
    fn products<'a>(&'a self, c: &'a CountryConfig) -> Vec<(&'a ProductSpec, &'a MapSource)> {
        self.cfg
            .registry
            .iter()
            .filter(|s| !self.exclude.contains(&s.name))
            .filter_map(|s| c.maps.get(&s.name).map(|src| (s, src)))
            .collect()
    }

    fn meta(&self, command: &str) -> RunMeta {
        RunMeta {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256: self.cfg.digest.clone(),
            seed: self.seed,
            rng: RNG_ALGORITHM,
            estimators: ESTIMATORS.iter().map(|s| s.to_string()).collect(),
            excluded: self.exclude.iter().cloned().collect(),
        }
    }

    fn prepare_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))
    }
}

/// File-name friendly country name.
pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn fail(country: &str, map: &str, stage: &str, e: impl std::fmt::Display) -> Failure {
    Failure {
        country: country.to_string(),
        map: map.to_string(),
        stage: stage.to_string(),
        error: e.to_string(),
    }
}

/// Write `write` to `path` and its metadata sidecar.
fn emit(path: &Path, meta: &RunMeta, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    write(path)?;
    write_meta(path, meta)
}

fn emit_failures(ctx: &RunContext, command: &str, failures: &[Failure]) -> Result<()> {
    let path = ctx.out_dir.join(format!("{command}_failures.csv"));
    emit(&path, &ctx.meta(command), |p| write_failures_csv(failures, p))
}

fn load_reference(ctx: &RunContext, c: &CountryConfig) -> Result<ReferenceDataset> {
    let path = c
        .reference
        .as_ref()
        .ok_or_else(|| Error::schema(format!("{}: no reference CSV configured", c.name)))?;
    read_reference_csv(ctx.cfg.resolve(path))
}

fn load_boundary(ctx: &RunContext, c: &CountryConfig) -> Result<Option<RegionPolygon>> {
    c.boundary
        .as_ref()
        .map(|p| read_geojson_region(ctx.cfg.resolve(p)))
        .transpose()
}

fn within(d: NaiveDate, period: Option<(NaiveDate, NaiveDate)>) -> bool {
    period.is_none_or(|(a, b)| a <= d && d <= b)
}

/// Read a product's raster (compositing dated frames inside `period`) and binarize it.
fn load_mask(
    ctx: &RunContext,
    spec: &ProductSpec,
    src: &MapSource,
    period: Option<(NaiveDate, NaiveDate)>,
) -> Result<BinaryMask> {
    let raster = match src {
        MapSource::Path(p) | MapSource::Edition { path: p, .. } => {
            read_geotiff(ctx.cfg.resolve(p), UNTAGGED_NODATA)?
        }
        MapSource::Frames { frames } => {
            let frames = frames
                .iter()
                .filter(|f| within(f.date, period))
                .map(|f| Ok((f.date, read_geotiff(ctx.cfg.resolve(&f.path), UNTAGGED_NODATA)?)))
                .collect::<Result<Vec<_>>>()?;
            if frames.is_empty() {
                return Err(Error::invalid(format!(
                    "no {} frame falls inside the composite period",
                    spec.name
                )));
            }
            mode_composite(&frames)?
        }
    };
    binarize(&raster, &spec.rule)
}

fn clip_to(mask: BinaryMask, boundary: Option<&RegionPolygon>) -> Result<BinaryMask> {
    match boundary {
        None => Ok(mask),
        Some(poly) => clip_mask(&mask, &rasterize_polygon(poly, mask.grid())?),
    }
}

fn composite_period(c: &CountryConfig, ds: Option<&ReferenceDataset>) -> Option<(NaiveDate, NaiveDate)> {
    c.composite_period.or_else(|| ds.map(|d| d.validity()))
}

/// Native-resolution masks of a country clipped to its boundary, in registry
/// order. Failed products are returned as failures.
fn native_masks(
    ctx: &RunContext,
    c: &CountryConfig,
    boundary: Option<&RegionPolygon>,
    period: Option<(NaiveDate, NaiveDate)>,
) -> (Vec<(String, BinaryMask)>, Vec<Failure>) {
    let loaded: Vec<(String, Result<BinaryMask>)> = ctx
        .products(c)
        .par_iter()
        .map(|(spec, src)| {
            let mask = load_mask(ctx, spec, src, period).and_then(|m| clip_to(m, boundary));
            (spec.name.clone(), mask)
        })
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (name, r) in loaded {
        match r {
            Ok(m) => ok.push((name, m)),
            Err(e) => failures.push(fail(&c.name, &name, "load", e)),
        }
    }
    (ok, failures)
}

/// Bring masks onto the country's common grid and clip there.
fn common_grid_masks(
    c: &CountryConfig,
    masks: &[(String, BinaryMask)],
    boundary: Option<&RegionPolygon>,
) -> Result<(Vec<(String, BinaryMask)>, Vec<Failure>)> {
    let target: GridSpec = match (&c.grid, masks.first()) {
        (Some(g), _) => g.clone(),
        (None, Some((_, m))) => m.grid().clone(),
        (None, None) => return Err(Error::Empty("no map could be loaded")),
    };
    let region = boundary.map(|p| rasterize_polygon(p, &target)).transpose()?;
    let moved: Vec<(String, Result<BinaryMask>)> = masks
        .par_iter()
        .map(|(name, m)| {
            let r = resample_mask(m, &target).and_then(|m| match &region {
                Some(reg) => clip_mask(&m, reg),
                None => Ok(m),
            });
            (name.clone(), r)
        })
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (name, r) in moved {
        match r {
            Ok(m) => ok.push((name, m)),
            Err(e) => failures.push(fail(&c.name, &name, "resample", e)),
        }
    }
    Ok((ok, failures))
}

fn stack_of(masks: Vec<(String, BinaryMask)>) -> Result<MaskStack> {
    let (names, masks) = masks.into_iter().unzip();
    MaskStack::new(names, masks)
}

struct Scored {
    country: String,
    map: String,
    metrics: MetricSet,
    matrix: ErrorMatrix,
    n: u64,
    excluded: u64,
}

fn scored(country: &str, map: &str, ev: Evaluation) -> Scored {
    Scored {
        country: country.to_string(),
        map: map.to_string(),
        metrics: ev.metrics,
        matrix: ev.matrix,
        n: ev.matrix.n(),
        excluded: ev.excluded as u64,
    }
}

/// Per-(country, map) metrics against the reference points, plus the
/// majority-vote ensemble and mean rows/columns.
pub fn cmd_assess(ctx: &RunContext) -> Result<Outcome> {
    let countries = ctx.countries()?;
    if countries.iter().all(|c| ctx.products(c).is_empty()) {
        return Err(Error::schema("no maps configured"));
    }
    ctx.prepare_out()?;
    let mut failures = Vec::new();
    let mut cells: Vec<Scored> = Vec::new();

    for c in countries {
        let products = ctx.products(c);
        let setup = load_reference(ctx, c).and_then(|ds| Ok((ds, load_boundary(ctx, c)?)));
        let (ds, boundary) = match setup {
            Ok(v) => v,
            Err(e) => {
                failures.extend(products.iter().map(|(s, _)| fail(&c.name, &s.name, "setup", &e)));
                continue;
            }
        };
        let (masks, load_failures) =
            native_masks(ctx, c, boundary.as_ref(), composite_period(c, Some(&ds)));
        failures.extend(load_failures);

        let evals: Vec<(String, Result<Evaluation>)> = masks
            .par_iter()
            .map(|(name, m)| (name.clone(), evaluate_map(m, &ds)))
            .collect();
        let mut country_cells = Vec::new();
        for (name, r) in evals {
            match r {
                Ok(ev) => country_cells.push(scored(&c.name, &name, ev)),
                Err(e) => failures.push(fail(&c.name, &name, "evaluate", e)),
            }
        }

        if masks.len() >= 2 {
            let ensemble = common_grid_masks(c, &masks, boundary.as_ref()).and_then(|(moved, f)| {
                failures.extend(f);
                let mv = majority_vote(&stack_of(moved)?);
                evaluate_map(&mv, &ds)
            });
            match ensemble {
                Ok(ev) => country_cells.push(scored(&c.name, ENSEMBLE_NAME, ev)),
                Err(e) => failures.push(fail(&c.name, ENSEMBLE_NAME, "ensemble", e)),
            }
        } else if !products.is_empty() {
            failures.push(fail(&c.name, ENSEMBLE_NAME, "ensemble", "fewer than two maps loaded"));
        }

        if !country_cells.is_empty() {
            let sets: Vec<MetricSet> = country_cells.iter().map(|s| s.metrics).collect();
            let mean = aggregate_mean(&sets)?;
            country_cells.push(Scored {
                country: c.name.clone(),
                map: MEAN_NAME.to_string(),
                metrics: mean,
                matrix: ErrorMatrix::default(),
                n: ds.len() as u64,
                excluded: 0,
            });
        }
        cells.extend(country_cells);
    }

    let ok = cells.iter().filter(|s| s.map != MEAN_NAME).count();

    // cross-country means per map, in first-seen order
    let mut map_order: Vec<String> = Vec::new();
    for s in &cells {
        if !map_order.contains(&s.map) {
            map_order.push(s.map.clone());
        }
    }
    let mut mean_rows = Vec::new();
    for map in &map_order {
        let of_map: Vec<&Scored> = cells.iter().filter(|s| &s.map == map).collect();
        let sets: Vec<MetricSet> = of_map.iter().map(|s| s.metrics).collect();
        mean_rows.push(Scored {
            country: MEAN_NAME.to_string(),
            map: map.clone(),
            metrics: aggregate_mean(&sets)?,
            matrix: ErrorMatrix::default(),
            n: of_map.iter().map(|s| s.n).sum(),
            excluded: of_map.iter().map(|s| s.excluded).sum(),
        });
    }
    cells.extend(mean_rows);

    let records: Vec<MetricRecord> = cells
        .iter()
        .flat_map(|s| MetricRecord::from_set(&s.country, &s.map, &s.metrics, s.n, s.excluded))
        .collect();
    let matrices: Vec<(String, String, ErrorMatrix)> = cells
        .iter()
        .filter(|s| s.country != MEAN_NAME && s.map != MEAN_NAME)
        .map(|s| (s.country.clone(), s.map.clone(), s.matrix))
        .collect();

    let meta = ctx.meta("assess");
    emit(&ctx.out_dir.join("metrics.csv"), &meta, |p| write_metrics_csv(&records, p))?;
    emit(&ctx.out_dir.join("metrics_table.csv"), &meta, |p| write_metrics_table_csv(&records, p))?;
    emit(&ctx.out_dir.join("error_matrix.csv"), &meta, |p| write_error_matrix_csv(&matrices, p))?;
    emit_failures(ctx, "assess", &failures)?;
    Ok(Outcome::from_counts(ok, failures.len()))
}

/// Country masks on the common grid, ready to stack.
fn country_stack(ctx: &RunContext, c: &CountryConfig, failures: &mut Vec<Failure>) -> Result<(MaskStack, Option<RegionPolygon>)> {
    let boundary = load_boundary(ctx, c)?;
    let ds = c.reference.as_ref().and_then(|_| load_reference(ctx, c).ok());
    let period = composite_period(c, ds.as_ref());
    let (masks, f) = native_masks(ctx, c, boundary.as_ref(), period);
    failures.extend(f);
    let (moved, f) = common_grid_masks(c, &masks, boundary.as_ref())?;
    failures.extend(f);
    Ok((stack_of(moved)?, boundary))
}

/// Vote-count rasters, agreement summaries and pairwise agreement matrices.
pub fn cmd_consensus(ctx: &RunContext) -> Result<Outcome> {
    let countries = ctx.countries()?;
    ctx.prepare_out()?;
    let meta = ctx.meta("consensus");
    let mut failures = Vec::new();
    let mut summaries: Vec<(String, AgreementSummary)> = Vec::new();
    let mut matrices: Vec<AgreementMatrix> = Vec::new();

    for c in countries {
        let result = (|| -> Result<()> {
            let (stack, _) = country_stack(ctx, c, &mut failures)?;
            let votes = vote_count(&stack);
            let summary = summarize_votes(&votes)?;
            let agreement = pairwise_agreement(&stack)?;
            let s = slug(&c.name);
            emit(&ctx.out_dir.join(format!("consensus_{s}.tif")), &meta, |p| {
                write_geotiff(votes.raster(), p)
            })?;
            render_consensus_png(&votes, ctx.out_dir.join(format!("consensus_{s}.png")))?;
            emit(&ctx.out_dir.join(format!("agreement_{s}.csv")), &meta, |p| {
                write_agreement_csv(&agreement, p)
            })?;
            summaries.push((c.name.clone(), summary));
            matrices.push(agreement);
            Ok(())
        })();
        if let Err(e) = result {
            failures.push(fail(&c.name, "*", "consensus", e));
        }
    }

    emit(&ctx.out_dir.join("consensus_summary.csv"), &meta, |p| write_summary_csv(&summaries, p))?;
    if let Some(first) = matrices.first() {
        let names = first.names().to_vec();
        // countries whose map set differs from the first are left out of the mean
        let same: Vec<AgreementMatrix> = matrices.iter().filter(|m| m.names() == names).cloned().collect();
        for (m, (country, _)) in matrices.iter().zip(&summaries) {
            if m.names() != names {
                eprintln!("warning: {country}: map set differs from the first country; not in agreement_mean");
            }
        }
        let (mean, ranks) = mean_and_rank(&same)?;
        emit(&ctx.out_dir.join("agreement_mean.csv"), &meta, |p| write_agreement_csv(&mean, p))?;
        emit(&ctx.out_dir.join("agreement_rank.csv"), &meta, |p| write_rank_csv(&names, &ranks, p))?;
    }
    emit_failures(ctx, "consensus", &failures)?;
    Ok(Outcome::from_counts(summaries.len(), failures.len()))
}

/// Majority-vote ensemble raster per country.
pub fn cmd_ensemble(ctx: &RunContext) -> Result<Outcome> {
    let countries = ctx.countries()?;
    ctx.prepare_out()?;
    let meta = ctx.meta("ensemble");
    let mut failures = Vec::new();
    let mut ok = 0;
    for c in countries {
        let result = country_stack(ctx, c, &mut failures).and_then(|(stack, _)| {
            let mv = majority_vote(&stack);
            emit(&ctx.out_dir.join(format!("ensemble_{}.tif", slug(&c.name))), &meta, |p| {
                write_geotiff(&mv, p)
            })
        });
        match result {
            Ok(()) => ok += 1,
            Err(e) => failures.push(fail(&c.name, ENSEMBLE_NAME, "ensemble", e)),
        }
    }
    emit_failures(ctx, "ensemble", &failures)?;
    Ok(Outcome::from_counts(ok, failures.len()))
}

/// Inputs of the correlation command; every source has a bundled default.
#[derive(Clone, Debug, Default)]
pub struct CorrelateInputs {
    pub metrics: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    /// CSV with `country,validity_start,validity_end` columns.
    pub periods: Option<PathBuf>,
    /// Validity periods that take precedence over `periods`.
    pub period_overrides: BTreeMap<String, (NaiveDate, NaiveDate)>,
    pub out_dir: PathBuf,
    pub exclude: BTreeSet<String>,
    pub seed: u64,
}

fn read_or(path: &Option<PathBuf>, bundled: &str) -> Result<String> {
    match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e)),
        None => Ok(bundled.to_string()),
    }
}

/// Metric correlations with native resolution (cross-country means) and with
/// temporal mismatch (one point per map and country).
pub fn cmd_correlate(inp: &CorrelateInputs) -> Result<(Outcome, Vec<CorrelationResult>, Vec<CorrelationResult>)> {
    let metrics_text = read_or(&inp.metrics, BUNDLED_METRICS)?;
    let table = parse_metrics_csv(&metrics_text)?;
    let specs = match &inp.registry {
        Some(p) => load_product_registry(p)?,
        None => default_registry(),
    };
    let mut periods = parse_reference_periods(&read_or(&inp.periods, BUNDLED_REFERENCE_SUMMARY)?)?;
    periods.extend(inp.period_overrides.clone());
    std::fs::create_dir_all(&inp.out_dir).map_err(|e| Error::io(&inp.out_dir, e))?;
    let meta = RunMeta {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: "correlate".into(),
        config_sha256: sha256_hex(metrics_text.as_bytes()),
        seed: inp.seed,
        rng: RNG_ALGORITHM,
        estimators: vec![
            "correlation: Pearson product-moment r (signed)".into(),
            "resolution points: cross-country mean per product; ensemble and mean columns never included".into(),
            ESTIMATORS[7].into(),
        ],
        excluded: inp.exclude.iter().cloned().collect(),
    };

    let mut failures = Vec::new();
    let by_res = metric_vs_resolution(&table, &specs, &inp.exclude)
        .map_err(|e| failures.push(fail("*", "*", "resolution", e)))
        .unwrap_or_default();
    let by_gap = metric_vs_mismatch(&table, &specs, &reference_years(&periods), &inp.exclude)
        .map_err(|e| failures.push(fail("*", "*", "mismatch", e)))
        .unwrap_or_default();

    let out = &inp.out_dir;
    for (stem, results, xlabel, log_x) in [
        ("resolution", &by_res, "native resolution (m, log scale)", true),
        ("mismatch", &by_gap, "temporal mismatch (years)", false),
    ] {
        if results.is_empty() {
            continue;
        }
        emit(&out.join(format!("correlation_{stem}.csv")), &meta, |p| write_correlation_csv(results, p))?;
        for c in results {
            let title = format!("{} vs {stem} (r = {:.2})", c.metric, c.r);
            write_text(
                out.join(format!("{stem}_{}.svg", c.metric)),
                &scatter_svg(&title, xlabel, &c.metric, &c.points, log_x),
            )?;
        }
    }
    let ok = (!by_res.is_empty()) as usize + (!by_gap.is_empty()) as usize;
    let path = out.join("correlate_failures.csv");
    emit(&path, &meta, |p| write_failures_csv(&failures, p))?;
    Ok((Outcome::from_counts(ok, failures.len()), by_res, by_gap))
}

#[derive(serde::Deserialize)]
struct ManifestRow {
    date: NaiveDate,
    path: PathBuf,
}

fn read_frames(ctx: &RunContext, manifest: &Path, nodata: i32) -> Result<Vec<(NaiveDate, CategoricalRaster)>> {
    let path = ctx.cfg.resolve(manifest);
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let rows: Vec<ManifestRow> = csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::schema(format!("{}: {e}", path.display())))?;
    rows.par_iter()
        .map(|r| {
            let p = if r.path.is_absolute() { r.path.clone() } else { dir.join(&r.path) };
            Ok((r.date, read_geotiff(p, nodata)?))
        })
        .collect()
}

/// Resolve the `--region` choice for a country into a polygon.
fn pick_region(ctx: &RunContext, c: &CountryConfig, region: Option<&str>) -> Result<Option<(String, RegionPolygon)>> {
    let Some(name) = region else { return Ok(None) };
    let path = c
        .regions
        .as_ref()
        .ok_or_else(|| Error::schema(format!("{}: no regions file configured for --region {name:?}", c.name)))?;
    let regions = read_geojson_regions(ctx.cfg.resolve(path))?;
    let available: Vec<String> = regions.iter().filter_map(|r| r.name.clone()).collect();
    regions
        .into_iter()
        .find(|r| r.name.as_deref() == Some(name))
        .map(|r| Some((name.to_string(), r.polygon)))
        .ok_or_else(|| Error::schema(format!("{}: unknown region {name:?}; available: {available:?}", c.name)))
}

/// Validity periods of the configured reference datasets that can be read.
pub fn config_periods(ctx: &RunContext) -> BTreeMap<String, (NaiveDate, NaiveDate)> {
    ctx.cfg
        .config
        .countries
        .iter()
        .filter_map(|c| load_reference(ctx, c).ok().map(|ds| (c.name.clone(), ds.validity())))
        .collect()
}

/// Mean index value inside each mask (and the ensemble) per frame date.
pub fn cmd_timeseries(ctx: &RunContext, region: Option<&str>) -> Result<Outcome> {
    let countries: Vec<&CountryConfig> = ctx.countries()?.into_iter().filter(|c| c.ndvi.is_some()).collect();
    if countries.is_empty() {
        return Err(Error::schema("no country has an ndvi block"));
    }
    let picked: Vec<Option<(String, RegionPolygon)>> = countries
        .iter()
        .map(|c| pick_region(ctx, c, region))
        .collect::<Result<_>>()?;
    ctx.prepare_out()?;
    let meta = ctx.meta("timeseries");
    let mut failures = Vec::new();
    let mut all_series: Vec<TimeSeries> = Vec::new();
    let mut ok = 0;

    for (c, picked) in countries.into_iter().zip(picked) {
        let ndvi = c.ndvi.as_ref().expect("filtered above");
        let result = (|| -> Result<Vec<TimeSeries>> {
            let frames = read_frames(ctx, &ndvi.manifest, ndvi.nodata)?;
            let frame_grid = frames
                .first()
                .ok_or(Error::Empty("index manifest lists no frames"))?
                .1
                .grid()
                .clone();
            let (stack, boundary) = country_stack(ctx, c, &mut failures)?;
            let mv = majority_vote(&stack);
            let (region_name, area) = match picked {
                Some((name, poly)) => (name, Some(poly)),
                None => (c.name.clone(), boundary),
            };
            let region_mask = match &area {
                Some(poly) => rasterize_polygon(poly, &frame_grid)?,
                None => BinaryMask::from_bools(frame_grid.clone(), &vec![true; frame_grid.len()])?,
            };
            let members: Vec<(&str, &BinaryMask)> = stack
                .names()
                .iter()
                .map(String::as_str)
                .zip(stack.masks())
                .chain(std::iter::once((ENSEMBLE_NAME, &mv)))
                .collect();
            members
                .par_iter()
                .map(|(name, m)| {
                    let coarse = resample_mask(m, &frame_grid)?;
                    Ok(masked_timeseries(&frames, &coarse, &region_mask, name, &region_name)?.scaled(ndvi.scale))
                })
                .collect()
        })();
        match result {
            Ok(series) => {
                let lines: Vec<(String, Vec<(f64, Option<f64>)>)> = series
                    .iter()
                    .map(|s| {
                        let pts = s
                            .entries
                            .iter()
                            .map(|e| (e.date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp() as f64 / 86400.0, e.mean))
                            .collect();
                        (s.mask_name.clone(), pts)
                    })
                    .collect();
                let title = format!("masked index mean, {}", series.first().map_or("", |s| s.region_name.as_str()));
                write_text(
                    ctx.out_dir.join(format!("timeseries_{}.svg", slug(&c.name))),
                    &line_svg(&title, "days since 1970-01-01", "mean index", &lines),
                )?;
                all_series.extend(series);
                ok += 1;
            }
            Err(e) => failures.push(fail(&c.name, "*", "timeseries", e)),
        }
    }
    emit(&ctx.out_dir.join("timeseries.csv"), &meta, |p| write_timeseries_csv(&all_series, p))?;
    emit_failures(ctx, "timeseries", &failures)?;
    Ok(Outcome::from_counts(ok, failures.len()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Design {
    Uniform,
    Stratified,
}

/// Draw sample locations per country. Country `i` (config order) uses seed `seed + i`.
pub fn cmd_sample(ctx: &RunContext, design: Option<Design>, n: Option<usize>) -> Result<Outcome> {
    let countries = ctx.countries()?;
    ctx.prepare_out()?;
    let meta = ctx.meta("sample");
    let mut failures = Vec::new();
    let mut ok = 0;
    for c in countries {
        let idx = ctx.cfg.config.countries.iter().position(|x| x.name == c.name).unwrap_or(0);
        let seed = ctx.seed.wrapping_add(idx as u64);
        let design = design.unwrap_or(if c.strata.is_some() && !c.allocation.is_empty() {
            Design::Stratified
        } else {
            Design::Uniform
        });
        let result = (|| -> Result<Vec<(f64, f64, Option<i32>)>> {
            match design {
                Design::Uniform => {
                    let poly = load_boundary(ctx, c)?
                        .ok_or_else(|| Error::schema(format!("{}: uniform sampling needs a boundary", c.name)))?;
                    let n = n.or(c.sample_size).ok_or_else(|| {
                        Error::schema(format!("{}: give --n or sample_size", c.name))
                    })?;
                    Ok(uniform_sample(&poly, n, seed)?.into_iter().map(|(x, y)| (x, y, None)).collect())
                }
                Design::Stratified => {
                    let path = c
                        .strata
                        .as_ref()
                        .ok_or_else(|| Error::schema(format!("{}: stratified sampling needs a strata raster", c.name)))?;
                    let strata = read_geotiff(ctx.cfg.resolve(path), UNTAGGED_NODATA)?;
                    let alloc: BTreeMap<i32, usize> = c.allocation.clone();
                    Ok(stratified_sample(&strata, &alloc, seed)?
                        .into_iter()
                        .map(|(x, y, s)| (x, y, Some(s)))
                        .collect())
                }
            }
        })();
        match result.and_then(|pts| {
            emit(&ctx.out_dir.join(format!("sample_{}.csv", slug(&c.name))), &meta, |p| {
                write_points_csv(&pts, p)
            })
        }) {
            Ok(()) => ok += 1,
            Err(e) => failures.push(fail(&c.name, "*", "sample", e)),
        }
    }
    emit_failures(ctx, "sample", &failures)?;
    Ok(Outcome::from_counts(ok, failures.len()))
}
