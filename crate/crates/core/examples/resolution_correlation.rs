//! Correlate the bundled per-country metric table with native resolution and
//! with the years between map and reference labels.

use std::collections::BTreeSet;

use cropeval::analysis::{
    metric_vs_mismatch, metric_vs_resolution, parse_reference_periods, reference_years,
    BUNDLED_METRICS, BUNDLED_REFERENCE_SUMMARY,
};
use cropeval::productmap::default_registry;
use cropeval::report::parse_metrics_csv;

fn main() -> cropeval::Result<()> {
    let table = parse_metrics_csv(BUNDLED_METRICS)?;
    let specs = default_registry();
    let years = reference_years(&parse_reference_periods(BUNDLED_REFERENCE_SUMMARY)?);

    for exclude in [vec![], vec!["ASAP", "GlobCover"]] {
        let exclude: BTreeSet<String> = exclude.into_iter().map(String::from).collect();
        println!("excluding {exclude:?}");
        for c in metric_vs_resolution(&table, &specs, &exclude)? {
            println!("  resolution  {:<9} r = {:+.3} over {} maps", c.metric, c.r, c.n_points);
        }
    }
    for c in metric_vs_mismatch(&table, &specs, &years, &BTreeSet::new())? {
        println!("  mismatch    {:<9} r = {:+.3} over {} map-country pairs", c.metric, c.r, c.n_points);
    }
    Ok(())
}
