//! Score a mask against reference points: error matrix, metrics with
//! standard errors, and the mean over several maps.

use chrono::NaiveDate;
use cropeval::assess::{aggregate_mean, evaluate_map};
use cropeval::grid::{BinaryMask, GridSpec};
use cropeval::reference::{ReferenceDataset, ReferencePoint};

fn main() -> cropeval::Result<()> {
    let grid = GridSpec::new(0.0, 100.0, 10.0, 10.0, 10, 10, "")?;
    // left half crop
    let truth: Vec<bool> = (0..100).map(|i| i % 10 < 5).collect();
    let points: Vec<ReferencePoint> = (0..100)
        .step_by(3)
        .map(|i| {
            let (x, y) = grid.pixel_center(i % 10, i / 10);
            ReferencePoint { x, y, label: truth[i] as u8 }
        })
        .collect();
    let day = |m, d| NaiveDate::from_ymd_opt(2019, m, d).unwrap();
    let ds = ReferenceDataset::new("Example", day(1, 1), day(12, 31), points)?;

    let good = BinaryMask::from_bools(grid.clone(), &(0..100).map(|i| i % 10 < 6).collect::<Vec<_>>())?;
    let poor = BinaryMask::from_bools(grid.clone(), &(0..100).map(|i| i / 10 < 5).collect::<Vec<_>>())?;
    let mut sets = Vec::new();
    for (name, mask) in [("good", &good), ("poor", &poor)] {
        let ev = evaluate_map(mask, &ds)?;
        let m = ev.matrix;
        println!("{name}: tp={} fp={} fn={} tn={}", m.tp, m.fp, m.fn_, m.tn);
        for (metric, v, se) in ev.metrics.rows() {
            println!("  {metric:<9} {v:.3} ± {se:.3}");
        }
        sets.push(ev.metrics);
    }
    let mean = aggregate_mean(&sets)?;
    println!("mean accuracy {:.3} ± {:.3}", mean.accuracy, mean.se_accuracy);
    Ok(())
}
