//! Pairwise agreement between masks in two regions, their mean, and the
//! within-row ranks used to spot the odd one out.

use cropeval::consensus::{mean_and_rank, pairwise_agreement, MaskStack};
use cropeval::grid::{BinaryMask, GridSpec};

fn stack(bits: [[i32; 6]; 3]) -> cropeval::Result<MaskStack> {
    let grid = GridSpec::new(0.0, 10.0, 10.0, 10.0, 6, 1, "")?;
    let masks = bits
        .iter()
        .map(|b| BinaryMask::new(grid.clone(), b.to_vec(), 255))
        .collect::<cropeval::Result<Vec<_>>>()?;
    MaskStack::new(vec!["A".into(), "B".into(), "C".into()], masks)
}

fn main() -> cropeval::Result<()> {
    let north = pairwise_agreement(&stack([[1, 1, 0, 0, 1, 0], [1, 1, 0, 0, 0, 0], [0, 0, 1, 1, 0, 1]])?)?;
    let south = pairwise_agreement(&stack([[1, 0, 0, 0, 1, 1], [1, 0, 0, 1, 1, 1], [0, 1, 1, 0, 0, 1]])?)?;
    let (mean, ranks) = mean_and_rank(&[north, south])?;
    for (i, name) in mean.names().iter().enumerate() {
        let row: Vec<String> = mean.row(i).iter().map(|v| format!("{v:.2}")).collect();
        println!("{name}: {}   ranks {:?}", row.join(" "), ranks[i]);
    }
    Ok(())
}
