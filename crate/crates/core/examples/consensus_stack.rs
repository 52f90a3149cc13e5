//! Stack masks, count votes, derive the majority-vote ensemble and summarize
//! how often the masks agree.

use cropeval::consensus::{agreement_summary, majority_vote, vote_count, MaskStack};
use cropeval::grid::{BinaryMask, GridSpec, MASK_NODATA};

fn main() -> cropeval::Result<()> {
    let grid = GridSpec::new(0.0, 20.0, 10.0, 10.0, 4, 2, "")?;
    let n = MASK_NODATA;
    let masks = vec![
        BinaryMask::new(grid.clone(), vec![1, 1, 0, 0, 1, 0, 1, 0], n)?,
        BinaryMask::new(grid.clone(), vec![1, 0, 0, 1, 1, 0, 1, n], n)?,
        BinaryMask::new(grid.clone(), vec![1, 1, 0, 0, 0, 0, 1, 0], n)?,
    ];
    let stack = MaskStack::new(vec!["A".into(), "B".into(), "C".into()], masks)?;

    let votes = vote_count(&stack);
    println!("votes    {:?}", votes.raster().values());
    println!("majority {:?}", majority_vote(&stack).values());
    let s = agreement_summary(&stack)?;
    println!(
        "all agree {:.1}%  all crop {:.1}%  none crop {:.1}%  split {:.1}%  over {} pixels",
        s.pct_all_same, s.pct_all_crop, s.pct_none_crop, s.pct_split, s.valid_pixel_count
    );
    Ok(())
}
