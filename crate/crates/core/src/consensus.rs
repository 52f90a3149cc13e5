//! How much a set of crop masks agree: vote counts, majority vote, summary
//! percentages and pairwise agreement matrices.

use std::collections::BTreeSet;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, CategoricalRaster, GridSpec, MASK_NODATA};

/// Largest stack whose vote counts still fit below the 255 nodata code.
pub const MAX_STACK: usize = 254;

/// Named, co-registered masks. Order fixes the row/column order of matrices.
#[derive(Clone, Debug)]
pub struct MaskStack {
    names: Vec<String>,
    masks: Vec<BinaryMask>,
}

impl MaskStack {
    pub fn new(names: Vec<String>, masks: Vec<BinaryMask>) -> Result<Self> {
        if names.len() != masks.len() {
            return Err(Error::invalid(format!(
                "{} names for {} masks",
                names.len(),
                masks.len()
            )));
        }
        if !(2..=MAX_STACK).contains(&masks.len()) {
            return Err(Error::invalid(format!(
                "a stack needs between 2 and {MAX_STACK} masks, got {}",
                masks.len()
            )));
        }
        if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
            return Err(Error::invalid("mask names must be unique"));
        }
        let grid = masks[0].grid();
        for m in &masks[1..] {
            grid.ensure_coregistered(m.grid())?;
        }
        Ok(MaskStack { names, masks })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn grid(&self) -> &GridSpec {
        self.masks[0].grid()
    }

    /// Return a stack with `mask` appended under `name`.
    pub fn with(mut self, name: impl Into<String>, mask: BinaryMask) -> Result<Self> {
        self.names.push(name.into());
        self.masks.push(mask);
        Self::new(self.names, self.masks)
    }

    /// Crop votes at pixel `i`, or `None` if any mask is nodata there.
    fn votes_at(&self, i: usize) -> Option<u32> {
        let mut votes = 0;
        for m in &self.masks {
            match m.values()[i] {
                0 => {}
                1 => votes += 1,
                _ => return None,
            }
        }
        Some(votes)
    }
}

/// Per-pixel crop-vote counts, `0..=n` or [`MASK_NODATA`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusRaster {
    raster: CategoricalRaster,
    n: usize,
}

impl ConsensusRaster {
    pub fn raster(&self) -> &CategoricalRaster {
        &self.raster
    }

    pub fn into_raster(self) -> CategoricalRaster {
        self.raster
    }

    /// Number of masks that voted.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Pixel counts per vote value `0..=n`, ignoring nodata.
    pub fn histogram(&self) -> Vec<u64> {
        let n = self.n;
        self.raster
            .values()
            .par_chunks(self.raster.width())
            .fold(
                || vec![0u64; n + 1],
                |mut h, row| {
                    for &v in row {
                        if v != MASK_NODATA {
                            h[v as usize] += 1;
                        }
                    }
                    h
                },
            )
            .reduce(|| vec![0u64; n + 1], add_counts)
    }
}

fn add_counts(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    a
}

/// Number of masks calling each pixel crop. Nodata wherever any mask is nodata.
pub fn vote_count(stack: &MaskStack) -> ConsensusRaster {
    let grid = stack.grid();
    let mut out = vec![MASK_NODATA; grid.len()];
    out.par_chunks_mut(grid.width)
        .enumerate()
        .for_each(|(r, row)| {
            let base = r * grid.width;
            for (c, dst) in row.iter_mut().enumerate() {
                if let Some(v) = stack.votes_at(base + c) {
                    *dst = v as i32;
                }
            }
        });
    ConsensusRaster {
        raster: CategoricalRaster::new(grid.clone(), out, MASK_NODATA)
            .expect("grid validated by the stack"),
        n: stack.len(),
    }
}

/// Crop iff strictly more than half of the masks say crop (an even split is non-crop).
pub fn majority_vote(stack: &MaskStack) -> BinaryMask {
    let n = stack.len() as i32;
    let votes = vote_count(stack).into_raster();
    let grid = votes.grid().clone();
    let values = votes
        .into_values()
        .into_par_iter()
        .map(|v| match v {
            MASK_NODATA => MASK_NODATA,
            v => (2 * v > n) as i32,
        })
        .collect();
    BinaryMask::new(grid, values, MASK_NODATA).expect("values are 0, 1 or nodata")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AgreementSummary {
    pub pct_all_same: f64,
    pub pct_all_crop: f64,
    pub pct_split: f64,
    pub pct_none_crop: f64,
    pub valid_pixel_count: u64,
}

/// Vote counts regarded as a split decision: the one or two counts nearest n/2.
pub fn split_votes(n: usize) -> Vec<usize> {
    if n % 2 == 1 {
        vec![(n - 1) / 2, (n + 1) / 2]
    } else {
        vec![n / 2]
    }
}

pub fn summarize_votes(votes: &ConsensusRaster) -> Result<AgreementSummary> {
    let hist = votes.histogram();
    let n = votes.n();
    let valid: u64 = hist.iter().sum();
    if valid == 0 {
        return Err(Error::Empty("no pixel is valid in every mask"));
    }
    let pct = |c: u64| 100.0 * c as f64 / valid as f64;
    let split: u64 = split_votes(n).into_iter().map(|k| hist[k]).sum();
    Ok(AgreementSummary {
        pct_all_same: pct(hist[0] + hist[n]),
        pct_all_crop: pct(hist[n]),
        pct_split: pct(split),
        pct_none_crop: pct(hist[0]),
        valid_pixel_count: valid,
    })
}

/// Share of valid pixels where all masks agree, all say crop, all say
/// non-crop, or the vote is split as evenly as the mask count allows.
pub fn agreement_summary(stack: &MaskStack) -> Result<AgreementSummary> {
    summarize_votes(&vote_count(stack))
}

/// Symmetric matrix of pairwise agreement fractions with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct AgreementMatrix {
    names: Vec<String>,
    values: Vec<f64>,
}

impl AgreementMatrix {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = names.len();
        if values.len() != n * n {
            return Err(Error::invalid(format!(
                "{} values for a {n}x{n} matrix",
                values.len()
            )));
        }
        Ok(AgreementMatrix { names, values })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.values[i * n..(i + 1) * n]
    }
}

/// Fraction of pixels (valid in every mask) on which each pair of masks agrees.
pub fn pairwise_agreement(stack: &MaskStack) -> Result<AgreementMatrix> {
    let n = stack.len();
    let grid = stack.grid();
    // counts[i*n+j] for i<j, plus the valid-pixel total in the last slot
    let zero = || vec![0u64; n * n + 1];
    let counts = (0..grid.height)
        .into_par_iter()
        .fold(zero, |mut acc, r| {
            let mut px = vec![0i32; n];
            for c in 0..grid.width {
                let i = r * grid.width + c;
                let mut valid = true;
                for (k, m) in stack.masks().iter().enumerate() {
                    px[k] = m.values()[i];
                    valid &= px[k] == 0 || px[k] == 1;
                }
                if !valid {
                    continue;
                }
                acc[n * n] += 1;
                for a in 0..n {
                    for b in a + 1..n {
                        acc[a * n + b] += (px[a] == px[b]) as u64;
                    }
                }
            }
            acc
        })
        .reduce(zero, add_counts);
    let valid = counts[n * n];
    if valid == 0 {
        return Err(Error::Empty("no pixel is valid in every mask"));
    }
    let mut values = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let f = counts[a * n + b] as f64 / valid as f64;
            values[a * n + b] = f;
            values[b * n + a] = f;
        }
    }
    AgreementMatrix::new(stack.names().to_vec(), values)
}

/// Ranks of the off-diagonal entries of one row, 1 = lowest; ties share the
/// lower rank and the diagonal is 0.
pub fn rank_row(row: &[f64], diag: usize) -> Vec<u32> {
    (0..row.len())
        .map(|j| {
            if j == diag {
                0
            } else {
                1 + (0..row.len())
                    .filter(|&k| k != diag && row[k] < row[j])
                    .count() as u32
            }
        })
        .collect()
}

/// Elementwise mean of matrices with identical names, and within-row ranks of that mean.
pub fn mean_and_rank(matrices: &[AgreementMatrix]) -> Result<(AgreementMatrix, Vec<Vec<u32>>)> {
    let first = matrices
        .first()
        .ok_or(Error::Empty("mean_and_rank needs at least one matrix"))?;
    if let Some(m) = matrices.iter().find(|m| m.names != first.names) {
        return Err(Error::invalid(format!(
            "matrix over {:?} does not match {:?}",
            m.names, first.names
        )));
    }
    let k = matrices.len() as f64;
    let values = (0..first.values.len())
        .map(|i| matrices.iter().map(|m| m.values[i]).sum::<f64>() / k)
        .collect();
    let mean = AgreementMatrix::new(first.names.clone(), values)?;
    let ranks = (0..mean.dim()).map(|i| rank_row(mean.row(i), i)).collect();
    Ok((mean, ranks))
}

/// Colour for `votes` out of `n`: red at 0, yellow at n/2, blue at n.
pub fn ramp_color(votes: u32, n: usize) -> [u8; 3] {
    const RED: [f64; 3] = [215.0, 25.0, 28.0];
    const YELLOW: [f64; 3] = [255.0, 255.0, 191.0];
    const BLUE: [f64; 3] = [44.0, 123.0, 182.0];
    let t = if n == 0 { 0.0 } else { votes as f64 / n as f64 };
    let (a, b, u) = if t <= 0.5 {
        (RED, YELLOW, t * 2.0)
    } else {
        (YELLOW, BLUE, (t - 0.5) * 2.0)
    };
    std::array::from_fn(|i| (a[i] + (b[i] - a[i]) * u).round() as u8)
}

/// Render vote counts as an RGBA PNG; nodata is transparent.
pub fn render_consensus_png(votes: &ConsensusRaster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let r = votes.raster();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), r.width() as u32, r.height() as u32);
    enc.set_color(png::ColorType::Rgba);
    enc.set_depth(png::BitDepth::Eight);
    let mut data = Vec::with_capacity(r.values().len() * 4);
    for &v in r.values() {
        if v == MASK_NODATA {
            data.extend_from_slice(&[0, 0, 0, 0]);
        } else {
            data.extend_from_slice(&ramp_color(v as u32, votes.n()));
            data.push(255);
        }
    }
    let png_err = |e: png::EncodingError| Error::invalid(format!("png encoding: {e}"));
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(&data).map_err(png_err)?;
    w.finish().map_err(png_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn grid(w: usize, h: usize) -> GridSpec {
        GridSpec::new(0.0, h as f64, 1.0, 1.0, w, h, "EPSG:32636").unwrap()
    }

    fn stack(masks: Vec<Vec<i32>>, w: usize, h: usize) -> MaskStack {
        let names = (0..masks.len()).map(|i| format!("m{i}")).collect();
        let masks = masks
            .into_iter()
            .map(|v| BinaryMask::new(grid(w, h), v, MASK_NODATA).unwrap())
            .collect();
        MaskStack::new(names, masks).unwrap()
    }

    fn random_stack(rng: &mut impl Rng, n: usize, w: usize, h: usize, nodata_p: f64) -> MaskStack {
        let masks = (0..n)
            .map(|_| {
                (0..w * h)
                    .map(|_| {
                        if rng.random_bool(nodata_p) {
                            MASK_NODATA
                        } else {
                            rng.random_range(0..2)
                        }
                    })
                    .collect()
            })
            .collect();
        stack(masks, w, h)
    }

    #[test]
    fn stack_validation() {
        let m = BinaryMask::new(grid(2, 2), vec![0; 4], MASK_NODATA).unwrap();
        assert!(MaskStack::new(vec!["a".into()], vec![m.clone()]).is_err());
        assert!(MaskStack::new(vec!["a".into(), "a".into()], vec![m.clone(), m.clone()]).is_err());
        let other = BinaryMask::new(grid(4, 1), vec![0; 4], MASK_NODATA).unwrap();
        assert!(MaskStack::new(vec!["a".into(), "b".into()], vec![m, other]).is_err());
    }

    #[test]
    fn saturated_votes() {
        let s = stack(vec![vec![1; 6]; 4], 3, 2);
        assert_eq!(vote_count(&s).raster().values(), &[4; 6]);
        let s = stack(vec![vec![0; 6]; 4], 3, 2);
        assert_eq!(vote_count(&s).raster().values(), &[0; 6]);
    }

    #[test]
    fn votes_match_elementwise_sum() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let s = random_stack(&mut rng, 3, 8, 8, 0.0);
        let v = vote_count(&s);
        for i in 0..64 {
            let sum: i32 = s.masks().iter().map(|m| m.values()[i]).sum();
            assert_eq!(v.raster().values()[i], sum);
        }
    }

    #[test]
    fn majority_rules() {
        let votes = |k: usize| {
            let masks = (0..11).map(|i| vec![(i < k) as i32]).collect();
            majority_vote(&stack(masks, 1, 1)).values()[0]
        };
        assert_eq!(votes(6), 1);
        assert_eq!(votes(5), 0);
        assert_eq!(majority_vote(&stack(vec![vec![1], vec![0]], 1, 1)).values(), &[0]);
    }

    #[test]
    fn majority_equals_threshold_at_three_of_five() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let s = random_stack(&mut rng, 5, 10, 10, 0.05);
        let mv = majority_vote(&s);
        let vc = vote_count(&s);
        for (m, v) in mv.values().iter().zip(vc.raster().values()) {
            let expect = if *v == MASK_NODATA { MASK_NODATA } else { (*v >= 3) as i32 };
            assert_eq!(*m, expect);
        }
    }

    #[test]
    fn summary_extremes() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(2);
        let one: Vec<i32> = (0..16).map(|_| rng.random_range(0..2)).collect();
        let s = stack(vec![one; 11], 4, 4);
        let a = agreement_summary(&s).unwrap();
        assert_eq!((a.pct_all_same, a.pct_split), (100.0, 0.0));

        let masks = (0..11).map(|i| vec![(i < 6) as i32; 16]).collect();
        assert_eq!(agreement_summary(&stack(masks, 4, 4)).unwrap().pct_split, 100.0);

        let s = stack(vec![vec![MASK_NODATA; 4], vec![1; 4]], 2, 2);
        assert!(agreement_summary(&s).is_err());
        assert!(pairwise_agreement(&s).is_err());
    }

    #[test]
    fn split_sets() {
        assert_eq!(split_votes(11), vec![5, 6]);
        assert_eq!(split_votes(4), vec![2]);
        assert_eq!(split_votes(2), vec![1]);
    }

    #[test]
    fn pairwise_self_and_complement() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(4);
        let a: Vec<i32> = (0..20).map(|_| rng.random_range(0..2)).collect();
        let not_a: Vec<i32> = a.iter().map(|v| 1 - v).collect();
        let m = pairwise_agreement(&stack(vec![a.clone(), a, not_a], 5, 4)).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 2), 0.0);
        assert_eq!(m.get(1, 2), 0.0);
        assert_eq!((m.get(0, 0), m.get(1, 1), m.get(2, 2)), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ranks_and_means() {
        assert_eq!(rank_row(&[0.0, 0.2, 0.9, 0.5], 0), vec![0, 1, 3, 2]);
        assert_eq!(rank_row(&[0.3, 0.0, 0.3, 0.1], 1), vec![2, 0, 2, 1]);
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let m1 = AgreementMatrix::new(names.clone(), vec![0.0, 0.4, 0.4, 0.0]).unwrap();
        let m2 = AgreementMatrix::new(names.clone(), vec![0.0, 0.8, 0.8, 0.0]).unwrap();
        let (mean, _) = mean_and_rank(&[m1.clone()]).unwrap();
        assert_eq!(mean, m1);
        let (mean, ranks) = mean_and_rank(&[m1, m2]).unwrap();
        assert!((mean.get(0, 1) - 0.6).abs() < 1e-15);
        assert_eq!(ranks, vec![vec![0, 1], vec![1, 0]]);
        let other = AgreementMatrix::new(vec!["a".into(), "c".into()], vec![0.0; 4]).unwrap();
        assert!(mean_and_rank(&[mean, other]).is_err());
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp_color(0, 11), [215, 25, 28]);
        assert_eq!(ramp_color(11, 11), [44, 123, 182]);
        assert_eq!(ramp_color(2, 4), [255, 255, 191]);
    }

    #[test]
    fn png_written() {
        let dir = tempfile::tempdir().unwrap();
        let s = stack(vec![vec![1, 0, MASK_NODATA, 1], vec![1, 1, 0, 0]], 2, 2);
        let p = dir.path().join("votes.png");
        render_consensus_png(&vote_count(&s), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }

    proptest! {
        #[test]
        fn vote_count_permutation_invariant(seed in any::<u64>(), n in 2usize..7) {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let s = random_stack(&mut rng, n, 7, 5, 0.1);
            let mut names = s.names().to_vec();
            let mut masks = s.masks().to_vec();
            names.rotate_left(1);
            masks.rotate_left(1);
            let rotated = MaskStack::new(names, masks).unwrap();
            prop_assert_eq!(vote_count(&s), vote_count(&rotated));
        }

        #[test]
        fn summary_and_pairwise_invariants(seed in any::<u64>(), n in 2usize..8) {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let s = random_stack(&mut rng, n, 9, 9, 0.02);
            let Ok(a) = agreement_summary(&s) else { return Ok(()); };
            prop_assert!((a.pct_all_same - a.pct_all_crop - a.pct_none_crop).abs() < 1e-9);
            // every all-crop pixel is crop in each mask, so no mask's crop share
            // (over the jointly valid pixels) can be below pct_all_crop
            let votes = vote_count(&s);
            for m in s.masks() {
                let crop = m.values().iter().zip(votes.raster().values())
                    .filter(|(&v, &c)| c != MASK_NODATA && v == 1).count();
                prop_assert!(a.pct_all_crop <= 100.0 * crop as f64 / a.valid_pixel_count as f64 + 1e-9);
            }
            let m = pairwise_agreement(&s).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                }
            }
            let dup = s.clone().with("dup", s.masks()[0].clone()).unwrap();
            let md = pairwise_agreement(&dup).unwrap();
            prop_assert_eq!(md.get(0, n), 1.0);
        }
    }
}
