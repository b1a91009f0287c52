use rand::seq::SliceRandom;

use crate::data::{DatasetIndex, Split};
use crate::error::{Error, Result};
use crate::region::{AnatomicalRegion, NUM_REGIONS};
use crate::rng;

/// Train / validation / test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios(pub [f64; 3]);

impl SplitRatios {
    pub const ARCHIVE: SplitRatios = SplitRatios([0.64, 0.16, 0.20]);

    pub fn validate(&self) -> Result<()> {
        let r = self.0;
        let sum: f64 = r.iter().sum();
        if r.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::RatioSumInvalid(r));
        }
        Ok(())
    }
}

/// Splits `n` items into three parts by largest remainder. Equal remainders
/// favour the earlier split.
pub(crate) fn largest_remainder(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut parts = [0usize; 3];
    for (p, e) in parts.iter_mut().zip(&exact) {
        *p = e.floor() as usize;
    }
    let mut left = n - parts.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[s] > 0.0 {
            parts[s] += 1;
            left -= 1;
        }
    }
    parts
}

/// Stratified split: every region's records are shuffled with a
/// per-region stream and cut into consecutive train / val / test blocks
/// sized by largest remainder. Regions without records are skipped.
pub fn split_dataset(index: &DatasetIndex, ratios: SplitRatios, seed: u64, allow_reassign: bool) -> Result<DatasetIndex> {
    ratios.validate()?;
    if !allow_reassign {
        if let Some(r) = index.records().iter().find(|r| r.split.is_some()) {
            return Err(Error::AlreadyAssigned(r.id.clone()));
        }
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_REGIONS];
    for (i, r) in index.records().iter().enumerate() {
        by_class[r.archive_label.code()].push(i);
    }
    for region in AnatomicalRegion::ALL {
        let n = by_class[region.code()].len();
        if n > 0 && n < 3 {
            return Err(Error::EmptyClass(region));
        }
    }
    let mut records = index.records().to_vec();
    for region in AnatomicalRegion::ALL {
        let members = &mut by_class[region.code()];
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng::stream(seed, &[0x5b11, region.code() as u64]));
        let sizes = largest_remainder(members.len(), &ratios.0);
        let mut cursor = 0;
        for (split, size) in Split::ALL.iter().zip(sizes) {
            for &i in &members[cursor..cursor + size] {
                records[i].split = Some(*split);
            }
            cursor += size;
        }
    }
    DatasetIndex::new(records)
}
