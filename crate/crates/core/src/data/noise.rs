use rand::seq::index::sample;
use rand::Rng;

use crate::data::DatasetIndex;
use crate::error::{Error, Result};
use crate::region::{AnatomicalRegion, NUM_REGIONS};
use crate::rng;

/// Replaces the archive label of `round_half_up(rate * N)` uniformly chosen
/// records with a uniformly drawn different region. The untouched label is
/// kept in the hidden original-label field.
pub fn inject_label_noise(index: &DatasetIndex, rate: f64, seed: u64) -> Result<DatasetIndex> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("noise rate {rate} outside [0, 1]")));
    }
    let n = index.len();
    let count = ((rate * n as f64) + 0.5).floor() as usize;
    let mut rng = rng::stream(seed, &[0x0153]);
    let mut records = index.records().to_vec();
    let mut chosen = sample(&mut rng, n, count.min(n)).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let r = &mut records[i];
        let old = r.archive_label.code();
        let shift = rng.random_range(1..NUM_REGIONS);
        let new = AnatomicalRegion::from_code((old + shift) % NUM_REGIONS).expect("code in range");
        if r.original_label.is_none() {
            r.original_label = Some(r.archive_label);
        }
        r.archive_label = new;
        r.corrupted = Some(true);
    }
    DatasetIndex::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{RadiographRecord, Split};
    use proptest::prelude::*;

    fn uniform(n_per_class: usize) -> DatasetIndex {
        let mut records = Vec::new();
        for region in AnatomicalRegion::ALL {
            for i in 0..n_per_class {
                records.push(RadiographRecord::new(format!("{}-{i}", region.name()), "x.png", region, Some(Split::Test)));
            }
        }
        DatasetIndex::new(records).unwrap()
    }

    #[test]
    fn zero_rate_is_identity() {
        let idx = uniform(10);
        assert_eq!(inject_label_noise(&idx, 0.0, 3).unwrap(), idx);
    }

    #[test]
    fn full_rate_changes_every_label() {
        let noisy = inject_label_noise(&uniform(10), 1.0, 3).unwrap();
        assert!(noisy.records().iter().all(|r| r.archive_label != r.true_label() && r.is_corrupted()));
    }

    #[test]
    fn five_percent_of_2800_is_140() {
        let noisy = inject_label_noise(&uniform(200), 0.05, 11).unwrap();
        assert_eq!(noisy.records().iter().filter(|r| r.is_corrupted()).count(), 140);
    }

    #[test]
    fn rejects_rate_outside_unit_interval() {
        assert!(inject_label_noise(&uniform(1), 1.5, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn changes_exactly_the_rounded_count(per_class in 1usize..20, rate in 0.0f64..=1.0, seed in any::<u64>()) {
            let idx = uniform(per_class);
            let noisy = inject_label_noise(&idx, rate, seed).unwrap();
            let expected = (rate * idx.len() as f64 + 0.5).floor() as usize;
            let changed = noisy.records().iter().zip(idx.records())
                .filter(|(a, b)| a.archive_label != b.archive_label).count();
            prop_assert_eq!(changed, expected);
            for r in noisy.records() {
                prop_assert_eq!(r.is_corrupted(), r.archive_label != r.true_label());
            }
        }
    }
}
