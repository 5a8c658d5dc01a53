use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Smallest (class, SNR) cell that can be split.
pub const MIN_CELL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|v| !(0.0..=1.0).contains(v)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config(format!(
                "split ratios {r:?} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// Frames per partition for a cell of `n`: floors of each ratio, then the
    /// remainder one at a time to train, val, test.
    pub fn allocate(&self, n: usize) -> [usize; 3] {
        let mut out =
            [self.train, self.val, self.test].map(|r| (r * n as f64 + 1e-9).floor() as usize);
        let mut rest = n - out.iter().sum::<usize>();
        let mut k = 0;
        while rest > 0 {
            out[k % 3] += 1;
            rest -= 1;
            k += 1;
        }
        out
    }
}

/// Frame indices of each partition, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified random partition per (class, SNR) cell.
pub fn split_dataset(d: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut cells: BTreeMap<(u16, i16), Vec<usize>> = BTreeMap::new();
    for (i, f) in d.frames.iter().enumerate() {
        cells.entry((f.class_id, f.snr_db)).or_default().push(i);
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for ((class, snr), mut idx) in cells {
        if idx.len() < MIN_CELL {
            return Err(Error::config(format!(
                "cell (class {class}, {snr} dB) has {} frames, need at least {MIN_CELL}",
                idx.len()
            )));
        }
        let key = ((class as u64) << 16) | (snr as u16 as u64);
        idx.shuffle(&mut substream(spec.seed, Stream::Split, key));
        let [a, b, _] = spec.allocate(idx.len());
        split.train.extend_from_slice(&idx[..a]);
        split.val.extend_from_slice(&idx[a..a + b]);
        split.test.extend_from_slice(&idx[a + b..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_arithmetic() {
        let s = SplitSpec::default();
        assert_eq!(s.allocate(1000), [600, 200, 200]);
        assert_eq!(s.allocate(5), [3, 1, 1]);
        assert_eq!(s.allocate(7), [5, 1, 1]);
        assert_eq!(s.allocate(9), [6, 2, 1]);
        assert_eq!(s.allocate(200), [120, 40, 40]);
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let s = SplitSpec {
            train: 0.7,
            ..Default::default()
        };
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }
}
