use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::InteractionDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Shuffle under `seed` and label the first ⌊0.8n⌋ train, the next ⌊0.1n⌋ val,
/// the rest test. Labels are stored on the dataset and returned.
pub fn split_dataset(dataset: &mut InteractionDataset, seed: u64) -> Result<Vec<Split>> {
    let n = dataset.len();
    if n < 3 {
        return Err(Error::Dataset(format!(
            "need at least 3 interactions to split, got {n}"
        )));
    }
    let n_train = 8 * n / 10;
    let n_val = n / 10;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    dataset.set_splits(labels.clone())?;
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RatingScale;

    fn dataset(n: usize) -> InteractionDataset {
        let mut ds = InteractionDataset::new(1, RatingScale::integer_range(1, 5));
        for i in 0..n {
            ds.push(&format!("u{i}"), "item", 3.0, &[i as f64]).unwrap();
        }
        ds
    }

    fn counts(labels: &[Split]) -> (usize, usize, usize) {
        let c = |s| labels.iter().filter(|&&l| l == s).count();
        (c(Split::Train), c(Split::Val), c(Split::Test))
    }

    #[test]
    fn ten_splits_eight_one_one() {
        let labels = split_dataset(&mut dataset(10), 1).unwrap();
        assert_eq!(counts(&labels), (8, 1, 1));
    }

    #[test]
    fn twelve_follows_floor_rule() {
        // floor(9.6) = 9, floor(1.2) = 1, remainder 2
        let labels = split_dataset(&mut dataset(12), 1).unwrap();
        assert_eq!(counts(&labels), (9, 1, 2));
    }

    #[test]
    fn deterministic_under_seed() {
        let a = split_dataset(&mut dataset(50), 9).unwrap();
        let b = split_dataset(&mut dataset(50), 9).unwrap();
        let c = split_dataset(&mut dataset(50), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn too_small_rejected() {
        assert!(split_dataset(&mut dataset(2), 0).is_err());
    }
}
