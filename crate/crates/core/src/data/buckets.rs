use super::InteractionDataset;
use crate::error::{Error, Result};

/// Users partitioned by training degree into half-open intervals.
///
/// Boundaries `(b1, .., bm)` give buckets `[0,b1), [b1,b2), .., [bm, inf)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DegreeBuckets {
    pub boundaries: Vec<usize>,
    pub members: Vec<Vec<usize>>,
    /// Bucket index of every user.
    pub user_bucket: Vec<usize>,
}

impl DegreeBuckets {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn label(&self, b: usize) -> String {
        let lo = if b == 0 { 0 } else { self.boundaries[b - 1] };
        match self.boundaries.get(b) {
            Some(hi) => format!("[{lo},{hi})"),
            None => format!("[{lo},inf)"),
        }
    }

    pub fn bucket_of_degree(boundaries: &[usize], degree: usize) -> usize {
        boundaries.partition_point(|&b| b <= degree)
    }
}

pub fn bucket_users_by_degree(
    dataset: &InteractionDataset,
    boundaries: &[usize],
) -> Result<DegreeBuckets> {
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "degree boundaries must be strictly increasing, got {boundaries:?}"
        )));
    }
    let degrees = dataset.train_degrees();
    let mut members = vec![Vec::new(); boundaries.len() + 1];
    let mut user_bucket = Vec::with_capacity(degrees.len());
    for (u, &deg) in degrees.iter().enumerate() {
        let b = DegreeBuckets::bucket_of_degree(boundaries, deg);
        members[b].push(u);
        user_bucket.push(b);
    }
    Ok(DegreeBuckets {
        boundaries: boundaries.to_vec(),
        members,
        user_bucket,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{RatingScale, Split};

    fn dataset_with_degrees(degrees: &[usize]) -> InteractionDataset {
        let mut ds = InteractionDataset::new(1, RatingScale::integer_range(1, 5));
        for (u, &deg) in degrees.iter().enumerate() {
            for i in 0..deg {
                ds.push(&format!("u{u}"), &format!("i{i}"), 3.0, &[0.0])
                    .unwrap();
            }
            // one test edge so every user exists in the vocabulary
            ds.push(&format!("u{u}"), "held_out", 3.0, &[0.0]).unwrap();
        }
        let labels = ds
            .interactions
            .iter()
            .map(|x| {
                if ds.items.id(x.item) == "held_out" {
                    Split::Test
                } else {
                    Split::Train
                }
            })
            .collect();
        ds.set_splits(labels).unwrap();
        ds
    }

    #[test]
    fn interval_membership() {
        let ds = dataset_with_degrees(&[7, 2, 12, 5, 10]);
        let b = bucket_users_by_degree(&ds, &[5, 10]).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.user_bucket, vec![1, 0, 2, 1, 2]);
        assert_eq!(b.label(1), "[5,10)");
        assert_eq!(b.label(2), "[10,inf)");
    }

    #[test]
    fn partition_of_users() {
        let ds = dataset_with_degrees(&[0, 1, 3, 9, 30, 4, 4]);
        let b = bucket_users_by_degree(&ds, &[2, 5, 20]).unwrap();
        let mut all: Vec<usize> = b.members.concat();
        all.sort();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        assert_eq!(b.len(), 4);
    }

    #[test]
    fn degree_zero_in_lowest() {
        let ds = dataset_with_degrees(&[0, 0, 0]);
        let b = bucket_users_by_degree(&ds, &[5, 10]).unwrap();
        assert_eq!(b.members[0], vec![0, 1, 2]);
    }

    #[test]
    fn empty_boundaries_single_bucket() {
        let ds = dataset_with_degrees(&[3, 8]);
        let b = bucket_users_by_degree(&ds, &[]).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.members[0], vec![0, 1]);
    }

    #[test]
    fn non_increasing_rejected() {
        let ds = dataset_with_degrees(&[3]);
        assert!(bucket_users_by_degree(&ds, &[5, 5]).is_err());
        assert!(bucket_users_by_degree(&ds, &[10, 5]).is_err());
    }
}
